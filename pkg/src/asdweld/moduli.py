"""Probes of the space of welded connections.

* the scalar recurrence controlling how far the corrections move when the
  gluing parameters move (worst case and randomly slackened),
* geodesic paths between gluing parameters,
* the Lipschitz dependence of the welded perturbations on the parameters,
* centre twists (which must not change anything) and gauge-invariant
  fingerprints that separate genuinely different parameters.
"""

import json
from dataclasses import dataclass

import numpy as np

from . import welding
from .fields import algebra as alg
from .fields import calculus as calc


class ModuliError(ValueError):
    pass


# ---------------------------------------------------------------------------
# the recurrence


@dataclass(frozen=True)
class RecurrenceState:
    """Inputs of the coupled recurrence for ``alpha_n`` and ``s_n``.

    Admissible when ``eps <= 1/100``, ``K > 0``, ``0 <= alpha0 <= eps K`` and
    ``0 <= s0 <= K``.  Scalars or equal-shape arrays (one run per entry).
    """

    eps: object
    K: object
    alpha0: object
    s0: object

    def check(self):
        eps, K, a0, s0 = (np.asarray(v, dtype=float) for v in (self.eps, self.K, self.alpha0, self.s0))
        if np.any(eps < 0) or np.any(eps > 0.01 * (1 + 1e-12)):
            raise ModuliError("recurrence needs 0 <= eps <= 1/100")
        if np.any(K <= 0):
            raise ModuliError("recurrence needs K > 0")
        if np.any(a0 < 0) or np.any(a0 > eps * K * (1 + 1e-12)):
            raise ModuliError("recurrence needs 0 <= alpha0 <= eps K")
        if np.any(s0 < 0) or np.any(s0 > K * (1 + 1e-12)):
            raise ModuliError("recurrence needs 0 <= s0 <= K")
        return eps, K, a0, s0


def run_recurrence(state, mode="worst-case", rng=None, max_steps=200, rtol=1e-17):
    """Iterate the recurrence; returns ``(alpha, s)`` histories of shape ``(steps + 1, ...)``.

    ``worst-case`` takes both inequalities with equality; ``sampled`` scales
    each increment by an independent uniform factor in ``[0, 1]``.
    """
    eps, K, alpha, s = state.check()
    if mode not in ("worst-case", "sampled"):
        raise ModuliError(f"unknown recurrence mode {mode!r}")
    if mode == "sampled" and rng is None:
        raise ModuliError("sampled mode needs a random generator")
    alphas, ss = [alpha], [s]
    for n in range(max_steps):
        two = 2.0 ** (-n)
        da = eps * (s + two * alpha + two * K)
        s_next = 0.5 * s + two * alpha + 0.5 * two * K
        if mode == "sampled":
            da = da * rng.uniform(size=np.shape(da))
            s_next = s_next * rng.uniform(size=np.shape(s_next))
        alpha = alpha + da
        s = s_next
        alphas.append(alpha)
        ss.append(s)
        if np.all(da <= rtol * K) and np.all(s <= rtol * K):
            break
    return np.array(alphas), np.array(ss)


def recurrence_verify(state, mode="worst-case", rng=None, max_steps=200):
    """Return ``(sup_n alpha_n, passed)`` with ``passed`` meaning ``sup alpha <= 10 eps K``.

    For array inputs both entries are arrays (one per run).
    """
    alphas, _ = run_recurrence(state, mode, rng, max_steps)
    eps, K = np.asarray(state.eps, dtype=float), np.asarray(state.K, dtype=float)
    top = alphas.max(axis=0)
    ok = top <= 10.0 * eps * K * (1 + 1e-12)
    if np.ndim(top) == 0:
        return float(top), bool(ok)
    return top, ok


def t_sequence(s):
    """The rescaled sequence ``t_n = 2^n s_n``."""
    s = np.asarray(s)
    return s * (2.0 ** np.arange(len(s))).reshape((-1,) + (1,) * (s.ndim - 1))


def proof_checkpoint(eps=0.01):
    """The intermediate bound: ``6 + 60 eps`` (in units of ``eps K``) against 7."""
    factor = 6.0 + 60.0 * eps
    return factor, factor <= 7.0


def random_admissible(rng, n):
    """``n`` random admissible states as one array-valued state."""
    eps = rng.uniform(0.0, 0.01, size=n)
    K = 10.0 ** rng.uniform(-3, 3, size=n)
    alpha0 = eps * K * rng.uniform(size=n)
    s0 = K * rng.uniform(size=n)
    return RecurrenceState(eps, K, alpha0, s0)


def recurrence_fuzz(rng, draws=10_000, mode="worst-case"):
    """Count violations over random admissible inputs."""
    state = random_admissible(rng, draws)
    top, ok = recurrence_verify(state, mode, rng)
    ratio = top / (np.asarray(state.eps) * np.asarray(state.K))
    ratio = np.where(np.asarray(state.eps) > 0, ratio, 0.0)
    return {"draws": draws, "violations": int(np.sum(~ok)), "max_ratio_to_epsK": float(np.max(ratio))}


# ---------------------------------------------------------------------------
# paths of gluing parameters


@dataclass(frozen=True)
class ParameterPath:
    """Per-neck constant-speed geodesics ``rho_i(t) = rho_i exp(t X_i)``."""

    start: welding.GluingParameter
    end: welding.GluingParameter

    def __post_init__(self):
        if len(self.start) != len(self.end):
            raise ModuliError("path endpoints have different lengths")

    @property
    def generators(self):
        return alg.log(alg.qmul(alg.qconj(self.start.rho), self.end.rho))

    def at(self, t):
        return welding.GluingParameter(alg.normalize(alg.qmul(self.start.rho, alg.exp(t * self.generators))))

    @property
    def speeds(self):
        """Per-neck speed, equal to the group distance between the endpoints."""
        return alg.norm(self.generators)

    @property
    def K(self):
        """``sup_i |rho_i - rho'_i|`` (chordal, in the quaternion embedding)."""
        return float(np.max(np.linalg.norm(self.start.rho - self.end.rho, axis=-1)))


def geodesic_path(rho, rho_prime):
    return ParameterPath(rho, rho_prime)


# ---------------------------------------------------------------------------
# Lipschitz probe


def _weld(chain, rho, settings, max_passes, target):
    welded, trace = welding.alternate(chain, rho, max_passes=max_passes, target=target, settings=settings)
    return welded, trace


def perturbation_distance(w1, w2, p=8):
    """``sup_i |a_i - a'_i|_{L^2p}`` over the measured nodes of each block."""
    chain = w1.chain
    out = []
    for i in range(chain.W):
        ch = chain.block(i).chart
        out.append(calc.norm(ch, w1.a[i] - w2.a[i], 1, "Lp", p=2 * p, mask=chain.masks[i]["measured"]))
    return max(out), out


def lipschitz_probe(chain, rho, rho_prime, samples=2, settings=None, max_passes=30, target=1e-6,
                    welds=None):
    """Measured ``sup_i |a_i(rho) - a_i(rho')|_{L^2p} / K`` and path difference quotients.

    ``samples`` points (at least the two endpoints) are welded along the
    geodesic; the difference quotients between neighbouring samples give the
    path-derivative ratios.  Welds that do not converge are reported and
    flag the result as partial.  ``welds`` may supply already computed
    results keyed by ``t``.
    """
    settings = settings or welding.SolverSettings()
    path = geodesic_path(rho, rho_prime)
    K = path.K
    ts = np.linspace(0.0, 1.0, max(2, int(samples)))
    results = dict(welds or {})
    partial = []
    for t in ts:
        key = float(t)
        if key in results:
            continue
        try:
            results[key] = _weld(chain, path.at(t), settings, max_passes, target)
        except welding.WeldingError as exc:
            partial.append({"t": key, "error": str(exc)})
            results[key] = None
    out = {"K": K, "samples": [float(t) for t in ts], "partial": bool(partial), "failures": partial}
    a, b = results[0.0], results[1.0]
    if K == 0.0:
        out.update(ratio=0.0, difference=0.0, per_block=[0.0] * chain.W)
    elif a is not None and b is not None:
        diff, per = perturbation_distance(a[0], b[0], settings.p)
        out.update(ratio=diff / K, difference=diff, per_block=per,
                   converged=[bool(a[1].converged), bool(b[1].converged)])
    quotients = []
    for t0, t1 in zip(ts[:-1], ts[1:]):
        w0, w1 = results[float(t0)], results[float(t1)]
        if w0 is None or w1 is None or K == 0.0:
            continue
        d, _ = perturbation_distance(w0[0], w1[0], settings.p)
        quotients.append(d / ((t1 - t0) * K))
    out["path_quotients"] = quotients
    return out


# ---------------------------------------------------------------------------
# centre twists and fingerprints


def central_gauge(signs, periodic=False):
    """``gamma_0 = 1, gamma_{i+1} = eps_i gamma_i``; also reports whether it closes up."""
    signs = np.asarray(signs, dtype=float)
    gamma = np.cumprod(np.concatenate([[1.0], signs[:-1]]))
    closes = bool(np.prod(signs) == 1.0) if periodic else True
    return gamma, closes


def action_density(chart, A):
    """Gauge-invariant ``-2 tr F^2``-type density ``sum |F_mn|^2`` on the grid."""
    F = calc.curvature(chart, A)
    return np.sum(np.square(F), axis=(-2, -1))


def center_equivalence(chain, rho, signs, settings=None, max_passes=30, target=1e-6, base=None):
    """Weld ``rho`` and its centre twist and compare.

    Returns the central gauge chain, whether the perturbations agree bit for
    bit, and the largest difference of the action densities.
    """
    signs = np.asarray(signs, dtype=float)
    if len(signs) != chain.W:
        raise ModuliError(f"need {chain.W} centre signs")
    settings = settings or welding.SolverSettings()
    w1 = base if base is not None else _weld(chain, rho, settings, max_passes, target)[0]
    w2 = _weld(chain, rho.twist(signs), settings, max_passes, target)[0]
    gamma, closes = central_gauge(signs, chain.periodic)
    identical = all(np.array_equal(x, y) for x, y in zip(w1.a, w2.a))
    dens = 0.0
    for i in range(chain.W):
        ch = chain.block(i).chart
        d1, d2 = action_density(ch, w1.total(i)), action_density(ch, w2.total(i))
        m = chain.masks[i]["measured"]
        dens = max(dens, float(np.max(np.abs(d1 - d2)[m])))
    return {"gamma": gamma.tolist(), "closes": closes, "identical": identical, "density_difference": dens,
            "welded": (w1, w2)}


def loop_anchors(chart):
    """Three loop centres per block: the chart centre and the midpoints towards each marked point."""
    c = np.full(4, chart.size / 2)
    return [c, 0.5 * (c + chart.marked("L")), 0.5 * (c + chart.marked("R"))]


def loop_holonomy(chart, A, anchor, side=8, plane=(0, 1)):
    """Holonomy of a grid connection around an axis-aligned square of ``side`` cells.

    Links use the midpoint rule ``exp(-h A_mu(midpoint))`` with the midpoint
    value averaged from the two end nodes; returns a unit quaternion.
    """
    n = chart.resolution
    side = min(side, n - 1)
    start = np.array(chart.nearest_node(anchor)) - side // 2
    start = np.clip(start, 0, n - 1 - side)
    mu, nu = plane
    steps = [(mu, 1)] * side + [(nu, 1)] * side + [(mu, -1)] * side + [(nu, -1)] * side
    g = alg.identity()
    pos = start.copy()
    for axis, sgn in steps:
        nxt = pos.copy()
        nxt[axis] += sgn
        mid = 0.5 * (A[tuple(pos)][axis] + A[tuple(nxt)][axis])
        link = alg.exp(-sgn * chart.h * mid)
        g = alg.qmul(g, link)
        pos = nxt
    return alg.normalize(g)


def fingerprint(welded, loop_side=8):
    """Fixed-order gauge-invariant array: per-block action densities on measured
    nodes, then the holonomy class (quaternion real part) of every standard loop."""
    chain = welded.chain
    parts = []
    for i in range(chain.W):
        ch = chain.block(i).chart
        parts.append(action_density(ch, welded.total(i))[chain.masks[i]["measured"]])
    hol = []
    for i in range(chain.W):
        ch = chain.block(i).chart
        for anchor in loop_anchors(ch):
            for plane in ((0, 1), (2, 3)):
                hol.append(loop_holonomy(ch, welded.total(i), anchor, loop_side, plane)[0])
    parts.append(np.array(hol))
    return np.concatenate(parts)


def gauge_distinguish(w1, w2, loop_side=8):
    """Sup-norm distance between fingerprints (a pseudometric on welded outputs)."""
    if w1.chain is not w2.chain and (w1.chain.assignment != w2.chain.assignment
                                    or w1.chain.neck != w2.chain.neck):
        raise ModuliError("fingerprints of different chains are not comparable")
    f1, f2 = fingerprint(w1, loop_side), fingerprint(w2, loop_side)
    if f1.shape != f2.shape:
        raise ModuliError("fingerprints of different chains are not comparable")
    return float(np.max(np.abs(f1 - f2)))


def noise_threshold(center_distances, scale, factor=100.0):
    """``factor`` times the centre-pair noise floor, never below rounding of ``scale``."""
    floor = max(max(center_distances, default=0.0), np.finfo(float).eps * scale)
    return factor * floor, floor


def report_json(report):
    """JSON text of a probe report, dropping non-serialisable entries."""
    clean = {k: v for k, v in report.items() if k != "welded"}
    return json.dumps(clean, sort_keys=True, default=float)
