"""Chains of blocks glued across conformal necks, and the alternating correction.

Conventions
-----------
Block ``i`` meets block ``i + 1`` through neck ``i``: the right marked point of
block ``i`` is identified with the left marked point of block ``i + 1`` by the
inversion ``eta = lam * reflect(xi) / |xi|^2`` (an involution), and the fibres
are identified by the group element ``rho_i``.  A 1-form ``B`` on block
``i + 1`` is carried to block ``i`` by pulling back along the inversion and
conjugating by ``rho_i``; the opposite direction conjugates by ``rho_i^-1``.

Every point of a neck is sampled by both grids.  Each block *owns* the nodes
whose distance to the marked point is at least ``sqrt(lam)`` (the side on which
the inversion expands, so the owner resolves the region best).  Curvature,
energies and error norms are always measured on owned nodes, away from the
outer face layer of the box, in the owner's chart.
"""

import json
from dataclasses import dataclass, field
from functools import cached_property

import numpy as np

from . import elliptic
from .geometry import ChartSpec, NeckParams, cutoff, neck_jacobian, neck_map, shell_radii
from .fields import algebra as alg
from .fields import calculus as calc
from .fields import gauge
from .fields.calculus import Connection
from .fields.forms import pointwise_norm


class WeldingError(RuntimeError):
    """A chain could not be welded; ``block`` names the offending block if any."""

    def __init__(self, message, block=None, trace=None, history=()):
        super().__init__(message if block is None else f"block {block}: {message}")
        self.block = block
        self.trace = trace
        self.history = list(history)


# ---------------------------------------------------------------------------
# blocks


@dataclass(frozen=True)
class GluingDatum:
    """One block: its chart (with both marked points) and background connection.

    ``floor`` is ``|F+|_inf`` of the background on measured nodes, the level
    below which the grid cannot distinguish a correction from noise;
    ``raw_floor`` is the same quantity before the background was cleaned.
    """

    chart: ChartSpec
    background: Connection
    nonflat: bool
    name: str = ""
    floor: float = 0.0
    raw_floor: float = 0.0

    @property
    def A(self):
        return self.background.total


def standard_chart(resolution, neck, size=None):
    """Box chart with marked points on the diagonal near ``size/4`` and ``3 size/4``.

    The default side ``4 r3`` is the smallest box holding both outer shells,
    which keeps the grid step as close to the neck scale as the resolution
    allows.

    Each marked point sits on a cell corner, edge or face chosen so that the
    nearest nodes are neither inside the inner shell nor far from the fixed
    sphere ``|xi| = sqrt(lam)`` when that is possible (falls back to a corner).
    """
    _, r1, _, r3 = shell_radii(neck)
    if size is None:
        size = float(np.round(4 * r3, 12))
    h = size / resolution
    s = neck.sqrt_lam
    base = (np.floor(size / 4 / h) + 0.5) * h
    choice = 4
    for j in (4, 3, 2, 1):
        d = np.sqrt(j) * h / 2
        if r1 < d < s:
            choice = j
            break
    L = np.full(4, base)
    # step towards the centre when stepping out would crowd the face
    L[:choice] += h / 2 if base - h / 2 < r3 - 1e-12 else -h / 2
    R = size - L
    return ChartSpec(size, resolution, tuple(L), tuple(R))


def _measure_mask(chart):
    return elliptic.equation_mask(chart, 0 if chart.periodic else 1)


def _sd_floor(chart, A):
    m = _measure_mask(chart)
    return calc.norm(chart, calc.sd_curvature(chart, A), "SD", "Linf", mask=m)


def flat_datum(chart, name="flat"):
    A = np.zeros(chart.shape + (4, 3))
    return GluingDatum(chart, Connection(chart, A), False, name)


def bpst_datum(chart, neck, center=None, scale=0.6, name="bpst", clean=True, clean_tol=1e-10,
               blend_outer=None, steps=48, max_iter=20000):
    """Charge-one instanton block prepared for welding.

    The regular-gauge field is moved into exponential gauge on the closed
    neck balls about both marked points (blended to the identity further
    out), then cleaned: a perturbation solve removes the grid's ``F+`` so that
    the discrete background is anti-self-dual on measured nodes.
    """
    r3 = shell_radii(neck)[3]
    center = np.full(4, chart.size / 2) if center is None else np.asarray(center, dtype=float)
    L, R = chart.marked("L"), chart.marked("R")
    if blend_outer is None:
        blend_outer = min(0.5 * np.linalg.norm(L - R), r3 + 0.9)
    A_fn = gauge.bpst_connection(center, scale)
    g_fn = gauge.blended_exponential_gauge(A_fn, [L, R], r3, blend_outer, steps)
    A = gauge.gauge_transform_fn(A_fn, g_fn)(chart.coords())
    raw = _sd_floor(chart, A)
    if clean and raw > 0:
        m = _measure_mask(chart)
        sigma = calc.sd_curvature(chart, A) * m[..., None, None]
        try:
            b, _ = elliptic.perturbation_solve(chart, A, None, sigma, tol=clean_tol, mu=0.0, max_iter=max_iter)
        except elliptic.SolveError as exc:
            raise WeldingError(f"background cleaning failed: {exc}", history=exc.history) from exc
        A = A + b
    return GluingDatum(chart, Connection(chart, A), True, name, _sd_floor(chart, A), raw)


# ---------------------------------------------------------------------------
# chains and parameters


@dataclass(frozen=True)
class _Side:
    """Samples of one direction of a neck: nodes of ``dest`` fed from ``src``."""

    src: int
    dest: int
    index: tuple        # integer index arrays into the dest grid
    points: np.ndarray  # dest node coordinates
    src_points: np.ndarray
    jac: np.ndarray     # d(src point) / d(dest point)
    psi_dest: np.ndarray  # dest's own neck cutoff at the nodes
    psi_src: np.ndarray   # src's neck cutoff evaluated at the image points
    owned: np.ndarray     # dest owns the node
    measured: np.ndarray  # node lies in dest's measured region
    forward: bool         # True when dest = src + 1 (conjugate by rho^-1)
    neck: int


@dataclass(frozen=True)
class ChainConfig:
    """A window of ``W`` blocks drawn from a finite catalog of gluing data."""

    catalog: dict
    assignment: tuple
    neck: NeckParams = field(default_factory=NeckParams)
    periodic: bool = True

    def __post_init__(self):
        object.__setattr__(self, "assignment", tuple(self.assignment))
        W = len(self.assignment)
        if W < 2:
            raise ValueError("a chain needs at least two blocks")
        if self.periodic and W % 2:
            raise ValueError(f"a periodic window needs an even number of blocks, got {W}")
        missing = [k for k in self.assignment if k not in self.catalog]
        if missing:
            raise ValueError(f"blocks {missing} are not in the catalog")
        shapes = {d.chart.shape for d in self.catalog.values()}
        if len(shapes) != 1:
            raise ValueError("all catalog charts must share one grid")
        for key, d in self.catalog.items():
            d.chart.validate(self.neck)

    @property
    def W(self):
        return len(self.assignment)

    def block(self, i):
        return self.catalog[self.assignment[i]]

    @property
    def blocks(self):
        return [self.block(i) for i in range(self.W)]

    @property
    def necks(self):
        """Neck indices ``i`` joining block ``i`` (side R) to block ``i + 1`` (side L)."""
        return list(range(self.W if self.periodic else self.W - 1))

    def sides(self, i):
        """Marked points of block ``i`` that meet a neighbour."""
        out = []
        if self.periodic or i > 0:
            out.append("L")
        if self.periodic or i < self.W - 1:
            out.append("R")
        return tuple(out)

    # -- cached grid geometry -------------------------------------------------

    @cached_property
    def masks(self):
        """Per block: ``measured`` (owned and away from faces), ``designated``
        (measured and within ``r3 + h`` of a neck point) and the cutoff ``psi``."""
        r3 = shell_radii(self.neck)[3]
        out = []
        for i in range(self.W):
            ch = self.block(i).chart
            x = ch.coords()
            owned = np.ones(ch.shape, dtype=bool)
            near = np.zeros(ch.shape, dtype=bool)
            psi = np.ones(ch.shape)
            for side in self.sides(i):
                r = np.linalg.norm(x - ch.marked(side), axis=-1)
                owned &= r >= self.neck.sqrt_lam
                near |= r < r3 + ch.h
                psi *= cutoff(x, ch.marked(side), self.neck)[0]
            measured = owned & _measure_mask(ch)
            out.append({"owned": owned, "measured": measured, "designated": measured & near, "psi": psi})
        return out

    @cached_property
    def neck_sides(self):
        """For each neck both transport directions, in a fixed order."""
        r0, _, _, r3 = shell_radii(self.neck)
        lam = self.neck.lam
        out = []
        for k in self.necks:
            left, right = k, (k + 1) % self.W
            pair = []
            for dest, src, dside, sside in ((left, right, "R", "L"), (right, left, "L", "R")):
                dch, sch = self.block(dest).chart, self.block(src).chart
                md, ms = dch.marked(dside), sch.marked(sside)
                x = dch.coords()
                r = np.linalg.norm(x - md, axis=-1)
                sel = (r > r0) & (r < r3)
                index = np.nonzero(sel)
                pts = x[index]
                xi = pts - md
                eta = neck_map(xi, lam)
                psi_src = cutoff(eta, np.zeros(4), self.neck)[0]
                psi_dest = cutoff(xi, np.zeros(4), self.neck)[0]
                pair.append(_Side(src, dest, index, pts, ms + eta, neck_jacobian(xi, lam), psi_dest, psi_src,
                                  self.masks[dest]["owned"][index], self.masks[dest]["measured"][index],
                                  dest == (src + 1) % self.W and dside == "L", k))
            out.append(tuple(pair))
        return out

    def parity_blocks(self, parity):
        return [i for i in range(self.W) if i % 2 == parity]


@dataclass(frozen=True)
class GluingParameter:
    """Fibre identifications ``rho_i`` (unit quaternions), one per neck slot."""

    rho: np.ndarray

    def __post_init__(self):
        rho = np.array(self.rho, dtype=float).reshape(-1, 4)
        n = np.linalg.norm(rho, axis=-1)
        if np.any(np.abs(n - 1.0) > 1e-10):
            raise ValueError("gluing parameters must be unit quaternions")
        object.__setattr__(self, "rho", rho / n[:, None])

    @classmethod
    def identity(cls, W):
        return cls(alg.identity((W,)))

    @classmethod
    def random(cls, W, rng):
        return cls(alg.random_group(rng, (W,)))

    def __len__(self):
        return len(self.rho)

    def twist(self, signs):
        """Componentwise action of the centre: ``rho_i -> eps_i rho_i``."""
        signs = np.asarray(signs, dtype=float)
        if not np.all(np.abs(signs) == 1):
            raise ValueError("centre signs must be +1 or -1")
        return GluingParameter(self.rho * signs[:, None])

    def same_class(self, other, tol=1e-12):
        """Equal modulo the centre, i.e. the same point of the effective space."""
        d = np.minimum(np.linalg.norm(self.rho - other.rho, axis=-1), np.linalg.norm(self.rho + other.rho, axis=-1))
        return bool(np.all(d <= tol))


@dataclass
class WeldedConnection:
    """Per-block perturbations ``a_i`` of the backgrounds after ``n`` passes."""

    chain: ChainConfig
    rho: GluingParameter
    a: list
    n: int = 0

    def total(self, i):
        return self.chain.block(i).A + self.a[i]

    def copy(self):
        return WeldedConnection(self.chain, self.rho, [x.copy() for x in self.a], self.n)


# ---------------------------------------------------------------------------
# neck transport


def _conjugator(side, rho):
    q = rho.rho[side.neck]
    return alg.qinv(q) if side.forward else q


def transport(chain, side, rho, values, weight=None):
    """Carry a grid 1-form of block ``side.src`` to the nodes ``side.index`` of ``side.dest``.

    The source is interpolated (multilinearly) at the image points, pulled back
    along the inversion and conjugated.  ``weight`` multiplies the
    interpolated source values (used for the analytic source cutoff).
    """
    v = gauge.grid_function(chain.block(side.src).chart, values)(side.src_points)
    if weight is not None:
        v = v * weight[:, None, None]
    pulled = np.einsum("pna,pnm->pma", v, side.jac)
    return alg.ad(_conjugator(side, rho), pulled)


# ---------------------------------------------------------------------------
# measurement


def sd_field(welded, i):
    ch = welded.chain.block(i).chart
    return calc.sd_curvature(ch, welded.total(i))


def measure(welded, parity):
    """``F+`` statistics of every block plus the parity-split quantities.

    Returns a dict with ``delta`` (sup of ``|F+|_inf`` over measured nodes of
    the blocks of ``parity``), ``violation`` (L^1 mass of ``|F+|`` above each block's
    stencil floor lying outside the designated shells of the ``parity``
    blocks, divided by the total such mass) and per-block
    ``sigma`` norms.
    """
    chain = welded.chain
    blocks = []
    outside = total = 0.0
    delta = 0.0
    for i in range(chain.W):
        ch = chain.block(i).chart
        m = chain.masks[i]
        dens = pointwise_norm(sd_field(welded, i), "SD")
        meas = dens[m["measured"]]
        mass = ch.cell_volume * float(meas.sum())
        linf = float(meas.max()) if meas.size else 0.0
        blocks.append({"linf": linf, "l2": float(np.sqrt(ch.cell_volume * np.sum(meas**2))), "l1": mass})
        # density at the level of the block's own stencil floor is discretisation
        # noise and carries no information about where the error lives
        above = np.maximum(dens - chain.block(i).floor, 0.0)
        excess = float(above[m["measured"]].sum())
        inside = float(above[m["designated"]].sum()) if i % 2 == parity else 0.0
        total += ch.cell_volume * excess
        outside += ch.cell_volume * (excess - inside)
        if i % 2 == parity:
            delta = max(delta, linf)
    return {"delta": delta, "violation": outside / total if total > 0 else 0.0, "blocks": blocks}


def block_energy(welded, i, mask="measured"):
    ch = welded.chain.block(i).chart
    return calc.energy(ch, welded.total(i), mask=welded.chain.masks[i][mask])


def isolated_energy(chain, i):
    ch = chain.block(i).chart
    return calc.energy(ch, chain.block(i).A, mask=chain.masks[i]["measured"])


def stencil_floor(chain):
    """Largest background ``|F+|_inf`` over the blocks of the chain."""
    return max(d.floor for d in chain.blocks)


# ---------------------------------------------------------------------------
# the initial approximation


def initial_approximation(chain, rho, kappa=None, support_tol=1e-6):
    """Splice the backgrounds across every neck.

    On the odd block of a neck the connection is ``psi A_odd + (1 - psi) T(A_even)``
    with ``psi`` its own cutoff; on the even block it is
    ``(1 - psi') A_even + psi' T(A_odd)`` with ``psi'`` the odd cutoff seen
    through the inversion.  The two agree on the neck, and the resulting
    ``F+`` lives where the odd cutoff varies, i.e. in the outer shells of the
    even blocks.
    """
    if len(rho) != chain.W:
        raise ValueError(f"need {chain.W} gluing parameters, got {len(rho)}")
    a = [np.zeros(chain.block(i).chart.shape + (4, 3)) for i in range(chain.W)]
    for pair in chain.neck_sides:
        for side in pair:
            A_dest = chain.block(side.dest).A[side.index]
            moved = transport(chain, side, rho, chain.block(side.src).A)
            if side.dest % 2 == 1:
                w = 1.0 - side.psi_dest
            else:
                w = side.psi_src
            a[side.dest][side.index] += w[:, None, None] * (moved - A_dest)
    welded = WeldedConnection(chain, rho, a, 0)
    stats = measure(welded, 0)
    if stats["violation"] > support_tol:
        worst = _worst_outside(welded, 0)
        raise WeldingError(f"initial error not supported in the even outer shells "
                           f"(relative mass outside {stats['violation']:.3e})", block=worst)
    if kappa is not None:
        for i in chain.parity_blocks(0):
            if stats["blocks"][i]["linf"] > kappa:
                raise WeldingError(f"|sigma0|_inf = {stats['blocks'][i]['linf']:.3e} exceeds kappa = {kappa:.3e}",
                                   block=i)
    return welded


def _worst_outside(welded, parity):
    chain = welded.chain
    worst, best = None, -1.0
    for i in range(chain.W):
        m = chain.masks[i]
        dens = pointwise_norm(sd_field(welded, i), "SD")
        keep = m["measured"] & ~(m["designated"] if i % 2 == parity else False)
        v = float(dens[keep].sum())
        if v > best:
            worst, best = i, v
    return worst


# ---------------------------------------------------------------------------
# one half pass


@dataclass
class SolverSettings:
    """Options forwarded to :func:`asdweld.elliptic.perturbation_solve`."""

    p: int = 8
    tol: float = 1e-8
    inner_tol: float = None
    mu: float = 0.0
    max_iter: int = 4000
    max_picard: int = 30
    kappa: float = None
    eta: float = None
    support_tol: float = 1e-6


def half_pass(welded, parity, settings=None, check=True):
    """Correct every block of ``parity`` and hand the cut-off corrections to its neighbours.

    Returns ``(welded', info)`` where ``info`` holds the per-block solve
    reports.  Same-parity solves are independent; all updates are merged
    afterwards in block order, then neck order, so the result does not depend
    on scheduling.
    """
    settings = settings or SolverSettings()
    chain = welded.chain
    if welded.n % 2 != parity:
        raise WeldingError(f"pass {welded.n} carries error on parity {welded.n % 2}, not {parity}")
    if check:
        stats = measure(welded, parity)
        if stats["violation"] > settings.support_tol:
            raise WeldingError(f"support hypothesis fails before pass {welded.n}: "
                               f"relative mass outside {stats['violation']:.3e}",
                               block=_worst_outside(welded, parity))
        if settings.kappa is not None and stats["delta"] > settings.kappa:
            raise WeldingError(f"delta = {stats['delta']:.3e} exceeds kappa = {settings.kappa:.3e}")
    out = welded.copy()
    raw = {}
    reports = {}
    for i in chain.parity_blocks(parity):
        ch = chain.block(i).chart
        m = chain.masks[i]
        # the block's whole measured error: designated shells plus any leftover
        sigma = sd_field(welded, i) * m["measured"][..., None, None]
        try:
            b, rep = elliptic.perturbation_solve(
                ch, chain.block(i).A, welded.a[i], sigma, p=settings.p, tol=settings.tol,
                inner_tol=settings.inner_tol, mu=settings.mu, max_iter=settings.max_iter,
                max_picard=settings.max_picard, kappa=settings.kappa, eta=settings.eta)
        except elliptic.PreconditionError as exc:
            raise WeldingError(str(exc), block=i) from exc
        except elliptic.SolveError as exc:
            raise WeldingError(f"perturbation solve failed: {exc}", block=i, history=exc.history) from exc
        raw[i] = b
        reports[i] = rep
    # deterministic merge: own updates in block order, then neighbours in neck order
    for i in sorted(raw):
        out.a[i] += chain.masks[i]["psi"][..., None, None] * raw[i]
    for pair in chain.neck_sides:
        for side in pair:
            if side.src in raw:
                out.a[side.dest][side.index] += transport(chain, side, welded.rho, raw[side.src],
                                                          weight=side.psi_src)
    out.n = welded.n + 1
    return out, {"reports": reports}


# ---------------------------------------------------------------------------
# the alternating iteration


@dataclass
class DecayTrace:
    """Per-pass records; serialised as JSON lines with sorted keys."""

    records: list = field(default_factory=list)
    converged: bool = False
    reason: str = ""

    def append(self, record):
        self.records.append(record)

    @property
    def deltas(self):
        return [r["delta"] for r in self.records]

    @property
    def ratios(self):
        return [r["ratio"] for r in self.records[1:]]

    def to_jsonl(self):
        """One line per pass, then (once finished) a ``{"final": true, ...}`` status line."""
        lines = [json.dumps(r, sort_keys=True) for r in self.records]
        if self.reason:
            lines.append(json.dumps({"final": True, "converged": bool(self.converged), "reason": self.reason},
                                    sort_keys=True))
        return "".join(line + "\n" for line in lines)

    def write(self, path):
        with open(path, "w") as fh:
            fh.write(self.to_jsonl())

    @classmethod
    def from_jsonl(cls, text):
        trace = cls()
        for line in text.splitlines():
            if not line.strip():
                continue
            rec = json.loads(line)
            if rec.get("final"):
                trace.converged, trace.reason = bool(rec["converged"]), rec["reason"]
            else:
                trace.records.append(rec)
        return trace

    @classmethod
    def read(cls, path):
        with open(path) as fh:
            return cls.from_jsonl(fh.read())


def _record(welded, stats, energies, prev, a0, p, reports=None):
    chain = welded.chain
    rec = {
        "n": welded.n,
        "parity": welded.n % 2,
        "delta": stats["delta"],
        "ratio": (stats["delta"] / prev["delta"]) if prev and prev["delta"] > 0 else None,
        "support_violation": stats["violation"],
        "sigma_linf": [b["linf"] for b in stats["blocks"]],
        "sigma_l2": [b["l2"] for b in stats["blocks"]],
        "energy": energies,
        "energy_drift": (sum(energies) - sum(prev["energy"])) if prev else 0.0,
        "a_L2p": [calc.norm(chain.block(i).chart, welded.a[i], 1, "Lp", p=2 * p, mask=chain.masks[i]["measured"])
                  for i in range(chain.W)],
        "drift_L2p": [calc.norm(chain.block(i).chart, welded.a[i] - a0[i], 1, "Lp", p=2 * p,
                                mask=chain.masks[i]["measured"]) for i in range(chain.W)],
    }
    if reports:
        rec["solves"] = {str(i): {"iterations": r.iterations, "picard_steps": r.measured["picard_steps"],
                                  "residual": r.residual, "b_L2p": r.norms["b_L2p"]}
                         for i, r in sorted(reports.items())}
    return rec


def alternate(chain, rho, max_passes=30, target=1e-6, settings=None, floor_factor=10.0,
              stall_passes=3, on_record=None):
    """Alternate even and odd half passes until ``delta_n <= max(target delta_0, floor)``.

    ``floor`` is ``floor_factor`` times the background stencil floor.  Raises
    :class:`WeldingError` (carrying the trace) on a solver failure or when the
    contraction ratio is at least 1 for ``stall_passes`` consecutive passes.
    """
    settings = settings or SolverSettings()
    welded = initial_approximation(chain, rho, kappa=settings.kappa, support_tol=settings.support_tol)
    a0 = [x.copy() for x in welded.a]
    trace = DecayTrace()
    floor = floor_factor * stencil_floor(chain)
    energies = [block_energy(welded, i) for i in range(chain.W)]
    stats = measure(welded, 0)
    rec = _record(welded, stats, energies, None, a0, settings.p)
    rec["floor"] = floor
    trace.append(rec)
    if on_record:
        on_record(rec)
    stop = max(target * stats["delta"], floor)
    stalled = 0
    while True:
        if stats["delta"] <= stop:
            trace.converged = True
            trace.reason = "target" if stats["delta"] <= target * trace.records[0]["delta"] else "floor"
            return welded, trace
        if welded.n >= max_passes:
            trace.reason = "max_passes"
            return welded, trace
        try:
            welded, info = half_pass(welded, welded.n % 2, settings)
        except WeldingError as exc:
            exc.trace = trace
            raise
        stats = measure(welded, welded.n % 2)
        energies = [block_energy(welded, i) for i in range(chain.W)]
        prev = trace.records[-1]
        rec = _record(welded, stats, energies, prev, a0, settings.p, info["reports"])
        trace.append(rec)
        if on_record:
            on_record(rec)
        stalled = stalled + 1 if rec["ratio"] is not None and rec["ratio"] >= 1.0 else 0
        if stalled >= stall_passes:
            trace.reason = "stall"
            raise WeldingError(f"contraction stalled for {stall_passes} passes at delta = {stats['delta']:.3e}",
                               trace=trace)


# ---------------------------------------------------------------------------
# energy and compatibility


def energy_ledger(welded):
    """Per-block energies on owned nodes against the isolated backgrounds."""
    chain = welded.chain
    blocks = []
    for i in range(chain.W):
        e = block_energy(welded, i)
        iso = isolated_energy(chain, i)
        blocks.append({"block": i, "name": chain.assignment[i], "nonflat": chain.block(i).nonflat,
                       "energy": e, "isolated": iso, "retained": e / iso if iso > 0 else None})
    nonflat = [b for b in blocks if b["nonflat"]]
    total = sum(b["energy"] for b in blocks)
    return {
        "blocks": blocks,
        "total": total,
        "nonflat_count": len(nonflat),
        "per_nonflat_block": total / len(nonflat) if nonflat else None,
        "min_retained": min((b["retained"] for b in nonflat), default=None),
        "min_nonflat_energy": min((b["energy"] for b in nonflat), default=None),
    }


def _interp_bound(chart, values, points):
    """Multilinear interpolation error bound ``(1/8) sum_mu max |Delta_mu^2 f|``
    over the cells containing ``points`` (undivided second differences)."""
    flat = values.reshape(chart.shape + (-1,))
    second = np.zeros(chart.shape)
    for mu in range(4):
        d2 = np.zeros(flat.shape)
        sl = [slice(None)] * 5
        c, lo, hi = list(sl), list(sl), list(sl)
        c[mu], lo[mu], hi[mu] = slice(1, -1), slice(None, -2), slice(2, None)
        d2[tuple(c)] = flat[tuple(hi)] - 2 * flat[tuple(c)] + flat[tuple(lo)]
        # edge rows copy their neighbour's second difference
        e0, e1 = list(sl), list(sl)
        e0[mu], e1[mu] = 0, 1
        d2[tuple(e0)] = d2[tuple(e1)]
        e0[mu], e1[mu] = -1, -2
        d2[tuple(e0)] = d2[tuple(e1)]
        second += np.sqrt(np.sum(d2 * d2, axis=-1))
    idx = np.clip(np.floor(points / chart.h - 0.5).astype(int), 0, chart.resolution - 2)
    worst = np.zeros(len(points))
    for corner in np.ndindex(2, 2, 2, 2):
        j = idx + np.array(corner)
        worst = np.maximum(worst, second[tuple(j.T)])
    return worst / 8.0


def compatibility_check(welded, detail=False):
    """Largest overlap mismatch of the glued connection.

    At every node a block does not own inside a neck annulus, its connection
    is compared with the owner's connection carried across.  Returns the max
    mismatch and the matching interpolation tolerance (the multilinear error
    bound of the owner's field, pulled back); with ``detail`` also per neck.
    """
    chain = welded.chain
    worst = tol = 0.0
    per = []
    for pair in chain.neck_sides:
        for side in pair:
            sel = ~side.owned & _measure_mask(chain.block(side.dest).chart)[side.index]
            if not np.any(sel):
                per.append({"neck": side.neck, "dest": side.dest, "nodes": 0, "mismatch": 0.0, "tolerance": 0.0})
                continue
            sub = _subset(side, sel)
            src_total = welded.total(side.src)
            moved = transport(chain, sub, welded.rho, src_total)
            here = welded.total(side.dest)[sub.index]
            mism = float(np.max(np.linalg.norm((here - moved).reshape(len(moved), -1), axis=-1)))
            bound = _interp_bound(chain.block(side.src).chart, src_total, sub.src_points)
            jn = np.linalg.norm(sub.jac, ord=2, axis=(-2, -1))
            t = float(np.max(2.0 * bound * jn)) + 1e-12
            worst, tol = max(worst, mism), max(tol, t)
            per.append({"neck": side.neck, "dest": side.dest, "nodes": int(sel.sum()), "mismatch": mism,
                        "tolerance": t})
    out = {"mismatch": worst, "tolerance": tol}
    if detail:
        out["sides"] = per
    return out


def _subset(side, sel):
    return _Side(side.src, side.dest, tuple(ix[sel] for ix in side.index), side.points[sel],
                 side.src_points[sel], side.jac[sel], side.psi_dest[sel], side.psi_src[sel],
                 side.owned[sel], side.measured[sel], side.forward, side.neck)
