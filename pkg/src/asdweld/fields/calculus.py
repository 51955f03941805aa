"""Collocated finite-difference gauge calculus on a block grid.

Every derivative is the second-order centred difference ``D_mu``; on a
non-periodic box the two face rows use the one-sided second-order stencil
(the same rule as ``numpy.gradient(edge_order=2)``).  ``d*`` is the exact
transpose of ``d`` under the grid pairing ``<u, v> = h^4 sum(u * v)``, so the
adjointness identity holds to rounding.
"""

from dataclasses import dataclass

import numpy as np

from .algebra import bracket
from .forms import PAIRS, bracket_wedge, pointwise_norm, sd_embed, sd_project, wedge_square


def _sl(ndim, axis, s):
    idx = [slice(None)] * ndim
    idx[axis] = s
    return tuple(idx)


def diff(f, axis, h, periodic=False):
    """Centred difference of ``f`` along grid axis ``axis``."""
    if periodic:
        return (np.roll(f, -1, axis=axis) - np.roll(f, 1, axis=axis)) / (2.0 * h)
    nd = f.ndim
    out = np.empty_like(f)
    out[_sl(nd, axis, slice(1, -1))] = f[_sl(nd, axis, slice(2, None))] - f[_sl(nd, axis, slice(None, -2))]
    f0, f1, f2 = (f[_sl(nd, axis, i)] for i in (0, 1, 2))
    g0, g1, g2 = (f[_sl(nd, axis, i)] for i in (-1, -2, -3))
    out[_sl(nd, axis, 0)] = -3.0 * f0 + 4.0 * f1 - f2
    out[_sl(nd, axis, -1)] = 3.0 * g0 - 4.0 * g1 + g2
    out *= 1.0 / (2.0 * h)
    return out


def diff_T(g, axis, h, periodic=False):
    """Transpose of :func:`diff` as a linear map on grid arrays."""
    if periodic:
        return -diff(g, axis, h, periodic=True)
    nd = g.ndim
    out = np.zeros_like(g)
    inner = g[_sl(nd, axis, slice(1, -1))]
    out[_sl(nd, axis, slice(2, None))] += inner
    out[_sl(nd, axis, slice(None, -2))] -= inner
    g0 = g[_sl(nd, axis, 0)]
    gn = g[_sl(nd, axis, -1)]
    out[_sl(nd, axis, 0)] += -3.0 * g0
    out[_sl(nd, axis, 1)] += 4.0 * g0
    out[_sl(nd, axis, 2)] += -g0
    out[_sl(nd, axis, -1)] += 3.0 * gn
    out[_sl(nd, axis, -2)] += -4.0 * gn
    out[_sl(nd, axis, -3)] += gn
    out *= 1.0 / (2.0 * h)
    return out


@dataclass(frozen=True)
class Connection:
    """Background plus perturbation, both 1-form arrays on one chart."""

    chart: object
    background: np.ndarray
    perturbation: np.ndarray = None

    def __post_init__(self):
        if self.perturbation is None:
            object.__setattr__(self, "perturbation", np.zeros_like(self.background))

    @property
    def total(self):
        return self.background + self.perturbation

    def with_perturbation(self, a):
        return Connection(self.chart, self.background, a)


def _grid(chart):
    return chart.h, chart.periodic


def d0(chart, s):
    h, per = _grid(chart)
    return np.stack([diff(s, mu, h, per) for mu in range(4)], axis=-2)


def cov_d(chart, A, s):
    """d_A s = d s + [A, s] for an ad-valued 0-form."""
    return d0(chart, s) + bracket(A, s[..., None, :])


def cov_d_star(chart, A, b):
    """Exact grid adjoint of :func:`cov_d`."""
    h, per = _grid(chart)
    out = np.zeros(b.shape[:-2] + (3,))
    for mu in range(4):
        out += diff_T(b[..., mu, :], mu, h, per)
    out -= np.sum(bracket(A, b), axis=-2)
    return out


def d1(chart, b):
    h, per = _grid(chart)
    db = [diff(b, mu, h, per) for mu in range(4)]  # db[m][..., n, :] = D_m b_n
    return np.stack([db[m][..., n, :] - db[n][..., m, :] for m, n in PAIRS], axis=-2)


def d1_T(chart, w):
    """Transpose of :func:`d1` (2-form -> 1-form)."""
    h, per = _grid(chart)
    out = np.zeros(w.shape[:-2] + (4, 3))
    for i, (m, n) in enumerate(PAIRS):
        out[..., n, :] += diff_T(w[..., i, :], m, h, per)
        out[..., m, :] -= diff_T(w[..., i, :], n, h, per)
    return out


def cov_d1(chart, A, b):
    """d_A b = d b + [A ^ b] on ad-valued 1-forms."""
    return d1(chart, b) + bracket_wedge(A, b, 1, 1)


def bracket_wedge_T(A, w):
    """Transpose of ``b -> [A ^ b]`` (1-form -> 2-form) for fixed ``A``."""
    out = np.zeros(w.shape[:-2] + (4, 3))
    for i, (m, n) in enumerate(PAIRS):
        out[..., n, :] -= bracket(A[..., m, :], w[..., i, :])
        out[..., m, :] += bracket(A[..., n, :], w[..., i, :])
    return out


def cov_d_plus(chart, A, b):
    return sd_project(cov_d1(chart, A, b))


def cov_d_plus_T(chart, A, u):
    """Transpose of :func:`cov_d_plus` (SD -> 1-form)."""
    w = sd_embed(u)
    return d1_T(chart, w) + bracket_wedge_T(A, w)


def curvature(chart, A):
    """F = dA + (A ^ A) with centred differences."""
    return d1(chart, A) + wedge_square(A)


def sd_curvature(chart, A):
    return sd_project(curvature(chart, A))


TRIPLES = ((0, 1, 2), (0, 1, 3), (0, 2, 3), (1, 2, 3))


def bianchi_residual(chart, A, F=None):
    """3-form ``d_A F`` with components ordered as :data:`TRIPLES`; zero in the continuum."""
    from .forms import PAIR_INDEX

    F = curvature(chart, A) if F is None else F
    nF = nabla(chart, A, F)  # (..., mu, pair, 3)

    def comp(mu, a, b):
        return nF[..., mu, PAIR_INDEX[(a, b)], :]

    return np.stack([comp(l, m, n) - comp(m, l, n) + comp(n, l, m) for l, m, n in TRIPLES], axis=-2)


def nabla(chart, A, w):
    """Covariant derivative of an ad-valued array with arbitrary form index.

    ``w`` has shape ``grid + (c, 3)``; returns ``grid + (4, c, 3)``.
    """
    h, per = _grid(chart)
    return np.stack(
        [diff(w, mu, h, per) + bracket(A[..., mu, None, :], w) for mu in range(4)],
        axis=-3,
    )


# ---------------------------------------------------------------------------
# norms

def pairing(chart, u, v):
    return chart.cell_volume * float(np.sum(u * v))


def _pointwise(x, degree):
    return pointwise_norm(x, degree)


def lp_norm(chart, x, degree, p=2.0, mask=None):
    if p < 1:
        raise ValueError(f"L^p needs p >= 1, got {p}")
    n = _pointwise(x, degree)
    if mask is not None:
        n = n[mask]
    if np.isinf(p):
        return float(n.max()) if n.size else 0.0
    if n.size == 0:
        return 0.0
    # scale first to keep n**p finite for large p
    top = n.max()
    if top == 0:
        return 0.0
    return float(top * (chart.cell_volume * np.sum((n / top) ** p)) ** (1.0 / p))


def norm(chart, x, degree, kind="L2", p=None, A=None, mask=None):
    """Grid norms.

    ``kind`` is one of ``"Lp"`` (needs ``p``), ``"L2"``, ``"Linf"``,
    ``"Lp1"`` (needs ``p`` and a reference connection ``A``) and
    ``"L2_conformal"`` (L^2 of a 2-form, invariant under conformal maps).
    """
    if kind == "Linf":
        return lp_norm(chart, x, degree, np.inf, mask)
    if kind == "L2":
        return lp_norm(chart, x, degree, 2.0, mask)
    if kind == "Lp":
        return lp_norm(chart, x, degree, p, mask)
    if kind == "L2_conformal":
        if degree not in (2, "SD"):
            raise ValueError("conformal L^2 invariance only holds for 2-forms")
        return lp_norm(chart, x, degree, 2.0, mask)
    if kind == "Lp1":
        if A is None:
            raise ValueError("Lp1 needs a reference connection")
        if p is None or p < 1:
            raise ValueError("Lp1 needs p >= 1")
        w = x if degree != 0 else x[..., None, :]
        grad = nabla(chart, A, w.reshape(w.shape[:4] + (-1, 3)))
        g = np.sqrt(np.sum(np.square(grad), axis=(-3, -2, -1)))
        if mask is not None:
            g = g[mask]
        a = lp_norm(chart, x, degree, p, mask)
        if g.size == 0:
            return a
        top = g.max()
        b = 0.0 if top == 0 else top * (chart.cell_volume * np.sum((g / top) ** p)) ** (1.0 / p)
        return float((a**p + b**p) ** (1.0 / p))
    raise ValueError(f"unknown norm kind {kind!r}")


def energy(chart, A, mask=None):
    """||F||^2 over the masked region (whole chart by default)."""
    F = curvature(chart, A)
    dens = np.sum(np.square(F), axis=(-2, -1))
    if mask is not None:
        dens = dens[mask]
    return float(chart.cell_volume * np.sum(dens))


def charge_density(F):
    """tr(F ^ F) / 8pi^2 as a density; tr(XY) = -x.y in the orthonormal basis."""
    ff = (
        np.sum(F[..., 0, :] * F[..., 5, :], axis=-1)
        - np.sum(F[..., 1, :] * F[..., 4, :], axis=-1)
        + np.sum(F[..., 2, :] * F[..., 3, :], axis=-1)
    )
    return -2.0 * ff / (8.0 * np.pi**2)


def instanton_charge(chart, A, mask=None):
    dens = charge_density(curvature(chart, A))
    if mask is not None:
        dens = dens[mask]
    return float(chart.cell_volume * np.sum(dens))
