"""Block charts, neck annuli, the conformal inversion between necks, cutoffs."""

from dataclasses import dataclass

import numpy as np


class GeometryError(ValueError):
    pass


@dataclass(frozen=True)
class NeckParams:
    """Neck shape parameters.

    ``lam`` has units of length squared.  The smallness condition
    ``lam * N**q <= budget`` is checked by :meth:`check_smallness` rather than
    on construction, so that radii can be computed for any admissible triple.
    """

    k: float = 0.5
    N: float = 2.0
    lam: float = 0.04
    q: int = 4
    budget: float = 1e-2

    def __post_init__(self):
        if not 0.0 < self.k < 1.0:
            raise GeometryError(f"k must lie in (0, 1), got {self.k}")
        if not self.N > 1.0:
            raise GeometryError(f"N must exceed 1, got {self.N}")
        if not self.lam > 0.0:
            raise GeometryError(f"lambda must be positive, got {self.lam}")
        if int(self.q) != self.q or self.q < 2:
            raise GeometryError(f"smallness exponent must be an integer >= 2, got {self.q}")

    @property
    def sqrt_lam(self):
        return float(np.sqrt(self.lam))

    @property
    def radii(self):
        return shell_radii(self)

    @property
    def smallness(self):
        return self.lam * self.N**self.q

    def check_smallness(self):
        if self.smallness > self.budget * (1 + 1e-12):
            raise GeometryError(
                f"lambda*N^q = {self.smallness:.6g} exceeds the configured "
                f"smallness budget {self.budget:g} (q={self.q})"
            )

    @property
    def K_N(self):
        return K_N(self.N)


def K_N(N):
    """Leak-back factor N / (N - 1/N)^3 of a neck."""
    N = np.asarray(N, dtype=float)
    return N / (N - 1.0 / N) ** 3


def shell_radii(neck):
    """Return ``(r0, r1, r2, r3)``; inner shell (r0, r1), outer shell (r2, r3)."""
    s = np.sqrt(neck.lam)
    r = (neck.k * s / neck.N, s / neck.N, neck.N * s, neck.N * s / neck.k)
    if not (0 < r[0] < r[1] < r[2] < r[3]):
        raise GeometryError(f"radii not strictly ordered: {r}")
    return tuple(float(x) for x in r)


@dataclass(frozen=True)
class ChartSpec:
    """Uniform grid on the box ``[0, size]^4``; nodes sit at cell centres.

    With ``periodic=False`` derivatives use one-sided second-order stencils at
    the faces; with ``periodic=True`` the box is a flat 4-torus.
    """

    size: float
    resolution: int
    marked_L: tuple = (0.0, 0.0, 0.0, 0.0)
    marked_R: tuple = (0.0, 0.0, 0.0, 0.0)
    periodic: bool = False

    def __post_init__(self):
        object.__setattr__(self, "marked_L", tuple(float(v) for v in self.marked_L))
        object.__setattr__(self, "marked_R", tuple(float(v) for v in self.marked_R))
        if self.resolution < 8:
            raise GeometryError(f"resolution must be >= 8, got {self.resolution}")
        if self.size <= 0:
            raise GeometryError("chart size must be positive")
        if np.allclose(self.marked_L, self.marked_R):
            raise GeometryError("marked points must be distinct")

    @property
    def h(self):
        return self.size / self.resolution

    @property
    def shape(self):
        return (self.resolution,) * 4

    @property
    def cell_volume(self):
        return self.h**4

    def axis(self):
        return (np.arange(self.resolution) + 0.5) * self.h

    def coords(self):
        x = self.axis()
        return np.stack(np.meshgrid(x, x, x, x, indexing="ij"), axis=-1)

    def node(self, index):
        return (np.asarray(index, dtype=float) + 0.5) * self.h

    def nearest_node(self, x):
        return tuple(int(v) for v in np.clip(np.floor(np.asarray(x) / self.h), 0, self.resolution - 1))

    def marked(self, side):
        return np.array(self.marked_L if side == "L" else self.marked_R)

    def validate(self, neck, margin=0.0):
        """Check that both neck annuli fit in the box and do not meet."""
        r3 = shell_radii(neck)[3]
        L, R = np.array(self.marked_L), np.array(self.marked_R)
        if np.linalg.norm(L - R) <= 2 * r3:
            raise GeometryError(
                f"marked points {np.linalg.norm(L - R):.4g} apart; need more than 2*r3 = {2 * r3:.4g}"
            )
        if not self.periodic:
            for p in (L, R):
                if np.any(p - r3 - margin < -1e-12) or np.any(p + r3 + margin > self.size + 1e-12):
                    raise GeometryError(f"neck annulus about {tuple(p)} leaves the chart")
        return self


@dataclass(frozen=True)
class ShellRegion:
    center: tuple
    inner_radius: float
    outer_radius: float
    tag: str = "Omega"

    def __post_init__(self):
        if not 0 < self.inner_radius < self.outer_radius:
            raise GeometryError("need 0 < inner_radius < outer_radius")

    def contains(self, x):
        r = np.linalg.norm(np.asarray(x) - np.asarray(self.center), axis=-1)
        return (r > self.inner_radius) & (r < self.outer_radius)


def shells(center, neck, side):
    """The three tagged regions about one marked point (side 'L' or 'R')."""
    r0, r1, r2, r3 = shell_radii(neck)
    c = tuple(np.asarray(center, dtype=float))
    return {
        f"Omega_{side}": ShellRegion(c, r0, r3, f"Omega_{side}"),
        f"{side}-": ShellRegion(c, r0, r1, f"{side}-"),
        f"{side}+": ShellRegion(c, r2, r3, f"{side}+"),
    }


# ---------------------------------------------------------------------------
# neck identification

def reflection_matrix(axis=0):
    m = np.eye(4)
    m[axis, axis] = -1.0
    return m


def neck_map(xi, lam, reflection=0):
    """eta = lam * reflect(xi) / |xi|^2, vectorised over leading axes."""
    xi = np.asarray(xi, dtype=float)
    r2 = np.sum(xi * xi, axis=-1, keepdims=True)
    if np.any(r2 == 0):
        raise GeometryError("neck_map is singular at xi = 0")
    eta = lam * xi / r2
    eta = np.array(eta)
    eta[..., reflection] *= -1.0
    return eta


def neck_jacobian(xi, lam, reflection=0):
    """d eta / d xi as ``(..., 4, 4)`` with ``J[..., a, b] = d eta^a / d xi^b``."""
    xi = np.asarray(xi, dtype=float)
    r2 = np.sum(xi * xi, axis=-1)[..., None, None]
    j = lam * (np.eye(4) / r2 - 2.0 * xi[..., :, None] * xi[..., None, :] / r2**2)
    j[..., reflection, :] *= -1.0
    return j


def neck_jacobian_norm(xi, neck, reflection=0):
    """Operator norm lam/|xi|^2 of the neck map, for xi in the closed annulus."""
    r0, _, _, r3 = shell_radii(neck)
    r = np.linalg.norm(np.asarray(xi, dtype=float), axis=-1)
    tol = 1e-12 * r3
    if np.any((r < r0 - tol) | (r > r3 + tol)):
        raise GeometryError("point outside the neck annulus")
    return neck.lam / r**2


def pull_back_one_form(values, jac):
    """Pull a 1-form back along a map with Jacobian ``jac`` (``d target / d source``).

    ``values[..., nu, :]`` are components at the image point; the result has
    components ``sum_nu values[nu] * jac[nu, mu]`` at the source point.
    """
    return np.einsum("...na,...nm->...ma", values, jac)


def pull_back_two_form(values, jac):
    """Pull back a 2-form stored as ``(..., 6, 3)`` in PAIRS order."""
    from .fields.forms import two_form_full, two_form_pack

    full = two_form_full(values)
    pulled = np.einsum("...abc,...am,...bn->...mnc", full, jac, jac)
    return two_form_pack(pulled)


def sphere_rule(n_chi=12, n_theta=12, n_phi=24):
    """Product rule on the unit three-sphere: unit vectors ``(M, 4)`` and weights.

    Hyperspherical angles with Gauss-Legendre nodes in the two polar angles
    and equal spacing in the azimuth; the weights sum to ``2 pi^2``.
    """
    gc, wc = np.polynomial.legendre.leggauss(n_chi)
    gt, wt = np.polynomial.legendre.leggauss(n_theta)
    chi, wc = np.pi * (gc + 1) / 2, wc * np.pi / 2
    theta, wt = np.pi * (gt + 1) / 2, wt * np.pi / 2
    phi = 2 * np.pi * np.arange(n_phi) / n_phi
    C, T, P = np.meshgrid(chi, theta, phi, indexing="ij")
    u = np.stack([np.cos(C), np.sin(C) * np.cos(T), np.sin(C) * np.sin(T) * np.cos(P),
                  np.sin(C) * np.sin(T) * np.sin(P)], axis=-1).reshape(-1, 4)
    w = (wc[:, None, None] * np.sin(chi)[:, None, None] ** 2 * wt[None, :, None]
         * np.sin(theta)[None, :, None] * np.full(n_phi, 2 * np.pi / n_phi)[None, None, :])
    return u, w.reshape(-1)


def annulus_l2(fn, center, r_in, r_out, radial=24, sphere=None, spacing="log"):
    """L^2 norm over ``r_in < |x - center| < r_out`` of the field ``fn(points)``.

    Composite midpoint rule in ``log r`` (or in ``r`` with
    ``spacing="linear"``) and :func:`sphere_rule` on the spheres; the pointwise
    norm is the Euclidean norm of all trailing components.
    """
    u, w = sphere if sphere is not None else sphere_rule()
    if spacing == "log":
        t = np.log(r_in) + (np.log(r_out) - np.log(r_in)) * (np.arange(radial) + 0.5) / radial
        radii = np.exp(t)
        dr = radii * (np.log(r_out) - np.log(r_in)) / radial
    elif spacing == "linear":
        dr = np.full(radial, (r_out - r_in) / radial)
        radii = r_in + dr * (np.arange(radial) + 0.5)
    else:
        raise ValueError(f"unknown radial spacing {spacing!r}")
    total = 0.0
    for r, step in zip(radii, dr):
        vals = fn(np.asarray(center, dtype=float) + r * u)
        dens = np.sum(np.square(vals).reshape(len(u), -1), axis=-1)
        total += step * r**3 * float(w @ dens)
    return float(np.sqrt(total))


def _generic_rotation():
    # fixed rotation so that rotated sphere nodes are not mapped onto each other
    # by the reflection inside the neck map
    q, _ = np.linalg.qr(np.arange(1.0, 17.0).reshape(4, 4) ** 1.5 + np.eye(4))
    return q


def conformal_defect(form_fn, neck, radial=24, reflection=0, reference=72):
    """Relative gap between the annulus L^2 norm of a 2-form and of its pullback.

    ``form_fn`` is a 2-form ``(..., 6, 3)`` on the source side of a neck,
    in coordinates centred on its marked point.  Its norm over
    ``r0 < |eta| < r3`` is computed with ``reference`` radial samples; the
    pullback through the neck map is integrated over ``r0 < |xi| < r3`` with
    ``radial`` samples on a rotated sphere rule with ``radial / 2`` polar
    nodes, so raising ``radial`` refines the whole mesh.  The source side uses
    ``reference`` samples in the same pattern.  In the continuum the two norms
    agree, so the gap is quadrature error of the pulled-back field and shrinks
    like ``radial**-2``.  Returns ``(gap, source_norm, pulled_norm)``.
    """
    r0, _, _, r3 = shell_radii(neck)

    def mesh(n):
        m = max(n // 2, 2)
        return sphere_rule(m, m, 2 * m)

    def pulled(xi):
        return pull_back_two_form(form_fn(neck_map(xi, neck.lam, reflection)),
                                  neck_jacobian(xi, neck.lam, reflection))

    a = annulus_l2(form_fn, np.zeros(4), r0, r3, reference, mesh(reference))
    u, w = mesh(radial)
    b = annulus_l2(pulled, np.zeros(4), r0, r3, radial, (u @ _generic_rotation().T, w))
    return abs(b - a) / a, a, b


# ---------------------------------------------------------------------------
# cutoffs

def smoothstep(t):
    t = np.clip(t, 0.0, 1.0)
    return t * t * (3.0 - 2.0 * t), 6.0 * t * (1.0 - t)


def cutoff(x, center, neck):
    """Radial cutoff about ``center``: 0 inside r0, 1 outside r1.

    Returns ``(psi, dpsi)`` with ``dpsi`` of shape ``(..., 4)``.
    """
    r0, r1, _, _ = shell_radii(neck)
    d = np.asarray(x, dtype=float) - np.asarray(center, dtype=float)
    r = np.linalg.norm(d, axis=-1)
    s, ds = smoothstep((r - r0) / (r1 - r0))
    safe = np.where(r > 0, r, 1.0)
    dpsi = (ds / (r1 - r0) / safe)[..., None] * d
    return s, dpsi


def block_cutoff(x, chart, neck, sides=("L", "R")):
    """Product of the cutoffs about the requested marked points of a block."""
    psi = np.ones(np.shape(x)[:-1])
    dpsi = np.zeros(np.shape(x))
    for side in sides:
        p, dp = cutoff(x, chart.marked(side), neck)
        dpsi = dpsi * p[..., None] + psi[..., None] * dp
        psi = psi * p
    return psi, dpsi


# ---------------------------------------------------------------------------
# region bookkeeping

PARTITION = (
    "excised_L", "L-", "Omega_mid_L", "L+",
    "excised_R", "R-", "Omega_mid_R", "R+",
    "U_rest",
)


def region_label(x, chart, neck):
    """Assign every point exactly one label from :data:`PARTITION`.

    Intervals are half open: excised ``r <= r0``, inner shell ``(r0, r1)``,
    middle ``[r1, r2]``, outer shell ``(r2, r3)``, rest ``r >= r3``.
    """
    r0, r1, r2, r3 = shell_radii(neck)
    x = np.asarray(x, dtype=float)
    labels = np.full(x.shape[:-1], PARTITION.index("U_rest"), dtype=np.int8)
    for side, base in (("L", 0), ("R", 4)):
        r = np.linalg.norm(x - chart.marked(side), axis=-1)
        labels = np.where(r <= r0, base, labels)
        labels = np.where((r > r0) & (r < r1), base + 1, labels)
        labels = np.where((r >= r1) & (r <= r2), base + 2, labels)
        labels = np.where((r > r2) & (r < r3), base + 3, labels)
    return labels


def classify_point(x, chart, neck):
    """Set of region tags containing the single point ``x``."""
    r0, r1, r2, r3 = shell_radii(neck)
    tags = set()
    excised = False
    for side in ("L", "R"):
        r = float(np.linalg.norm(np.asarray(x, dtype=float) - chart.marked(side)))
        if r <= r0:
            tags.add(f"excised_{side}")
            excised = True
            continue
        if r < r3:
            tags.add(f"Omega_{side}")
        if r0 < r < r1:
            tags.add(f"{side}-")
        if r2 < r < r3:
            tags.add(f"{side}+")
    if not excised:
        tags.add("U")
    return tags
