"""Gauge transformations, the exponential (radial) gauge and BPST backgrounds.

Connections that must be evaluated off the grid (neck transports, ray
integrals) are plain callables ``fn(points) -> (..., 4, 3)``.
"""

import numpy as np
from scipy.interpolate import RegularGridInterpolator

from . import algebra as alg
from .calculus import Connection, diff

SQRT2 = alg.SQRT2


def coef_to_quat(x):
    """su(2) coefficients -> pure quaternion with the same matrix."""
    x = np.asarray(x, dtype=float)
    return np.concatenate([np.zeros(x.shape[:-1] + (1,)), x / SQRT2], axis=-1)


def quat_to_coef(q):
    return SQRT2 * np.asarray(q)[..., 1:]


# ---------------------------------------------------------------------------
# analytic backgrounds

def flat_connection():
    def fn(x):
        x = np.asarray(x, dtype=float)
        return np.zeros(x.shape[:-1] + (4, 3))

    return fn


def constant_connection(value):
    value = np.asarray(value, dtype=float).reshape(4, 3)

    def fn(x):
        x = np.asarray(x, dtype=float)
        return np.broadcast_to(value, x.shape[:-1] + (4, 3)).copy()

    return fn


_UNITS = np.eye(4)


def bpst_connection(center, scale, anti=False):
    """Regular-gauge BPST instanton ``Im(conj(x) dx) / (|x|^2 + s^2)``.

    With the orientation dx0^dx1^dx2^dx3 and ``F = dA + A^A`` this field is
    anti-self-dual; ``anti=True`` gives the self-dual ``Im(x conj(dx))`` form.
    """
    center = np.asarray(center, dtype=float)
    s2 = float(scale) ** 2

    def fn(x):
        y = np.asarray(x, dtype=float) - center
        r2 = np.sum(y * y, axis=-1)
        out = np.empty(y.shape[:-1] + (4, 3))
        for mu in range(4):
            e = _UNITS[mu]
            if anti:
                q = alg.qmul(y, alg.qconj(e))
            else:
                q = alg.qmul(alg.qconj(y), e)
            out[..., mu, :] = SQRT2 * q[..., 1:] / (r2 + s2)[..., None]
        return out

    return fn


def bpst_action_density(x, center, scale):
    """Closed-form sum_{m<n} |F_mn|^2 = 48 s^4 / (r^2 + s^2)^4."""
    r2 = np.sum(np.square(np.asarray(x, dtype=float) - np.asarray(center)), axis=-1)
    return 48.0 * scale**4 / (r2 + scale**2) ** 4


def bpst_background(chart, center, scale, anti=False):
    fn = bpst_connection(center, scale, anti)
    return Connection(chart, fn(chart.coords()))


# ---------------------------------------------------------------------------
# gauge action

def apply_gauge(chart, g, A):
    """Grid gauge action ``g A g^-1 - (dg) g^-1`` with centred differences for dg."""
    if isinstance(A, Connection):
        return Connection(A.chart, apply_gauge(chart, g, A.background), alg.ad(g[..., None, :], A.perturbation))
    h, per = chart.h, chart.periodic
    ginv = alg.qconj(g)
    out = alg.ad(g[..., None, :], A)
    for mu in range(4):
        dg = diff(g, mu, h, per)
        out[..., mu, :] -= quat_to_coef(alg.qmul(dg, ginv))
    return out


def gauge_transform_fn(A_fn, g_fn, eps=1e-5):
    """Callable gauge action; dg from a centred difference of step ``eps``."""

    def fn(x):
        x = np.asarray(x, dtype=float)
        g = g_fn(x)
        ginv = alg.qconj(g)
        out = alg.ad(g[..., None, :], A_fn(x))
        for mu in range(4):
            step = np.zeros(4)
            step[mu] = eps
            dg = (g_fn(x + step) - g_fn(x - step)) / (2 * eps)
            out[..., mu, :] -= quat_to_coef(alg.qmul(dg, ginv))
        return out

    return fn


def ray_transport(A_fn, center, x, steps=48):
    """Parallel transport g(x) along the segment center -> x, ``g(center) = 1``.

    Solves ``dg/dt = g (A(c + t v) . v)`` with classical RK4.  With this g the
    transformed connection ``g A g^-1 - dg g^-1`` has no radial component.
    """
    x = np.asarray(x, dtype=float)
    c = np.asarray(center, dtype=float)
    v = x - c
    g = alg.identity(x.shape[:-1])
    dt = 1.0 / steps

    def gen(t):
        a = A_fn(c + t * v)
        return coef_to_quat(np.einsum("...ma,...m->...a", a, v))

    for i in range(steps):
        t = i * dt
        x1 = gen(t)
        x2 = gen(t + 0.5 * dt)
        x3 = gen(t + dt)
        k1 = alg.qmul(g, x1)
        k2 = alg.qmul(g + 0.5 * dt * k1, x2)
        k3 = alg.qmul(g + 0.5 * dt * k2, x2)
        k4 = alg.qmul(g + dt * k3, x3)
        g = g + dt / 6.0 * (k1 + 2 * k2 + 2 * k3 + k4)
        g = alg.normalize(g)
    return g


def exponential_gauge(A, center, radius, points=None, chart=None, steps=48):
    """Gauge field putting ``A`` in exponential gauge about ``center``.

    ``A`` is a callable or a grid :class:`Connection` (interpolated).  Returns
    ``g`` at ``points`` (default: chart nodes inside the ball; nodes outside
    get the identity) and the boolean ball mask.
    """
    if isinstance(A, Connection):
        chart = A.chart
        A = grid_function(A.chart, A.total)
    c = np.asarray(center, dtype=float)
    if chart is not None and not chart.periodic:
        if np.any(c - radius < 0) or np.any(c + radius > chart.size):
            raise ValueError("exponential-gauge ball exceeds the chart")
    if points is None:
        points = chart.coords()
    r = np.linalg.norm(points - c, axis=-1)
    inside = r <= radius
    g = alg.identity(points.shape[:-1])
    if np.any(inside):
        g[inside] = ray_transport(A, c, points[inside], steps)
    return g, inside


def blended_exponential_gauge(A_fn, centers, inner, outer, steps=48):
    """Gauge function equal to the exponential gauge about each centre within
    ``inner`` and to the identity beyond ``outer``.

    Between the two radii the log of the transport is scaled by a C^2 quintic step,
    so the balls of radius ``outer`` must be disjoint.
    """
    centers = [np.asarray(c, dtype=float) for c in centers]

    def g_fn(x):
        x = np.asarray(x, dtype=float)
        g = alg.identity(x.shape[:-1])
        for c in centers:
            r = np.linalg.norm(x - c, axis=-1)
            sel = r < outer
            if not np.any(sel):
                continue
            t = np.clip((outer - r[sel]) / (outer - inner), 0.0, 1.0)
            chi = t**3 * (10 - 15 * t + 6 * t * t)
            gc = ray_transport(A_fn, c, x[sel], steps)
            full = chi >= 1.0
            blend = alg.exp(chi[:, None] * alg.log(gc))
            g[sel] = np.where(full[:, None], gc, blend)
        return g

    return g_fn


def radial_component(A_fn, center, points):
    """``A(x) . (x - c) / |x - c|`` evaluated at the points."""
    v = np.asarray(points, dtype=float) - np.asarray(center)
    r = np.linalg.norm(v, axis=-1, keepdims=True)
    return np.einsum("...ma,...m->...a", A_fn(points), v / r)


# ---------------------------------------------------------------------------
# grid <-> function

def grid_function(chart, values):
    """Multilinear interpolant of a grid array, extrapolating past the outer nodes."""
    ax = chart.axis()
    tail = values.shape[4:]
    interp = RegularGridInterpolator((ax, ax, ax, ax), values.reshape(chart.shape + (-1,)),
                                     method="linear", bounds_error=False, fill_value=None)

    def fn(x):
        x = np.asarray(x, dtype=float)
        if chart.periodic:
            x = np.mod(x, chart.size)
        flat = interp(x.reshape(-1, 4))
        return flat.reshape(x.shape[:-1] + tail)

    return fn


def random_gauge(chart, rng, modes=2, amplitude=1.0):
    """Smooth random gauge field built from a few low Fourier modes."""
    x = chart.coords() * (2 * np.pi / chart.size)
    gen = np.zeros(chart.shape + (3,))
    for _ in range(modes):
        kvec = rng.integers(-1, 2, size=4)
        phase = rng.uniform(0, 2 * np.pi)
        amp = rng.normal(size=3) * amplitude / modes
        gen += np.cos(x @ kvec + phase)[..., None] * amp
    return alg.exp(gen)
