"""Compiled kernels for the linearised operator and its transpose.

These fuse the stencil loops of :mod:`asdweld.fields.calculus` so that an
iterative solve does not allocate temporaries on every application.  They
compute exactly the same linear maps (checked against the array versions in
the tests):

* ``apply``:   b -> (d_A^* b, P+(d b + [B ^ b]))
* ``adjoint``: (s, u) -> d_A s + (P+ d_B)^T u

where ``A`` is the reference connection and ``B = A + a``.
"""

import numba
import numpy as np

from .forms import SD_MATRIX

_SQRT2 = np.sqrt(2.0)
_PAIRS = np.array([(0, 1), (0, 2), (0, 3), (1, 2), (1, 3), (2, 3)], dtype=np.int64)
_SD = np.ascontiguousarray(SD_MATRIX)


def stencil(n, h, periodic):
    """Per-node gather stencil of the 1D centred difference: ``(idx, w)`` of shape ``(n, 3)``."""
    idx = np.zeros((n, 3), dtype=np.int64)
    w = np.zeros((n, 3))
    for i in range(n):
        if periodic or 0 < i < n - 1:
            idx[i] = ((i - 1) % n, (i + 1) % n, i)
            w[i] = (-1.0, 1.0, 0.0)
        elif i == 0:
            idx[i] = (0, 1, 2)
            w[i] = (-3.0, 4.0, -1.0)
        else:
            idx[i] = (n - 1, n - 2, n - 3)
            w[i] = (3.0, -4.0, 1.0)
    return idx, w / (2.0 * h)


@numba.njit(cache=True, inline="always")
def _shift(i0, i1, i2, i3, mu, j):
    if mu == 0:
        return j, i1, i2, i3
    if mu == 1:
        return i0, j, i2, i3
    if mu == 2:
        return i0, i1, j, i3
    return i0, i1, i2, j


@numba.njit(cache=True)
def _apply(b, A, B, idx, w, pairs, sd, s, u):
    n = b.shape[0]
    s[:] = 0.0
    u[:] = 0.0
    db = np.empty((4, 4, 3))
    two = np.empty((6, 3))
    for i0 in range(n):
        for i1 in range(n):
            for i2 in range(n):
                for i3 in range(n):
                    ii = (i0, i1, i2, i3)
                    # gathered derivatives D_m b_n
                    for m in range(4):
                        im = ii[m]
                        for nu in range(4):
                            for c in range(3):
                                db[m, nu, c] = 0.0
                        for k in range(3):
                            wk = w[im, k]
                            if wk == 0.0:
                                continue
                            j0, j1, j2, j3 = _shift(i0, i1, i2, i3, m, idx[im, k])
                            for nu in range(4):
                                for c in range(3):
                                    db[m, nu, c] += wk * b[j0, j1, j2, j3, nu, c]
                        # transpose part of d*: scatter w * b_m into the stencil nodes
                        for k in range(3):
                            wk = w[im, k]
                            if wk == 0.0:
                                continue
                            j0, j1, j2, j3 = _shift(i0, i1, i2, i3, m, idx[im, k])
                            for c in range(3):
                                s[j0, j1, j2, j3, c] += wk * b[i0, i1, i2, i3, m, c]
                    # -sum_m [A_m, b_m]
                    for m in range(4):
                        x0, x1, x2 = A[i0, i1, i2, i3, m, 0], A[i0, i1, i2, i3, m, 1], A[i0, i1, i2, i3, m, 2]
                        y0, y1, y2 = b[i0, i1, i2, i3, m, 0], b[i0, i1, i2, i3, m, 1], b[i0, i1, i2, i3, m, 2]
                        s[i0, i1, i2, i3, 0] -= _SQRT2 * (x1 * y2 - x2 * y1)
                        s[i0, i1, i2, i3, 1] -= _SQRT2 * (x2 * y0 - x0 * y2)
                        s[i0, i1, i2, i3, 2] -= _SQRT2 * (x0 * y1 - x1 * y0)
                    # d b + [B ^ b]
                    for p in range(6):
                        m = pairs[p, 0]
                        nu = pairs[p, 1]
                        xm0, xm1, xm2 = B[i0, i1, i2, i3, m, 0], B[i0, i1, i2, i3, m, 1], B[i0, i1, i2, i3, m, 2]
                        xn0, xn1, xn2 = B[i0, i1, i2, i3, nu, 0], B[i0, i1, i2, i3, nu, 1], B[i0, i1, i2, i3, nu, 2]
                        ym0, ym1, ym2 = b[i0, i1, i2, i3, m, 0], b[i0, i1, i2, i3, m, 1], b[i0, i1, i2, i3, m, 2]
                        yn0, yn1, yn2 = b[i0, i1, i2, i3, nu, 0], b[i0, i1, i2, i3, nu, 1], b[i0, i1, i2, i3, nu, 2]
                        two[p, 0] = db[m, nu, 0] - db[nu, m, 0] + _SQRT2 * ((xm1 * yn2 - xm2 * yn1) - (xn1 * ym2 - xn2 * ym1))
                        two[p, 1] = db[m, nu, 1] - db[nu, m, 1] + _SQRT2 * ((xm2 * yn0 - xm0 * yn2) - (xn2 * ym0 - xn0 * ym2))
                        two[p, 2] = db[m, nu, 2] - db[nu, m, 2] + _SQRT2 * ((xm0 * yn1 - xm1 * yn0) - (xn0 * ym1 - xn1 * ym0))
                    for kk in range(3):
                        for c in range(3):
                            acc = 0.0
                            for p in range(6):
                                acc += sd[kk, p] * two[p, c]
                            u[i0, i1, i2, i3, kk, c] = acc


@numba.njit(cache=True)
def _adjoint(s, u, A, B, idx, w, pairs, sd, out):
    n = s.shape[0]
    out[:] = 0.0
    wf = np.empty((6, 3))
    for i0 in range(n):
        for i1 in range(n):
            for i2 in range(n):
                for i3 in range(n):
                    ii = (i0, i1, i2, i3)
                    # d_A s: gathered D_m s + [A_m, s]
                    z0, z1, z2 = s[i0, i1, i2, i3, 0], s[i0, i1, i2, i3, 1], s[i0, i1, i2, i3, 2]
                    for m in range(4):
                        im = ii[m]
                        for k in range(3):
                            wk = w[im, k]
                            if wk == 0.0:
                                continue
                            j0, j1, j2, j3 = _shift(i0, i1, i2, i3, m, idx[im, k])
                            for c in range(3):
                                out[i0, i1, i2, i3, m, c] += wk * s[j0, j1, j2, j3, c]
                        x0, x1, x2 = A[i0, i1, i2, i3, m, 0], A[i0, i1, i2, i3, m, 1], A[i0, i1, i2, i3, m, 2]
                        out[i0, i1, i2, i3, m, 0] += _SQRT2 * (x1 * z2 - x2 * z1)
                        out[i0, i1, i2, i3, m, 1] += _SQRT2 * (x2 * z0 - x0 * z2)
                        out[i0, i1, i2, i3, m, 2] += _SQRT2 * (x0 * z1 - x1 * z0)
                    # embed the SD form
                    for p in range(6):
                        for c in range(3):
                            acc = 0.0
                            for kk in range(3):
                                acc += sd[kk, p] * u[i0, i1, i2, i3, kk, c]
                            wf[p, c] = acc
                    for p in range(6):
                        m = pairs[p, 0]
                        nu = pairs[p, 1]
                        # transpose of D_m acting on b_nu, and of -D_nu acting on b_m
                        im = ii[m]
                        for k in range(3):
                            wk = w[im, k]
                            if wk == 0.0:
                                continue
                            j0, j1, j2, j3 = _shift(i0, i1, i2, i3, m, idx[im, k])
                            for c in range(3):
                                out[j0, j1, j2, j3, nu, c] += wk * wf[p, c]
                        inu = ii[nu]
                        for k in range(3):
                            wk = w[inu, k]
                            if wk == 0.0:
                                continue
                            j0, j1, j2, j3 = _shift(i0, i1, i2, i3, nu, idx[inu, k])
                            for c in range(3):
                                out[j0, j1, j2, j3, m, c] -= wk * wf[p, c]
                        # transpose of [B ^ b]
                        xm0, xm1, xm2 = B[i0, i1, i2, i3, m, 0], B[i0, i1, i2, i3, m, 1], B[i0, i1, i2, i3, m, 2]
                        xn0, xn1, xn2 = B[i0, i1, i2, i3, nu, 0], B[i0, i1, i2, i3, nu, 1], B[i0, i1, i2, i3, nu, 2]
                        y0, y1, y2 = wf[p, 0], wf[p, 1], wf[p, 2]
                        out[i0, i1, i2, i3, nu, 0] -= _SQRT2 * (xm1 * y2 - xm2 * y1)
                        out[i0, i1, i2, i3, nu, 1] -= _SQRT2 * (xm2 * y0 - xm0 * y2)
                        out[i0, i1, i2, i3, nu, 2] -= _SQRT2 * (xm0 * y1 - xm1 * y0)
                        out[i0, i1, i2, i3, m, 0] += _SQRT2 * (xn1 * y2 - xn2 * y1)
                        out[i0, i1, i2, i3, m, 1] += _SQRT2 * (xn2 * y0 - xn0 * y2)
                        out[i0, i1, i2, i3, m, 2] += _SQRT2 * (xn0 * y1 - xn1 * y0)


class OperatorKernel:
    """Preallocated compiled application of the linearised operator on one chart."""

    def __init__(self, chart, A, B):
        self.idx, self.w = stencil(chart.resolution, chart.h, chart.periodic)
        self.A = np.ascontiguousarray(A, dtype=float)
        self.B = np.ascontiguousarray(B, dtype=float)
        self.grid = chart.shape

    def apply(self, b):
        s = np.empty(self.grid + (3,))
        u = np.empty(self.grid + (3, 3))
        _apply(np.ascontiguousarray(b, dtype=float), self.A, self.B, self.idx, self.w, _PAIRS, _SD, s, u)
        return s, u

    def adjoint(self, s, u):
        out = np.empty(self.grid + (4, 3))
        _adjoint(np.ascontiguousarray(s, dtype=float), np.ascontiguousarray(u, dtype=float),
                 self.A, self.B, self.idx, self.w, _PAIRS, _SD, out)
        return out
