"""Pointwise algebra of ad-valued forms.

Layouts, trailing axes after the grid axes:

* 0-form ``(3,)``
* 1-form ``(4, 3)``, component index first, algebra index last
* 2-form ``(6, 3)``, components ordered as :data:`PAIRS`
* self-dual 2-form ``(3, 3)``: coefficients over the orthonormal basis

      e1 = (dx0^dx1 + dx2^dx3)/sqrt2, e2 = (dx0^dx2 - dx1^dx3)/sqrt2,
      e3 = (dx0^dx3 + dx1^dx2)/sqrt2

  for the orientation dx0^dx1^dx2^dx3, so pointwise norms agree with the
  embedded 2-form.
"""

import numpy as np

from .algebra import SQRT2, bracket

PAIRS = ((0, 1), (0, 2), (0, 3), (1, 2), (1, 3), (2, 3))
PAIR_INDEX = {p: i for i, p in enumerate(PAIRS)}

# row k of SD_MATRIX gives e_k in PAIRS coordinates; orthonormal rows
SD_MATRIX = np.array(
    [
        [1, 0, 0, 0, 0, 1],
        [0, 1, 0, 0, -1, 0],
        [0, 0, 1, 1, 0, 0],
    ],
    dtype=float,
) / SQRT2
ASD_MATRIX = np.array(
    [
        [1, 0, 0, 0, 0, -1],
        [0, 1, 0, 0, 1, 0],
        [0, 0, 1, -1, 0, 0],
    ],
    dtype=float,
) / SQRT2

DEGREE_TAIL = {0: (3,), 1: (4, 3), 2: (6, 3), "SD": (3, 3)}


class DegreeError(ValueError):
    pass


def check_degree(x, degree):
    tail = DEGREE_TAIL[degree]
    if x.shape[-len(tail):] != tail:
        raise DegreeError(f"array of shape {x.shape} is not a degree-{degree} form")


def sd_project(omega):
    """Self-dual part ``(1 + *)/2`` of a 2-form, as SD coefficients."""
    return np.einsum("kp,...pa->...ka", SD_MATRIX, omega)


def asd_project(omega):
    return np.einsum("kp,...pa->...ka", ASD_MATRIX, omega)


def sd_embed(u):
    """SD coefficients -> the self-dual 2-form in PAIRS layout."""
    return np.einsum("kp,...ka->...pa", SD_MATRIX, u)


def hodge_star(omega):
    """Hodge star on 2-forms for the flat metric and orientation 0123."""
    out = np.empty_like(omega)
    out[..., 0, :] = omega[..., 5, :]
    out[..., 5, :] = omega[..., 0, :]
    out[..., 1, :] = -omega[..., 4, :]
    out[..., 4, :] = -omega[..., 1, :]
    out[..., 2, :] = omega[..., 3, :]
    out[..., 3, :] = omega[..., 2, :]
    return out


def plus_part(omega):
    """``P+ omega = (omega + *omega) / 2`` as a 2-form.

    Written so that ``plus_part(plus_part(w))`` equals ``plus_part(w)`` bit for
    bit: on a self-dual input ``*w`` is a permutation of ``w`` with the same
    signs, so the sum and halving are exact.
    """
    omega = np.asarray(omega)
    return 0.5 * (omega + hodge_star(omega))


def two_form_full(omega):
    """PAIRS layout -> antisymmetric ``(..., 4, 4, 3)``."""
    full = np.zeros(omega.shape[:-2] + (4, 4, omega.shape[-1]))
    for i, (m, n) in enumerate(PAIRS):
        full[..., m, n, :] = omega[..., i, :]
        full[..., n, m, :] = -omega[..., i, :]
    return full


def two_form_pack(full):
    return np.stack([full[..., m, n, :] for m, n in PAIRS], axis=-2)


def wedge_scalar_one(f, b):
    """Scalar 1-form ``f`` (..., 4) wedged with ad-valued 1-form ``b``."""
    return np.stack(
        [f[..., m, None] * b[..., n, :] - f[..., n, None] * b[..., m, :] for m, n in PAIRS],
        axis=-2,
    )


def bracket_wedge(a, b, p, q):
    """Graded ``[a ^ b]`` of a p-form and a q-form, p + q <= 2."""
    if p + q > 2:
        raise DegreeError(f"degree {p}+{q} exceeds 2 on the 2-form level used here")
    if p == 0 and q == 0:
        return bracket(a, b)
    if p == 0:
        return bracket(a[..., None, :], b)
    if q == 0:
        return bracket(a, b[..., None, :])
    return np.stack(
        [bracket(a[..., m, :], b[..., n, :]) - bracket(a[..., n, :], b[..., m, :]) for m, n in PAIRS],
        axis=-2,
    )


def wedge_square(b):
    """``(b ^ b) = 1/2 [b ^ b]`` with components ``[b_m, b_n]``."""
    return np.stack([bracket(b[..., m, :], b[..., n, :]) for m, n in PAIRS], axis=-2)


def pointwise_norm(x, degree):
    """Invariant pointwise norm; forms are Euclidean over their components."""
    tail = DEGREE_TAIL[degree]
    axes = tuple(range(-len(tail), 0))
    return np.sqrt(np.sum(np.square(x), axis=axes))
