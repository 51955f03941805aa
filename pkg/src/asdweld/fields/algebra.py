"""su(2) and SU(2) on plain numpy arrays.

Algebra elements are stored as ``(..., 3)`` coefficient arrays over the basis
``T_a = -i sigma_a / sqrt(2)``.  In that basis ``-tr(T_a T_b) = delta_ab`` so the
coefficient Euclidean norm is the invariant norm, and

    [T_a, T_b] = sqrt(2) eps_abc T_c.

Group elements are unit quaternions ``(w, x, y, z)`` stored as ``(..., 4)``.
The quaternion units i, j, k correspond to ``-i sigma_1, -i sigma_2, -i sigma_3``,
hence ``T_a = e_a / sqrt(2)``.
"""

import numpy as np

SQRT2 = np.sqrt(2.0)

PAULI = np.array(
    [
        [[0, 1], [1, 0]],
        [[0, -1j], [1j, 0]],
        [[1, 0], [0, -1]],
    ],
    dtype=complex,
)
BASIS = -1j * PAULI / SQRT2

CENTER = (np.array([1.0, 0, 0, 0]), np.array([-1.0, 0, 0, 0]))


def bracket(x, y):
    """Lie bracket of coefficient arrays, broadcasting over leading axes."""
    return SQRT2 * np.cross(x, y)


def to_matrix(x):
    """Coefficients ``(..., 3)`` -> anti-Hermitian traceless ``(..., 2, 2)``."""
    return np.einsum("...a,aij->...ij", np.asarray(x, dtype=float), BASIS)


def from_matrix(m):
    """Inverse of :func:`to_matrix` (projects onto su(2))."""
    # -tr(T_a M) recovers the coefficient of T_a
    return -np.einsum("aij,...ji->...a", BASIS, m).real


def inner(x, y):
    return np.sum(x * y, axis=-1)


def norm(x):
    return np.sqrt(np.sum(np.square(x), axis=-1))


# ---------------------------------------------------------------------------
# group

def identity(shape=()):
    q = np.zeros(tuple(shape) + (4,))
    q[..., 0] = 1.0
    return q


def qmul(p, q):
    """Hamilton product, broadcasting."""
    pw, px, py, pz = np.moveaxis(np.asarray(p, dtype=float), -1, 0)
    qw, qx, qy, qz = np.moveaxis(np.asarray(q, dtype=float), -1, 0)
    return np.stack(
        [
            pw * qw - px * qx - py * qy - pz * qz,
            pw * qx + px * qw + py * qz - pz * qy,
            pw * qy - px * qz + py * qw + pz * qx,
            pw * qz + px * qy - py * qx + pz * qw,
        ],
        axis=-1,
    )


def qconj(q):
    q = np.array(q, dtype=float)
    q[..., 1:] *= -1.0
    return q


def qinv(q):
    return qconj(q) / np.sum(np.square(q), axis=-1, keepdims=True)


def normalize(q):
    return q / np.linalg.norm(q, axis=-1, keepdims=True)


def group_matrix(q):
    """Unit quaternion -> SU(2) matrix in the representation fixed above."""
    q = np.asarray(q, dtype=float)
    w = q[..., 0]
    out = w[..., None, None] * np.eye(2)
    # e_a = sqrt(2) T_a = -i sigma_a
    return out + np.einsum("...a,aij->...ij", q[..., 1:], -1j * PAULI)


def group_from_matrix(m):
    w = 0.5 * np.trace(m, axis1=-2, axis2=-1).real
    # tr(e_a^dag M) / 2 = tr(i sigma_a M) / 2
    v = 0.5 * np.einsum("aij,...ji->...a", 1j * PAULI, m).real
    return np.concatenate([w[..., None], v], axis=-1)


def adjoint_matrix(q):
    """3x3 rotation R with  q T(x) q^-1 = T(R x)  for unit q.

    Entries are quadratic in q, so ``adjoint_matrix(-q)`` equals
    ``adjoint_matrix(q)`` bit for bit.
    """
    q = np.asarray(q, dtype=float)
    w, x, y, z = np.moveaxis(q, -1, 0)
    r = np.empty(q.shape[:-1] + (3, 3))
    r[..., 0, 0] = 1 - 2 * (y * y + z * z)
    r[..., 0, 1] = 2 * (x * y - w * z)
    r[..., 0, 2] = 2 * (x * z + w * y)
    r[..., 1, 0] = 2 * (x * y + w * z)
    r[..., 1, 1] = 1 - 2 * (x * x + z * z)
    r[..., 1, 2] = 2 * (y * z - w * x)
    r[..., 2, 0] = 2 * (x * z - w * y)
    r[..., 2, 1] = 2 * (y * z + w * x)
    r[..., 2, 2] = 1 - 2 * (x * x + y * y)
    return r


def ad(q, x):
    """Conjugation ``q x q^-1`` on coefficient arrays; q broadcasts against x[..., :]."""
    return np.einsum("...ij,...j->...i", adjoint_matrix(q), x)


def exp(x):
    """exp: su(2) coefficients -> unit quaternion."""
    x = np.asarray(x, dtype=float)
    v = x / SQRT2
    theta = np.linalg.norm(v, axis=-1)
    # sin(theta)/theta, series near zero
    small = theta < 1e-8
    safe = np.where(small, 1.0, theta)
    sinc = np.where(small, 1.0 - theta**2 / 6.0, np.sin(safe) / safe)
    return np.concatenate([np.cos(theta)[..., None], sinc[..., None] * v], axis=-1)


def log(q):
    """Principal log of a unit quaternion as su(2) coefficients.

    At ``q = -1`` the rotation axis is undefined; the first basis direction is
    used so the result is deterministic.
    """
    q = normalize(np.asarray(q, dtype=float))
    w = np.clip(q[..., 0], -1.0, 1.0)
    v = q[..., 1:]
    s = np.linalg.norm(v, axis=-1)
    theta = np.arctan2(s, w)
    small = s < 1e-12
    safe = np.where(small, 1.0, s)
    scale = np.where(small, 1.0, theta / safe)
    out = scale[..., None] * v
    antipodal = small & (w < 0)
    if np.any(antipodal):
        out = np.array(out)
        out[antipodal] = np.array([np.pi, 0.0, 0.0])
    return SQRT2 * out


def distance(p, q):
    """Bi-invariant geodesic distance on SU(2) (norm of the log of p^-1 q)."""
    return norm(log(qmul(qconj(p), q)))


def random_group(rng, shape=()):
    q = rng.normal(size=tuple(shape) + (4,))
    return normalize(q)


def axis_rotation(axis, angle):
    """Group element acting on su(2) as a rotation by ``angle`` about ``axis``."""
    axis = np.asarray(axis, dtype=float)
    axis = axis / np.linalg.norm(axis)
    return np.concatenate([[np.cos(angle / 2)], np.sin(angle / 2) * axis])
