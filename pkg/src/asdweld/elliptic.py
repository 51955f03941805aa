"""Linearised ASD operator, the perturbation equation and the new error term.

The operator acting on an ad-valued 1-form ``b`` is

    D b = (d_A^* b,  P+(d_A b + [a ^ b]))

with values in ad 0-forms plus self-dual 2-forms.  It is inverted in the
least-squares sense by damped CGLS (conjugate gradients on the normal
equations), which never forms a matrix.
"""

import json
from dataclasses import dataclass, field

import numpy as np

from . import geometry
from .fields import calculus as calc
from .fields.forms import sd_project, wedge_scalar_one, wedge_square
from .fields.kernels import OperatorKernel


class SolveError(RuntimeError):
    """Raised when an iterative solve fails; carries the residual history."""

    def __init__(self, message, history=()):
        super().__init__(message)
        self.history = list(history)


class PreconditionError(ValueError):
    pass


def spectral_scale(chart):
    """Squared lowest non-zero wavenumber of the chart, (2 pi / size)^2."""
    return (2.0 * np.pi / chart.size) ** 2


@dataclass
class LinearizedOperator:
    """The map ``b -> (d_A^* b, d_A^+ b + [a ^ b]^+)`` on one chart.

    ``mu`` is an absolute Tikhonov weight; by default it is ``1e-8`` times
    :func:`spectral_scale`.

    On a non-periodic box the equations are imposed only on nodes at least
    ``margin`` layers from the faces (default 1).  The free-boundary box
    discretisation carries only one of the two boundary conditions a
    first-order elliptic system in four dimensions needs, and the missing
    one shows up as a large near-cokernel living on the faces; dropping the
    face rows removes it and the face layer acts as an artificial boundary.
    """

    chart: object
    A: np.ndarray
    a: np.ndarray = None
    mu: float = None
    tol: float = 1e-9
    max_iter: int = 4000
    margin: int = None
    compiled: bool = True

    def __post_init__(self):
        if self.a is None:
            self.a = np.zeros_like(self.A)
        if self.mu is None:
            self.mu = 1e-8 * spectral_scale(self.chart)
        if self.mu < 0:
            raise ValueError("regularisation weight must be non-negative")
        self._Aa = self.A + self.a
        if self.margin is None:
            self.margin = 0 if self.chart.periodic else 1
        self.rows = equation_mask(self.chart, self.margin)
        self._kernel = OperatorKernel(self.chart, self.A, self._Aa) if self.compiled else None

    @property
    def grid(self):
        return self.chart.shape

    def apply(self, b):
        if self._kernel is not None:
            s, u = self._kernel.apply(b)
        else:
            s = calc.cov_d_star(self.chart, self.A, b)
            u = calc.cov_d_plus(self.chart, self._Aa, b)
        return self.restrict(s, u)

    def restrict(self, s, u):
        if self.rows is None:
            return s, u
        keep = self.rows[..., None]
        return s * keep, u * keep[..., None]

    def adjoint(self, s, u):
        s, u = self.restrict(s, u)
        if self._kernel is not None:
            return self._kernel.adjoint(s, u)
        return calc.cov_d(self.chart, self.A, s) + calc.cov_d_plus_T(self.chart, self._Aa, u)

    __call__ = apply


def equation_mask(chart, margin):
    """Boolean grid mask of nodes at least ``margin`` layers inside the box
    (``None`` when every node carries an equation)."""
    if margin <= 0:
        return None
    n = chart.resolution
    ok = np.zeros(n, dtype=bool)
    ok[margin:n - margin] = True
    return ok[:, None, None, None] & ok[None, :, None, None] & ok[None, None, :, None] & ok[None, None, None, :]


def _dot(x, y):
    return float(np.vdot(x, y))


def _pair_norm(s, u):
    return float(np.sqrt(_dot(s, s) + _dot(u, u)))


def linear_solve(op, rhs, x0=None, return_info=False):
    """Minimise ``|op(b) - rhs|^2 + mu |b|^2`` by CG on the normal equations (CGLS).

    ``rhs`` is a pair ``(s, u)`` of a 0-form and an SD form.  Success means
    ``|op(b) - rhs| <= tol |rhs|``; otherwise :class:`SolveError` is raised
    with the relative residual history.
    """
    s_rhs, u_rhs = op.restrict(*(np.asarray(r, dtype=float) for r in rhs))
    if not (np.all(np.isfinite(s_rhs)) and np.all(np.isfinite(u_rhs))):
        raise ValueError("right-hand side is not finite")
    bnorm = _pair_norm(s_rhs, u_rhs)
    shape = op.grid + (4, 3)
    if bnorm == 0.0:
        out = np.zeros(shape)
        return (out, {"iterations": 0, "residual": 0.0, "history": [0.0]}) if return_info else out

    mu = op.mu
    x = np.zeros(shape) if x0 is None else np.array(x0, dtype=float)
    if x0 is None:
        rs, ru = s_rhs.copy(), u_rhs.copy()
    else:
        ps, pu = op.apply(x)
        rs, ru = s_rhs - ps, u_rhs - pu
    g = op.adjoint(rs, ru) - mu * x
    p = g.copy()
    gamma = _dot(g, g)
    history = [_pair_norm(rs, ru) / bnorm]
    it = 0
    while history[-1] > op.tol:
        if it >= op.max_iter:
            raise SolveError(
                f"solver did not reach relative residual {op.tol:g} in {op.max_iter} iterations "
                f"(last {history[-1]:.3e})",
                history,
            )
        qs, qu = op.apply(p)
        denom = _dot(qs, qs) + _dot(qu, qu) + mu * _dot(p, p)
        if denom <= 0.0 or gamma <= 0.0:
            raise SolveError(f"normal equations are stationary at relative residual {history[-1]:.3e}", history)
        alpha = gamma / denom
        x += alpha * p
        rs -= alpha * qs
        ru -= alpha * qu
        g = op.adjoint(rs, ru) - mu * x
        gamma_new = _dot(g, g)
        p = g + (gamma_new / gamma) * p
        gamma = gamma_new
        it += 1
        history.append(_pair_norm(rs, ru) / bnorm)
        if it > 100 and history[-1] > 0.999 * history[-100]:
            raise SolveError(
                f"solver stagnated at relative residual {history[-1]:.3e}; rhs is outside the range",
                history,
            )
    info = {"iterations": it, "residual": history[-1], "history": history}
    return (x, info) if return_info else x


# ---------------------------------------------------------------------------
# the nonlinear perturbation equation


@dataclass
class SolveReport:
    residual: float
    iterations: int
    norms: dict = field(default_factory=dict)
    measured: dict = field(default_factory=dict)

    def to_json(self):
        return json.dumps(
            {"residual": self.residual, "iterations": self.iterations,
             "norms": self.norms, "measured": self.measured},
            sort_keys=True,
        )

    @classmethod
    def from_json(cls, text):
        d = json.loads(text)
        return cls(d["residual"], d["iterations"], d["norms"], d["measured"])


def full_residual(op, b, sigma):
    """Residual of ``D b + [a^b]^+ + (b^b)^+ = -sigma`` as a pair."""
    s, u = op.apply(b)
    return op.restrict(s, u + sd_project(wedge_square(b)) + sigma)


def perturbation_solve(chart, A, a, sigma, p=8, tol=1e-6, floor=1e-13, max_picard=60,
                       kappa=None, eta=None, mu=None, b0=None, inner_tol=None, max_iter=4000, adaptive=True):
    """Solve the quadratic equation for ``b`` by Picard iteration.

    Each step solves ``D b_new = -sigma - (b_old ^ b_old)^+`` (warm started).
    Stops when the full nonlinear residual is at most ``tol * max(|sigma|, floor)``.
    With ``adaptive`` the early linear solves stop at a looser relative
    residual, ``min(1e-2, r^2)`` for current relative nonlinear residual ``r``,
    never below ``inner_tol`` (default ``tol / 10``).
    ``kappa`` bounds ``|sigma|_inf`` and ``eta`` bounds ``|a|_{L^2p}``.
    """
    if p <= 6:
        raise PreconditionError(f"the exponent p must exceed 6, got {p}")
    a = np.zeros_like(A) if a is None else a
    if kappa is not None:
        s_inf = calc.norm(chart, sigma, "SD", "Linf")
        if s_inf > kappa:
            raise PreconditionError(f"kappa precondition failed: |sigma|_inf = {s_inf:.3e} > kappa = {kappa:.3e}")
    if eta is not None:
        a_2p = calc.norm(chart, a, 1, "Lp", p=2 * p)
        if a_2p > eta:
            raise PreconditionError(f"eta precondition failed: |a|_L2p = {a_2p:.3e} > eta = {eta:.3e}")

    inner_tol = 0.1 * tol if inner_tol is None else inner_tol
    op = LinearizedOperator(chart, A, a, mu=mu, tol=inner_tol, max_iter=max_iter)
    zero0 = np.zeros(chart.shape + (3,))
    snorm = _pair_norm(*op.restrict(zero0, sigma))
    target = tol * max(snorm, floor)
    b = np.zeros(chart.shape + (4, 3)) if b0 is None else np.array(b0, dtype=float)
    history = []
    total_it = 0
    for k in range(max_picard + 1):
        rs, ru = full_residual(op, b, sigma)
        res = _pair_norm(rs, ru)
        history.append(res)
        if res <= target:
            break
        if k == max_picard or (k >= 3 and res > history[-2] and res > history[-3]):
            raise SolveError(f"Picard iteration diverged or stalled (residual {res:.3e})", history)
        rhs_u = -sigma - sd_project(wedge_square(b))
        if snorm == 0.0 and not np.any(rhs_u):
            b = np.zeros_like(b)
            continue
        if adaptive and snorm > 0:
            op.tol = max(inner_tol, min(1e-2, (res / snorm) ** 2))
        b, info = linear_solve(op, (zero0, rhs_u), x0=b, return_info=True)
        total_it += info["iterations"]
    report = SolveReport(res, total_it, _norms(chart, A + a, b, sigma, p), {"picard_steps": k, "picard_history": history})
    return b, report


def _norms(chart, A, b, sigma, p):
    b_lp1 = calc.norm(chart, b, 1, "Lp1", p=p, A=A)
    s_lp = calc.norm(chart, sigma, "SD", "Lp", p=p)
    return {
        "b_L2p": calc.norm(chart, b, 1, "Lp", p=2 * p),
        "b_Lp1": b_lp1,
        "b_inf": calc.norm(chart, b, 1, "Linf"),
        "sigma_Lp": s_lp,
        "sigma_inf": calc.norm(chart, sigma, "SD", "Linf"),
        "ratio_b_Lp1_over_sigma_Lp": b_lp1 / s_lp if s_lp > 0 else 0.0,
    }


# ---------------------------------------------------------------------------
# the new error term


def new_error(psi, dpsi, b, sigma=None, support_tol=1e-10):
    """Closed-form self-dual error ``(dpsi ^ b)^+ + psi (psi - 1) (b ^ b)^+``.

    This is the error left by splicing ``psi b`` onto ``A + a`` when ``b``
    solves the quadratic equation for ``sigma`` and ``psi = 1`` on the support
    of ``sigma``; the second condition is checked (relative to the peak of
    ``|sigma|``) when ``sigma`` is given.
    """
    if sigma is not None:
        s = np.sqrt(np.sum(np.square(sigma), axis=(-2, -1)))
        top = s.max()
        if top > 0 and np.any(s[psi < 1.0 - 1e-12] > support_tol * top):
            raise PreconditionError("sigma is not supported where the cutoff equals 1")
    return (sd_project(wedge_scalar_one(dpsi, b))
            + (psi * (psi - 1.0))[..., None, None] * sd_project(wedge_square(b)))


def new_error_direct(chart, A, a, psi, b):
    """Stencil recomputation of the same quantity.

    ``F+(A + a + psi b) - F+(A + a) - psi (d+_{A+a} b + (b ^ b)^+)``; it equals
    :func:`new_error` up to the product-rule defect of the difference stencil.
    """
    B = A + a
    pb = psi[..., None, None] * b
    lin = calc.cov_d_plus(chart, B, b) + sd_project(wedge_square(b))
    return calc.sd_curvature(chart, B + pb) - calc.sd_curvature(chart, B) - psi[..., None, None] * lin


def estimate_report(chart, neck, delta, tau, psi_b, F_before, F_after, mask_U=None, p=8, path=None):
    """Empirical constants of the linear estimates.

    ``delta`` is the sup of the self-dual error fed to the solve, ``tau`` the
    new error, ``psi_b`` the spliced correction and ``F_before/F_after`` the
    curvature before and after splicing.  ``path`` optionally maps ``t`` to a
    pair ``(t, psi_b(t))`` list for finite-difference derivative ratios.
    """
    KN = float(geometry.K_N(neck.N))
    lam = neck.lam
    tau_inf = calc.norm(chart, tau, "SD", "Linf")
    out = {
        "delta": float(delta),
        "K_N": KN,
        "tau_inf": tau_inf,
        "C2_empirical": tau_inf / (KN * neck.N**4 * delta) if delta > 0 else 0.0,
        "psi_b_Lp1_ratio": (calc.norm(chart, psi_b, 1, "Lp", p=p) / (lam ** (2.0 / p) * delta)) if delta > 0 else 0.0,
    }
    dF = F_after - F_before
    dFn = calc.norm(chart, dF, 2, "L2", mask=mask_U)
    out["energy_change_ratio"] = dFn / (lam * delta) if delta > 0 else 0.0
    out["contraction_rule_ok"] = bool(out["C2_empirical"] * KN <= 0.5)
    if path:
        ts = [t for t, _ in path]
        vals = [v for _, v in path]
        ratios = []
        for i in range(1, len(path)):
            dt = ts[i] - ts[i - 1]
            dv = calc.norm(chart, vals[i] - vals[i - 1], 1, "Lp", p=p)
            ratios.append(dv / (abs(dt) * delta) if delta > 0 and dt != 0 else 0.0)
        out["t_derivative_ratios"] = ratios
    return out
