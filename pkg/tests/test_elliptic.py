import json

import numpy as np
import pytest

from asdweld import elliptic as ell
from asdweld.fields import calculus as calc
from asdweld.fields.gauge import bpst_background
from asdweld.geometry import ChartSpec, K_N, NeckParams, block_cutoff, cutoff

from test_calculus import smooth_nonabelian


def bpst_box(n=10):
    ch = ChartSpec(2.0, n, (0.5, 1.0, 1.0, 1.0), (1.5, 1.0, 1.0, 1.0))
    return ch, bpst_background(ch, (1.0, 1.0, 1.0, 1.0), 0.4).background


def shell_sigma(ch, amp, center=(0.5, 1.0, 1.0, 1.0), radius=0.45, width=0.12):
    r = np.linalg.norm(ch.coords() - np.asarray(center), axis=-1)
    return np.exp(-((r - radius) / width) ** 2)[..., None, None] * amp


def test_compiled_operator_matches_reference(rng):
    ch, A = bpst_box(8)
    a = 0.1 * rng.normal(size=A.shape)
    fast = ell.LinearizedOperator(ch, A, a)
    ref = ell.LinearizedOperator(ch, A, a, compiled=False)
    b = rng.normal(size=A.shape)
    s = rng.normal(size=ch.shape + (3,))
    u = rng.normal(size=ch.shape + (3, 3))
    for x, y in zip(fast.apply(b), ref.apply(b)):
        assert np.abs(x - y).max() < 1e-12
    assert np.abs(fast.adjoint(s, u) - ref.adjoint(s, u)).max() < 1e-12
    lhs = sum(np.vdot(x, y) for x, y in zip(fast.apply(b), (s, u)))
    assert np.isclose(lhs, np.vdot(b, fast.adjoint(s, u)), rtol=1e-12)


def test_operator_is_the_fields_operator_on_interior_rows(rng):
    ch, A = bpst_box(8)
    op = ell.LinearizedOperator(ch, A)
    b = rng.normal(size=A.shape)
    s, u = op.apply(b)
    rows = op.rows
    assert np.allclose(s[rows], calc.cov_d_star(ch, A, b)[rows], atol=1e-12)
    assert np.allclose(u[rows], calc.cov_d_plus(ch, A, b)[rows], atol=1e-12)
    assert np.all(s[~rows] == 0) and np.all(u[~rows] == 0)


def test_zero_rhs_gives_zero():
    ch, A = bpst_box(8)
    op = ell.LinearizedOperator(ch, A)
    b = ell.linear_solve(op, (np.zeros(ch.shape + (3,)), np.zeros(ch.shape + (3, 3))))
    assert np.array_equal(b, np.zeros(A.shape))


def test_forward_apply_oracle_periodic():
    ch = ChartSpec(2 * np.pi, 8, (1.0, 1.0, 1.0, 1.0), (2.0, 1.0, 1.0, 1.0), periodic=True)
    A = 3 * smooth_nonabelian(ch)
    op = ell.LinearizedOperator(ch, A, mu=0.0, tol=1e-10, max_iter=20000)
    x = ch.coords()
    b0 = np.exp(-np.sum((x - np.pi) ** 2, -1) / 2)[..., None, None] * np.random.default_rng(0).normal(size=(4, 3))
    b = ell.linear_solve(op, op.apply(b0))
    assert np.abs(b - b0).max() <= 1e-6 * np.abs(b0).max()


def test_residual_contract_and_linearity_on_box(rng):
    ch, A = bpst_box(10)
    op = ell.LinearizedOperator(ch, A, tol=1e-7)
    zero = np.zeros(ch.shape + (3,))
    r1 = shell_sigma(ch, rng.normal(size=(3, 3)))
    r2 = shell_sigma(ch, rng.normal(size=(3, 3)), center=(1.5, 1.0, 1.0, 1.0))
    b1 = ell.linear_solve(op, (zero, r1))
    b2 = ell.linear_solve(op, (zero, r2))
    s, u = op.apply(b1)
    _, ru = op.restrict(zero, r1)
    assert np.sqrt(np.sum(s**2) + np.sum((u - ru) ** 2)) <= op.tol * np.linalg.norm(ru)
    b12 = ell.linear_solve(op, (zero, 2.0 * r1 - 0.5 * r2))
    assert np.abs(b12 - (2.0 * b1 - 0.5 * b2)).max() <= 1e-6 * np.abs(b12).max()


def test_nonconvergence_carries_history():
    ch, A = bpst_box(8)
    op = ell.LinearizedOperator(ch, A, tol=1e-12, max_iter=3)
    with pytest.raises(ell.SolveError) as err:
        ell.linear_solve(op, (np.zeros(ch.shape + (3,)), shell_sigma(ch, np.eye(3))))
    assert len(err.value.history) == 4 and err.value.history[0] == 1.0


def test_perturbation_solve_zero_sigma():
    ch, A = bpst_box(8)
    b, rep = ell.perturbation_solve(ch, A, None, np.zeros(ch.shape + (3, 3)))
    assert np.array_equal(b, np.zeros(A.shape))
    assert rep.residual == 0.0


def test_perturbation_solve_scales_linearly_for_small_sigma(rng):
    ch, A = bpst_box(10)
    amp = rng.normal(size=(3, 3))
    b1, rep1 = ell.perturbation_solve(ch, A, None, shell_sigma(ch, 1e-2 * amp))
    b2, rep2 = ell.perturbation_solve(ch, A, None, shell_sigma(ch, 5e-3 * amp))
    ratio = rep1.norms["b_L2p"] / rep2.norms["b_L2p"]
    assert abs(ratio - 2.0) <= 0.1
    # the full quadratic equation holds to the requested tolerance
    op = ell.LinearizedOperator(ch, A)
    s, u = ell.full_residual(op, b1, shell_sigma(ch, 1e-2 * amp))
    zero = np.zeros(ch.shape + (3,))
    snorm = np.linalg.norm(op.restrict(zero, shell_sigma(ch, 1e-2 * amp))[1])
    assert np.sqrt(np.sum(s**2) + np.sum(u**2)) <= 1e-6 * snorm
    report = ell.SolveReport.from_json(rep1.to_json())
    assert report.norms == json.loads(rep1.to_json())["norms"]


def test_perturbation_solve_preconditions(rng):
    ch, A = bpst_box(8)
    sigma = shell_sigma(ch, np.eye(3))
    with pytest.raises(ell.PreconditionError, match="kappa"):
        ell.perturbation_solve(ch, A, None, sigma, kappa=1e-3)
    with pytest.raises(ell.PreconditionError, match="eta"):
        ell.perturbation_solve(ch, A, np.ones_like(A), sigma, eta=1e-3)
    with pytest.raises(ell.PreconditionError):
        ell.perturbation_solve(ch, A, None, sigma, p=6)


def test_new_error_trivial_cases(rng):
    ch, A = bpst_box(8)
    psi, dpsi = cutoff(ch.coords(), ch.marked("L"), NeckParams(0.5, 2.0, 0.04))
    assert np.array_equal(ell.new_error(psi, dpsi, np.zeros(A.shape)), np.zeros(ch.shape + (3, 3)))
    b = rng.normal(size=A.shape)
    plateau = np.ones(ch.shape)
    assert np.array_equal(ell.new_error(plateau, np.zeros(ch.shape + (4,)), b), np.zeros(ch.shape + (3, 3)))


def test_new_error_rejects_bad_support():
    ch, A = bpst_box(8)
    psi = np.ones(ch.shape)
    psi[3, 3, 3, 3] = 0.5
    sigma = np.ones(ch.shape + (3, 3))
    with pytest.raises(ell.PreconditionError):
        ell.new_error(psi, np.zeros(ch.shape + (4,)), np.zeros(A.shape), sigma)
    sigma[3, 3, 3, 3] = 0.0
    ell.new_error(psi, np.zeros(ch.shape + (4,)), np.zeros(A.shape), sigma)


def smooth_cutoff(ch, center, width):
    d = ch.coords() - np.asarray(center)
    r2 = np.sum(d * d, axis=-1)
    e = np.exp(-r2 / width**2)
    return 1.0 - e, (2.0 * e / width**2)[..., None] * d


def test_new_error_closed_form_matches_direct_curvature(rng):
    errs = []
    for n in (16, 32):
        ch = ChartSpec(2 * np.pi, n, (1.0, 1.0, 1.0, 1.0), (2.0, 1.0, 1.0, 1.0))
        A = smooth_nonabelian(ch)
        b = 0.2 * smooth_nonabelian(ch)[..., ::-1, :]
        psi, dpsi = smooth_cutoff(ch, (np.pi,) * 4, 2.0)
        tau = ell.new_error(psi, dpsi, b)
        direct = ell.new_error_direct(ch, A, np.zeros_like(A), psi, b)
        errs.append(np.abs(tau - direct).max())
    # second-order product-rule defect of the stencil
    assert errs[1] <= 0.1 * np.abs(tau).max()
    assert 3.0 <= errs[0] / errs[1] <= 5.0


def test_new_error_support_in_inner_shells(rng):
    ch = ChartSpec(2.0, 16, (0.6, 1.0, 1.0, 1.0), (1.4, 1.0, 1.0, 1.0))
    neck = NeckParams(0.5, 2.0, 0.04)
    psi, dpsi = block_cutoff(ch.coords(), ch, neck)
    tau = ell.new_error(psi, dpsi, rng.normal(size=ch.shape + (4, 3)))
    r0, r1 = neck.radii[:2]
    x = ch.coords()
    inner = np.zeros(ch.shape, bool)
    for side in "LR":
        r = np.linalg.norm(x - ch.marked(side), axis=-1)
        inner |= (r > r0) & (r < r1)
    mag = np.sqrt(np.sum(tau**2, axis=(-2, -1)))
    assert mag[~inner].sum() <= 1e-8 * mag.max()


def test_estimate_report_constants():
    neck = NeckParams(0.5, 10.0, 1e-6)
    assert abs(K_N(10.0) - 0.010306) < 5e-7
    ch = ChartSpec(2.0, 8, (0.5, 1.0, 1.0, 1.0), (1.5, 1.0, 1.0, 1.0))
    z2 = np.zeros(ch.shape + (6, 3))
    tau = np.zeros(ch.shape + (3, 3))
    tau[0, 0, 0, 0, 0, 0] = 2.0
    rep = ell.estimate_report(ch, neck, 1.0, tau, np.zeros(ch.shape + (4, 3)), z2, z2)
    assert np.isclose(rep["K_N"], K_N(10.0))
    assert np.isclose(rep["C2_empirical"], 2.0 / (K_N(10.0) * 10.0**4))
    assert rep["contraction_rule_ok"] is True
