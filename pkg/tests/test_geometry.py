import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from asdweld import geometry as geo
from asdweld.fields.forms import pointwise_norm


def test_shell_radii_default_neck():
    assert np.allclose(geo.shell_radii(geo.NeckParams(0.5, 2.0, 0.04)), (0.05, 0.1, 0.4, 0.8))


def test_shell_radii_fine_neck():
    r = geo.shell_radii(geo.NeckParams(0.9, 10.0, 1e-6))
    assert np.allclose(r, (9e-5, 1e-4, 1e-2, 1.0 / 90.0), rtol=1e-12)


@pytest.mark.parametrize("kwargs", [dict(k=1.0), dict(k=0.0), dict(N=1.0), dict(lam=0.0), dict(q=1)])
def test_neck_params_rejects_inadmissible(kwargs):
    with pytest.raises(geo.GeometryError):
        geo.NeckParams(**kwargs)


def test_smallness_budget_message_names_budget():
    neck = geo.NeckParams(0.5, 2.0, 0.04)
    with pytest.raises(geo.GeometryError, match="budget"):
        neck.check_smallness()
    geo.NeckParams(0.5, 2.0, 0.04, budget=1.0).check_smallness()


def test_K_N_values():
    assert np.isclose(geo.K_N(10.0), 10.0 / (10.0 - 0.1) ** 3)
    assert abs(geo.K_N(10.0) - 0.010306) < 5e-7
    vals = geo.K_N(np.arange(2, 65))
    assert np.all(np.diff(vals) < 0) and vals[-1] < 1e-3


xi_strategy = arrays(float, 4, elements=st.floats(-2.0, 2.0)).filter(lambda v: np.linalg.norm(v) > 1e-2)


@given(xi_strategy, st.floats(1e-4, 1.0), st.integers(0, 3))
def test_neck_map_involution_and_radii(xi, lam, axis):
    eta = geo.neck_map(xi, lam, axis)
    assert np.isclose(np.linalg.norm(eta) * np.linalg.norm(xi), lam, rtol=1e-13)
    assert np.allclose(geo.neck_map(eta, lam, axis), xi, rtol=1e-12, atol=1e-14)


def test_neck_map_rejects_origin():
    with pytest.raises(geo.GeometryError):
        geo.neck_map(np.zeros(4), 0.04)


@given(xi_strategy)
def test_neck_jacobian_matches_finite_differences(xi):
    lam, eps = 0.04, 1e-6
    J = geo.neck_jacobian(xi, lam)
    fd = np.stack([(geo.neck_map(xi + eps * e, lam) - geo.neck_map(xi - eps * e, lam)) / (2 * eps)
                   for e in np.eye(4)], axis=-1)
    assert np.allclose(J, fd, rtol=1e-5, atol=1e-6 * np.abs(J).max())
    # conformal: J^T J = (lam / |xi|^2)^2 I
    s = lam / np.dot(xi, xi)
    assert np.allclose(J.T @ J, s * s * np.eye(4), rtol=1e-10)


def test_jacobian_norm_boundary_values(neck):
    r0 = neck.radii[0]
    on_sphere = np.array([neck.sqrt_lam, 0, 0, 0])
    assert np.isclose(geo.neck_jacobian_norm(on_sphere, neck), 1.0)
    inner = np.array([0, r0, 0, 0])
    assert np.isclose(geo.neck_jacobian_norm(inner, neck), neck.N**2 / neck.k**2)
    with pytest.raises(geo.GeometryError):
        geo.neck_jacobian_norm(np.array([0.5 * r0, 0, 0, 0]), neck)


def test_inverse_jacobian_small_on_inner_shell(neck):
    r0, r1, _, _ = neck.radii
    rng = np.random.default_rng(1)
    d = rng.normal(size=(500, 4))
    d /= np.linalg.norm(d, axis=1, keepdims=True)
    xi = d * rng.uniform(r0, r1, size=(500, 1))
    inv_norm = np.linalg.norm(np.linalg.inv(geo.neck_jacobian(xi, neck.lam)), ord=2, axis=(-2, -1))
    assert np.all(inv_norm <= 1.0 / neck.N**2 * (1 + 1e-12))


def test_two_form_transfer_factor(neck):
    # a 2-form living on the inner shell, read on the outer shell of the other side
    rng = np.random.default_rng(2)
    r0, r1, r2, r3 = neck.radii
    d = rng.normal(size=(300, 4))
    d /= np.linalg.norm(d, axis=1, keepdims=True)
    eta = d * rng.uniform(r2, r3, size=(300, 1))
    omega = rng.normal(size=(300, 6, 3))
    pulled = geo.pull_back_two_form(omega, geo.neck_jacobian(eta, neck.lam))
    ratio = pointwise_norm(pulled, 2) / pointwise_norm(omega, 2)
    assert np.all(ratio <= 1.0 / neck.N**4 * (1 + 1e-12))


def test_cutoff_profile_and_gradient_bound(neck):
    r0, r1, _, _ = neck.radii
    c = np.zeros(4)
    radii = np.linspace(0, 2 * r1, 4001)
    pts = np.stack([radii, np.zeros_like(radii), np.zeros_like(radii), np.zeros_like(radii)], -1)
    psi, dpsi = geo.cutoff(pts, c, neck)
    g = np.linalg.norm(dpsi, axis=-1)
    assert np.all(psi[radii <= r0] == 0) and np.all(g[radii <= r0] == 0)
    assert np.all(psi[radii >= r1] == 1) and np.all(g[radii >= r1] == 0)
    assert np.all(np.diff(psi) >= 0)
    assert np.isclose(g.max(), 3 * neck.N / neck.sqrt_lam, rtol=1e-5)
    assert g.max() <= 20 * neck.N / neck.sqrt_lam


def test_cutoff_gradient_is_derivative(neck):
    c = np.zeros(4)
    x = np.array([0.04, 0.05, -0.02, 0.03])
    eps = 1e-7
    _, d = geo.cutoff(x, c, neck)
    fd = [(geo.cutoff(x + eps * e, c, neck)[0] - geo.cutoff(x - eps * e, c, neck)[0]) / (2 * eps) for e in np.eye(4)]
    assert np.allclose(d, fd, rtol=1e-5, atol=1e-6)


def test_cutoff_bound_on_every_grid_node(neck):
    chart = geo.ChartSpec(2.4, 16, (0.8, 1.2, 1.2, 1.2), (1.6, 1.2, 1.2, 1.2))
    _, dpsi = geo.block_cutoff(chart.coords(), chart, neck)
    assert np.linalg.norm(dpsi, axis=-1).max() <= 20 * neck.N / neck.sqrt_lam


def test_classify_point_examples(neck):
    chart = geo.ChartSpec(4.0, 8, (1.0, 2.0, 2.0, 2.0), (3.0, 2.0, 2.0, 2.0))
    r0, r1, r2, r3 = neck.radii
    assert geo.classify_point(chart.marked_R, chart, neck) == {"excised_R"}
    x = np.array(chart.marked_R) + np.array([0, (r2 + r3) / 2, 0, 0])
    assert geo.classify_point(x, chart, neck) == {"R+", "Omega_R", "U"}
    far = np.array([4.0, 4.0, 4.0, 4.0])
    assert geo.classify_point(far, chart, neck) == {"U"}


def test_region_labels_partition_the_grid(neck):
    chart = geo.ChartSpec(2.4, 16, (0.8, 1.2, 1.2, 1.2), (1.6, 1.2, 1.2, 1.2))
    x = chart.coords()
    labels = geo.region_label(x, chart, neck)
    assert labels.shape == chart.shape
    assert set(np.unique(labels)) <= set(range(len(geo.PARTITION)))
    # consistency with the tag sets on a sample of nodes
    flat = x.reshape(-1, 4)[::97]
    for p, lab in zip(flat, labels.reshape(-1)[::97]):
        tags = geo.classify_point(p, chart, neck)
        name = geo.PARTITION[lab]
        if name.startswith("excised"):
            assert name in tags
        elif name in ("L-", "L+", "R-", "R+"):
            assert name in tags and f"Omega_{name[0]}" in tags
        elif name.startswith("Omega_mid"):
            assert f"Omega_{name[-1]}" in tags
        else:
            assert tags == {"U"}


def test_chart_validation(neck):
    with pytest.raises(geo.GeometryError):
        geo.ChartSpec(2.0, 16, (1.0, 1.0, 1.0, 1.0), (1.5, 1.0, 1.0, 1.0)).validate(neck)
    with pytest.raises(geo.GeometryError):
        geo.ChartSpec(2.0, 16, (0.3, 1.0, 1.0, 1.0), (1.7, 1.0, 1.0, 1.0)).validate(neck)
    with pytest.raises(geo.GeometryError):
        geo.ChartSpec(2.0, 4)
    chart = geo.ChartSpec(4.0, 16, (1.0, 2.0, 2.0, 2.0), (3.0, 2.0, 2.0, 2.0)).validate(neck)
    assert chart.nearest_node(chart.node((3, 4, 5, 6))) == (3, 4, 5, 6)


def test_sphere_rule_volume():
    from asdweld.geometry import sphere_rule

    u, w = sphere_rule()
    assert np.allclose(np.linalg.norm(u, axis=-1), 1.0)
    assert w.sum() == pytest.approx(2 * np.pi**2, rel=1e-12)
    # second moments of the round sphere: |S^3| / 4 on the diagonal
    assert np.allclose(np.einsum("m,ma,mb->ab", w, u, u), np.eye(4) * np.pi**2 / 2, atol=1e-10)


def test_annulus_l2_of_constant():
    from asdweld.geometry import annulus_l2

    one = lambda x: np.ones(x.shape[:-1] + (1,))
    # volume of the shell is (pi^2 / 2) (b^4 - a^4)
    got = annulus_l2(one, np.zeros(4), 0.5, 1.0, radial=400)
    assert got**2 == pytest.approx(np.pi**2 / 2 * (1 - 0.5**4), rel=1e-5)


def test_conformal_defect_converges():
    from asdweld.geometry import conformal_defect

    M = np.random.default_rng(0).normal(size=(6, 3))
    c = np.array([0.2, 0.1, -0.05, 0.0])

    def omega(x):
        return np.exp(-np.sum((x - c) ** 2, -1) / 0.1)[..., None, None] * M

    coarse = conformal_defect(omega, geo.NeckParams(), 24)[0]
    fine = conformal_defect(omega, geo.NeckParams(), 48)[0]
    assert coarse < 0.02
    assert fine < coarse / 3
