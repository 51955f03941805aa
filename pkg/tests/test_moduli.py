import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from asdweld import moduli as m
from asdweld import welding as wd
from asdweld.fields import algebra as alg


def test_reference_worst_case():
    top, ok = m.recurrence_verify(m.RecurrenceState(0.01, 1.0, 0.01, 1.0))
    assert ok
    assert top <= 0.1
    # frozen from an exact rational-arithmetic run of the recurrence at equality
    assert top == pytest.approx(0.0715441129, rel=1e-8)


def test_zero_eps_is_constant():
    alpha, _ = m.run_recurrence(m.RecurrenceState(0.0, 2.0, 0.0, 1.5))
    assert np.all(alpha == 0.0)


def test_t_sequence_stays_bounded():
    alpha, s = m.run_recurrence(m.RecurrenceState(0.01, 1.0, 0.01, 1.0))
    t = m.t_sequence(s)
    # t_{n+1} = t_n + 2 alpha_n + K at equality, so growth is at most linear
    assert np.allclose(np.diff(t), 2 * alpha[:-1] + 1.0, rtol=1e-12)
    assert np.all(t <= 1.0 + (1.0 + 2 * alpha.max()) * np.arange(len(t)) + 1e-9)


@settings(max_examples=60, deadline=None)
@given(st.floats(0.0, 0.01), st.floats(1e-3, 1e3), st.floats(0, 1), st.floats(0, 1))
def test_monotone_in_eps(eps, K, a, s):
    lo = m.recurrence_verify(m.RecurrenceState(eps / 2, K, a * eps / 2 * K, s * K))[0]
    hi = m.recurrence_verify(m.RecurrenceState(eps, K, a * eps / 2 * K, s * K))[0]
    assert hi >= lo - 1e-15 * K


def test_fuzz_has_no_violations(rng):
    rep = m.recurrence_fuzz(rng, draws=2000)
    assert rep["violations"] == 0
    assert rep["max_ratio_to_epsK"] <= 10.0


def test_sampled_mode_is_dominated(rng):
    state = m.random_admissible(rng, 500)
    worst, _ = m.recurrence_verify(state)
    sampled, ok = m.recurrence_verify(state, "sampled", np.random.default_rng(3))
    assert np.all(ok)
    assert np.all(sampled <= worst * (1 + 1e-12))


def test_proof_checkpoint():
    factor, ok = m.proof_checkpoint(0.01)
    assert factor == pytest.approx(6.6)
    assert ok


def test_inadmissible_states_rejected():
    with pytest.raises(m.ModuliError):
        m.recurrence_verify(m.RecurrenceState(0.02, 1.0, 0.0, 0.0))
    with pytest.raises(m.ModuliError):
        m.recurrence_verify(m.RecurrenceState(0.01, 1.0, 0.5, 0.0))
    with pytest.raises(m.ModuliError):
        m.recurrence_verify(m.RecurrenceState(0.01, 1.0, 0.0, 0.0), mode="sampled")


def test_geodesic_midpoint():
    axis = np.array([0.0, 0.0, 1.0])
    a = wd.GluingParameter.identity(1)
    b = wd.GluingParameter(alg.axis_rotation(axis, 0.8)[None])
    mid = m.geodesic_path(a, b).at(0.5).rho[0]
    assert np.allclose(mid, alg.axis_rotation(axis, 0.4), atol=1e-14)


def test_geodesic_constant_speed(rng):
    a, b = wd.GluingParameter.random(3, rng), wd.GluingParameter.random(3, rng)
    path = m.geodesic_path(a, b)
    assert np.allclose(path.at(0).rho, a.rho, atol=1e-14)
    assert np.allclose(path.at(1).rho, b.rho, atol=1e-14)
    assert np.allclose(path.speeds, alg.distance(a.rho, b.rho), atol=1e-12)
    for t in np.linspace(0, 0.9, 7):
        step = alg.distance(path.at(t).rho, path.at(t + 0.1).rho) / 0.1
        assert np.allclose(step, path.speeds, atol=1e-10)


def test_geodesic_distance_comparable_to_chord(rng):
    a, b = wd.GluingParameter.random(200, rng), wd.GluingParameter.random(200, rng)
    d = alg.distance(a.rho, b.rho)
    chord = np.linalg.norm(a.rho - b.rho, axis=-1)
    # on the unit three-sphere, chord <= angle <= pi/2 chord, scaled by sqrt(2)
    assert np.all(d >= np.sqrt(2) * chord - 1e-12)
    assert np.all(d <= np.sqrt(2) * np.pi / 2 * chord + 1e-12)


def test_geodesic_antipodal_is_deterministic():
    a = wd.GluingParameter.identity(1)
    b = wd.GluingParameter(np.array([[-1.0, 0, 0, 0]]))
    p1, p2 = m.geodesic_path(a, b).at(0.5).rho, m.geodesic_path(a, b).at(0.5).rho
    assert np.array_equal(p1, p2)
    assert np.allclose(p1[0], [0.0, 1.0, 0.0, 0.0], atol=1e-15)


def test_central_gauge_chain():
    gamma, closes = m.central_gauge([1, -1, 1, 1], periodic=True)
    assert gamma.tolist() == [1, 1, -1, -1]
    assert not closes
    gamma, closes = m.central_gauge([1, 1, 1, 1], periodic=True)
    assert np.all(gamma == 1) and closes


def test_noise_threshold_floor():
    thr, floor = m.noise_threshold([0.0, 0.0], scale=10.0)
    assert floor == pytest.approx(np.finfo(float).eps * 10)
    assert thr == pytest.approx(100 * floor)


def test_twist_is_bitwise_central(rng):
    rho = wd.GluingParameter.random(4, rng)
    tw = rho.twist([1, -1, -1, 1])
    assert np.array_equal(alg.adjoint_matrix(tw.rho), alg.adjoint_matrix(rho.rho))
    assert rho.same_class(tw)
