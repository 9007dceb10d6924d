import numpy as np
import pytest

from kvmms import calibrated, decay, field
from kvmms.errors import FitWindowError, PropertyViolation, ValidationError
from kvmms.field import AdmissibleSet, DeformationField, LoadField


T = np.linspace(0.0, 5.0, 501)


def test_fit_exponential_exact():
    rep = decay.fit_exponential(T, 0.3 * np.exp(-3.0 * T))
    assert rep.rate == pytest.approx(3.0, rel=1e-12)
    assert rep.r2 == pytest.approx(1.0, abs=1e-12)
    assert rep.window[0] >= 0.5


def test_fit_polynomial_exact():
    # p_tilde = 1.5 gives s = 1.5, so gap^(1-s) = 1 + t and C = 1 / (s - 1)
    rep = decay.fit_polynomial(T, (1.0 + T) ** -2.0, 1.5)
    assert rep.s == 1.5
    assert rep.slope == pytest.approx(1.0, rel=1e-12)
    assert rep.rate == pytest.approx(2.0, rel=1e-12)
    assert rep.r2 == pytest.approx(1.0, abs=1e-12)


def test_polynomial_exponent():
    assert decay.polynomial_exponent(1.5) == 1.5
    assert decay.polynomial_exponent(4.0 / 3.0) == pytest.approx(2.0, rel=1e-15)
    with pytest.raises(ValidationError):
        decay.fit_polynomial(T, np.exp(-T), 2.0)


def test_extinction_detected_within_one_spacing():
    t = np.linspace(0.0, 2.0, 201)
    rep = decay.detect_extinction(t, np.maximum(0.0, 1.0 - t) ** 3)
    assert rep.extinct and abs(rep.t_ext - 1.0) <= t[1] - t[0]


def test_extinction_zero_gap_and_never():
    assert decay.detect_extinction(T, np.zeros_like(T)).t_ext == 0.0
    assert not decay.detect_extinction(T, np.exp(-T)).extinct


def test_empty_window_raises():
    with pytest.raises(FitWindowError):
        decay.fit_exponential(T, np.full_like(T, 1.0))
    with pytest.raises(FitWindowError):
        decay.fit_exponential(T, np.full_like(T, 1e-12))


def test_fit_window_bounds():
    gaps = np.exp(-5.0 * T)
    w = decay.fit_window(T, gaps, floor=1e-8)
    assert np.all(gaps[w] >= 1e-7) and np.all(gaps[w] <= 0.1)
    assert np.all(T[w] >= 0.5)


def test_dissipation_bound_margins():
    gaps = np.exp(-T)
    cum = 0.5 * (1.0 - gaps)
    m = decay.dissipation_bound_margins(cum, T, gaps, 1.0, relax=1.0)
    np.testing.assert_allclose(m, 0.0, atol=1e-15)
    assert np.all(decay.dissipation_bound_margins(cum, T, gaps, 1.0) >= 0)


def test_analyze_picks_fit():
    from types import SimpleNamespace
    for pt, kind in ((2.0, "exponential"), (1.5, "polynomial"), (3.0, "extinction")):
        traj = SimpleNamespace(times=T, energies=np.exp(-T) - 1.0, p_tilde=pt)
        assert decay.analyze(traj, -1.0).kind == kind


def test_steady_state_identity_without_load(params, grid):
    adm = AdmissibleSet(params, DeformationField.identity(grid))
    ystar = decay.steady_state(adm, LoadField.zero(grid))
    np.testing.assert_array_equal(ystar.y, grid.coords)


def test_steady_state_report(ref_scenario):
    sc = ref_scenario
    rep = decay.steady_state_report(sc.adm, sc.load, starts=3)
    assert rep.spread <= 1e-8
    assert rep.grad_norm <= 1e-11
    assert max(rep.start_energies) - min(rep.start_energies) <= 1e-14
    assert field.energy(sc.adm, sc.load, sc.y0) > rep.energy


def test_steady_state_disagreement_raises(ref_scenario):
    sc = ref_scenario
    with pytest.raises(PropertyViolation):
        decay.steady_state_report(sc.adm, sc.load, tol=1e-3, agree_tol=1e-14)


def test_gap_scales_quadratically_in_delta(ref_scenario):
    gaps, disp = [], []
    for d in (0.005, 0.01):
        s = ref_scenario.with_params(delta=d)
        rep = decay.steady_state_report(s.adm, s.load)
        gaps.append(field.energy(s.adm, s.load, s.y0) - rep.energy)
        disp.append((rep.field.y - s.grid.coords) / d)
    assert gaps[1] / gaps[0] == pytest.approx(4.0, rel=0.01)
    assert np.max(np.abs(disp[1] - disp[0])) <= 1e-3


@pytest.fixture(scope="module")
def certificate_pairs(ref_scenario):
    return decay.sample_pairs(ref_scenario.adm, 100, 0)


def test_convexity_certificate(ref_scenario, certificate_pairs):
    sc = ref_scenario
    moduli = decay.convexity_moduli(sc.adm, sc.load, certificate_pairs)
    assert moduli.shape == (300,)
    assert np.all(moduli >= calibrated.LAMBDA_HAT["ref_small_strain"])


def test_metric_convexity_ratios(ref_scenario, certificate_pairs):
    sc = ref_scenario
    pairs = certificate_pairs
    assert np.all(decay.metric_convexity_ratios(sc.params, pairs) <= 1.0)
    K = calibrated.SAFETY * calibrated.RIGIDITY[(17, 2.0)]
    assert np.all(decay.metric_convexity_ratios(sc.params, pairs, rigidity=K) <= 1.0)


def test_metric_convexity_constant_monotone(params):
    c = [decay.metric_convexity_constant(params, 0.7, x) for x in (0.0, 0.1, 1.0)]
    assert c[0] < c[1] < c[2]


def test_sample_pairs_deterministic(ref_scenario):
    a = decay.sample_pairs(ref_scenario.adm, 3, 5)
    b = decay.sample_pairs(ref_scenario.adm, 3, 5)
    for (x0, x1), (z0, z1) in zip(a, b):
        np.testing.assert_array_equal(x0.y, z0.y)
        np.testing.assert_array_equal(x1.y, z1.y)


def test_scenario_validation(ref_scenario):
    with pytest.raises(ValidationError):
        ref_scenario.with_params(delta=0.0)
    s = ref_scenario
    with pytest.raises(ValidationError):
        decay.SmallStrainScenario(s.params, s.grid, s.uhat, s.ftilde, s.u0, M_prime=1.0)


def test_scenario_data(ref_scenario):
    s = ref_scenario
    assert field.energy(s.adm, s.load, s.y0) <= s.M_prime * s.delta**2
    boundary = ~s.grid.interior
    np.testing.assert_array_equal(s.y0.y[boundary], s.yhat.y[boundary])


def test_polynomial_field_and_bubble(grid):
    f = decay.polynomial_field(grid, [[0, 2.0, 1, 0], [1, -1.0, 0, 2]])
    X = grid.coords
    np.testing.assert_allclose(f, np.stack([2 * X[:, 0], -X[:, 1] ** 2], axis=1))
    b = decay.bubble(grid)
    assert b.max() == pytest.approx(1.0) and np.all(b[~grid.interior] == 0)
    with pytest.raises(ValidationError):
        decay.polynomial_field(grid, [[2, 1.0, 0, 0]])


def test_random_bubble_field_normalized(grid, rng):
    v = decay.random_bubble_field(grid, rng, 2)
    assert np.max(np.sqrt(np.sum(grid.cell_gradient(v) ** 2, axis=(1, 2)))) == pytest.approx(1.0)
    assert np.all(v[~grid.interior] == 0)


def test_run_decay_rejects_delta_above_threshold(ref_scenario):
    from kvmms.mms import MmsConfig
    assert ref_scenario.delta < calibrated.DELTA_PRIME
    with pytest.raises(ValidationError):
        decay.run_decay(ref_scenario, MmsConfig(tau=0.1, T=0.1), delta_prime=0.5 * ref_scenario.delta)
    run = decay.run_decay(ref_scenario, MmsConfig(tau=0.1, T=0.3), delta_prime=1.0)
    assert run.trajectory.flagged_steps == [] and np.all(run.gaps >= -1e-12)
