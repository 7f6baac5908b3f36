import numpy as np
import pytest

from config import PRESETS
from utils.errors import ValidationError
from utils.fields import AnalyticDatum, ScalarField
from utils.function_spaces import (
    CRITICAL,
    SUBCRITICAL,
    SUPERCRITICAL,
    admissible_p_max,
    ball_volume,
    classify_regime,
    decreasing_rearrangement,
    distribution_function,
    energy_bound,
    energy_bound_limit,
    hardy_check,
    hardy_littlewood_check,
    lorentz_holder_check,
    lorentz_weak_norm,
    lq_norm,
    sharp_constants,
    sobolev_check,
    threshold_classify,
)
from utils.radial_oracle import radial_grid, sample_datum


@pytest.mark.parametrize("dimension, expected", [(1, 2.0), (2, np.pi), (3, 4 * np.pi / 3), (4, np.pi ** 2 / 2)])
def test_ball_volume(dimension, expected):
    assert ball_volume(dimension) == pytest.approx(expected, rel=1e-14)


def test_ball_volume_rejects_nonpositive_dimension():
    with pytest.raises(ValidationError) as exc:
        ball_volume(0)
    assert exc.value.code == "invalid-dimension"


def test_sharp_constants_in_three_dimensions():
    constants = sharp_constants(3)
    root = (4 * np.pi / 3) ** (1 / 3)
    assert constants.sobolev == pytest.approx(1 / (3 * root))
    assert constants.gamma_1 == pytest.approx(1 / (2 * root))
    assert constants.gamma_p(1.0) == pytest.approx(constants.gamma_1)
    assert constants.hardy(1.5) == pytest.approx(1.0)
    assert set(constants.as_dict()) == {"N", "C_N", "S_N", "gamma_1"}


def test_gamma_p_outside_range_is_rejected():
    with pytest.raises(ValidationError) as exc:
        sharp_constants(3).gamma_p(3.0)
    assert exc.value.code == "p-out-of-range"


def test_rearrangement_is_equimeasurable(rng):
    n = 400
    values = rng.normal(size=n)
    weights = rng.uniform(0.5, 1.5, size=n) / n
    f = ScalarField(np.arange(n), values, weights, 2)
    grid = np.linspace(1e-6, f.measure, 50)
    rearranged = decreasing_rearrangement(f, grid)

    assert np.all(np.diff(rearranged.samples) <= 0)
    for s in (0.0, 0.3, 1.0, 2.0):
        assert rearranged.distribution(s) == pytest.approx(distribution_function(f, s))
    # same L^q norms as |f|
    for q in (1, 2, 3):
        assert np.sum(rearranged.widths * rearranged.values ** q) == pytest.approx(lq_norm(f, q) ** q)


def test_rearrangement_of_empty_grid_is_rejected():
    f = ScalarField(np.arange(3), np.ones(3), np.ones(3), 2)
    with pytest.raises(ValidationError) as exc:
        decreasing_rearrangement(f, [])
    assert exc.value.code == "empty-grid"


def test_distribution_rejects_negative_level():
    with pytest.raises(ValidationError):
        distribution_function(AnalyticDatum("constant"), -1.0, 3)


@pytest.mark.parametrize("dimension", [2, 3, 4, 5])
def test_weak_norm_of_inverse_radius(dimension):
    datum = AnalyticDatum("inverse_radius")
    expected = ball_volume(dimension) ** (1 / dimension)
    assert lorentz_weak_norm(datum, dimension) == pytest.approx(expected, rel=1e-14)
    sampled = sample_datum(datum, radial_grid(1.0, dimension))
    assert lorentz_weak_norm(sampled, dimension) == pytest.approx(expected, rel=1e-10)


def test_lq_norm_of_inverse_radius_is_infinite_at_critical_exponent():
    assert lq_norm(AnalyticDatum("inverse_radius"), 3, 3) == np.inf
    assert lq_norm(AnalyticDatum("inverse_radius"), 2, 3) == pytest.approx((3 * 4 * np.pi / 3) ** 0.5)


def test_lq_norm_rejects_small_exponent():
    with pytest.raises(ValidationError) as exc:
        lq_norm(AnalyticDatum("constant"), 0.5, 3)
    assert exc.value.code == "invalid-exponent"


def test_plateau_norm_has_logarithmic_term():
    datum = AnalyticDatum("plateau_7_2", alpha=1.0, radius=1.0, beta=1.5)
    expected = (ball_volume(4) * (1 + 4 * np.log(1.5))) ** 0.25
    assert lq_norm(datum, 4, 4) == pytest.approx(expected)


@pytest.mark.parametrize("dimension", [3, 4, 5])
def test_lorentz_threshold_identity(dimension):
    lam = -(dimension - 2.0)
    datum = AnalyticDatum("inverse_radius")
    analytic = threshold_classify(lam, datum, dimension)
    assert abs(analytic.theta_lorentz - 1) <= 1e-10
    assert analytic.regimes["theta_Lorentz"] == CRITICAL
    assert analytic.theta_ln == np.inf

    sampled = threshold_classify(lam, sample_datum(datum, radial_grid(1.0, dimension)), dimension)
    assert abs(sampled.theta_lorentz - 1) <= 1e-4


def test_plateau_example_separates_the_two_thresholds():
    report = threshold_classify(-2.0, AnalyticDatum("plateau_7_2", beta=1.5), 4)
    assert report.regimes["theta_Lorentz"] == CRITICAL
    assert report.regimes["theta_LN"] == SUBCRITICAL
    assert report.theta_ln == pytest.approx(0.985, abs=5e-3)
    assert report.governing == SUBCRITICAL


def test_amplitude_moves_the_governing_regime():
    lam = -1.0
    assert threshold_classify(lam, AnalyticDatum("inverse_radius", 0.5), 3).governing == SUBCRITICAL
    assert threshold_classify(lam, AnalyticDatum("inverse_radius", 1.0), 3).governing == CRITICAL
    assert threshold_classify(lam, AnalyticDatum("inverse_radius", 1.5), 3).governing == SUPERCRITICAL


def test_threshold_rejects_large_lambda():
    with pytest.raises(ValidationError) as exc:
        threshold_classify(5.0, AnalyticDatum("constant"), 3)
    assert exc.value.code == "out-of-range-lambda"


def test_classify_regime_boundaries():
    assert classify_regime(1 - 1e-12, 1e-10) == CRITICAL
    assert classify_regime(0.9, 1e-10) == SUBCRITICAL
    assert classify_regime(1.1, 1e-10) == SUPERCRITICAL


def test_energy_bound_not_applicable_past_admissible_p():
    with pytest.raises(ValidationError) as exc:
        energy_bound(AnalyticDatum("constant"), 2.9, 3, drift_norm=10.0, measure=1.0)
    assert exc.value.code == "bound-not-applicable"


@pytest.mark.parametrize("dimension", [2, 3, 4])
def test_hardy_inequality_on_random_profiles(dimension, rng, radial_field):
    for _ in range(30):
        a = rng.uniform(1.0, 3.0)
        p = rng.uniform(1.3, dimension - 0.3) if dimension > 2 else rng.uniform(1.3, 1.7)
        u = radial_field(dimension, lambda r: 1 - r ** a, lambda r: -a * r ** (a - 1))
        lhs, rhs = hardy_check(u, p)
        assert lhs <= rhs * (1 + 1e-6)


def test_hardy_littlewood_on_random_pairs(rng):
    for _ in range(100):
        n = int(rng.integers(5, 60))
        weights = rng.uniform(0.1, 1.0, size=n)
        f = ScalarField(np.arange(n), rng.uniform(0, 1, size=n), weights, 3)
        g = ScalarField(np.arange(n), rng.uniform(0, 1, size=n), weights, 3)
        lhs, rhs = hardy_littlewood_check(f, g)
        assert lhs <= rhs * (1 + 1e-12)


def test_lorentz_holder_on_random_pairs(rng):
    for _ in range(100):
        n = int(rng.integers(5, 60))
        weights = rng.uniform(0.1, 1.0, size=n) / n
        f = ScalarField(np.arange(n), rng.normal(size=n), weights, 3)
        g = ScalarField(np.arange(n), rng.normal(size=n), weights, 3)
        lhs, rhs = lorentz_holder_check(f, g)
        assert lhs <= rhs * (1 + 1e-12)


def test_pair_checks_need_matching_samples():
    f = ScalarField(np.arange(3), np.ones(3), np.ones(3), 3)
    g = ScalarField(np.arange(4), np.ones(4), np.ones(4), 3)
    with pytest.raises(ValidationError) as exc:
        hardy_littlewood_check(f, g)
    assert exc.value.code == "mismatched-fields"


@pytest.mark.parametrize("dimension, lam", [(3, -1.0), (4, -2.0), (5, 1.5)])
def test_admissible_exponent_for_hardy_drift(dimension, lam):
    norm = abs(lam) * ball_volume(dimension) ** (1 / dimension)
    assert admissible_p_max(norm, dimension) == pytest.approx(dimension / (1 + abs(lam)))


def test_energy_bound_limit_factor():
    root = ball_volume(3) ** (1 / 3)
    assert energy_bound_limit(0.0, 3) == pytest.approx(1.0)
    # Hardy drift with lambda = -1 in N = 3
    assert energy_bound_limit(root, 3) == pytest.approx(np.exp(1.5))
    assert energy_bound_limit(2 * root, 3) == np.inf


@pytest.mark.parametrize("dimension", [2, 3, 4])
def test_sobolev_inequality_on_cone(dimension, radial_field):
    u = radial_field(dimension, lambda r: 1 - r, lambda r: -np.ones_like(r))
    lhs, rhs = sobolev_check(u)
    assert 0 < lhs <= rhs


def closed_form_rearrangement(kind, alpha, beta, dimension, t):
    """f*(t) on the unit ball for the preset data."""
    c_n = ball_volume(dimension)
    if kind == "constant":
        return np.full_like(t, alpha)
    profile = alpha * (c_n / t) ** (1 / dimension)
    return np.minimum(profile, alpha * beta) if kind == "plateau_7_2" else profile


def closed_form_distribution(kind, alpha, beta, dimension, s):
    """mu(s) = |{|f| > s}| on the unit ball for the preset data."""
    c_n = ball_volume(dimension)
    if kind == "constant":
        return c_n if s < alpha else 0.0
    if kind == "plateau_7_2" and s >= alpha * beta:
        return 0.0
    return c_n * min(1.0, (alpha / s) ** dimension)


@pytest.mark.parametrize("name", sorted(PRESETS))
def test_rearrangement_of_preset_data_matches_closed_form(name):
    entry = PRESETS[name]
    n, kind, alpha, beta = entry["N"], entry["datum"], entry["alpha"], entry.get("beta", 1.0)
    datum = AnalyticDatum(kind, alpha, entry["R"], beta)
    levels = [0.5 * alpha, 1.2 * alpha, 1.4 * alpha, 2.0 * alpha, 3.0 * alpha]

    for s in levels:
        assert distribution_function(datum, s, n) == pytest.approx(closed_form_distribution(kind, alpha, beta, n, s))
    grid = np.geomspace(1e-6, ball_volume(n), 40)[:-1]
    analytic = decreasing_rearrangement(datum, grid, n)
    np.testing.assert_allclose(analytic.samples, closed_form_rearrangement(kind, alpha, beta, n, grid), rtol=1e-12)

    # samples sit at shell measure midpoints, where f(r) = f*(C_N r^N)
    sampled = sample_datum(datum, radial_grid(entry["R"], n))
    rearranged = decreasing_rearrangement(sampled, grid)
    expected = closed_form_rearrangement(kind, alpha, beta, n, rearranged.midpoints)
    np.testing.assert_allclose(rearranged.values, expected, rtol=1e-9)
    for s in levels:
        assert rearranged.distribution(s) == pytest.approx(distribution_function(sampled, s))
