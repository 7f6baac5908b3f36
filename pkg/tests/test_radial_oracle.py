import numpy as np
import pytest

from utils.errors import ValidationError
from utils.fields import AnalyticDatum, SampledRadialDatum
from utils.radial_oracle import (
    INCONCLUSIVE,
    TO_FINITE,
    TO_INFINITY,
    TO_ZERO,
    RadialProblem,
    candidate_profiles,
    check_schedule,
    classify_log_slopes,
    flux_potential,
    limit_p_to_one,
    radial_grid,
    radial_limit_certificate,
    radial_solution,
)

SCHEDULE = tuple(1 + 0.2 * 2.0 ** -k for k in range(7))


def critical_family(alpha):
    return RadialProblem(3, 1.0, -1.0, AnalyticDatum("inverse_radius", alpha))


@pytest.mark.parametrize("p", [1.5, 1.1, 1.01])
@pytest.mark.parametrize("alpha", [0.5, 1.0, 1.5])
def test_critical_family_matches_closed_form(p, alpha):
    solution = radial_solution(critical_family(alpha).with_p(p))
    nodes = solution.grid.nodes[:-1]
    expected = np.log(alpha) / (p - 1) + np.log(1 - nodes)
    np.testing.assert_allclose(solution.log_values[:-1], expected, rtol=1e-10, atol=1e-10)
    assert solution.max_residual < 1e-10
    np.testing.assert_allclose(solution.flux, -alpha, rtol=1e-12)


def test_flux_potential_of_critical_family():
    grid = radial_grid(1.0, 3)
    v = flux_potential(critical_family(1.0), grid)
    assert v[0] == 0.0
    np.testing.assert_allclose(v[1:], -grid.nodes[1:] ** 2, rtol=1e-12)


def test_torsion_profile():
    prob = RadialProblem(2, 1.0, 0.0, AnalyticDatum("constant"), p=1.5)
    solution = radial_solution(prob)
    r = solution.grid.nodes
    np.testing.assert_allclose(solution.values, (1 - r ** 3) / 12, rtol=1e-9, atol=1e-14)


def test_zero_datum_gives_zero_solution():
    solution = radial_solution(RadialProblem(3, 1.0, -1.0, AnalyticDatum("inverse_radius", 0.0), p=1.2))
    assert not np.any(solution.values)
    assert solution.sup_norm == 0.0
    assert solution.energy() == 0.0


def test_exponent_outside_admissible_range():
    with pytest.raises(ValidationError) as exc:
        critical_family(1.0).with_p(1.5)
    assert exc.value.code == "p-out-of-range"


def test_lambda_outside_range():
    with pytest.raises(ValidationError) as exc:
        RadialProblem(3, 1.0, 2.0, AnalyticDatum("constant"))
    assert exc.value.code == "out-of-range-lambda"


def test_negative_datum_is_unsupported():
    datum = SampledRadialDatum((0.0, 0.5, 1.0), (1.0, -1.0, 0.5))
    with pytest.raises(ValidationError) as exc:
        radial_solution(RadialProblem(3, 1.0, 0.0, datum, p=1.5))
    assert exc.value.code == "unsupported-datum"


def test_missing_exponent():
    with pytest.raises(ValidationError) as exc:
        radial_solution(critical_family(1.0))
    assert exc.value.code == "missing-exponent"


@pytest.mark.parametrize("alpha, expected", [(0.5, TO_ZERO), (1.0, TO_FINITE), (1.5, TO_INFINITY), (0.999, TO_ZERO)])
def test_trichotomy(alpha, expected):
    record = limit_p_to_one(critical_family(alpha), SCHEDULE)
    assert record.overall == expected
    if expected == TO_FINITE:
        np.testing.assert_allclose(record.limit_values, 1 - record.radii, atol=1e-8)


def test_trichotomy_record_serializes():
    record = limit_p_to_one(critical_family(1.0), SCHEDULE, radii=np.array([0.25, 0.5, 0.75]))
    payload = record.as_dict()
    assert payload["overall"] == TO_FINITE
    assert [point["r"] for point in payload["points"]] == [0.25, 0.5, 0.75]


@pytest.mark.parametrize("schedule", [(1.2,), (1.1, 1.2), (1.2, 1.0), (1.2, 1.1, 1.1)])
def test_invalid_schedules(schedule):
    with pytest.raises(ValidationError) as exc:
        check_schedule(schedule)
    assert exc.value.code == "invalid-schedule"


def test_log_slope_classification():
    exponents = np.array(SCHEDULE)
    x = 1 / (exponents - 1)
    logs = np.column_stack((-0.3 * x, 0.0 * x + 2.0, 0.4 * x, np.full_like(x, -np.inf)))
    slopes, classes = classify_log_slopes(exponents, logs, 1e-6)
    assert classes == [TO_ZERO, TO_FINITE, TO_INFINITY, TO_ZERO]
    np.testing.assert_allclose(slopes[:3], [-0.3, 0.0, 0.4], atol=1e-9)


def test_oscillating_column_is_inconclusive():
    exponents = np.array(SCHEDULE)
    logs = np.array([[0.0], [1.0], [0.0], [1.0], [0.0], [1.0], [0.0]]) * 50
    _, classes = classify_log_slopes(exponents, logs, 1e-6, points=7)
    assert classes == [INCONCLUSIVE]


def test_homogeneity_on_random_instances(rng):
    kinds = ("constant", "inverse_radius", "plateau_7_2")
    for _ in range(100):
        n = int(rng.integers(2, 5))
        bound = 0.9 * min(n - 1.0, n / 1.2 - 1)
        lam = rng.uniform(-bound, bound)
        datum = AnalyticDatum(kinds[rng.integers(3)], rng.uniform(0.2, 2.0), beta=rng.uniform(1.0, 3.0))
        prob = RadialProblem(n, 1.0, lam, datum)
        p = rng.uniform(1.05, min(prob.p_max, n) - 0.05)
        c = rng.uniform(0.1, 10.0)
        base = radial_solution(prob.with_p(p))
        scaled = radial_solution(prob.scaled(c).with_p(p))
        difference = scaled.log_values[:-1] - base.log_values[:-1]
        np.testing.assert_allclose(difference, np.log(c) / (p - 1), rtol=1e-7, atol=1e-7)


def test_certificate_of_critical_example():
    certificate = radial_limit_certificate(critical_family(1.0))
    assert set(certificate.profiles) == {"computed", "power_law"}
    assert certificate.accepted
    r = certificate.radii
    np.testing.assert_allclose(certificate.limit_profiles["computed"], 1 - r, atol=1e-3)


def test_certificate_detects_mismatched_amplitude():
    certificate = radial_limit_certificate(critical_family(0.8))
    assert not certificate.accepted
    assert all(check.pde_residual > 1e-8 for check in certificate.profiles.values())


def test_candidate_profiles_reject_unbounded_limit():
    with pytest.raises(ValidationError) as exc:
        candidate_profiles(critical_family(1.5), np.linspace(0.1, 1.0, 5))
    assert exc.value.code == "not-critical"


def test_refined_grid_keeps_endpoints():
    grid = radial_grid(2.0, 3)
    refined = grid.refined()
    assert refined.nodes[0] == 0.0
    assert refined.radius == 2.0
    assert refined.nodes.size == 2 * grid.nodes.size - 1
    assert np.all(np.diff(refined.nodes) > 0)


def test_strong_residual_decays_under_refinement():
    # M(r) = r^3.5/3.5 is not a polynomial, so the difference quotient leaves an O(h^2) residual
    prob = RadialProblem(3, 1.0, 0.5, AnalyticDatum("constant"), p=1.5)
    grid = radial_grid(1.0, 3)
    coarse = radial_solution(prob, grid).max_residual
    fine = radial_solution(prob, grid.refined()).max_residual
    assert coarse > 1e-12
    assert fine < 0.5 * coarse


def test_certificate_weighted_residual():
    exact = radial_limit_certificate(critical_family(1.0))
    assert all(check.weighted_residual < 1e-10 for check in exact.profiles.values())
    assert all(check.as_dict()["weighted_residual"] == check.weighted_residual for check in exact.profiles.values())
    # |x|^lam f falls short of the balanced value by 20%, i.e. 0.25 relative to the datum
    off = radial_limit_certificate(critical_family(0.8))
    for check in off.profiles.values():
        assert check.weighted_residual == pytest.approx(0.25, rel=1e-6)
