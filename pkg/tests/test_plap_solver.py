import numpy as np
import pytest

from config import NEWTON_SWITCH_RESIDUAL

from utils.errors import SolverDiverged, ValidationError
from utils.fields import AnalyticDatum, build_problem
from utils.mesh import ball_mesh, square_mesh
from utils.plap_solver import (
    DiscreteProblem,
    _Linearization,
    SolverSettings,
    energy_and_bound,
    epsilon_sensitivity,
    flux_vectors,
    gk_part,
    linf_via_levels,
    solve_fixed_p,
    truncate,
    vector_norms,
)


def torsion_profile(r, p, dimension=2):
    """Closed-form p-torsion function of the unit ball."""
    exponent = p / (p - 1)
    return (p - 1) / p * dimension ** (-1 / (p - 1)) * (1 - r ** exponent)


@pytest.fixture(scope="module")
def disk():
    return ball_mesh(2, 0.1, graded=False)


@pytest.fixture(scope="module")
def torsion(disk):
    spec = build_problem(2, 0.0, AnalyticDatum("constant"), p=1.5)
    dp = DiscreteProblem(spec, disk, SolverSettings(epsilon=1e-2))
    return dp, solve_fixed_p(dp)


def relative_l2_error(mesh, values, expected):
    weights = mesh.lumped_weights
    return float(np.sqrt(np.sum(weights * (values - expected) ** 2) / np.sum(weights * expected ** 2)))


def test_truncation_operators():
    s = np.array([-3.0, -0.5, 0.0, 0.5, 3.0])
    np.testing.assert_array_equal(truncate(s, 1.0), [-1.0, -0.5, 0.0, 0.5, 1.0])
    np.testing.assert_array_equal(gk_part(s, 1.0), [-2.0, 0.0, 0.0, 0.0, 2.0])
    with pytest.raises(ValidationError) as exc:
        truncate(s, 0.0)
    assert exc.value.code == "invalid-level"


def test_flux_vectors_and_norms():
    gradients = np.array([[3.0, 4.0], [0.0, 0.0]])
    z = flux_vectors(gradients, 1.5)
    np.testing.assert_allclose(z[0], np.array([3.0, 4.0]) / np.sqrt(5.0))
    np.testing.assert_array_equal(z[1], [0.0, 0.0])
    norms = vector_norms(z, np.array([1.0, 1.0]))
    assert set(norms) == {"2", "4", "8", "inf"}
    assert norms["inf"] == pytest.approx(np.sqrt(5.0))


def test_torsion_matches_closed_form(disk, torsion):
    _, report = torsion
    assert report.converged
    assert report.residual <= 1e-8
    expected = torsion_profile(np.linalg.norm(disk.nodes, axis=1), 1.5)
    assert relative_l2_error(disk, report.field.values, expected) < 0.05
    assert report.linf_norm == pytest.approx(1 / 12, rel=0.05)
    assert report.w11_norm <= report.young_bound


def test_torsion_flux_field(torsion):
    _, report = torsion
    # |z| = |grad u|^(1/2) = r/2 for the exact solution
    assert report.z_inf == pytest.approx(0.5, rel=0.15)
    assert report.z.components.shape == (report.field.support.num_cells, 2)


def test_homogeneity_of_mesh_solutions(torsion):
    dp, report = torsion
    doubled = solve_fixed_p(dp.scaled(2.0))
    # u(c f) = c^(1/(p-1)) u(f)
    np.testing.assert_allclose(doubled.field.values, 4.0 * report.field.values, rtol=1e-5, atol=1e-10)


def test_zero_datum_gives_zero(disk):
    spec = build_problem(2, 0.0, AnalyticDatum("constant", 0.0), p=1.5)
    report = solve_fixed_p(DiscreteProblem(spec, disk))
    assert report.converged
    assert report.iterations == 0
    assert not np.any(report.field.values)


def test_divergence_is_reported(disk):
    spec = build_problem(2, 0.0, AnalyticDatum("constant"), p=1.5)
    dp = DiscreteProblem(spec, disk, SolverSettings(epsilon=1e-2, max_iterations=1, tol=1e-14))
    with pytest.raises(SolverDiverged) as exc:
        solve_fixed_p(dp)
    assert exc.value.code == "diverged"
    assert exc.value.report.status == "diverged"
    assert exc.value.report.iterations == 1


def test_admissible_exponent_is_enforced(disk):
    spec = build_problem(2, -0.5, AnalyticDatum("constant"), p=1.5)
    with pytest.raises(ValidationError) as exc:
        DiscreteProblem(spec, disk)
    assert exc.value.code == "p-out-of-range"


def test_mesh_dimension_must_match(disk):
    spec = build_problem(3, 0.0, AnalyticDatum("constant"), p=1.5)
    with pytest.raises(ValidationError) as exc:
        DiscreteProblem(spec, disk)
    assert exc.value.code == "mismatched-mesh"


def test_hardy_drift_on_square_mesh():
    mesh = square_mesh(2, 8)
    spec = build_problem(2, -0.2, AnalyticDatum("constant", radius=1.0), domain="square", p=1.3)
    report = solve_fixed_p(DiscreteProblem(spec, mesh, SolverSettings(epsilon=1e-2)))
    assert report.converged
    assert report.linf_norm > 0
    assert report.field.values.min() >= -1e-3 * report.linf_norm


def test_energy_within_bound(torsion):
    _, report = torsion
    check = energy_and_bound(report)
    assert check.ok
    assert 0 < check.lhs <= check.rhs
    assert check.limit_factor == pytest.approx(1.0)


def test_level_sets_decay(torsion):
    _, report = torsion
    levels = linf_via_levels(report, AnalyticDatum("constant"), q=4.0)
    assert levels.decay_ok
    assert levels.chebyshev_ok
    assert levels.table[-1][1] == 0.0
    assert levels.k0 == pytest.approx(np.sum(report.field.weights * np.abs(report.field.values)) / report.field.measure)
    assert levels.estimate == pytest.approx(report.linf_norm)


def test_level_set_estimate_needs_large_q(torsion):
    _, report = torsion
    with pytest.raises(ValidationError) as exc:
        linf_via_levels(report, AnalyticDatum("constant"), q=2.0)
    assert exc.value.code == "estimate-not-guaranteed"


def test_epsilon_sensitivity_is_small(torsion):
    dp, report = torsion
    changes = epsilon_sensitivity(dp, base=report)
    assert set(changes) == {"0.5", "2"}
    assert all(change < 0.05 for change in changes.values())



def test_default_regularization_is_tied_to_the_mesh(disk):
    spec = build_problem(2, 0.0, AnalyticDatum("constant"), p=1.5)
    dp = DiscreteProblem(spec, disk)
    assert dp.epsilon == pytest.approx(disk.h ** 2)
    assert dp.settings.newton_switch == NEWTON_SWITCH_RESIDUAL
    assert dp.with_settings(epsilon=0.3).epsilon == 0.3


def test_newton_jacobian_matches_finite_differences(rng):
    mesh = square_mesh(2, 6)
    spec = build_problem(2, -0.2, AnalyticDatum("constant", radius=1.0), domain="square", p=1.3)
    # frozen epsilon and no damping make the Jacobian exact
    linearization = _Linearization(DiscreteProblem(spec, mesh, SolverSettings(epsilon=1e-12, truncation=None)))
    interior = linearization.interior
    u = np.zeros(mesh.num_nodes)
    u[interior] = rng.uniform(0.5, 1.5, interior.size)
    v = np.zeros(mesh.num_nodes)
    v[interior] = rng.normal(size=interior.size)
    t = 1e-6
    _, plus = linearization.residual(u + t * v)
    _, minus = linearization.residual(u - t * v)
    expected = (plus - minus) / (2 * t)
    actual = linearization.matrix(u, newton=True) @ v[interior]
    np.testing.assert_allclose(actual, expected, rtol=1e-5, atol=1e-6 * np.max(np.abs(expected)))


def test_matrix_free_residual_matches_assembled_operator(rng):
    mesh = square_mesh(2, 6)
    spec = build_problem(2, -0.2, AnalyticDatum("constant", radius=1.0), domain="square", p=1.3)
    linearization = _Linearization(DiscreteProblem(spec, mesh))
    u = np.zeros(mesh.num_nodes)
    u[linearization.interior] = rng.uniform(0.0, 1.0, linearization.interior.size)
    _, action = linearization.residual(u)
    np.testing.assert_allclose(linearization.matrix(u) @ u[linearization.interior], action, rtol=1e-10, atol=1e-14)


def test_newton_acceleration_reaches_the_picard_solution(disk):
    spec = build_problem(2, 0.0, AnalyticDatum("constant"), p=1.5)
    picard = solve_fixed_p(DiscreteProblem(spec, disk, SolverSettings(epsilon=1e-2, newton_switch=None)))
    newton = solve_fixed_p(DiscreteProblem(spec, disk, SolverSettings(epsilon=1e-2)))
    assert picard.converged and newton.converged
    assert newton.iterations <= picard.iterations
    np.testing.assert_allclose(newton.field.values, picard.field.values, rtol=1e-5, atol=1e-7 * picard.linf_norm)


def test_nonnegative_datum_gives_nonnegative_solution(torsion):
    _, report = torsion
    assert report.field.values.min() >= -1e-3 * report.linf_norm


def test_drift_damping_fades_as_truncation_grows():
    mesh = square_mesh(2, 8)
    spec = build_problem(2, -0.2, AnalyticDatum("constant", radius=1.0), domain="square", p=1.3)

    def solve(level):
        return solve_fixed_p(DiscreteProblem(spec, mesh, SolverSettings(epsilon=1e-2, truncation=level))).field.values

    undamped = solve(None)
    changes = [relative_l2_error(mesh, solve(level), undamped) for level in (1.0, 10.0, 1e4)]
    assert changes[0] > changes[1] > changes[2]
    assert changes[2] < 1e-3


@pytest.mark.slow
def test_torsion_on_fine_mesh():
    mesh = ball_mesh(2, 1 / 64, graded=False)
    spec = build_problem(2, 0.0, AnalyticDatum("constant"), p=1.5)
    report = solve_fixed_p(DiscreteProblem(spec, mesh))
    expected = torsion_profile(np.linalg.norm(mesh.nodes, axis=1), 1.5)
    assert relative_l2_error(mesh, report.field.values, expected) < 1e-3


@pytest.mark.slow
def test_torsion_error_decays_at_first_order_or_better():
    spec = build_problem(2, 0.0, AnalyticDatum("constant"), p=1.5)
    errors = []
    for h in (1 / 16, 1 / 32, 1 / 64):
        mesh = ball_mesh(2, h, graded=False)
        report = solve_fixed_p(DiscreteProblem(spec, mesh))
        expected = torsion_profile(np.linalg.norm(mesh.nodes, axis=1), 1.5)
        errors.append(relative_l2_error(mesh, report.field.values, expected))
    orders = np.log2(np.array(errors[:-1]) / np.array(errors[1:]))
    assert np.all(orders >= 1.0), errors


@pytest.mark.slow
def test_hardy_ball_matches_the_cone_profile():
    mesh = ball_mesh(3, 1 / 24)
    spec = build_problem(3, -1.0, AnalyticDatum("inverse_radius", 1.0, 1.0), p=1.2)
    report = solve_fixed_p(DiscreteProblem(spec, mesh))
    assert report.converged
    expected = 1 - np.linalg.norm(mesh.nodes, axis=1)
    assert relative_l2_error(mesh, report.field.values, expected) < 5e-3
