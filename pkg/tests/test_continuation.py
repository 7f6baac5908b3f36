import time

import numpy as np
import pytest

from utils.continuation import (
    DEGENERATE,
    NONTRIVIAL,
    UNBOUNDED,
    Schedule,
    extract_z,
    richardson_limit,
    run_schedule,
    spec_p_max,
    verify_certificate,
    z_growth_constant,
)
from utils.errors import ValidationError
from utils.fields import (
    AnalyticDatum,
    RadialFunction,
    build_problem,
    cone_profile,
    forward_datum,
    inward_unit_field,
)
from utils.mesh import ball_mesh
from utils.plap_solver import SolverSettings, energy_and_bound


def critical_family(alpha):
    return build_problem(3, -1.0, AnalyticDatum("inverse_radius", alpha))


@pytest.fixture(scope="module")
def ball():
    return ball_mesh(3, 0.25, graded=False)


def test_geometric_schedule():
    schedule = Schedule.geometric(1.2, 4)
    np.testing.assert_allclose(schedule.exponents, [1.2, 1.1, 1.05, 1.025])
    assert schedule.backend == "radial"
    assert schedule.as_dict()["exponents"] == list(schedule.exponents)


def test_schedule_needs_a_step():
    with pytest.raises(ValidationError) as exc:
        Schedule.geometric(1.2, 0)
    assert exc.value.code == "invalid-schedule"


def test_schedule_above_admissible_exponent(critical_problem):
    assert spec_p_max(critical_problem) == pytest.approx(1.5)
    with pytest.raises(ValidationError) as exc:
        run_schedule(critical_problem, Schedule.geometric(1.6, 3))
    assert exc.value.code == "p-out-of-range"


def test_unknown_backend(critical_problem):
    with pytest.raises(ValidationError) as exc:
        Schedule((1.2, 1.1), backend="spectral").validate(critical_problem)
    assert exc.value.code == "unknown-backend"


@pytest.mark.parametrize("alpha, expected", [(0.5, DEGENERATE), (1.0, NONTRIVIAL), (1.5, UNBOUNDED)])
def test_radial_trichotomy(alpha, expected):
    run = run_schedule(critical_family(alpha), Schedule.geometric(1.2, 7))
    estimate = richardson_limit(run)
    assert estimate.classification == expected
    for report in run:
        if report.status == "converged":
            assert report.linf_norm == pytest.approx(alpha ** (1 / (report.p - 1)), rel=1e-9)


def test_blow_up_stops_the_run():
    run = run_schedule(critical_family(1.5), Schedule.geometric(1.2, 7))
    assert run.blow_up
    assert not run.completed
    assert run[-1].status == "blow-up"
    assert len(run) < 7
    assert all(report.linf_norm <= 1e8 for report in run[:-1])


def test_nontrivial_limit_profile():
    run = run_schedule(critical_family(1.0), Schedule.geometric(1.2, 7))
    estimate = richardson_limit(run)
    u = estimate.u
    np.testing.assert_allclose(u.values, 1 - u.points, atol=1e-8)
    assert z_growth_constant(run) == pytest.approx(0.0, abs=1e-8)
    assert estimate.as_dict()["classification"] == NONTRIVIAL


def test_zero_datum_is_degenerate():
    run = run_schedule(critical_family(0.0), Schedule.geometric(1.2, 5))
    estimate = richardson_limit(run)
    assert estimate.classification == DEGENERATE
    assert not np.any(estimate.u.values)


def test_short_schedule_is_rejected():
    run = run_schedule(critical_family(1.0), Schedule.geometric(1.2, 3))
    with pytest.raises(ValidationError) as exc:
        richardson_limit(run)
    assert exc.value.code == "insufficient-schedule"


def test_extract_z_of_cone(radial_field):
    u = radial_field(3, lambda r: 1 - r, lambda r: -np.ones_like(r))
    z = extract_z(u, 1.1)
    np.testing.assert_allclose(z.components[:, 0], -1.0)
    assert z.norms["inf"] == pytest.approx(1.0)


def test_extract_z_of_torsion(radial_field):
    p = 1.5
    u = radial_field(2, lambda r: (1 - r ** 3) / 12, lambda r: -(r / 2) ** 2)
    z = extract_z(u, p)
    np.testing.assert_allclose(z.components[:, 0], -u.points / 2, rtol=1e-12)


def test_extract_z_needs_a_gradient(radial_field):
    u = radial_field(2, lambda r: 1 - r, lambda r: -np.ones_like(r))
    u.gradient = None
    with pytest.raises(ValidationError) as exc:
        extract_z(u, 1.5)
    assert exc.value.code == "missing-gradient"


def test_extract_z_on_mesh():
    mesh = ball_mesh(2, 0.25, graded=False)
    u = mesh.field(1 - np.linalg.norm(mesh.nodes, axis=1))
    z = extract_z(u, 1.2)
    assert z.components.shape == (mesh.num_cells, 2)
    assert z.support is mesh
    # |z| = |grad u|^(p-1) stays close to 1 for a unit-slope cone
    assert z.norms["inf"] == pytest.approx(1.0, rel=0.1)


def test_certificate_accepts_exact_pair(ball, critical_problem):
    certificate = verify_certificate(cone_profile(1.0), inward_unit_field(), critical_problem, mesh=ball)
    assert certificate.accepted, certificate.as_dict()
    assert certificate.z_inf == pytest.approx(1.0)
    assert certificate.battery_size >= 20


@pytest.mark.parametrize("corruption, expected", [
    ("z", ["z_norm"]),
    ("datum", ["pde"]),
    ("boundary", ["boundary"]),
    ("shift", []),
])
def test_certificate_flags_exactly_the_corrupted_condition(ball, critical_problem, corruption, expected):
    u, z, spec = cone_profile(1.0), inward_unit_field(), critical_problem
    if corruption == "z":
        z, spec = z.scaled(1.1), spec.scaled(1.1)
    elif corruption == "datum":
        spec = spec.scaled(1.1)
    elif corruption == "boundary":
        u = u.shifted(-1.0)
    else:
        u = u.shifted(1.0)
    certificate = verify_certificate(u, z, spec, mesh=ball)
    assert certificate.failed_checks == expected


def test_zero_candidate_only_needs_the_equation(ball, critical_problem):
    zero = RadialFunction("0", np.zeros_like, np.zeros_like)
    certificate = verify_certificate(zero, inward_unit_field(), critical_problem, mesh=ball)
    assert certificate.accepted
    assert certificate.residual_pairing == 0.0
    assert certificate.residual_boundary == 0.0


def test_certificate_is_deterministic_for_a_seed(ball, critical_problem):
    u = cone_profile(1.0).shifted(0.5)
    first = verify_certificate(u, inward_unit_field(), critical_problem, mesh=ball, seed=7)
    second = verify_certificate(u, inward_unit_field(), critical_problem, mesh=ball, seed=7)
    assert first.as_dict() == second.as_dict()


def test_certificate_needs_a_mesh(critical_problem):
    with pytest.raises(ValidationError) as exc:
        verify_certificate(cone_profile(1.0), inward_unit_field(), critical_problem)
    assert exc.value.code == "missing-mesh"


def test_certificate_rejects_mismatched_meshes(ball, critical_problem):
    other = ball_mesh(3, 0.5, graded=False)
    u = other.field(1 - np.linalg.norm(other.nodes, axis=1))
    with pytest.raises(ValidationError) as exc:
        verify_certificate(u, inward_unit_field(), critical_problem, mesh=ball)
    assert exc.value.code == "mismatched-meshes"


def test_certificate_battery_size(ball, critical_problem):
    with pytest.raises(ValidationError) as exc:
        verify_certificate(cone_profile(1.0), inward_unit_field(), critical_problem, mesh=ball, battery=5)
    assert exc.value.code == "invalid-battery"


def test_warm_start_does_not_change_the_solution():
    mesh = ball_mesh(2, 0.25, graded=False)
    spec = build_problem(2, 0.0, AnalyticDatum("constant"))
    schedule = Schedule.geometric(1.5, 2, backend="mesh", settings=SolverSettings(epsilon=1e-2))
    warm = run_schedule(spec, schedule, mesh=mesh, warm_start=True)
    cold = run_schedule(spec, schedule, mesh=mesh, warm_start=False)
    assert warm.completed and cold.completed
    scale = np.max(np.abs(cold[-1].field.values))
    np.testing.assert_allclose(warm[-1].field.values, cold[-1].field.values, rtol=1e-5, atol=1e-7 * scale)



def test_forward_datum_round_trip_is_certified():
    # z = -x/|x| produces f = (N - 1 + lambda)/|x|; feeding that datum back must certify the pair
    datum = forward_datum(2, -0.5)
    assert datum.value(np.array([0.25, 0.5])) == pytest.approx([2.0, 1.0])
    spec = build_problem(2, -0.5, datum)
    mesh = ball_mesh(2, 0.125, graded=False)
    certificate = verify_certificate(cone_profile(1.0), inward_unit_field(), spec, mesh=mesh)
    assert certificate.failed_checks == []
    wrong = verify_certificate(cone_profile(1.0), inward_unit_field(), spec.with_datum(forward_datum(2, 0.0)), mesh=mesh)
    assert wrong.failed_checks == ["pde"]


def test_radial_blow_up_is_reported_as_infinite():
    run = run_schedule(critical_family(1.5), Schedule.geometric(1.2, 7))
    # 1.5^80 at the last step lies above the report cap
    assert run[-1].linf_norm == np.inf
    assert all(np.isfinite(report.linf_norm) for report in run[:-1])
    assert richardson_limit(run).classification == UNBOUNDED


@pytest.mark.parametrize("alpha", [0.5, 1.0])
def test_radial_schedule_keeps_uniform_bounds(alpha):
    run = run_schedule(critical_family(alpha), Schedule.geometric(1.2, 7))
    assert run.completed
    for report in run:
        check = energy_and_bound(report)
        assert check.ok, (report.p, check)
        # one sup bound for the whole schedule: alpha^(1/(p-1)) <= 1
        assert report.linf_norm <= 1.0 + 1e-9
        assert report.field.values.min() >= 0.0


@pytest.fixture(scope="module")
def mesh_trichotomy(ball):
    schedule = Schedule.geometric(1.2, 7, backend="mesh")
    return {alpha: run_schedule(critical_family(alpha), schedule, mesh=ball) for alpha in (0.5, 1.0, 1.5)}


@pytest.mark.slow
def test_mesh_trichotomy(mesh_trichotomy):
    assert mesh_trichotomy[0.5].completed
    assert mesh_trichotomy[1.0].completed
    assert mesh_trichotomy[1.5].blow_up
    classes = {alpha: richardson_limit(run).classification for alpha, run in mesh_trichotomy.items()}
    assert classes == {0.5: DEGENERATE, 1.0: NONTRIVIAL, 1.5: UNBOUNDED}


@pytest.mark.slow
def test_mesh_sup_norms_scale_with_the_amplitude(mesh_trichotomy):
    reference = mesh_trichotomy[1.0]
    for alpha in (0.5, 1.5):
        for report, base in zip(mesh_trichotomy[alpha], reference):
            assert report.p == base.p
            ratio = report.linf_norm / base.linf_norm
            assert ratio == pytest.approx(alpha ** (1 / (report.p - 1)), rel=0.05), report.p


@pytest.mark.slow
def test_mesh_schedule_keeps_nonnegative_solutions(mesh_trichotomy):
    for run in mesh_trichotomy.values():
        for report in run:
            assert report.field.values.min() >= -1e-3 * report.linf_norm


@pytest.mark.slow
def test_mesh_continuation_limit_passes_the_certificate(mesh_trichotomy):
    run = mesh_trichotomy[1.0]
    estimate = richardson_limit(run)
    assert estimate.classification == NONTRIVIAL
    certificate = verify_certificate(estimate.u, run[-1].z, run.spec, tol_pde=1e-2, tol_pairing=5e-2,
                                     tol_boundary=1e-2, tol_z=5e-2)
    assert certificate.failed_checks == [], certificate.as_dict()


@pytest.mark.slow
def test_mesh_trichotomy_at_fine_resolution_fits_the_time_budget():
    mesh = ball_mesh(3, 1 / 24)
    started = time.perf_counter()
    run = run_schedule(critical_family(1.0), Schedule.geometric(1.2, 7, backend="mesh"), mesh=mesh)
    elapsed = time.perf_counter() - started
    assert run.completed
    assert richardson_limit(run).classification == NONTRIVIAL
    assert elapsed < 600.0, f"{elapsed:.0f} s"
