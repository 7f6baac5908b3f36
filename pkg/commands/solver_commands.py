"""
Solver commands: fixed-p mesh solves, continuation runs and limit certificates.
"""
import logging
from typing import Optional

from commands.common import add_problem_arguments, config_from_args, echo, mesh_for, open_ledger, output_path
from config import CERT_TOL_BOUNDARY, CERT_TOL_PAIRING, CERT_TOL_PDE, CERT_TOL_Z
from utils.artifacts import emit_plot_data, write_csv, write_field_csv, write_json
from utils.continuation import (
    NONTRIVIAL,
    Schedule,
    run_schedule,
    richardson_limit,
    verify_certificate,
    z_growth_constant,
)
from utils.errors import ValidationError
from utils.fields import cone_profile, forward_datum, inward_unit_field
from utils.mesh import write_mesh
from utils.plap_solver import (
    DiscreteProblem,
    SolverSettings,
    energy_and_bound,
    epsilon_sensitivity,
    linf_via_levels,
    solve_fixed_p,
)
from utils.run_config import RunConfig, build_problem_from_config

logger = logging.getLogger(__name__)


def _settings(config: RunConfig) -> SolverSettings:
    return SolverSettings(epsilon=config.epsilon)


def _diagnostics(report, spec) -> dict:
    """Energy bound and level-set table, or the reason they do not apply."""
    diagnostics = {}
    try:
        check = energy_and_bound(report)
        diagnostics["energy_bound"] = {"lhs": check.lhs, "rhs": check.rhs, "ok": check.ok,
                                       "limit_factor": check.limit_factor}
    except ValidationError as e:
        diagnostics["energy_bound"] = {"not_applicable": e.code}
    levels = linf_via_levels(report, spec.datum, q=2.0 * spec.dimension)
    diagnostics["levels"] = levels.as_dict()
    return diagnostics


def solve_command(args) -> int:
    """Solve at a single p on a mesh."""
    config = config_from_args(args, "solve")
    if config.p is None:
        raise ValidationError("missing-exponent", "solve needs --p")
    spec = build_problem_from_config(config)
    mesh = mesh_for(config, spec)
    if args.write_mesh:
        write_mesh(mesh, output_path(config, "mesh.plapmesh"))
    dp = DiscreteProblem(spec, mesh, _settings(config))

    ledger, run_id = open_ledger(config, "solve")
    report = solve_fixed_p(dp)
    ledger.record_step(run_id, report)

    payload = {"problem": spec.describe(), "settings": dp.settings.as_dict(), "report": report.summary(),
               "residual_history": report.residual_history, "z_norms": report.z.norms,
               **_diagnostics(report, spec)}
    if args.sensitivity:
        payload["epsilon_sensitivity"] = epsilon_sensitivity(dp, base=report)
    write_field_csv(output_path(config, "solution.csv"), report.field, config.as_dict(), config.seed)
    write_json(output_path(config, "solve.json"), payload, config.as_dict(), config.seed)
    ledger.finish_run(run_id, "completed")
    echo(report.summary())
    return 0


def _continue(config: RunConfig, alpha: Optional[float] = None):
    spec = build_problem_from_config(config, alpha)
    schedule = Schedule.geometric(config.p0, config.steps, settings=_settings(config), backend=config.backend)
    mesh = mesh_for(config, spec) if config.backend == "mesh" else None
    run = run_schedule(spec, schedule, mesh=mesh, warm_start=config.warm_start)
    return spec, schedule, run


def continuation_command(args) -> int:
    """Run a continuation schedule and classify the limit."""
    config = config_from_args(args, "continuation")
    ledger, run_id = open_ledger(config, "continuation")
    spec, schedule, run = _continue(config)
    ledger.record_steps(run_id, run)
    resolved = config.as_dict()

    manifest = {
        "problem": spec.describe(),
        "schedule": schedule.as_dict(),
        "tolerances": {"pde": CERT_TOL_PDE, "pairing": CERT_TOL_PAIRING, "boundary": CERT_TOL_BOUNDARY,
                       "z": CERT_TOL_Z},
        "run": run.as_dict(),
    }
    write_json(output_path(config, "manifest.json"), manifest, resolved, config.seed)
    for k, report in enumerate(run):
        write_field_csv(output_path(config, "steps", f"step_{k:02d}.csv"), report.field, resolved, config.seed)
    if len(run):
        emit_plot_data(run, config.outdir, resolved, config.seed)

    classification = None
    limit_payload = {"z_growth_constant": z_growth_constant(run)}
    try:
        estimate = richardson_limit(run)
        classification = estimate.classification
        limit_payload.update(estimate.as_dict())
        if estimate.classification == NONTRIVIAL:
            write_field_csv(output_path(config, "limit.csv"), estimate.u, resolved, config.seed)
    except ValidationError as e:
        limit_payload["classification"] = None
        limit_payload["not_classified"] = e.code
        logger.warning(f"Limit not classified: {e}")
    write_json(output_path(config, "limit.json"), limit_payload, resolved, config.seed)

    status = "failed" if run.failure else "completed"
    ledger.finish_run(run_id, status, classification)
    echo({"classification": classification, "blow_up": run.blow_up, "failure": run.failure,
          "steps": [report.summary() for report in run]})
    return 3 if run.failure else 0


_CORRUPTIONS = ("none", "z", "datum", "boundary", "shift")


def _candidate(config: RunConfig, corruption: str, forward: bool = False):
    """
    Closed-form pair u = R - |x|, z = -x/|x| for the configured problem, optionally corrupted.

    With forward set, the datum is replaced by the one z produces for the
    configured N and lambda, so the pair is exact for any Hardy drift.
    """
    spec = build_problem_from_config(config)
    if forward:
        if spec.lam is None:
            raise ValidationError("unsupported-drift", "The forward datum needs a Hardy drift")
        spec = spec.with_datum(forward_datum(spec.dimension, spec.lam, spec.radius))
    u = cone_profile(spec.radius)
    z = inward_unit_field()
    if corruption == "z":
        z = z.scaled(1.1)
        spec = spec.scaled(1.1)
    elif corruption == "datum":
        spec = spec.scaled(1.1)
    elif corruption == "boundary":
        u = u.shifted(-spec.radius)
    elif corruption == "shift":
        u = u.shifted(spec.radius)
    return u, z, spec


def verify_command(args) -> int:
    """Check a candidate (u, z) pair against the limit conditions."""
    config = config_from_args(args, "verify")
    ledger, run_id = open_ledger(config, "verify")
    if args.candidate == "continuation":
        config.backend = "mesh"
        spec, _, run = _continue(config)
        ledger.record_steps(run_id, run)
        estimate = richardson_limit(run)
        if estimate.u is None:
            raise ValidationError("no-limit", f"Continuation limit is {estimate.classification}")
        u, z, mesh = estimate.u, run[-1].z, estimate.u.support
    else:
        u, z, spec = _candidate(config, args.corrupt, forward=args.candidate == "forward")
        mesh = mesh_for(config, spec)

    certificate = verify_certificate(u, z, spec, mesh=mesh, seed=config.seed)
    payload = {"problem": spec.describe(), "candidate": args.candidate, "corruption": args.corrupt,
               "certificate": certificate.as_dict()}
    rows = [
        ("z_norm", certificate.z_inf, certificate.checks["z_norm"]),
        ("pde", certificate.residual_pde, certificate.checks["pde"]),
        ("pairing", certificate.residual_pairing, certificate.checks["pairing"]),
        ("boundary", certificate.residual_boundary, certificate.checks["boundary"]),
    ]
    write_csv(output_path(config, "certificate.csv"), ("check", "value", "passed"), rows, config.as_dict(), config.seed)
    write_json(output_path(config, "certificate.json"), payload, config.as_dict(), config.seed)
    ledger.finish_run(run_id, "completed" if certificate.accepted else "rejected")
    echo(certificate.as_dict())
    return 0 if certificate.accepted else 4


def setup(subparsers):
    """Register the solver commands."""
    parser = subparsers.add_parser("solve", help="Solve at fixed p on a mesh")
    add_problem_arguments(parser)
    parser.add_argument("--sensitivity", action="store_true", help="Report the epsilon sensitivity")
    parser.add_argument("--write-mesh", action="store_true", help="Save the mesh next to the solution")
    parser.set_defaults(handler=solve_command)

    parser = subparsers.add_parser("continuation", help="Continuation in p towards 1")
    add_problem_arguments(parser)
    parser.set_defaults(handler=continuation_command)

    parser = subparsers.add_parser("verify", help="Limit certificate of a candidate pair")
    add_problem_arguments(parser)
    parser.add_argument("--candidate", choices=("analytic", "forward", "continuation"), default="analytic",
                        help="Closed-form pair, the same pair with its forward datum, or the continuation limit")
    parser.add_argument("--corrupt", choices=_CORRUPTIONS, default="none",
                        help="Deliberately break one condition of the analytic pair")
    parser.set_defaults(handler=verify_command)
