"""
Reproduction commands: the explicit critical examples with their acceptance checks.
"""
import logging
from typing import Any, Dict, List, Optional, Tuple

import numpy as np

from commands.common import add_problem_arguments, config_from_args, echo, open_ledger, output_path
from config import CERTIFICATE_MESH_SIZE, CONTINUATION_SLOPE_TOL, PRESETS
from utils.artifacts import write_csv, write_json
from utils.continuation import (
    DEGENERATE,
    NONTRIVIAL,
    UNBOUNDED,
    Schedule,
    richardson_limit,
    run_schedule,
    verify_certificate,
)
from utils.errors import AcceptanceFailure
from utils.fields import AnalyticDatum, ProblemSpec, build_problem, cone_profile, inward_unit_field
from utils.function_spaces import CRITICAL, SUBCRITICAL, SUPERCRITICAL, threshold_classify
from utils.mesh import ball_mesh
from utils.plap_solver import energy_and_bound, linf_via_levels
from utils.radial_oracle import RadialProblem, radial_grid, radial_limit_certificate, sample_datum
from utils.run_config import RunConfig

logger = logging.getLogger(__name__)

Check = Tuple[str, float, bool]

ANALYTIC_IDENTITY_TOL = 1e-10
SAMPLED_IDENTITY_TOL = 1e-4
SUP_RATIO_TOL = 0.05
PROFILE_L2_TOL = 0.02

# governing threshold regime -> limit classification for the inverse-radius family
EXPECTED_LIMIT = {SUBCRITICAL: DEGENERATE, CRITICAL: NONTRIVIAL, SUPERCRITICAL: UNBOUNDED}


def preset_spec(name: str, dimension: Optional[int] = None, alpha: Optional[float] = None) -> ProblemSpec:
    """Problem of a named preset; 'critical_hardy' resolves to lambda = -(N - 2)."""
    entry = PRESETS[name]
    n = dimension or entry["N"]
    lam = -(n - 2.0) if entry["lambda"] == "critical_hardy" else float(entry["lambda"])
    datum = AnalyticDatum(entry["datum"], entry["alpha"] if alpha is None else alpha, entry["R"], entry.get("beta", 1.0))
    return build_problem(n, lam, datum, radius=entry["R"])


def _continue(spec: ProblemSpec, config: RunConfig):
    schedule = Schedule.geometric(config.p0, config.steps)
    run = run_schedule(spec, schedule)
    return run, richardson_limit(run)


def _uniform_bound_checks(run, spec: ProblemSpec, label: str) -> List[Check]:
    """Energy bound at every step and discrete level-set decay."""
    energy_ok, decay_ok = True, True
    worst_ratio = 0.0
    for report in run:
        check = energy_and_bound(report)
        energy_ok &= check.ok
        worst_ratio = max(worst_ratio, check.lhs / check.rhs if check.rhs > 0 else np.inf)
        decay_ok &= linf_via_levels(report, spec.datum, q=2.0 * spec.dimension).decay_ok
    sup = max(report.linf_norm for report in run)
    return [
        (f"{label} energy within bound", worst_ratio, energy_ok),
        (f"{label} level-set decay", float(decay_ok), decay_ok),
        (f"{label} uniform sup bound", sup, bool(np.isfinite(sup))),
    ]


def example_7_1(config: RunConfig) -> Tuple[List[Check], Dict[str, Any]]:
    """Threshold identity in N = 3, 4, 5 and the limit certificate of u = R - |x|, z = -x/|x|."""
    checks: List[Check] = []
    details: Dict[str, Any] = {"thresholds": {}}
    for n in (3, 4, 5):
        spec = preset_spec("example-7-1", dimension=n)
        analytic = threshold_classify(spec.lam, spec.datum, n)
        sampled = threshold_classify(spec.lam, sample_datum(spec.datum, radial_grid(spec.radius, n)), n)
        analytic_gap = abs(analytic.theta_lorentz - 1)
        sampled_gap = abs(sampled.theta_lorentz - 1)
        checks.append((f"N={n} analytic Lorentz threshold = 1", analytic_gap, analytic_gap <= ANALYTIC_IDENTITY_TOL))
        checks.append((f"N={n} sampled Lorentz threshold = 1", sampled_gap, sampled_gap <= SAMPLED_IDENTITY_TOL))
        details["thresholds"][str(n)] = {"analytic": analytic.as_dict(), "sampled": sampled.as_dict()}

    spec = preset_spec("example-7-1")
    radial = radial_limit_certificate(RadialProblem.from_spec(spec))
    for name, profile in radial.profiles.items():
        worst = max(profile.pde_residual, profile.pairing_residual, profile.boundary_residual)
        checks.append((f"radial certificate, {name} profile", worst, profile.accepted))
    details["radial_certificate"] = radial.as_dict()

    mesh = ball_mesh(spec.dimension, CERTIFICATE_MESH_SIZE, spec.radius, graded=False)
    u, z = cone_profile(spec.radius), inward_unit_field()
    pairs = {
        "exact": (u, z, spec, []),
        "z scaled by 1.1": (u, z.scaled(1.1), spec.scaled(1.1), ["z_norm"]),
        "f scaled by 1.1": (u, z, spec.scaled(1.1), ["pde"]),
        "boundary sign flipped": (u.shifted(-spec.radius), z, spec, ["boundary"]),
        "positive trace": (u.shifted(spec.radius), z, spec, []),
    }
    details["mesh_certificates"] = {}
    for name, (candidate, field, problem, expected) in pairs.items():
        certificate = verify_certificate(candidate, field, problem, mesh=mesh, seed=config.seed)
        failed = certificate.failed_checks
        worst = max(certificate.residual_pde, certificate.residual_pairing, certificate.residual_boundary,
                    certificate.z_inf - 1)
        checks.append((f"mesh certificate, {name}: fails {expected or 'nothing'}", worst, failed == expected))
        details["mesh_certificates"][name] = certificate.as_dict()
    return checks, details


def example_7_2(config: RunConfig) -> Tuple[List[Check], Dict[str, Any], List[tuple]]:
    """Critical Lorentz threshold with a subcritical L^N threshold: the limit degenerates."""
    spec = preset_spec("example-7-2")
    thresholds = threshold_classify(spec.lam, spec.datum, spec.dimension)
    checks: List[Check] = [
        ("Lorentz threshold critical", thresholds.theta_lorentz, thresholds.regimes["theta_Lorentz"] == CRITICAL),
        ("L^N threshold subcritical", thresholds.theta_ln, thresholds.regimes["theta_LN"] == SUBCRITICAL),
    ]
    run, estimate = _continue(spec, config)
    checks.append(("classification Degenerate", float(len(run)), estimate.classification == DEGENERATE))

    exponents = np.array([report.p for report in run])
    sups = np.array([report.linf_norm for report in run])
    with np.errstate(divide="ignore"):
        logs = np.log(sups)
    checks.append(("sup norm decreasing", float(np.max(np.diff(sups))), bool(np.all(np.diff(sups) < 0))))
    tail = min(4, len(run))
    slope = float(np.polyfit(1 / (exponents[-tail:] - 1), logs[-tail:], 1)[0])
    checks.append(("log-slope over the last steps", slope, slope < -CONTINUATION_SLOPE_TOL))
    checks += _uniform_bound_checks(run, spec, "7.2")

    trace = [(report.p, report.linf_norm, log, report.l1_norm, report.energy) for report, log in zip(run, logs)]
    details = {"problem": spec.describe(), "thresholds": thresholds.as_dict(), "limit": estimate.as_dict(),
               "log_slope": slope}
    return checks, details, trace


def example_7_3(config: RunConfig) -> Tuple[List[Check], Dict[str, Any], List[tuple]]:
    """Trichotomy in the amplitude alpha of f = alpha/|x| under the critical Hardy drift."""
    checks: List[Check] = []
    details: Dict[str, Any] = {}
    table = []
    for alpha in config.alphas:
        spec = preset_spec("example-7-3", alpha=alpha)
        governing = threshold_classify(spec.lam, spec.datum, spec.dimension).governing
        expected = EXPECTED_LIMIT[governing]
        run, estimate = _continue(spec, config)
        label = f"alpha={alpha:g}"
        checks.append((f"{label} classified {expected}", float(len(run)), estimate.classification == expected))

        worst = 0.0
        for report in run:
            with np.errstate(divide="ignore", over="ignore"):
                predicted = np.exp(np.log(alpha) / (report.p - 1))
                ratio = report.linf_norm / predicted
            worst = max(worst, abs(ratio - 1))
            table.append((alpha, report.p, report.linf_norm, predicted, ratio, report.status, estimate.classification))
        checks.append((f"{label} sup norm follows alpha^(1/(p-1))", worst, worst <= SUP_RATIO_TOL))

        if estimate.classification == NONTRIVIAL:
            u = estimate.u
            oracle = np.clip(spec.radius - np.asarray(u.points), 0.0, None)
            error = float(np.sqrt(np.sum(u.weights * (u.values - oracle) ** 2) / np.sum(u.weights * oracle ** 2)))
            checks.append((f"{label} limit profile within 2% of R - r", error, error <= PROFILE_L2_TOL))
        if governing != SUPERCRITICAL:
            checks += _uniform_bound_checks(run, spec, label)
        details[label] = {"governing_threshold": governing, "limit": estimate.as_dict(), "blow_up": run.blow_up}
    return checks, details, table


def reproduce_command(args) -> int:
    """Write one bundle per example and fail when any acceptance check fails."""
    config = config_from_args(args, "reproduce-section-7")
    resolved = config.as_dict()
    ledger, run_id = open_ledger(config, "reproduce-section-7")
    summary: Dict[str, Any] = {}
    header = ("check", "value", "passed")

    checks, details = example_7_1(config)
    write_csv(output_path(config, "example_7_1", "certificate.csv"), header, checks, resolved, config.seed)
    write_json(output_path(config, "example_7_1", "certificate.json"), details, resolved, config.seed)
    summary["example-7-1"] = checks

    checks, details, trace = example_7_2(config)
    write_csv(output_path(config, "example_7_2", "degeneracy.csv"),
              ("p", "linf_norm", "log_linf_norm", "l1_norm", "energy"), trace, resolved, config.seed)
    write_csv(output_path(config, "example_7_2", "checks.csv"), header, checks, resolved, config.seed)
    write_json(output_path(config, "example_7_2", "degeneracy.json"), details, resolved, config.seed)
    summary["example-7-2"] = checks

    checks, details, table = example_7_3(config)
    write_csv(output_path(config, "example_7_3", "trichotomy.csv"),
              ("alpha", "p", "linf_norm", "predicted", "ratio", "status", "classification"),
              table, resolved, config.seed)
    write_csv(output_path(config, "example_7_3", "checks.csv"), header, checks, resolved, config.seed)
    write_json(output_path(config, "example_7_3", "trichotomy.json"), details, resolved, config.seed)
    summary["example-7-3"] = checks

    failed = [name for rows in summary.values() for name, _, passed in rows if not passed]
    write_json(output_path(config, "section7_summary.json"),
               {"failed": failed, "checks": {example: [list(row) for row in rows] for example, rows in summary.items()}},
               resolved, config.seed)
    ledger.finish_run(run_id, "failed" if failed else "completed")
    echo({"failed": failed, "passed": sum(passed for rows in summary.values() for _, _, passed in rows)})
    if failed:
        raise AcceptanceFailure("acceptance-failed", f"{len(failed)} checks failed: {failed}")
    return 0


def setup(subparsers):
    """Register the reproduction command."""
    parser = subparsers.add_parser("reproduce-section-7", help="Reproduce the explicit critical examples")
    add_problem_arguments(parser)
    parser.set_defaults(handler=reproduce_command)
