"""
Analysis commands: threshold classification and the radial oracle.
"""
import logging

import numpy as np

from commands.common import add_problem_arguments, config_from_args, echo, open_ledger, output_path
from utils.artifacts import write_csv, write_json
from utils.continuation import Schedule
from utils.function_spaces import sharp_constants, threshold_classify
from utils.radial_oracle import (
    RadialProblem,
    limit_p_to_one,
    radial_grid,
    radial_limit_certificate,
    radial_solution,
    sample_datum,
)
from utils.run_config import build_problem_from_config

logger = logging.getLogger(__name__)


def threshold_command(args) -> int:
    """Classify the datum against the critical thresholds."""
    config = config_from_args(args, "threshold")
    spec = build_problem_from_config(config)
    datum = spec.datum
    if args.sampled:
        datum = sample_datum(spec.datum, radial_grid(spec.radius, spec.dimension))
    drift = spec.drift if config.drift == "uniform" else None
    report = threshold_classify(float(config.lam), datum, spec.dimension, drift=drift)

    payload = {
        "problem": spec.describe(),
        "sampled": bool(args.sampled),
        "thresholds": report.as_dict(),
        "constants": sharp_constants(spec.dimension).as_dict(),
    }
    rows = [(name, value) for name, value in report.thetas.items()]
    rows += [(name, value) for name, value in report.norms.items()]
    write_csv(output_path(config, "threshold.csv"), ("quantity", "value"), rows, config.as_dict(), config.seed)
    write_json(output_path(config, "threshold.json"), payload, config.as_dict(), config.seed)

    ledger, run_id = open_ledger(config, "threshold")
    ledger.finish_run(run_id, "completed", report.governing)
    echo({"thetas": report.thetas, "regimes": report.regimes, "governing": report.governing})
    return 0


def oracle_command(args) -> int:
    """Radial solution at p, or the p -> 1+ trichotomy when p is not given."""
    config = config_from_args(args, "oracle")
    spec = build_problem_from_config(config)
    prob = RadialProblem.from_spec(spec)
    grid = radial_grid(prob.radius, prob.dimension)
    ledger, run_id = open_ledger(config, "oracle")

    if config.p is not None:
        solution = radial_solution(prob.with_p(config.p), grid)
        rows = zip(grid.nodes, solution.flux_potential, solution.slope, solution.values)
        write_csv(output_path(config, "oracle_profile.csv"), ("r", "v", "u_prime", "u_p"), rows,
                  config.as_dict(), config.seed)
        payload = {
            "problem": spec.describe(),
            "p": config.p,
            "sup_norm": solution.sup_norm,
            "log_sup_norm": float(solution.log_values[0]),
            "energy": solution.energy(),
            "max_residual": solution.max_residual,
        }
        write_json(output_path(config, "oracle.json"), payload, config.as_dict(), config.seed)
        ledger.finish_run(run_id, "completed")
        echo(payload)
        return 0

    schedule = Schedule.geometric(config.p0, max(config.steps, 2))
    record = limit_p_to_one(prob, schedule.exponents, grid=grid)
    rows = [
        (r, slope, label, last, limit)
        for r, slope, label, last, limit in zip(record.radii, record.slopes, record.classes,
                                                record.last_values, record.limit_values)
    ]
    write_csv(output_path(config, "trichotomy.csv"), ("r", "log_slope", "class", "last_value", "limit"),
              rows, config.as_dict(), config.seed)
    payload = {"problem": spec.describe(), "schedule": list(record.schedule), "overall": record.overall}
    if args.certificate:
        payload["certificate"] = radial_limit_certificate(prob, grid).as_dict()
    write_json(output_path(config, "trichotomy.json"), payload, config.as_dict(), config.seed)
    ledger.finish_run(run_id, "completed", record.overall)
    echo({**payload, "slope_range": [float(np.nanmin(record.slopes)), float(np.nanmax(record.slopes))]})
    return 0


def setup(subparsers):
    """Register the analysis commands."""
    parser = subparsers.add_parser("threshold", help="Critical threshold classification")
    add_problem_arguments(parser)
    parser.add_argument("--sampled", action="store_true", help="Use the datum sampled on the radial grid")
    parser.set_defaults(handler=threshold_command)

    parser = subparsers.add_parser("oracle", help="Radial oracle and p -> 1+ trichotomy")
    add_problem_arguments(parser)
    parser.add_argument("--certificate", action="store_true", help="Also check the radial limit certificate")
    parser.set_defaults(handler=oracle_command)
