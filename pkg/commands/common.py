"""
Shared argument handling for the command modules.
"""
import json
import logging
import os
from typing import Any, Dict, Optional

from config import USE_RUN_LEDGER, RUN_LEDGER_URL
from utils.artifacts import jsonable
from utils.database_service import RunLedger
from utils.mesh import Mesh, build_mesh, read_mesh
from utils.run_config import RunConfig, parse_config

logger = logging.getLogger(__name__)

# argparse destination -> configuration key
FLAG_KEYS = {
    "preset": "preset",
    "N": "N",
    "lam": "lambda",
    "datum": "datum",
    "alpha": "alpha",
    "alphas": "alphas",
    "R": "R",
    "beta": "beta",
    "domain": "domain",
    "drift": "drift",
    "drift_strength": "drift_strength",
    "p": "p",
    "p0": "p0",
    "steps": "steps",
    "backend": "backend",
    "h": "h",
    "graded": "graded",
    "epsilon": "epsilon",
    "mesh": "mesh",
    "outdir": "outdir",
    "seed": "seed",
    "warm_start": "warm_start",
}


def add_problem_arguments(parser):
    """Flags shared by every command; each one overrides the configuration file."""
    parser.add_argument("--config", help="KEY=value run configuration file")
    parser.add_argument("--preset", help="Named preset (example-7-1, example-7-2, example-7-3, torsion)")
    parser.add_argument("--N", type=int, help="Space dimension")
    parser.add_argument("--lambda", dest="lam", help="Hardy drift strength or 'critical_hardy'")
    parser.add_argument("--datum", help="Analytic datum tag")
    parser.add_argument("--alpha", type=float, help="Datum amplitude")
    parser.add_argument("--alphas", help="Comma separated amplitudes for reproduction runs")
    parser.add_argument("--R", type=float, help="Domain radius or half-width")
    parser.add_argument("--beta", type=float, help="Plateau parameter")
    parser.add_argument("--domain", choices=("ball", "square"))
    parser.add_argument("--drift", choices=("hardy", "uniform"))
    parser.add_argument("--drift-strength", dest="drift_strength", type=float, help="Uniform drift magnitude")
    parser.add_argument("--p", type=float, help="Exponent")
    parser.add_argument("--p0", type=float, help="First exponent of the continuation schedule")
    parser.add_argument("--steps", type=int, help="Number of continuation steps")
    parser.add_argument("--backend", choices=("radial", "mesh"))
    parser.add_argument("--h", type=float, help="Mesh size")
    parser.add_argument("--graded", choices=("true", "false"), help="Refine the mesh near the origin")
    parser.add_argument("--epsilon", help="Relative regularization (default: h**2)")
    parser.add_argument("--mesh", help="PLAPMESH file to use instead of generating a mesh")
    parser.add_argument("--outdir", help="Output directory")
    parser.add_argument("--seed", type=int, help="Random seed")
    parser.add_argument("--no-warm-start", dest="warm_start", action="store_const", const="false",
                        help="Start every continuation step from zero")


def config_from_args(args, command: str) -> RunConfig:
    overrides: Dict[str, Any] = {"command": command}
    for dest, key in FLAG_KEYS.items():
        value = getattr(args, dest, None)
        if value is not None:
            overrides[key] = value
    return parse_config(getattr(args, "config", None), overrides)


def output_path(config: RunConfig, *parts: str) -> str:
    path = os.path.join(config.outdir, *parts)
    os.makedirs(os.path.dirname(path), exist_ok=True)
    return path


def mesh_for(config: RunConfig, spec) -> Mesh:
    """Mesh from the configured file, or generated for the problem domain."""
    if config.mesh_file:
        return read_mesh(config.mesh_file)
    return build_mesh(spec.domain, spec.dimension, config.h, config.graded)


def open_ledger(config: RunConfig, command: str, ledger: Optional[RunLedger] = None):
    ledger = ledger or RunLedger(USE_RUN_LEDGER, RUN_LEDGER_URL)
    return ledger, ledger.start_run(command, config.as_dict(), config.seed)


def echo(payload: Dict[str, Any]):
    """Print a result summary to stdout."""
    print(json.dumps(jsonable(payload), indent=2, sort_keys=True, default=str))
