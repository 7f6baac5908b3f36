"""
Configuration module for the p-Laplacian continuation lab.
Contains tolerances, solver defaults and the named presets used throughout the application.
"""
import os
from dotenv import load_dotenv

# Load environment variables
load_dotenv()

LAB_NAME = "plap-lab"
LAB_VERSION = "0.1.0"

# Version identifiers embedded in every artifact
MODULE_VERSIONS = {
    "function_spaces": "1.0",
    "radial_oracle": "1.0",
    "plap_solver": "1.0",
    "continuation": "1.0",
    "cli": "1.0",
}

# Threshold classification
THRESHOLD_TOL = float(os.getenv("PLAP_THRESHOLD_TOL", "1e-10"))  # analytic data
SAMPLED_TOL_FACTOR = float(os.getenv("PLAP_SAMPLED_TOL_FACTOR", "10"))  # times the quadrature error estimate

# Radial oracle
RADIAL_GRID_RATIO = float(os.getenv("PLAP_RADIAL_GRID_RATIO", "1.05"))
RADIAL_INNER_RADIUS = float(os.getenv("PLAP_RADIAL_INNER_RADIUS", "1e-8"))  # relative to R
RADIAL_GAUSS_POINTS = int(os.getenv("PLAP_RADIAL_GAUSS_POINTS", "8"))
BLOWUP_REPORT_VALUE = float(os.getenv("PLAP_BLOWUP_REPORT_VALUE", "1e12"))
RADIAL_SLOPE_TOL = float(os.getenv("PLAP_RADIAL_SLOPE_TOL", "1e-6"))

# Mesh solver
SOLVER_TOL = float(os.getenv("PLAP_SOLVER_TOL", "1e-8"))  # relative nonlinear residual
LINEAR_TOL = float(os.getenv("PLAP_LINEAR_TOL", "1e-10"))  # relative algebraic residual
MAX_PICARD_ITERATIONS = int(os.getenv("PLAP_MAX_PICARD_ITERATIONS", "400"))
PICARD_DAMPING = float(os.getenv("PLAP_PICARD_DAMPING", "0.5"))
MAX_STEP_HALVINGS = int(os.getenv("PLAP_MAX_STEP_HALVINGS", "4"))
DRIFT_TRUNCATION = float(os.getenv("PLAP_DRIFT_TRUNCATION", "1e4"))
DIRECT_SOLVER_MAX_DOFS = int(os.getenv("PLAP_DIRECT_SOLVER_MAX_DOFS", "20000"))
ILU_DROP_TOL = float(os.getenv("PLAP_ILU_DROP_TOL", "1e-4"))
ILU_FILL_FACTOR = float(os.getenv("PLAP_ILU_FILL_FACTOR", "10"))
NEWTON_SWITCH_RESIDUAL = float(os.getenv("PLAP_NEWTON_SWITCH_RESIDUAL", "1e-2"))  # 0 keeps plain Picard
GRADED_REFINEMENT_RADIUS = float(os.getenv("PLAP_GRADED_REFINEMENT_RADIUS", "0.1"))  # relative to R
GRADED_REFINEMENT_FACTOR = float(os.getenv("PLAP_GRADED_REFINEMENT_FACTOR", "4"))
DEFAULT_MESH_SIZE = float(os.getenv("PLAP_DEFAULT_MESH_SIZE", "0.125"))

# Continuation
DEFAULT_P0 = float(os.getenv("PLAP_DEFAULT_P0", "1.2"))
DEFAULT_SCHEDULE_STEPS = int(os.getenv("PLAP_DEFAULT_SCHEDULE_STEPS", "7"))
BLOWUP_GUARD = float(os.getenv("PLAP_BLOWUP_GUARD", "1e8"))
CONTINUATION_SLOPE_TOL = float(os.getenv("PLAP_CONTINUATION_SLOPE_TOL", "0.05"))
EXTRAPOLATION_POINTS = int(os.getenv("PLAP_EXTRAPOLATION_POINTS", "4"))
CONSENSUS_FRACTION = float(os.getenv("PLAP_CONSENSUS_FRACTION", "0.9"))

# Limit certificate
CERT_TOL_PDE = float(os.getenv("PLAP_CERT_TOL_PDE", "1e-8"))
CERT_TOL_PAIRING = float(os.getenv("PLAP_CERT_TOL_PAIRING", "1e-8"))
CERT_TOL_BOUNDARY = float(os.getenv("PLAP_CERT_TOL_BOUNDARY", "1e-8"))
CERT_TOL_Z = float(os.getenv("PLAP_CERT_TOL_Z", "1e-8"))
PAIRING_BATTERY_SIZE = int(os.getenv("PLAP_PAIRING_BATTERY_SIZE", "24"))
PAIRING_LEVELS = (0.25, 0.5, 1.0, 2.0)  # multiples of ||u||_inf
BOUNDARY_ACTIVATION = float(os.getenv("PLAP_BOUNDARY_ACTIVATION", "1e-6"))  # relative to ||u||_inf
CERTIFICATE_MESH_SIZE = float(os.getenv("PLAP_CERTIFICATE_MESH_SIZE", "0.25"))  # closed-form certificate pairs

# Command line and artifacts
DEFAULT_SEED = int(os.getenv("PLAP_DEFAULT_SEED", "12345"))
OUTPUT_DIR = os.getenv("PLAP_OUTPUT_DIR", "runs")
LOG_FILE = os.getenv("PLAP_LOG_FILE", "logs/plap_lab.log")
INF_SENTINEL = "+inf"

# Run ledger
USE_RUN_LEDGER = os.getenv("PLAP_USE_RUN_LEDGER", "true").lower() == "true"
RUN_LEDGER_URL = os.getenv("PLAP_RUN_LEDGER_URL", "sqlite:///plap_runs.db")

# Analytic data tags
DATUM_TAGS = {
    "constant": {
        "description": "f = alpha on B_R",
        "parameters": ["alpha", "R"],
    },
    "inverse_radius": {
        "description": "f = alpha/|x| on B_R",
        "parameters": ["alpha", "R"],
    },
    "plateau_7_2": {
        "description": "f = alpha*beta/R for |x| <= R/beta, alpha/|x| for R/beta <= |x| <= R",
        "parameters": ["alpha", "R", "beta"],
    },
}

# Named problem presets. "critical_hardy" resolves lambda = -(N-2).
PRESETS = {
    "example-7-1": {
        "description": "Critical Hardy drift with f = 1/|x|: nontrivial limit",
        "N": 3,
        "lambda": "critical_hardy",
        "datum": "inverse_radius",
        "alpha": 1.0,
        "R": 1.0,
    },
    "example-7-2": {
        "description": "Plateau datum: Lorentz threshold critical, L^N threshold subcritical",
        "N": 4,
        "lambda": "critical_hardy",
        "datum": "plateau_7_2",
        "alpha": 1.0,
        "R": 1.0,
        "beta": 1.5,
    },
    "example-7-3": {
        "description": "f = alpha/|x| with critical Hardy drift: trichotomy in alpha",
        "N": 3,
        "lambda": "critical_hardy",
        "datum": "inverse_radius",
        "alpha": 1.0,
        "R": 1.0,
    },
    "torsion": {
        "description": "p-torsion problem on the unit disk",
        "N": 2,
        "lambda": 0.0,
        "datum": "constant",
        "alpha": 1.0,
        "R": 1.0,
    },
}

DEFAULT_ALPHAS = (0.5, 1.0, 1.5)
