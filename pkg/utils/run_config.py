"""
Run configuration module for the lab.
Resolves defaults, presets, KEY=value configuration files and command-line flags into one RunConfig.
"""
import logging
import os
from dataclasses import asdict, dataclass, field, fields
from typing import Any, Dict, Mapping, Optional, Tuple

from dotenv import dotenv_values

from config import (
    DEFAULT_ALPHAS,
    DEFAULT_MESH_SIZE,
    DEFAULT_P0,
    DEFAULT_SCHEDULE_STEPS,
    DEFAULT_SEED,
    OUTPUT_DIR,
    PRESETS,
)
from utils.errors import ValidationError
from utils.fields import AnalyticDatum, ProblemSpec, UniformDrift, build_problem

logger = logging.getLogger(__name__)

COMMANDS = ("threshold", "oracle", "solve", "continuation", "verify", "reproduce-section-7")


def _flag(text: str) -> bool:
    lowered = str(text).strip().lower()
    if lowered in ("1", "true", "yes", "on"):
        return True
    if lowered in ("0", "false", "no", "off"):
        return False
    raise ValueError(f"not a boolean: {text!r}")


def _alphas(text) -> Tuple[float, ...]:
    if isinstance(text, (tuple, list)):
        return tuple(float(a) for a in text)
    return tuple(float(a) for a in str(text).split(",") if a.strip())


def _lam(text):
    if isinstance(text, str) and text.strip() == "critical_hardy":
        return "critical_hardy"
    return float(text)


def _optional_float(text):
    if text is None or str(text).strip().lower() in ("", "none", "default"):
        return None
    return float(text)


# Configuration key -> (RunConfig field, parser)
CONFIG_KEYS = {
    "command": ("command", str),
    "preset": ("preset", str),
    "N": ("dimension", int),
    "lambda": ("lam", _lam),
    "datum": ("datum", str),
    "alpha": ("alpha", float),
    "alphas": ("alphas", _alphas),
    "R": ("radius", float),
    "beta": ("beta", float),
    "domain": ("domain", str),
    "drift": ("drift", str),
    "drift_strength": ("drift_strength", float),
    "p": ("p", float),
    "p0": ("p0", float),
    "steps": ("steps", int),
    "backend": ("backend", str),
    "h": ("h", float),
    "graded": ("graded", _flag),
    "epsilon": ("epsilon", _optional_float),
    "mesh": ("mesh_file", str),
    "outdir": ("outdir", str),
    "seed": ("seed", int),
    "warm_start": ("warm_start", _flag),
}

# Preset keys use the configuration spelling, minus the free-text description
_PRESET_SKIP = {"description"}


@dataclass
class RunConfig:
    """Fully resolved configuration of one command invocation."""
    command: str = "threshold"
    preset: Optional[str] = None
    dimension: int = 3
    lam: Any = 0.0
    datum: str = "inverse_radius"
    alpha: float = 1.0
    alphas: Tuple[float, ...] = DEFAULT_ALPHAS
    radius: float = 1.0
    beta: float = 1.0
    domain: str = "ball"
    drift: str = "hardy"
    drift_strength: float = 0.0
    p: Optional[float] = None
    p0: float = DEFAULT_P0
    steps: int = DEFAULT_SCHEDULE_STEPS
    backend: str = "radial"
    h: float = DEFAULT_MESH_SIZE
    graded: bool = True
    epsilon: Optional[float] = None
    mesh_file: Optional[str] = None
    outdir: str = OUTPUT_DIR
    seed: int = DEFAULT_SEED
    warm_start: bool = True
    sources: Dict[str, str] = field(default_factory=dict)

    def as_dict(self) -> Dict[str, Any]:
        resolved = asdict(self)
        resolved["alphas"] = list(self.alphas)
        return resolved


def _apply(values: Dict[str, Any], entries: Mapping[str, Any], source: str, sources: Dict[str, str]):
    unknown = sorted(key for key in entries if key not in CONFIG_KEYS)
    if unknown:
        raise ValidationError("unknown-keys", f"Unknown configuration keys in {source}: {', '.join(unknown)}")
    for key, raw in entries.items():
        if raw is None:
            continue
        name, parser = CONFIG_KEYS[key]
        try:
            values[name] = parser(raw)
        except (TypeError, ValueError) as e:
            raise ValidationError("invalid-value", f"Invalid value for '{key}' in {source}: {e}")
        sources[name] = source


def _preset_entries(name: str) -> Dict[str, Any]:
    if name not in PRESETS:
        raise ValidationError("unknown-preset", f"Unknown preset '{name}'. Available: {', '.join(sorted(PRESETS))}")
    return {key: value for key, value in PRESETS[name].items() if key not in _PRESET_SKIP}


def read_config_file(path: str) -> Dict[str, Optional[str]]:
    """Read a KEY=value configuration file."""
    if not os.path.isfile(path):
        raise ValidationError("missing-file", f"Configuration file not found: {path}")
    return dict(dotenv_values(path))


def parse_config(path: Optional[str] = None, overrides: Optional[Mapping[str, Any]] = None) -> RunConfig:
    """
    Resolve a RunConfig. Precedence: defaults < preset < file < flags.

    Args:
        path: Optional KEY=value configuration file
        overrides: Flag values keyed by configuration key; None entries are ignored

    Returns:
        RunConfig: Validated configuration with every default materialized

    Raises:
        ValidationError: missing-file, unknown-keys, unknown-preset, out-of-range-lambda
    """
    overrides = {key: value for key, value in (overrides or {}).items() if value is not None}
    file_entries = read_config_file(path) if path else {}

    preset = overrides.get("preset") or file_entries.get("preset")
    values: Dict[str, Any] = {}
    sources: Dict[str, str] = {}
    if preset:
        _apply(values, _preset_entries(preset), f"preset {preset}", sources)
    if file_entries:
        _apply(values, file_entries, path, sources)
    _apply(values, overrides, "flags", sources)

    # an explicit alpha narrows a reproduction run to that single value
    explicit = {"flags"} | ({path} if path else set())
    if sources.get("alpha") in explicit and sources.get("alphas") not in explicit:
        values["alphas"] = (values["alpha"],)

    config = RunConfig(**values)
    config.sources = {f.name: sources.get(f.name, "default") for f in fields(config) if f.name != "sources"}
    _validate(config)
    logger.info(f"Resolved configuration: {config.as_dict()}")
    return config


def _validate(config: RunConfig):
    if config.command not in COMMANDS:
        raise ValidationError("unknown-command", f"Unknown command '{config.command}'")
    if config.dimension < 2:
        raise ValidationError("invalid-dimension", f"Dimension must be >= 2, got {config.dimension}")
    if config.lam == "critical_hardy":
        config.lam = -(config.dimension - 2.0)
    if abs(config.lam) >= config.dimension - 1:
        raise ValidationError(
            "out-of-range-lambda",
            f"|lambda| = {abs(config.lam)} must be < N - 1 = {config.dimension - 1}",
        )
    if config.backend not in ("radial", "mesh"):
        raise ValidationError("unknown-backend", f"Unknown backend '{config.backend}'")
    if config.drift not in ("hardy", "uniform"):
        raise ValidationError("unknown-drift", f"Unknown drift '{config.drift}'")
    if config.steps < 1:
        raise ValidationError("invalid-schedule", f"steps must be >= 1, got {config.steps}")
    if not config.alphas:
        raise ValidationError("invalid-value", "alphas must list at least one amplitude")
    try:
        os.makedirs(config.outdir, exist_ok=True)
    except OSError as e:
        raise ValidationError("unwritable-output", f"Cannot create output directory {config.outdir}: {e}")
    if not os.access(config.outdir, os.W_OK):
        raise ValidationError("unwritable-output", f"Output directory {config.outdir} is not writable")


def build_datum(config: RunConfig, alpha: Optional[float] = None) -> AnalyticDatum:
    return AnalyticDatum(config.datum, config.alpha if alpha is None else alpha, config.radius, config.beta)


def build_problem_from_config(config: RunConfig, alpha: Optional[float] = None) -> ProblemSpec:
    """ProblemSpec for the configured drift, datum, domain and optional p."""
    drift = None
    if config.drift == "uniform":
        drift = UniformDrift((config.drift_strength,) + (0.0,) * (config.dimension - 1))
    return build_problem(
        config.dimension,
        float(config.lam),
        build_datum(config, alpha),
        radius=config.radius,
        domain=config.domain,
        p=config.p,
        drift=drift,
    )
