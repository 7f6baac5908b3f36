"""
Artifact module for the lab.
Writes CSV and JSON outputs atomically, with 17 significant digits and explicit infinity markers.
"""
import csv
import io
import json
import logging
import math
import os
import tempfile
from typing import Any, Dict, Iterable, List, Optional, Sequence

import numpy as np

from config import INF_SENTINEL, LAB_NAME, LAB_VERSION, MODULE_VERSIONS
from utils.errors import ValidationError

logger = logging.getLogger(__name__)

PLOT_QUANTITIES = ("linf_norm", "l1_norm", "energy", "z_inf")


def format_number(value) -> str:
    """17 significant digits; +inf and -inf use the sentinel, NaN prints as nan."""
    if value is None:
        return ""
    if isinstance(value, (bool, np.bool_)):
        return "true" if value else "false"
    if isinstance(value, (int, np.integer)):
        return str(int(value))
    if isinstance(value, (float, np.floating)):
        value = float(value)
        if math.isinf(value):
            return INF_SENTINEL if value > 0 else "-" + INF_SENTINEL.lstrip("+")
        if math.isnan(value):
            return "nan"
        return f"{value:.17g}"
    return str(value)


def atomic_write_text(path: str, text: str):
    """Write text to a temporary file next to path and rename it into place."""
    directory = os.path.dirname(os.path.abspath(path))
    os.makedirs(directory, exist_ok=True)
    handle, temporary = tempfile.mkstemp(dir=directory, prefix=".tmp-", suffix=os.path.basename(path))
    try:
        with os.fdopen(handle, "w", encoding="utf-8", newline="\n") as stream:
            stream.write(text)
        os.replace(temporary, path)
    except OSError as e:
        if os.path.exists(temporary):
            os.remove(temporary)
        raise ValidationError("unwritable-output", f"Cannot write {path}: {e}")
    logger.info(f"Wrote {path}")


def provenance(config: Optional[Dict[str, Any]] = None, seed: Optional[int] = None) -> Dict[str, Any]:
    return {
        "lab": LAB_NAME,
        "lab_version": LAB_VERSION,
        "module_versions": dict(MODULE_VERSIONS),
        "seed": seed,
        "config": jsonable(config or {}),
    }


def write_csv(path: str, header: Sequence[str], rows: Iterable[Sequence[Any]],
              config: Optional[Dict[str, Any]] = None, seed: Optional[int] = None):
    """
    Write a CSV file whose leading '#' lines carry the provenance as compact JSON.

    Args:
        path: Output file
        header: Column names
        rows: Row values, formatted with format_number
        config: Resolved run configuration
        seed: Random seed of the run
    """
    buffer = io.StringIO()
    buffer.write(f"# {json.dumps(provenance(config, seed), sort_keys=True, separators=(',', ':'))}\n")
    writer = csv.writer(buffer, lineterminator="\n")
    writer.writerow(header)
    for row in rows:
        if len(row) != len(header):
            raise ValidationError("invalid-row", f"Row {row!r} does not match header {list(header)}")
        writer.writerow([format_number(value) for value in row])
    atomic_write_text(path, buffer.getvalue())


def jsonable(value: Any, name: Optional[str] = None, flags: Optional[Dict[str, bool]] = None) -> Any:
    if isinstance(value, dict):
        result = {}
        infinite = {}
        for key, item in value.items():
            result[str(key)] = jsonable(item, str(key), infinite)
        for key, flag in infinite.items():
            result[f"{key}_is_infinite"] = flag
        return result
    if isinstance(value, (list, tuple, np.ndarray)):
        return [jsonable(item) for item in value]
    if isinstance(value, (np.bool_, bool)):
        return bool(value)
    if isinstance(value, (np.integer,)):
        return int(value)
    if isinstance(value, (float, np.floating)):
        value = float(value)
        if math.isinf(value):
            if flags is not None and name is not None:
                flags[name] = True
            return None
        if math.isnan(value):
            return None
        return value
    return value


def write_json(path: str, payload: Dict[str, Any], config: Optional[Dict[str, Any]] = None,
               seed: Optional[int] = None):
    """Write payload with its provenance. Infinite entries become null plus a '<name>_is_infinite' flag."""
    document = jsonable(dict(payload))
    document["provenance"] = provenance(config, seed)
    atomic_write_text(path, json.dumps(document, indent=2, sort_keys=True) + "\n")


def write_field_csv(path: str, u, config: Optional[Dict[str, Any]] = None, seed: Optional[int] = None):
    """Dump a sampled field as coordinates, value and quadrature weight."""
    points = np.asarray(u.points, dtype=float)
    if points.ndim == 1:
        points = points[:, None]
    header = ["r"] if u.radial else [f"x{i + 1}" for i in range(points.shape[1])]
    rows = [(*coordinates, value, weight) for coordinates, value, weight in zip(points, u.values, u.weights)]
    write_csv(path, header + ["value", "weight"], rows, config, seed)


def read_csv_rows(path: str) -> List[Dict[str, str]]:
    """Read a CSV written by write_csv, skipping provenance lines."""
    try:
        with open(path, "r", encoding="utf-8", newline="") as stream:
            lines = [line for line in stream if not line.startswith("#")]
    except OSError as e:
        raise ValidationError("missing-file", f"Cannot read {path}: {e}")
    return [dict(row) for row in csv.DictReader(lines)]


def parse_number(text: str) -> float:
    if text == INF_SENTINEL:
        return math.inf
    if text == "-" + INF_SENTINEL.lstrip("+"):
        return -math.inf
    return float(text)


def emit_plot_data(reports, outdir: str, config: Optional[Dict[str, Any]] = None,
                   seed: Optional[int] = None, name: str = "plot_data.csv") -> str:
    """
    Write tidy plot data: one row per (p, quantity) in schedule order.

    Columns are p, quantity and value, with quantities linf_norm, l1_norm,
    energy and z_inf. Reports flagged as blow-up write every value as +inf.

    Returns:
        str: Path of the CSV file
    """
    reports = list(reports)
    if not reports:
        raise ValidationError("empty-reports", "No reports to emit")
    rows = []
    for report in reports:
        blown_up = report.status == "blow-up"
        summary = report.summary()
        for quantity in PLOT_QUANTITIES:
            value = math.inf if blown_up else summary.get(quantity)
            rows.append((report.p, quantity, value))
    path = os.path.join(outdir, name)
    write_csv(path, ("p", "quantity", "value"), rows, config, seed)
    return path
