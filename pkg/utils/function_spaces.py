"""
Function space module for the lab.
Computes sharp constants, distribution functions, decreasing rearrangements,
Lebesgue and Lorentz norms, and the critical-threshold classification.

Every routine accepts either a sampled ScalarField (norms from its quadrature
weights) or an AnalyticDatum (closed forms on B_R, which needs the dimension).
"""
import logging
from dataclasses import dataclass, field
from functools import lru_cache
from typing import Dict, Optional, Tuple, Union

import numpy as np
from scipy.integrate import quad
from scipy.special import gamma as gamma_function

from config import SAMPLED_TOL_FACTOR, THRESHOLD_TOL
from utils.errors import ValidationError
from utils.fields import AnalyticDatum, Drift, HardyDrift, ScalarField, UniformDrift, VectorField

logger = logging.getLogger(__name__)

FieldLike = Union[ScalarField, AnalyticDatum]

SUBCRITICAL = "Subcritical"
CRITICAL = "Critical"
SUPERCRITICAL = "Supercritical"


def ball_volume(dimension: int) -> float:
    """
    Volume C_N of the unit ball in R^N.

    Args:
        dimension: Space dimension N >= 1

    Returns:
        float: pi^(N/2) / Gamma(N/2 + 1)
    """
    if dimension <= 0:
        raise ValidationError("invalid-dimension", f"Dimension must be positive, got {dimension}")
    return float(np.pi ** (dimension / 2) / gamma_function(dimension / 2 + 1))


@dataclass(frozen=True)
class Constants:
    """Sharp constants attached to a dimension N."""
    dimension: int
    ball_volume: float
    sobolev: float
    gamma_1: float

    def gamma_p(self, p: float) -> float:
        """Sharp Lorentz-Sobolev constant p / ((N - p) C_N^(1/N)) for 1 <= p < N."""
        if not (1 <= p < self.dimension):
            raise ValidationError("p-out-of-range", f"gamma_p needs 1 <= p < N, got p = {p}")
        return p / ((self.dimension - p) * self.ball_volume ** (1 / self.dimension))

    def hardy(self, p: float) -> float:
        """Optimal Hardy constant (N - p) / p."""
        if not (1 <= p < self.dimension):
            raise ValidationError("p-out-of-range", f"Hardy constant needs 1 <= p < N, got p = {p}")
        return (self.dimension - p) / p

    def as_dict(self) -> Dict[str, float]:
        return {"N": self.dimension, "C_N": self.ball_volume, "S_N": self.sobolev, "gamma_1": self.gamma_1}


@lru_cache(maxsize=None)
def sharp_constants(dimension: int) -> Constants:
    """Return the sharp constants for dimension N >= 2."""
    if dimension < 2:
        raise ValidationError("invalid-dimension", f"Sharp constants need N >= 2, got {dimension}")
    c_n = ball_volume(dimension)
    root = c_n ** (1 / dimension)
    return Constants(
        dimension=dimension,
        ball_volume=c_n,
        sobolev=1 / (dimension * root),
        gamma_1=1 / ((dimension - 1) * root),
    )


def admissible_p_max(drift_norm: float, dimension: int) -> float:
    """
    Supremum of the exponents p with gamma_p * drift_norm < 1.

    For a Hardy drift the norm is |lam| C_N^(1/N) and this reduces to N / (1 + |lam|).
    """
    root = ball_volume(dimension) ** (1 / dimension)
    return dimension * root / (drift_norm + root)


def energy_bound_limit(drift_norm: float, dimension: int) -> float:
    """
    Limit as p -> 1+ of ((1 - gamma_1 m) / (1 - gamma_p m))^(p/(p-1)) for drift norm m.

    Returns +inf when gamma_1 m >= 1.
    """
    constants = sharp_constants(dimension)
    g = constants.gamma_1 * drift_norm
    if g >= 1:
        return float("inf")
    return float(np.exp(dimension * g / ((dimension - 1) * (1 - g))))


# ---------------------------------------------------------------------------
# Rearrangements
# ---------------------------------------------------------------------------

@dataclass
class Rearrangement:
    """
    Step decreasing rearrangement of a sampled field.

    values[k] occupies the interval [cumulative[k-1], cumulative[k]) of (0, |Omega|).
    """
    values: np.ndarray
    cumulative: np.ndarray
    grid: Optional[np.ndarray] = None
    samples: Optional[np.ndarray] = None

    @property
    def measure(self) -> float:
        return float(self.cumulative[-1]) if len(self.cumulative) else 0.0

    @property
    def widths(self) -> np.ndarray:
        return np.diff(self.cumulative, prepend=0.0)

    @property
    def midpoints(self) -> np.ndarray:
        """Measure midpoints of the steps."""
        return self.cumulative - 0.5 * self.widths

    def __call__(self, t) -> np.ndarray:
        t = np.asarray(t, dtype=float)
        index = np.searchsorted(self.cumulative, t, side="right")
        padded = np.append(self.values, 0.0)
        return padded[np.minimum(index, len(self.values))]

    def distribution(self, s) -> np.ndarray:
        """alpha_{f*}(s): total length of steps with value > s."""
        s = np.asarray(s, dtype=float)
        ascending = self.values[::-1]
        count = len(self.values) - np.searchsorted(ascending, s, side="right")
        padded = np.concatenate(([0.0], self.cumulative))
        return padded[count]


def rearrange(f: ScalarField) -> Rearrangement:
    """Sort |f| descending with stable tie-breaking by sample index."""
    magnitudes = np.abs(f.values)
    order = np.argsort(-magnitudes, kind="stable")
    return Rearrangement(values=magnitudes[order], cumulative=np.cumsum(f.weights[order]))


def _require_dimension(dimension: Optional[int]) -> int:
    if dimension is None:
        raise ValidationError("missing-dimension", "Analytic data need the dimension N")
    return dimension


def _analytic_measure(datum: AnalyticDatum, dimension: int) -> float:
    return ball_volume(dimension) * datum.radius ** dimension


def _analytic_distribution(datum: AnalyticDatum, dimension: int, s: np.ndarray) -> np.ndarray:
    c_n = ball_volume(dimension)
    a = abs(datum.alpha)
    full = _analytic_measure(datum, dimension)
    if a == 0:
        return np.zeros_like(s)
    if datum.kind == "constant":
        return np.where(s < a, full, 0.0)
    with np.errstate(divide="ignore"):
        level_radius = np.minimum(datum.radius, a / s)
    measure = c_n * level_radius ** dimension
    if datum.kind == "plateau_7_2":
        measure = np.where(s >= a * datum.beta / datum.radius, 0.0, measure)
    return measure


def _analytic_rearrangement(datum: AnalyticDatum, dimension: int, t: np.ndarray) -> np.ndarray:
    c_n = ball_volume(dimension)
    a = abs(datum.alpha)
    full = _analytic_measure(datum, dimension)
    if datum.kind == "constant":
        return np.where(t < full, a, 0.0)
    with np.errstate(divide="ignore"):
        profile = a * (c_n / t) ** (1 / dimension)
    if datum.kind == "plateau_7_2":
        profile = np.minimum(profile, a * datum.beta / datum.radius)
    return np.where(t < full, profile, 0.0)


def distribution_function(f: FieldLike, s: float, dimension: Optional[int] = None) -> float:
    """
    Distribution function alpha_f(s) = |{|f| > s}|.

    Args:
        f: Sampled field or analytic datum
        s: Level, must be nonnegative
        dimension: Required for analytic data

    Returns:
        float: Measure of the superlevel set
    """
    if s < 0:
        raise ValidationError("invalid-level", f"Level must be nonnegative, got {s}")
    if isinstance(f, AnalyticDatum):
        return float(_analytic_distribution(f, _require_dimension(dimension), np.asarray(float(s))))
    return float(f.weights[np.abs(f.values) > s].sum())


def decreasing_rearrangement(f: FieldLike, grid, dimension: Optional[int] = None) -> Rearrangement:
    """
    Decreasing rearrangement f* evaluated on an increasing grid of (0, |Omega|).

    Args:
        f: Sampled field or analytic datum
        grid: Increasing t-samples
        dimension: Required for analytic data

    Returns:
        Rearrangement: Step data (sampled fields) plus f*(grid) in `samples`
    """
    grid = np.asarray(grid, dtype=float)
    if grid.size == 0:
        raise ValidationError("empty-grid", "Rearrangement grid is empty")
    if np.any(np.diff(grid) < 0):
        raise ValidationError("invalid-grid", "Rearrangement grid must be increasing")
    if isinstance(f, AnalyticDatum):
        n = _require_dimension(dimension)
        samples = _analytic_rearrangement(f, n, grid)
        # each sample holds until the next grid point
        ends = np.append(grid[1:], max(grid[-1], _analytic_measure(f, n)))
        return Rearrangement(values=samples, cumulative=ends, grid=grid, samples=samples)
    rearrangement = rearrange(f)
    rearrangement.grid = grid
    rearrangement.samples = rearrangement(grid)
    return rearrangement


# ---------------------------------------------------------------------------
# Norms
# ---------------------------------------------------------------------------

def _analytic_lq_norm(datum: AnalyticDatum, q: float, dimension: int) -> float:
    a = abs(datum.alpha)
    if a == 0:
        return 0.0
    c_n = ball_volume(dimension)
    big_r = datum.radius
    n = dimension
    if np.isinf(q):
        if datum.kind == "constant":
            return a
        if datum.kind == "inverse_radius":
            return float("inf")
        return a * datum.beta / big_r
    if datum.kind == "constant":
        return a * (c_n * big_r ** n) ** (1 / q)
    if datum.kind == "inverse_radius":
        if q >= n:
            return float("inf")
        return a * (n * c_n * big_r ** (n - q) / (n - q)) ** (1 / q)
    rho = datum.plateau_radius
    if q == n:
        return a * (c_n * (1 + n * np.log(datum.beta))) ** (1 / n)
    integral = c_n * rho ** (n - q) + n * c_n * (big_r ** (n - q) - rho ** (n - q)) / (n - q)
    return a * integral ** (1 / q)


def lq_norm(f: FieldLike, q: float, dimension: Optional[int] = None) -> float:
    """
    Lebesgue norm (sum w_i |f_i|^q)^(1/q); q = inf gives the maximum.

    Args:
        f: Sampled field or analytic datum
        q: Exponent >= 1 or inf
        dimension: Required for analytic data

    Returns:
        float: The norm, +inf for non-integrable analytic data
    """
    if q < 1:
        raise ValidationError("invalid-exponent", f"Exponent must be >= 1, got {q}")
    if isinstance(f, AnalyticDatum):
        return float(_analytic_lq_norm(f, q, _require_dimension(dimension)))
    magnitudes = np.abs(f.values)
    if magnitudes.size == 0:
        return 0.0
    if np.isinf(q):
        return float(magnitudes.max())
    return float(np.sum(f.weights * magnitudes ** q) ** (1 / q))


def lorentz_weak_norm(f: FieldLike, dimension: int, convention: str = "midpoint") -> float:
    """
    Weak Lorentz norm sup_t t^(1/N) f*(t).

    The "midpoint" convention evaluates each rearrangement step at its measure
    midpoint, which is exact for 1/|x| sampled at shell measure-midpoints. The
    "step" convention takes the exact supremum of the step function.
    """
    if isinstance(f, AnalyticDatum):
        a = abs(f.alpha)
        if f.kind == "constant":
            return a * _analytic_measure(f, dimension) ** (1 / dimension)
        return a * ball_volume(dimension) ** (1 / dimension)
    rearrangement = rearrange(f)
    if rearrangement.values.size == 0:
        return 0.0
    if convention == "midpoint":
        t = rearrangement.midpoints
    elif convention == "step":
        t = rearrangement.cumulative
    else:
        raise ValidationError("invalid-convention", f"Unknown convention '{convention}'")
    return float(np.max(t ** (1 / dimension) * rearrangement.values))


def lorentz_one_norm(f: FieldLike, dimension: int) -> float:
    """Lorentz norm of L^(N',1): integral of t^(1/N' - 1) f*(t) over (0, |Omega|)."""
    conjugate = dimension / (dimension - 1)
    power = 1 / conjugate
    if isinstance(f, AnalyticDatum):
        full = _analytic_measure(f, dimension)
        breaks = [ball_volume(dimension) * f.plateau_radius ** dimension] if f.kind == "plateau_7_2" else None
        value, _ = quad(
            lambda t: t ** (power - 1) * float(_analytic_rearrangement(f, dimension, np.asarray(t))),
            0.0, full, points=breaks, limit=200,
        )
        return float(value)
    rearrangement = rearrange(f)
    edges = np.concatenate(([0.0], rearrangement.cumulative))
    return float(np.sum(rearrangement.values * conjugate * np.diff(edges ** power)))


def _field_measure(f: FieldLike, dimension: int) -> float:
    if isinstance(f, AnalyticDatum):
        return _analytic_measure(f, dimension)
    return f.measure


def energy_bound(f: FieldLike, p: float, dimension: int, drift_norm: float, measure: float) -> float:
    """
    A-priori bound on the p-energy of the solution.

    Returns:
        float: (min(S_N ||f||_N, gamma_1 ||f||_{N,inf}) / (1 - gamma_p m))^(p/(p-1)) |Omega|
    """
    constants = sharp_constants(dimension)
    denominator = 1 - constants.gamma_p(p) * drift_norm
    if denominator <= 0:
        raise ValidationError(
            "bound-not-applicable",
            f"1 - gamma_p ||F|| = {denominator} is not positive at p = {p}",
        )
    numerator = min(
        constants.sobolev * lq_norm(f, dimension, dimension),
        constants.gamma_1 * lorentz_weak_norm(f, dimension),
    )
    with np.errstate(over="ignore"):
        return float(np.power(numerator / denominator, p / (p - 1)) * measure)


def drift_weak_norm(drift: Union[Drift, VectorField], dimension: int, measure: float) -> float:
    """Weak Lorentz norm of |F| over a domain of the given measure."""
    if isinstance(drift, HardyDrift):
        return abs(drift.lam) * ball_volume(dimension) ** (1 / dimension)
    if isinstance(drift, UniformDrift):
        return drift.strength * measure ** (1 / dimension)
    return lorentz_weak_norm(drift.magnitude(), dimension)


# ---------------------------------------------------------------------------
# Threshold classification
# ---------------------------------------------------------------------------

@dataclass
class ThresholdReport:
    """Critical-threshold quantities and their regimes."""
    dimension: int
    lam: float
    theta_ln: float
    theta_lorentz: float
    theta_drift: float
    tol: float
    generic_drift: bool = False
    regimes: Dict[str, str] = field(default_factory=dict)
    norms: Dict[str, float] = field(default_factory=dict)

    @property
    def thetas(self) -> Dict[str, float]:
        return {"theta_LN": self.theta_ln, "theta_Lorentz": self.theta_lorentz, "theta_drift": self.theta_drift}

    @property
    def governing(self) -> str:
        """Regime of the smallest applicable threshold; a generic drift is governed by theta_drift."""
        if self.generic_drift:
            return classify_regime(self.theta_drift, self.tol)
        return classify_regime(min(self.thetas.values()), self.tol)

    def as_dict(self) -> dict:
        return {
            "N": self.dimension,
            "lambda": self.lam,
            **self.thetas,
            "regimes": dict(self.regimes),
            "governing_regime": self.governing,
            "tol": self.tol,
            "norms": dict(self.norms),
        }


def classify_regime(theta: float, tol: float) -> str:
    """Subcritical below 1 - tol, Critical within tol of 1, Supercritical otherwise."""
    if abs(theta - 1) <= tol:
        return CRITICAL
    if theta < 1 - tol:
        return SUBCRITICAL
    return SUPERCRITICAL


def _coarsened(f: ScalarField) -> ScalarField:
    """Merge neighbouring rearrangement steps pairwise (measure preserving)."""
    magnitudes = np.abs(f.values)
    order = np.argsort(-magnitudes, kind="stable")
    values, weights = magnitudes[order], f.weights[order]
    if values.size % 2:
        values, weights = np.append(values, 0.0), np.append(weights, 0.0)
    pair_weights = weights[0::2] + weights[1::2]
    safe = np.where(pair_weights > 0, pair_weights, 1.0)
    pair_values = (values[0::2] * weights[0::2] + values[1::2] * weights[1::2]) / safe
    return ScalarField(np.arange(pair_values.size), pair_values, pair_weights, f.dimension)


def _thresholds(lam: float, f: FieldLike, drift, dimension: int) -> Tuple[float, float, float, Dict[str, float]]:
    constants = sharp_constants(dimension)
    hardy_part = abs(lam) / (dimension - 1)
    f_ln = lq_norm(f, dimension, dimension)
    f_weak = lorentz_weak_norm(f, dimension)
    drift_norm = drift_weak_norm(drift if drift is not None else HardyDrift(lam), dimension, _field_measure(f, dimension))
    theta_ln = constants.sobolev * f_ln + hardy_part
    theta_lorentz = constants.gamma_1 * f_weak + hardy_part
    theta_drift = constants.gamma_1 * drift_norm + constants.sobolev * f_ln
    norms = {"f_LN": f_ln, "f_LN_weak": f_weak, "F_LN_weak": drift_norm}
    return theta_ln, theta_lorentz, theta_drift, norms


def threshold_classify(lam: float, f: FieldLike, dimension: int,
                       drift: Optional[Union[Drift, VectorField]] = None,
                       tol: Optional[float] = None) -> ThresholdReport:
    """
    Compute the three critical thresholds and classify each.

    Args:
        lam: Hardy drift strength
        f: Datum, sampled or analytic
        dimension: Space dimension N
        drift: Optional drift field; defaults to the Hardy drift lam x/|x|^2
        tol: Regime tolerance; defaults to THRESHOLD_TOL for analytic data and
            SAMPLED_TOL_FACTOR times a quadrature error estimate for sampled data

    Returns:
        ThresholdReport: All thresholds with their regimes
    """
    if (drift is None or isinstance(drift, HardyDrift)) and abs(lam) >= dimension - 1:
        raise ValidationError("out-of-range-lambda", f"|lambda| = {abs(lam)} must be < N - 1 = {dimension - 1}")

    theta_ln, theta_lorentz, theta_drift, norms = _thresholds(lam, f, drift, dimension)

    if tol is None:
        if isinstance(f, AnalyticDatum):
            tol = THRESHOLD_TOL
        else:
            coarse = _thresholds(lam, _coarsened(f), drift, dimension)
            errors = [abs(a - b) / 3 for a, b in zip((theta_ln, theta_lorentz, theta_drift), coarse[:3])
                      if np.isfinite(a) and np.isfinite(b)]
            tol = max(THRESHOLD_TOL, SAMPLED_TOL_FACTOR * max(errors, default=0.0))

    report = ThresholdReport(
        dimension=dimension,
        lam=lam,
        theta_ln=theta_ln,
        theta_lorentz=theta_lorentz,
        theta_drift=theta_drift,
        tol=tol,
        generic_drift=drift is not None and not isinstance(drift, HardyDrift),
        norms=norms,
    )
    report.regimes = {name: classify_regime(value, tol) for name, value in report.thetas.items()}
    logger.info(f"Thresholds N={dimension} lambda={lam}: {report.thetas} -> {report.regimes}")
    return report


# ---------------------------------------------------------------------------
# Functional inequalities as diagnostics
# ---------------------------------------------------------------------------

def _gradient_magnitudes(u: ScalarField) -> Tuple[np.ndarray, np.ndarray, np.ndarray, np.ndarray]:
    """Return (|u|, |grad u|, |x|, weights) at matching quadrature samples."""
    mesh = u.support
    if mesh is not None and hasattr(mesh, "quadrature_values"):
        values = mesh.quadrature_values(u.values)
        gradients = np.linalg.norm(mesh.gradients(u.values), axis=-1)[:, None] * np.ones_like(values)
        radii = np.linalg.norm(mesh.quad_points, axis=-1)
        return np.abs(values).ravel(), gradients.ravel(), radii.ravel(), mesh.quad_weights.ravel()
    if u.gradient is None:
        raise ValidationError("missing-gradient", "Field carries no gradient")
    gradient = np.asarray(u.gradient, dtype=float)
    magnitude = np.abs(gradient) if gradient.ndim == 1 else np.linalg.norm(gradient, axis=-1)
    radii = np.abs(u.points) if u.radial else np.linalg.norm(u.points, axis=-1)
    return np.abs(u.values), magnitude, radii, u.weights


def hardy_check(u: ScalarField, p: float) -> Tuple[float, float]:
    """
    Both sides of the Hardy inequality.

    Returns:
        Tuple[float, float]: (integral |u|^p / |x|^p, ((p/(N-p))^p) integral |grad u|^p)
    """
    dimension = u.dimension
    if not (1 < p < dimension):
        raise ValidationError("p-out-of-range", f"Hardy check needs 1 < p < N, got p = {p}")
    values, gradients, radii, weights = _gradient_magnitudes(u)
    with np.errstate(divide="ignore", invalid="ignore"):
        ratio = np.where(values > 0, values ** p / radii ** p, 0.0)
    lhs = float(np.sum(weights * ratio))
    rhs = float((p / (dimension - p)) ** p * np.sum(weights * gradients ** p))
    return lhs, rhs


def sobolev_check(u: ScalarField) -> Tuple[float, float]:
    """Both sides of ||u||_{1*} <= S_N integral |grad u|."""
    dimension = u.dimension
    values, gradients, _, weights = _gradient_magnitudes(u)
    star = dimension / (dimension - 1)
    lhs = float(np.sum(weights * values ** star) ** (1 / star))
    rhs = float(sharp_constants(dimension).sobolev * np.sum(weights * gradients))
    return lhs, rhs


def _check_pair(f: ScalarField, g: ScalarField):
    if f.values.shape != g.values.shape or not np.array_equal(f.weights, g.weights):
        raise ValidationError("mismatched-fields", "Fields must share sample points and weights")


def _step_product_integral(a: Rearrangement, b: Rearrangement) -> float:
    edges = np.union1d(a.cumulative, b.cumulative)
    edges = edges[edges > 0]
    lows = np.concatenate(([0.0], edges[:-1]))
    middles = 0.5 * (lows + edges)
    return float(np.sum((edges - lows) * a(middles) * b(middles)))


def hardy_littlewood_check(f: ScalarField, g: ScalarField) -> Tuple[float, float]:
    """Both sides of integral f g <= integral f* g* for nonnegative sampled pairs."""
    _check_pair(f, g)
    lhs = float(np.sum(f.weights * f.values * g.values))
    return lhs, _step_product_integral(rearrange(f), rearrange(g))


def lorentz_holder_check(f: ScalarField, g: ScalarField) -> Tuple[float, float]:
    """Both sides of |integral f g| <= ||f||_{N,inf} ||g||_{N',1}."""
    _check_pair(f, g)
    dimension = f.dimension
    lhs = float(abs(np.sum(f.weights * f.values * g.values)))
    rhs = lorentz_weak_norm(f, dimension, convention="step") * lorentz_one_norm(g, dimension)
    return lhs, rhs
