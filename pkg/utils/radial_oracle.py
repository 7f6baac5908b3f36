"""
Radial oracle module for the lab.
Solves radially symmetric instances on B_R(0) semi-analytically and drives them to p -> 1+.

With w = |u'|^(p-2) u' and v = r^(N-1) w the equation reduces to
(r^lam v)' = -r^(lam+N-1) f. The finite-energy branch has v(0) = 0, so
v(r) = -r^(-lam) * integral_0^r s^(lam+N-1) f(s) ds and u(r) = integral_r^R |w|^(1/(p-1)).
"""
import logging
from dataclasses import dataclass, field, replace
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np

from config import (
    BLOWUP_REPORT_VALUE,
    EXTRAPOLATION_POINTS,
    RADIAL_GAUSS_POINTS,
    RADIAL_GRID_RATIO,
    RADIAL_INNER_RADIUS,
    RADIAL_SLOPE_TOL,
)
from utils.errors import NumericalFailure, ValidationError
from utils.fields import AnalyticDatum, Datum, HardyDrift, ProblemSpec, ScalarField
from utils.function_spaces import ball_volume

logger = logging.getLogger(__name__)

TO_ZERO = "->0"
TO_FINITE = "->finite"
TO_INFINITY = "->inf"
INCONCLUSIVE = "inconclusive"


@dataclass(frozen=True)
class RadialProblem:
    """Radial instance: dimension, ball radius, Hardy strength, nonnegative datum, optional p."""
    dimension: int
    radius: float
    lam: float
    datum: Datum
    p: Optional[float] = None

    def __post_init__(self):
        if self.dimension < 2:
            raise ValidationError("invalid-dimension", f"Dimension must be >= 2, got {self.dimension}")
        if self.radius <= 0:
            raise ValidationError("invalid-radius", f"Radius must be positive, got {self.radius}")
        if abs(self.lam) >= self.dimension - 1:
            raise ValidationError(
                "out-of-range-lambda",
                f"|lambda| = {abs(self.lam)} must be < N - 1 = {self.dimension - 1}",
            )
        if self.datum.radius < self.radius * (1 - 1e-12):
            raise ValidationError("datum-too-short", "Datum must be defined on the whole ball")
        if self.p is not None:
            self.check_exponent(self.p)

    @classmethod
    def from_spec(cls, spec: ProblemSpec) -> "RadialProblem":
        if spec.domain.kind != "ball" or not isinstance(spec.drift, HardyDrift):
            raise ValidationError("unsupported-domain", "The radial oracle needs a ball and a Hardy drift")
        return cls(spec.dimension, spec.radius, spec.drift.lam, spec.datum, spec.p)

    @property
    def exponent(self) -> float:
        """lam + N - 1, positive for admissible lam."""
        return self.lam + self.dimension - 1

    @property
    def p_max(self) -> float:
        """Supremum of admissible p: |lam| < (N - p)/p."""
        return self.dimension / (1 + abs(self.lam))

    @property
    def measure(self) -> float:
        return ball_volume(self.dimension) * self.radius ** self.dimension

    def check_exponent(self, p: float):
        if p <= 1:
            raise ValidationError("p-out-of-range", f"p must exceed 1, got {p}")
        if p >= self.p_max:
            raise ValidationError(
                "p-out-of-range",
                f"p = {p} violates |lambda| < (N - p)/p (needs p < {self.p_max})",
            )

    def with_p(self, p: float) -> "RadialProblem":
        return replace(self, p=p)

    def scaled(self, c: float) -> "RadialProblem":
        return replace(self, datum=self.datum.scaled(c))


@dataclass
class RadialGrid:
    """Node radii 0 = r_0 < ... < r_M = R with shell samples at measure midpoints."""
    nodes: np.ndarray
    dimension: int

    @property
    def radius(self) -> float:
        return float(self.nodes[-1])

    @property
    def samples(self) -> np.ndarray:
        n = self.dimension
        inner, outer = self.nodes[:-1], self.nodes[1:]
        return ((inner ** n + outer ** n) / 2) ** (1 / n)

    @property
    def weights(self) -> np.ndarray:
        n = self.dimension
        return ball_volume(n) * np.diff(self.nodes ** n)

    @property
    def interior(self) -> np.ndarray:
        return self.nodes[1:-1]

    def refined(self) -> "RadialGrid":
        """Insert the geometric mean of every positive cell."""
        inner, outer = self.nodes[1:-1], self.nodes[2:]
        middles = np.sqrt(inner * outer)
        first = 0.5 * self.nodes[1]
        return RadialGrid(np.sort(np.concatenate((self.nodes, middles, [first]))), self.dimension)


def radial_grid(radius: float, dimension: int, ratio: float = RADIAL_GRID_RATIO,
                inner: float = RADIAL_INNER_RADIUS) -> RadialGrid:
    """
    Geometric grid clustered toward r = 0 plus the origin.

    Args:
        radius: Ball radius R
        dimension: Space dimension N
        ratio: Ratio of consecutive node radii
        inner: Innermost positive radius relative to R

    Returns:
        RadialGrid: Grid whose last node is exactly R
    """
    if ratio <= 1:
        raise ValidationError("invalid-ratio", f"Grid ratio must exceed 1, got {ratio}")
    count = int(np.ceil(np.log(1 / inner) / np.log(ratio)))
    positive = radius * ratio ** (-np.arange(count, -1, -1, dtype=float))
    positive[-1] = radius
    return RadialGrid(np.concatenate(([0.0], positive)), dimension)


def sample_datum(datum: Datum, grid: RadialGrid) -> ScalarField:
    """Datum sampled at the shell measure-midpoints of the grid."""
    samples = grid.samples
    return ScalarField(samples, datum.value(samples), grid.weights, grid.dimension, radial=True, support=grid)


def _check_datum(datum: Datum):
    if isinstance(datum, AnalyticDatum):
        negative = datum.alpha < 0
    else:
        negative = np.min(datum.samples) < 0
    if negative:
        raise ValidationError("unsupported-datum", "The radial oracle needs a nonnegative datum")


def _flux(prob: RadialProblem, r: np.ndarray) -> np.ndarray:
    """w(r) = -r^(-a) M(r), with its limit at r = 0."""
    r = np.asarray(r, dtype=float)
    a = prob.exponent
    w = np.full(r.shape, -prob.datum.origin_flux(a))
    positive = r > 0
    w[positive] = -prob.datum.moment(r[positive], a) / r[positive] ** a
    return w


def flux_potential(prob: RadialProblem, grid) -> np.ndarray:
    """
    Flux potential v(r) = -r^(-lam) integral_0^r s^(lam+N-1) f(s) ds.

    Args:
        prob: Radial problem (p not needed)
        grid: RadialGrid or array of radii

    Returns:
        np.ndarray: v at the grid radii, v(0) = 0
    """
    _check_datum(prob.datum)
    r = np.asarray(grid.nodes if isinstance(grid, RadialGrid) else grid, dtype=float)
    v = np.zeros_like(r)
    positive = r > 0
    v[positive] = -prob.datum.moment(r[positive], prob.exponent) / r[positive] ** prob.lam
    return v


@dataclass
class RadialSolution:
    """
    Radial solution at fixed p.

    Slopes and values are stored as exp(log_scale) times scaled arrays so that
    profiles like alpha^(1/(p-1)) stay representable when p is close to 1.
    """
    problem: RadialProblem
    grid: RadialGrid
    flux_potential: np.ndarray
    flux: np.ndarray
    log_scale: float
    scaled_slope: np.ndarray
    scaled_values: np.ndarray
    residual: np.ndarray = field(default_factory=lambda: np.zeros(0))

    @property
    def p(self) -> float:
        return self.problem.p

    @property
    def slope(self) -> np.ndarray:
        with np.errstate(over="ignore"):
            return np.exp(self.log_scale) * self.scaled_slope

    @property
    def values(self) -> np.ndarray:
        with np.errstate(over="ignore"):
            return np.exp(self.log_scale) * self.scaled_values

    @property
    def log_values(self) -> np.ndarray:
        with np.errstate(divide="ignore"):
            return self.log_scale + np.log(self.scaled_values)

    @property
    def max_residual(self) -> float:
        return float(np.max(np.abs(self.residual))) if self.residual.size else 0.0

    @property
    def sup_norm(self) -> float:
        return float(self.values[0])

    def flux_at(self, radii) -> np.ndarray:
        """w = |u'|^(p-2) u' at arbitrary radii."""
        return _flux(self.problem, np.asarray(radii, dtype=float))

    def evaluate(self, radii) -> Tuple[np.ndarray, np.ndarray]:
        """Return (scaled values, scaled slopes) at arbitrary radii in [0, R]."""
        return _integrate_profile(self.problem, np.asarray(radii, dtype=float), self.log_scale)

    def field(self) -> ScalarField:
        """Solution sampled at shell measure-midpoints with shell weights."""
        samples = self.grid.samples
        scaled_values, scaled_slope = self.evaluate(samples)
        with np.errstate(over="ignore"):
            factor = np.exp(self.log_scale)
            return ScalarField(
                points=samples,
                values=factor * scaled_values,
                weights=self.grid.weights,
                dimension=self.problem.dimension,
                radial=True,
                support=self.grid,
                gradient=factor * scaled_slope,
            )

    def energy(self) -> float:
        """p-energy integral |u'|^p over B_R."""
        samples = self.grid.samples
        _, scaled_slope = self.evaluate(samples)
        p = self.p
        with np.errstate(over="ignore"):
            return float(np.exp(p * self.log_scale) * np.sum(self.grid.weights * np.abs(scaled_slope) ** p))


def _flux_scale(prob: RadialProblem, points: np.ndarray) -> float:
    return float(np.max(np.abs(_flux(prob, points))))


def _integrate_profile(prob: RadialProblem, radii: np.ndarray, log_scale: float) -> Tuple[np.ndarray, np.ndarray]:
    """Scaled u and u' at increasing radii, integrating |w|^(1/(p-1)) inward from R."""
    q = 1 / (prob.p - 1)
    scale = np.exp(log_scale / q) if np.isfinite(log_scale) else 0.0
    if scale == 0:
        return np.zeros_like(radii), np.zeros_like(radii)
    order = np.argsort(radii)
    sorted_radii = radii[order]
    knots = np.append(sorted_radii, prob.radius)
    lows, highs = knots[:-1], knots[1:]
    nodes, weights = np.polynomial.legendre.leggauss(RADIAL_GAUSS_POINTS)
    half = 0.5 * (highs - lows)
    points = 0.5 * (highs + lows)[:, None] + half[:, None] * nodes[None, :]
    integrand = (np.abs(_flux(prob, points.ravel())).reshape(points.shape) / scale) ** q
    pieces = np.sum(integrand * weights[None, :], axis=1) * half
    scaled_values = np.cumsum(pieces[::-1])[::-1]
    scaled_slope = -(np.abs(_flux(prob, sorted_radii)) / scale) ** q
    if not np.all(np.isfinite(scaled_values)):
        raise NumericalFailure("blow-up-at-origin", "Slope is not integrable near the origin")
    values = np.empty_like(radii)
    slopes = np.empty_like(radii)
    values[order] = scaled_values
    slopes[order] = scaled_slope
    return values, slopes


def _strong_residual(prob: RadialProblem, nodes: np.ndarray, flux: np.ndarray,
                     log_scale: float, scaled_slope: np.ndarray) -> np.ndarray:
    """(r^lam v)' + r^(lam+N-1) f at interior nodes, with v rebuilt from the slope."""
    p = prob.p
    positive = nodes > 0
    r = nodes[positive]
    with np.errstate(divide="ignore"):
        rebuilt = -np.exp((p - 1) * (log_scale + np.log(np.abs(scaled_slope[positive]))))
    w = np.where(scaled_slope[positive] != 0, rebuilt, flux[positive])
    g = r ** prob.lam * r ** (prob.dimension - 1) * w
    derivative = np.gradient(g, r, edge_order=2)
    residual = derivative + r ** prob.exponent * prob.datum.value(r)
    return residual[1:-1]


def radial_solution(prob: RadialProblem, grid: Optional[RadialGrid] = None) -> RadialSolution:
    """
    Solve the radial problem at fixed p.

    Args:
        prob: Radial problem with p set
        grid: Optional grid; defaults to the geometric grid of the configured ratio

    Returns:
        RadialSolution: Profile, slope, flux and strong-form residual
    """
    if prob.p is None:
        raise ValidationError("missing-exponent", "radial_solution needs p")
    grid = grid or radial_grid(prob.radius, prob.dimension)
    nodes = grid.nodes
    v = flux_potential(prob, nodes)
    w = _flux(prob, nodes)
    q = 1 / (prob.p - 1)

    scale = max(_flux_scale(prob, nodes), _flux_scale(prob, grid.samples))
    if scale == 0:
        logger.info("Zero datum: radial solution is identically zero")
        zeros = np.zeros_like(nodes)
        return RadialSolution(prob, grid, v, w, float("-inf"), zeros, zeros, np.zeros(max(nodes.size - 3, 0)))

    log_scale = q * np.log(scale)
    scaled_values, scaled_slope = _integrate_profile(prob, nodes, log_scale)
    residual = _strong_residual(prob, nodes, w, log_scale, scaled_slope)
    solution = RadialSolution(prob, grid, v, w, log_scale, scaled_slope, scaled_values, residual)
    logger.debug(f"Radial solve N={prob.dimension} lambda={prob.lam} p={prob.p}: "
                 f"log sup = {solution.log_values[0]:.6g}, residual = {solution.max_residual:.3e}")
    return solution


@dataclass
class TrichotomyRecord:
    """Per-radius classification of the p -> 1+ behaviour."""
    schedule: Tuple[float, ...]
    radii: np.ndarray
    slopes: np.ndarray
    classes: List[str]
    last_values: np.ndarray
    limit_values: np.ndarray
    slope_tol: float

    @property
    def overall(self) -> str:
        distinct = set(self.classes)
        return distinct.pop() if len(distinct) == 1 else INCONCLUSIVE

    def as_dict(self) -> dict:
        return {
            "schedule": list(self.schedule),
            "overall": self.overall,
            "slope_tol": self.slope_tol,
            "points": [
                {"r": float(r), "slope": float(s), "class": c, "last_value": float(v), "limit": float(lim)}
                for r, s, c, v, lim in zip(self.radii, self.slopes, self.classes, self.last_values, self.limit_values)
            ],
        }


def check_schedule(schedule: Sequence[float]) -> Tuple[float, ...]:
    schedule = tuple(float(p) for p in schedule)
    if len(schedule) < 2:
        raise ValidationError("invalid-schedule", "A schedule needs at least two exponents")
    if any(p <= 1 for p in schedule):
        raise ValidationError("invalid-schedule", "Every exponent must exceed 1")
    if any(b >= a for a, b in zip(schedule, schedule[1:])):
        raise ValidationError("invalid-schedule", "Schedule must be strictly decreasing")
    return schedule


def classify_log_slopes(exponents: Sequence[float], log_values: np.ndarray, slope_tol: float,
                        points: int = EXTRAPOLATION_POINTS) -> Tuple[np.ndarray, List[str]]:
    """
    Fit log u_p against 1/(p-1) over the last schedule points, column by column.

    Args:
        exponents: Schedule of p values
        log_values: Array (len(exponents), n) of log u_p
        slope_tol: Slopes within +-slope_tol count as a finite limit
        points: Number of trailing schedule points used in the fit

    Returns:
        Tuple[np.ndarray, List[str]]: Slopes and class labels per column
    """
    m = min(points, len(exponents))
    x = 1 / (np.asarray(exponents[-m:]) - 1)
    y = np.asarray(log_values)[-m:]
    slopes = np.full(y.shape[1], np.nan)
    classes = []
    finite = np.all(np.isfinite(y), axis=0)
    if np.any(finite):
        slopes[finite] = np.polyfit(x, y[:, finite], 1)[0]
    steps = np.diff(y, axis=0)
    for column in range(y.shape[1]):
        if not finite[column]:
            # underflow to zero or overflow to inf along the schedule
            if np.isneginf(y[-1, column]):
                classes.append(TO_ZERO)
            elif np.isposinf(y[-1, column]):
                classes.append(TO_INFINITY)
            else:
                classes.append(INCONCLUSIVE)
            continue
        signs = np.sign(steps[:, column][np.abs(steps[:, column]) > slope_tol * np.max(np.diff(x))])
        if np.count_nonzero(np.diff(signs)) >= 2:
            classes.append(INCONCLUSIVE)
        elif slopes[column] < -slope_tol:
            classes.append(TO_ZERO)
        elif slopes[column] > slope_tol:
            classes.append(TO_INFINITY)
        else:
            classes.append(TO_FINITE)
    return slopes, classes


def limit_p_to_one(prob: RadialProblem, schedule: Sequence[float], radii: Optional[np.ndarray] = None,
                   slope_tol: float = RADIAL_SLOPE_TOL, grid: Optional[RadialGrid] = None) -> TrichotomyRecord:
    """
    Classify u_p(r) as p -> 1+ along a decreasing schedule.

    Args:
        prob: Radial problem (p ignored)
        schedule: Strictly decreasing exponents above 1
        radii: Radii to classify; defaults to the interior grid nodes
        slope_tol: Tolerance on the fitted log-slope
        grid: Optional radial grid

    Returns:
        TrichotomyRecord: Slopes, classes and limit estimates per radius
    """
    schedule = check_schedule(schedule)
    grid = grid or radial_grid(prob.radius, prob.dimension)
    radii = grid.interior if radii is None else np.asarray(radii, dtype=float)

    logs = np.empty((len(schedule), radii.size))
    for k, p in enumerate(schedule):
        solution = radial_solution(prob.with_p(p), grid)
        if not np.isfinite(solution.log_scale):
            logs[k] = -np.inf
            continue
        scaled_values, _ = solution.evaluate(radii)
        with np.errstate(divide="ignore"):
            logs[k] = solution.log_scale + np.log(scaled_values)

    slopes, classes = classify_log_slopes(schedule, logs, slope_tol)

    with np.errstate(over="ignore"):
        values = np.exp(logs)
    last_values = np.where(values[-1] > BLOWUP_REPORT_VALUE, np.inf, values[-1])
    m = min(EXTRAPOLATION_POINTS, len(schedule))
    limits = np.full(radii.size, np.nan)
    finite = np.array([c == TO_FINITE for c in classes])
    if np.any(finite):
        shifts = np.asarray(schedule[-m:]) - 1
        limits[finite] = np.polyfit(shifts, values[-m:, finite], 1)[1]
    limits[np.array([c == TO_ZERO for c in classes])] = 0.0
    limits[np.array([c == TO_INFINITY for c in classes])] = np.inf

    record = TrichotomyRecord(schedule, radii, slopes, classes, last_values, limits, slope_tol)
    logger.info(f"Trichotomy N={prob.dimension} lambda={prob.lam} datum={prob.datum.describe()}: {record.overall}")
    return record


@dataclass
class ProfileCheck:
    """Certificate residuals of one candidate limit profile against z = -x/|x|."""
    name: str
    pde_residual: float
    pairing_residual: float
    boundary_residual: float
    weighted_residual: float
    tol: float

    @property
    def accepted(self) -> bool:
        return max(self.pde_residual, self.pairing_residual, self.boundary_residual) <= self.tol

    def as_dict(self) -> dict:
        return {
            "profile": self.name,
            "pde_residual": self.pde_residual,
            "pairing_residual": self.pairing_residual,
            "boundary_residual": self.boundary_residual,
            "weighted_residual": self.weighted_residual,
            "accepted": self.accepted,
        }


@dataclass
class RadialCertificate:
    problem: RadialProblem
    field_name: str
    profiles: Dict[str, ProfileCheck]
    radii: np.ndarray
    limit_profiles: Dict[str, np.ndarray]

    @property
    def accepted(self) -> bool:
        return all(check.accepted for check in self.profiles.values())

    def as_dict(self) -> dict:
        return {
            "z": self.field_name,
            "accepted": self.accepted,
            "profiles": {name: check.as_dict() for name, check in self.profiles.items()},
        }


def candidate_profiles(prob: RadialProblem, radii: np.ndarray) -> Dict[str, Tuple[np.ndarray, np.ndarray]]:
    """
    Candidate limit profiles (values, slopes) at the given radii.

    "computed" is the p -> 1+ limit of the finite-energy branch: it has slope -1
    where |w| = 1 and is flat where |w| < 1. "power_law" is
    R^(N-1)/(N-1) (1 - (r/R)^(N-1)), offered for the inverse-radius family with
    lam = -(N-2).
    """
    big_r = prob.radius
    flux = np.abs(_flux(prob, radii))
    if np.max(flux) > 1 + 1e-9:
        raise ValidationError("not-critical", "The limit profile is unbounded: |w| exceeds 1")
    active = flux >= 1 - 1e-9
    fine = np.union1d(radii, np.linspace(0.0, big_r, 4097))
    fine_active = (np.abs(_flux(prob, fine)) >= 1 - 1e-9).astype(float)
    tail = np.concatenate(([0.0], np.cumsum(0.5 * (fine_active[1:] + fine_active[:-1]) * np.diff(fine))))
    values = np.interp(radii, fine, tail[-1] - tail)
    profiles = {"computed": (values, -active.astype(float))}

    n = prob.dimension
    datum = prob.datum
    if isinstance(datum, AnalyticDatum) and datum.kind == "inverse_radius" and np.isclose(prob.lam, -(n - 2)):
        power_law = big_r ** (n - 1) / (n - 1) * (1 - (radii / big_r) ** (n - 1))
        profiles["power_law"] = (power_law, -radii ** (n - 2))
    return profiles


def radial_limit_certificate(prob: RadialProblem, grid: Optional[RadialGrid] = None,
                             tol: float = 1e-8) -> RadialCertificate:
    """
    Check the 1-Laplacian limit certificate with z = -x/|x| on the radial grid.

    Args:
        prob: Critical radial problem (p ignored)
        grid: Optional radial grid
        tol: Acceptance tolerance for each residual

    Returns:
        RadialCertificate: Residuals for every candidate profile
    """
    _check_datum(prob.datum)
    grid = grid or radial_grid(prob.radius, prob.dimension)
    r = grid.samples
    n = prob.dimension
    f = prob.datum.value(r)

    if prob.datum.is_zero:
        # constant unit z: only the drift term can be nonzero
        pde = float(np.max(abs(prob.lam) / r)) if prob.lam else 0.0
        zero = np.zeros_like(r)
        check = ProfileCheck("zero", pde, 0.0, 0.0, 0.0, tol)
        return RadialCertificate(prob, "e_1", {"zero": check}, r, {"zero": zero})

    divergence_part = (n - 1 + prob.lam) / r
    pde = float(np.max(np.abs(divergence_part - f) / (np.abs(divergence_part) + np.abs(f))))

    # |x|^lam z is divergence-balanced against |x|^lam f
    weighted = np.gradient(r ** prob.exponent, r, edge_order=2) / r ** (n - 1)
    target = r ** prob.lam * f
    weighted_residual = float(np.max(np.abs(weighted[1:-1] - target[1:-1])) / np.max(np.abs(target[1:-1])))

    profiles = {}
    limits = {}
    for name, (values, slopes) in candidate_profiles(prob, np.append(r, prob.radius)).items():
        trace, values, slopes = values[-1], values[:-1], slopes[:-1]
        moving = np.abs(slopes) > 0
        # z . grad u / |grad u| = -u'/|u'| for z = -x/|x|
        pairing = float(np.max(np.abs(1 + np.sign(slopes[moving])))) if np.any(moving) else 0.0
        # z . nu = -1 on the sphere, so only a negative trace violates [z, nu] in Sgn(-u)
        active = abs(trace) > 1e-6 * max(float(np.max(np.abs(values))), 1e-300)
        boundary = float(abs(-1 + np.sign(trace))) if active else 0.0
        profiles[name] = ProfileCheck(name, pde, pairing, boundary, weighted_residual, tol)
        limits[name] = values
    certificate = RadialCertificate(prob, "-x/|x|", profiles, r, limits)
    logger.info(f"Radial certificate N={n} lambda={prob.lam}: "
                f"{ {k: c.accepted for k, c in profiles.items()} }")
    return certificate
