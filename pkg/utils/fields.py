"""
Field and problem module for the lab.
Holds the data types shared by every solver path: analytic and sampled data,
drift fields, domains, sampled scalar and vector fields, and problem instances.
"""
import logging
from dataclasses import dataclass, field, replace
from typing import Callable, Optional, Tuple, Union

import numpy as np
from scipy.integrate import cumulative_trapezoid

from config import DATUM_TAGS
from utils.errors import ValidationError

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class AnalyticDatum:
    """
    Closed-form radial datum f(|x|) on B_R.

    Args:
        kind: One of the tags in config.DATUM_TAGS
        alpha: Amplitude multiplying the whole profile
        radius: Radius R of the supporting ball
        beta: Plateau parameter, only used by "plateau_7_2"
    """
    kind: str
    alpha: float = 1.0
    radius: float = 1.0
    beta: float = 1.0

    def __post_init__(self):
        if self.kind not in DATUM_TAGS:
            raise ValidationError("unknown-datum", f"Unknown datum tag '{self.kind}'")
        if self.radius <= 0:
            raise ValidationError("invalid-radius", f"Radius must be positive, got {self.radius}")
        if self.kind == "plateau_7_2" and self.beta < 1:
            raise ValidationError("invalid-beta", f"Plateau parameter beta must be >= 1, got {self.beta}")

    @property
    def is_zero(self) -> bool:
        return self.alpha == 0

    @property
    def plateau_radius(self) -> float:
        return self.radius / self.beta

    def value(self, r):
        """Evaluate f at radii r (vectorized)."""
        r = np.asarray(r, dtype=float)
        if self.kind == "constant":
            return np.full_like(r, self.alpha)
        with np.errstate(divide="ignore"):
            inverse = self.alpha / r
        if self.kind == "inverse_radius":
            return inverse
        return np.where(r <= self.plateau_radius, self.alpha * self.beta / self.radius, inverse)

    def moment(self, r, a: float):
        """
        Return M(r) = integral_0^r s^a f(s) ds for a > 0.

        Radii beyond R are clipped to R since the datum lives on B_R.
        """
        r = np.minimum(np.asarray(r, dtype=float), self.radius)
        if self.kind == "constant":
            return self.alpha * r ** (a + 1) / (a + 1)
        if self.kind == "inverse_radius":
            return self.alpha * r ** a / a
        rho = self.plateau_radius
        inner = self.alpha * (self.beta / self.radius) * np.minimum(r, rho) ** (a + 1) / (a + 1)
        outer = self.alpha * (np.maximum(r, rho) ** a - rho ** a) / a
        return inner + outer

    def origin_flux(self, a: float) -> float:
        """Limit of r^(-a) M(r) as r -> 0."""
        if self.kind == "inverse_radius":
            return self.alpha / a
        return 0.0

    def scaled(self, c: float) -> "AnalyticDatum":
        return replace(self, alpha=self.alpha * c)

    def describe(self) -> dict:
        return {"kind": self.kind, "alpha": self.alpha, "R": self.radius, "beta": self.beta}


@dataclass(frozen=True)
class SampledRadialDatum:
    """Radial datum given by samples, linearly interpolated between radii."""
    radii: Tuple[float, ...]
    samples: Tuple[float, ...]

    def __post_init__(self):
        if len(self.radii) != len(self.samples) or len(self.radii) < 2:
            raise ValidationError("invalid-samples", "Need at least two (radius, value) pairs of equal length")
        if np.any(np.diff(self.radii) <= 0):
            raise ValidationError("invalid-samples", "Sample radii must be strictly increasing")

    @classmethod
    def from_function(cls, fn: Callable, radius: float, count: int = 4001) -> "SampledRadialDatum":
        r = np.linspace(0.0, radius, count)
        return cls(tuple(r.tolist()), tuple(np.asarray(fn(r), dtype=float).tolist()))

    @property
    def radius(self) -> float:
        return self.radii[-1]

    @property
    def is_zero(self) -> bool:
        return not np.any(self.samples)

    def value(self, r):
        return np.interp(np.asarray(r, dtype=float), self.radii, self.samples)

    def moment(self, r, a: float):
        r = np.minimum(np.asarray(r, dtype=float), self.radius)
        base = np.asarray(self.radii)
        grid = np.union1d(base, np.atleast_1d(r))
        cumulative = cumulative_trapezoid(grid ** a * self.value(grid), grid, initial=0.0)
        return np.interp(r, grid, cumulative)

    def origin_flux(self, a: float) -> float:
        return 0.0

    def scaled(self, c: float) -> "SampledRadialDatum":
        return SampledRadialDatum(self.radii, tuple((np.asarray(self.samples) * c).tolist()))

    def describe(self) -> dict:
        return {"kind": "sampled", "points": len(self.radii), "R": self.radius}


Datum = Union[AnalyticDatum, SampledRadialDatum]


def _norms(x: np.ndarray) -> np.ndarray:
    return np.linalg.norm(x, axis=-1)


@dataclass(frozen=True)
class HardyDrift:
    """Drift F(x) = lam * x / |x|^2."""
    lam: float
    kind: str = "hardy"

    def field(self, x: np.ndarray) -> np.ndarray:
        r2 = np.sum(x * x, axis=-1, keepdims=True)
        return self.lam * x / r2

    def magnitude(self, x: np.ndarray) -> np.ndarray:
        return abs(self.lam) / _norms(x)

    def describe(self) -> dict:
        return {"kind": self.kind, "lambda": self.lam}


@dataclass(frozen=True)
class UniformDrift:
    """Constant drift F(x) = b."""
    vector: Tuple[float, ...]
    kind: str = "uniform"

    @property
    def strength(self) -> float:
        return float(np.linalg.norm(self.vector))

    def field(self, x: np.ndarray) -> np.ndarray:
        return np.broadcast_to(np.asarray(self.vector, dtype=float), x.shape).copy()

    def magnitude(self, x: np.ndarray) -> np.ndarray:
        return np.full(x.shape[:-1], self.strength)

    def describe(self) -> dict:
        return {"kind": self.kind, "vector": list(self.vector)}


Drift = Union[HardyDrift, UniformDrift]


@dataclass(frozen=True)
class Domain:
    """Ball of radius R or cube [-R, R]^N, both centered at the origin."""
    kind: str = "ball"
    radius: float = 1.0

    def __post_init__(self):
        if self.kind not in ("ball", "square"):
            raise ValidationError("unknown-domain", f"Unknown domain '{self.kind}'")

    def normal(self, x: np.ndarray) -> np.ndarray:
        """Outward unit normal at boundary points x."""
        if self.kind == "ball":
            return x / _norms(x)[..., None]
        axis = np.argmax(np.abs(x), axis=-1)
        normal = np.zeros_like(x)
        np.put_along_axis(normal, axis[..., None], np.sign(np.take_along_axis(x, axis[..., None], axis=-1)), axis=-1)
        return normal


@dataclass(frozen=True)
class ProblemSpec:
    """A drift-diffusion problem instance: dimension, domain, drift, datum and optionally p."""
    dimension: int
    domain: Domain
    drift: Drift
    datum: Datum
    p: Optional[float] = None

    def __post_init__(self):
        if self.dimension < 2:
            raise ValidationError("invalid-dimension", f"Dimension must be >= 2, got {self.dimension}")
        if isinstance(self.drift, HardyDrift) and abs(self.drift.lam) >= self.dimension - 1:
            raise ValidationError(
                "out-of-range-lambda",
                f"|lambda| = {abs(self.drift.lam)} must be < N - 1 = {self.dimension - 1}",
            )
        if isinstance(self.drift, UniformDrift) and len(self.drift.vector) != self.dimension:
            raise ValidationError("invalid-drift", "Uniform drift vector must have N components")
        if self.p is not None and not (1 < self.p < self.dimension):
            raise ValidationError("p-out-of-range", f"p = {self.p} must lie in (1, N)")

    @property
    def lam(self) -> Optional[float]:
        return self.drift.lam if isinstance(self.drift, HardyDrift) else None

    @property
    def radius(self) -> float:
        return self.domain.radius

    def with_p(self, p: float) -> "ProblemSpec":
        return replace(self, p=p)

    def scaled(self, c: float) -> "ProblemSpec":
        return replace(self, datum=self.datum.scaled(c))

    def with_datum(self, datum: Datum) -> "ProblemSpec":
        return replace(self, datum=datum)

    def describe(self) -> dict:
        return {
            "N": self.dimension,
            "domain": {"kind": self.domain.kind, "R": self.domain.radius},
            "drift": self.drift.describe(),
            "datum": self.datum.describe(),
            "p": self.p,
        }


@dataclass
class ScalarField:
    """
    Samples of a scalar function with quadrature weights.

    For radial fields the points are radii and the weights are the measures of
    the spherical shells the samples represent. `support` is the mesh or radial
    grid the samples live on; `gradient` holds nodal slopes for radial fields.
    """
    points: np.ndarray
    values: np.ndarray
    weights: np.ndarray
    dimension: int
    radial: bool = False
    support: Optional[object] = None
    gradient: Optional[np.ndarray] = None

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=float)
        self.weights = np.asarray(self.weights, dtype=float)
        if self.values.shape != self.weights.shape:
            raise ValidationError("shape-mismatch", "Values and weights must have the same shape")
        if np.any(self.weights < 0):
            raise ValidationError("invalid-weights", "Quadrature weights must be nonnegative")

    @property
    def measure(self) -> float:
        return float(self.weights.sum())

    def with_values(self, values: np.ndarray, gradient: Optional[np.ndarray] = None) -> "ScalarField":
        return ScalarField(self.points, values, self.weights, self.dimension, self.radial, self.support, gradient)

    def scaled(self, c: float) -> "ScalarField":
        gradient = None if self.gradient is None else self.gradient * c
        return self.with_values(self.values * c, gradient)

    def magnitude(self) -> "ScalarField":
        return self.with_values(np.abs(self.values))


@dataclass
class VectorField:
    """Samples of a vector field. Mesh fields are piecewise constant per cell."""
    points: np.ndarray
    components: np.ndarray
    weights: np.ndarray
    dimension: int
    radial: bool = False
    support: Optional[object] = None
    norms: dict = field(default_factory=dict)

    def magnitude(self) -> ScalarField:
        return ScalarField(self.points, _norms(self.components), self.weights, self.dimension, self.radial, self.support)


@dataclass(frozen=True)
class RadialFunction:
    """Closed-form radial scalar function u(|x|) with its slope u'(r)."""
    name: str
    profile: Callable[[np.ndarray], np.ndarray]
    slope: Callable[[np.ndarray], np.ndarray]

    def value(self, x: np.ndarray) -> np.ndarray:
        return self.profile(_norms(x))

    def gradient(self, x: np.ndarray) -> np.ndarray:
        r = _norms(x)
        return (self.slope(r) / r)[..., None] * x

    def shifted(self, c: float) -> "RadialFunction":
        profile, slope = self.profile, self.slope
        return RadialFunction(f"{self.name}{c:+g}", lambda r: profile(r) + c, slope)


@dataclass(frozen=True)
class RadialVectorField:
    """Closed-form radial vector field z(x) = c(|x|) x/|x| with c and c'."""
    name: str
    component: Callable[[np.ndarray], np.ndarray]
    derivative: Callable[[np.ndarray], np.ndarray]

    def value(self, x: np.ndarray) -> np.ndarray:
        r = _norms(x)
        return (self.component(r) / r)[..., None] * x

    def divergence(self, x: np.ndarray) -> np.ndarray:
        r = _norms(x)
        n = x.shape[-1]
        return self.derivative(r) + (n - 1) * self.component(r) / r

    def scaled(self, c: float) -> "RadialVectorField":
        component, derivative = self.component, self.derivative
        return RadialVectorField(f"{c:g}*{self.name}", lambda r: c * component(r), lambda r: c * derivative(r))


def cone_profile(radius: float) -> RadialFunction:
    """u(x) = R - |x|."""
    return RadialFunction("R-r", lambda r: radius - r, lambda r: -np.ones_like(r))


def inward_unit_field() -> RadialVectorField:
    """z(x) = -x/|x|."""
    return RadialVectorField("-x/|x|", lambda r: -np.ones_like(r), lambda r: np.zeros_like(r))


def forward_datum(dimension: int, lam: float, radius: float = 1.0) -> AnalyticDatum:
    """
    Datum produced by z = -x/|x| through f = -div z - lam z.x/|x|^2.

    Returns:
        AnalyticDatum: f = (N - 1 + lam)/|x|
    """
    return AnalyticDatum("inverse_radius", alpha=dimension - 1 + lam, radius=radius)


def build_problem(dimension: int, lam: float, datum: Datum, radius: float = 1.0,
                  domain: str = "ball", p: Optional[float] = None,
                  drift: Optional[Drift] = None) -> ProblemSpec:
    """
    Build a problem instance with a Hardy drift unless another drift is given.

    Args:
        dimension: Space dimension N
        lam: Hardy drift strength
        datum: Right-hand side
        radius: Domain radius or half-width
        domain: "ball" or "square"
        p: Optional exponent
        drift: Optional drift replacing the Hardy drift

    Returns:
        ProblemSpec: The validated instance
    """
    spec = ProblemSpec(
        dimension=dimension,
        domain=Domain(domain, radius),
        drift=drift if drift is not None else HardyDrift(lam),
        datum=datum,
        p=p,
    )
    logger.debug(f"Built problem {spec.describe()}")
    return spec
