"""
Continuation module for the lab.
Drives p down to 1 with warm starts, extracts the flux field z_p, classifies the
asymptotic regime and verifies limit certificates for candidate (u, z) pairs.
"""
import logging
from dataclasses import dataclass, field
from typing import Dict, Iterator, List, Optional, Sequence, Tuple, Union

import numpy as np

from config import (
    BLOWUP_GUARD,
    BLOWUP_REPORT_VALUE,
    BOUNDARY_ACTIVATION,
    CERT_TOL_BOUNDARY,
    CERT_TOL_PAIRING,
    CERT_TOL_PDE,
    CERT_TOL_Z,
    CONSENSUS_FRACTION,
    CONTINUATION_SLOPE_TOL,
    DEFAULT_MESH_SIZE,
    DEFAULT_P0,
    DEFAULT_SCHEDULE_STEPS,
    DEFAULT_SEED,
    EXTRAPOLATION_POINTS,
    PAIRING_BATTERY_SIZE,
    PAIRING_LEVELS,
    RADIAL_SLOPE_TOL,
)
from utils.errors import NumericalFailure, SolverDiverged, ValidationError
from utils.fields import ProblemSpec, RadialFunction, ScalarField, VectorField
from utils.function_spaces import admissible_p_max, ball_volume, drift_weak_norm
from utils.mesh import Mesh, build_mesh
from utils.plap_solver import (
    DiscreteProblem,
    SolveReport,
    SolverSettings,
    field_norms,
    flux_vectors,
    solve_fixed_p,
    truncate,
    vector_norms,
)
from utils.radial_oracle import (
    INCONCLUSIVE,
    TO_FINITE,
    TO_INFINITY,
    TO_ZERO,
    RadialProblem,
    RadialSolution,
    check_schedule,
    classify_log_slopes,
    radial_grid,
    radial_solution,
)

logger = logging.getLogger(__name__)

DEGENERATE = "Degenerate"
NONTRIVIAL = "Nontrivial"
UNBOUNDED = "Unbounded"
UNDECIDED = "Inconclusive"

_CLASS_NAMES = {TO_ZERO: DEGENERATE, TO_FINITE: NONTRIVIAL, TO_INFINITY: UNBOUNDED}


@dataclass(frozen=True)
class Schedule:
    """Strictly decreasing exponents with the solver settings used at every step."""
    exponents: Tuple[float, ...]
    settings: SolverSettings = field(default_factory=SolverSettings)
    backend: str = "radial"

    @classmethod
    def geometric(cls, p0: float = DEFAULT_P0, steps: int = DEFAULT_SCHEDULE_STEPS, **kwargs) -> "Schedule":
        """p_k - 1 = (p0 - 1) 2^-k for k = 0..steps-1."""
        if steps < 1:
            raise ValidationError("invalid-schedule", f"A schedule needs at least one step, got {steps}")
        exponents = tuple(1 + (p0 - 1) * 2.0 ** -k for k in range(steps))
        return cls(exponents, **kwargs)

    def validate(self, spec: ProblemSpec):
        if self.backend not in ("radial", "mesh"):
            raise ValidationError("unknown-backend", f"Unknown backend '{self.backend}'")
        if len(self.exponents) > 1:
            check_schedule(self.exponents)
        elif self.exponents[0] <= 1:
            raise ValidationError("invalid-schedule", "Every exponent must exceed 1")
        limit = spec_p_max(spec)
        too_large = [p for p in self.exponents if p >= limit]
        if too_large:
            raise ValidationError("p-out-of-range", f"Exponents {too_large} are not below the admissible {limit:.6g}")

    def as_dict(self) -> dict:
        return {"exponents": list(self.exponents), "backend": self.backend, "settings": self.settings.as_dict()}


def domain_measure(spec: ProblemSpec) -> float:
    if spec.domain.kind == "ball":
        return ball_volume(spec.dimension) * spec.radius ** spec.dimension
    return (2 * spec.radius) ** spec.dimension


def spec_p_max(spec: ProblemSpec) -> float:
    """Supremum of admissible exponents for the problem's drift."""
    norm = drift_weak_norm(spec.drift, spec.dimension, domain_measure(spec))
    return min(admissible_p_max(norm, spec.dimension), float(spec.dimension))


@dataclass
class ContinuationRun:
    """Reports of a schedule, in order, with blow-up and failure markers."""
    spec: ProblemSpec
    schedule: Schedule
    reports: List[SolveReport] = field(default_factory=list)
    blow_up: bool = False
    failure: Optional[str] = None
    failed_at: Optional[float] = None

    def __len__(self) -> int:
        return len(self.reports)

    def __iter__(self) -> Iterator[SolveReport]:
        return iter(self.reports)

    def __getitem__(self, index) -> SolveReport:
        return self.reports[index]

    @property
    def backend(self) -> str:
        return self.schedule.backend

    @property
    def completed(self) -> bool:
        return len(self.reports) == len(self.schedule.exponents) and not self.blow_up and self.failure is None

    def as_dict(self) -> dict:
        return {
            "spec": self.spec.describe(),
            "schedule": self.schedule.as_dict(),
            "blow_up": self.blow_up,
            "failure": self.failure,
            "failed_at": self.failed_at,
            "reports": [report.summary() for report in self.reports],
        }


def radial_report(solution: RadialSolution) -> SolveReport:
    """SolveReport of a radial solution sampled on its shell midpoints; sup norms above BLOWUP_REPORT_VALUE read +inf."""
    u = solution.field()
    slopes = np.abs(u.gradient)
    norms = field_norms(u, slopes, u.weights, solution.p)
    sup = float(solution.sup_norm)
    norms["linf_norm"] = np.inf if sup > BLOWUP_REPORT_VALUE else sup
    flux = solution.flux_at(u.points)[:, None]
    z = VectorField(u.points, flux, u.weights, u.dimension, radial=True, support=u.support,
                    norms=vector_norms(flux, u.weights))
    return SolveReport(
        p=solution.p,
        iterations=0,
        residual=solution.max_residual,
        converged=True,
        field=u,
        problem=None,
        measure=u.measure,
        backend="radial",
        residual_history=[solution.max_residual],
        z=z,
        **norms,
    )


def run_schedule(spec: ProblemSpec, schedule: Schedule, mesh: Optional[Mesh] = None,
                 warm_start: bool = True, blowup_guard: float = BLOWUP_GUARD) -> ContinuationRun:
    """
    Solve along the schedule, warm-starting each step from the previous one.

    Args:
        spec: Problem (its p is ignored)
        schedule: Exponents and settings
        mesh: Mesh for the mesh backend; built from the domain when omitted
        warm_start: Start each mesh solve from the previous solution
        blowup_guard: Abort once ||u_p||_inf exceeds this value

    Returns:
        ContinuationRun: Reports in schedule order, possibly cut short
    """
    schedule.validate(spec)
    run = ContinuationRun(spec, schedule)
    if schedule.backend == "radial":
        problem = RadialProblem.from_spec(spec)
        grid = radial_grid(problem.radius, problem.dimension)
    else:
        mesh = mesh or build_mesh(spec.domain, spec.dimension, DEFAULT_MESH_SIZE)

    previous = None
    for p in schedule.exponents:
        try:
            if schedule.backend == "radial":
                report = radial_report(radial_solution(problem.with_p(p), grid))
                report.problem = spec.with_p(p)
            else:
                dp = DiscreteProblem(spec.with_p(p), mesh, schedule.settings)
                report = solve_fixed_p(dp, previous if warm_start else None)
        except SolverDiverged as e:
            if e.report is not None:
                run.reports.append(e.report)
            run.failure, run.failed_at = str(e), p
            logger.error(f"Continuation stopped at p={p}: {e}")
            break
        except NumericalFailure as e:
            run.failure, run.failed_at = str(e), p
            logger.error(f"Continuation stopped at p={p}: {e}")
            break

        run.reports.append(report)
        if not report.linf_norm <= blowup_guard:
            report.status = "blow-up"
            run.blow_up = True
            logger.warning(f"Blow-up guard hit at p={p}: ||u_p||_inf = {report.linf_norm:.3e}")
            break
        previous = report.field.values
        logger.info(f"p={p}: ||u||_inf = {report.linf_norm:.6g}, ||u||_1 = {report.l1_norm:.6g}, "
                    f"energy = {report.energy:.6g}")
    return run


def extract_z(u_p: ScalarField, p: float, epsilon: float = 0.0) -> VectorField:
    """
    Flux field z = (|grad u|^2 + eps^2)^((p-2)/2) grad u with its L^q norms.

    Args:
        u_p: Mesh field or radial field carrying slopes
        p: Exponent
        epsilon: Regularization added to |grad u|

    Returns:
        VectorField: Cellwise (mesh) or radial components, norms for q in {2, 4, 8, inf}
    """
    support = u_p.support
    if isinstance(support, Mesh):
        vectors = flux_vectors(support.gradients(u_p.values), p, epsilon)
        return VectorField(support.centroids, vectors, support.volumes, u_p.dimension, support=support,
                           norms=vector_norms(vectors, support.volumes))
    if u_p.gradient is None:
        raise ValidationError("missing-gradient", "Field carries no gradient")
    slopes = np.asarray(u_p.gradient, dtype=float)
    if slopes.ndim == 1:
        slopes = slopes[:, None]
    vectors = flux_vectors(slopes, p, epsilon)
    return VectorField(u_p.points, vectors, u_p.weights, u_p.dimension, radial=u_p.radial, support=support,
                       norms=vector_norms(vectors, u_p.weights))


def z_growth_constant(run: ContinuationRun) -> float:
    """Smallest c with ||z_p||_inf <= 1 + c (p - 1) over the run."""
    excess = [max((report.z_inf - 1) / (report.p - 1), 0.0) for report in run if report.z_inf is not None]
    return float(max(excess, default=0.0))


@dataclass
class LimitEstimate:
    """Classification of the p -> 1+ limit and the extrapolated candidate."""
    classification: str
    u: Optional[ScalarField]
    exponents: Tuple[float, ...]
    slopes: np.ndarray
    node_classes: Dict[str, int]
    slope_tol: float

    def as_dict(self) -> dict:
        finite = self.slopes[np.isfinite(self.slopes)]
        return {
            "classification": self.classification,
            "exponents": list(self.exponents),
            "slope_tol": self.slope_tol,
            "node_classes": dict(self.node_classes),
            "slope_min": float(finite.min()) if finite.size else None,
            "slope_max": float(finite.max()) if finite.size else None,
        }


def richardson_limit(run: Union[ContinuationRun, Sequence[SolveReport]], slope_tol: Optional[float] = None,
                     points: int = EXTRAPOLATION_POINTS) -> LimitEstimate:
    """
    Classify the run and extrapolate the limit profile in the variable p - 1.

    Args:
        run: Continuation run or plain sequence of reports
        slope_tol: Log-slope tolerance; defaults by backend
        points: Trailing schedule points used by the fits

    Returns:
        LimitEstimate: Degenerate (u = 0), Nontrivial (extrapolant), Unbounded (no u) or Inconclusive
    """
    reports = list(run)
    blow_up = getattr(run, "blow_up", False)
    backend = reports[0].backend if reports else "radial"
    if slope_tol is None:
        slope_tol = RADIAL_SLOPE_TOL if backend == "radial" else CONTINUATION_SLOPE_TOL
    exponents = tuple(report.p for report in reports)

    if blow_up:
        logger.info(f"Blow-up guard was hit at p={exponents[-1]}: Unbounded")
        return LimitEstimate(UNBOUNDED, None, exponents, np.zeros(0), {TO_INFINITY: 1}, slope_tol)

    converged = [report for report in reports if report.status == "converged"]
    if len(converged) < 4:
        raise ValidationError("insufficient-schedule", f"Need at least 4 converged steps, got {len(converged)}")
    shapes = {report.field.values.shape for report in converged}
    if len(shapes) != 1:
        raise ValidationError("mismatched-fields", "Reports live on different supports")
    exponents = tuple(report.p for report in converged)
    values = np.stack([report.field.values for report in converged])
    template = converged[-1].field

    if not np.any(values):
        return LimitEstimate(DEGENERATE, template.with_values(np.zeros_like(template.values)),
                             exponents, np.zeros(0), {TO_ZERO: 0}, slope_tol)

    active = np.all(values > 0, axis=0) | np.isinf(values[-1])
    if not np.any(active):
        logger.warning("No node keeps a positive value along the schedule")
        return LimitEstimate(UNDECIDED, None, exponents, np.zeros(0), {INCONCLUSIVE: 0}, slope_tol)
    with np.errstate(divide="ignore"):
        logs = np.log(np.abs(values[:, active]))
    slopes, classes = classify_log_slopes(exponents, logs, slope_tol, points)
    counts: Dict[str, int] = {}
    for label in classes:
        counts[label] = counts.get(label, 0) + 1
    dominant, votes = max(counts.items(), key=lambda item: item[1])
    if dominant == INCONCLUSIVE or votes < CONSENSUS_FRACTION * len(classes):
        logger.warning(f"Inconsistent trends across nodes: {counts}")
        return LimitEstimate(UNDECIDED, None, exponents, slopes, counts, slope_tol)

    classification = _CLASS_NAMES[dominant]
    if classification == DEGENERATE:
        u = template.with_values(np.zeros_like(template.values))
    elif classification == UNBOUNDED:
        u = None
    else:
        m = min(points, len(exponents))
        shifts = np.asarray(exponents[-m:]) - 1
        intercepts = np.polyfit(shifts, values[-m:], 1)[1]
        u = template.with_values(intercepts)
    logger.info(f"Limit classification over p={exponents}: {classification} ({counts})")
    return LimitEstimate(classification, u, exponents, slopes, counts, slope_tol)


@dataclass
class LimitCertificate:
    """Residuals of a candidate (u, z) pair against the 1-Laplacian limit conditions."""
    z_inf: float
    residual_pde: float
    residual_pairing: float
    residual_boundary: float
    tolerances: Dict[str, float]
    battery_size: int
    levels: Tuple[float, ...]
    seed: int

    @property
    def checks(self) -> Dict[str, bool]:
        return {
            "z_norm": self.z_inf <= 1 + self.tolerances["z"],
            "pde": self.residual_pde <= self.tolerances["pde"],
            "pairing": self.residual_pairing <= self.tolerances["pairing"],
            "boundary": self.residual_boundary <= self.tolerances["boundary"],
        }

    @property
    def failed_checks(self) -> List[str]:
        return [name for name, passed in self.checks.items() if not passed]

    @property
    def accepted(self) -> bool:
        return not self.failed_checks

    def as_dict(self) -> dict:
        return {
            "z_inf": self.z_inf,
            "residual_pde": self.residual_pde,
            "residual_pairing": self.residual_pairing,
            "residual_boundary": self.residual_boundary,
            "tolerances": dict(self.tolerances),
            "checks": self.checks,
            "accepted": self.accepted,
            "battery_size": self.battery_size,
            "levels": list(self.levels),
            "seed": self.seed,
        }


def _resolve_mesh(u, z, mesh: Optional[Mesh]) -> Mesh:
    candidates = [mesh]
    for item in (u, z):
        if isinstance(item, (ScalarField, VectorField)):
            if not isinstance(item.support, Mesh):
                raise ValidationError("mismatched-meshes", "Sampled certificate fields must live on a mesh")
            candidates.append(item.support)
    distinct = {id(m): m for m in candidates if m is not None}
    if not distinct:
        raise ValidationError("missing-mesh", "Analytic certificate fields need a mesh")
    if len(distinct) > 1:
        raise ValidationError("mismatched-meshes", "u and z live on different meshes")
    return next(iter(distinct.values()))


def _nodal_test_integral(mesh: Mesh, integrand: np.ndarray) -> np.ndarray:
    """integral integrand * phi_i over the mesh, for every node i."""
    local = np.einsum("cq,qi->ci", mesh.quad_weights * integrand, mesh.quad_barycentric)
    return np.bincount(mesh.cells.ravel(), weights=local.ravel(), minlength=mesh.num_nodes)


def _bumps(mesh: Mesh, count: int, seed: int) -> Iterator[np.ndarray]:
    """Nonnegative bumps (1 - |x - c|^2/rho^2)_+^2 at the quadrature points, one (m, q) array at a time."""
    rng = np.random.default_rng(seed)
    points = mesh.quad_points.reshape(-1, mesh.dimension)
    centers = points[rng.choice(points.shape[0], size=count, replace=points.shape[0] < count)]
    extent = float(np.max(np.linalg.norm(mesh.nodes, axis=1)))
    radii = rng.uniform(0.15, 0.5, size=count) * extent
    for center, radius in zip(centers, radii):
        distances = np.sum((mesh.quad_points - center) ** 2, axis=-1)
        yield np.maximum(1 - distances / radius ** 2, 0.0) ** 2


def verify_certificate(u: Union[ScalarField, RadialFunction], z, spec: ProblemSpec, mesh: Optional[Mesh] = None,
                       tol_pde: float = CERT_TOL_PDE, tol_pairing: float = CERT_TOL_PAIRING,
                       tol_boundary: float = CERT_TOL_BOUNDARY, tol_z: float = CERT_TOL_Z,
                       battery: int = PAIRING_BATTERY_SIZE, levels: Sequence[float] = PAIRING_LEVELS,
                       seed: int = DEFAULT_SEED) -> LimitCertificate:
    """
    Check a candidate limit pair on a mesh.

    Analytic u and z (closed-form radial functions and fields) are checked in
    strong form against the nodal test functions; sampled P1 fields in weak form.

    Args:
        u: Candidate limit, a mesh field or a closed-form radial function
        z: Flux field, a cellwise mesh VectorField or a closed-form field with divergence
        spec: Problem the pair should solve
        mesh: Mesh for analytic fields; must match the fields' mesh otherwise
        tol_pde, tol_pairing, tol_boundary, tol_z: Acceptance tolerances
        battery: Number of bump test functions, at least 20
        levels: Truncation levels as multiples of ||u||_inf
        seed: Seed of the bump battery

    Returns:
        LimitCertificate: Residuals and per-check verdicts
    """
    if battery < 20:
        raise ValidationError("invalid-battery", f"The pairing battery needs at least 20 bumps, got {battery}")
    mesh = _resolve_mesh(u, z, mesh)
    xq = mesh.quad_points
    interior = mesh.interior

    if isinstance(u, ScalarField):
        u_nodes = u.values
        u_quad = mesh.quadrature_values(u_nodes)
        cell_gradients = mesh.gradients(u_nodes)
        grad_quad = np.broadcast_to(cell_gradients[:, None, :], xq.shape)
    else:
        u_nodes = u.value(mesh.nodes)
        u_quad = u.value(xq)
        grad_quad = u.gradient(xq)
    sup = float(max(np.max(np.abs(u_nodes)), np.max(np.abs(u_quad))))

    if isinstance(z, VectorField):
        z_quad = np.broadcast_to(z.components[:, None, :], xq.shape)
    else:
        z_quad = z.value(xq)
    z_inf = float(np.max(np.linalg.norm(z_quad, axis=-1)))

    # -div z = z . F + f
    datum = spec.datum.value(np.linalg.norm(xq, axis=-1))
    drift_term = np.sum(z_quad * spec.drift.field(xq), axis=-1)
    if isinstance(z, VectorField):
        flux_part = np.einsum("cik,ck->ci", mesh.basis_gradients, z.components) * mesh.volumes[:, None]
        weak = np.bincount(mesh.cells.ravel(), weights=flux_part.ravel(), minlength=mesh.num_nodes)
        flux_scale_local = np.abs(flux_part)
        flux_scale = np.bincount(mesh.cells.ravel(), weights=flux_scale_local.ravel(), minlength=mesh.num_nodes)
        residual = weak - _nodal_test_integral(mesh, drift_term + datum)
        scale = flux_scale + _nodal_test_integral(mesh, np.abs(drift_term) + np.abs(datum))
    else:
        divergence = z.divergence(xq)
        residual = _nodal_test_integral(mesh, -divergence - drift_term - datum)
        scale = _nodal_test_integral(mesh, np.abs(divergence) + np.abs(drift_term) + np.abs(datum))
    largest = float(np.max(scale[interior])) if interior.size else 0.0
    residual_pde = float(np.max(np.abs(residual[interior])) / largest) if largest > 0 else 0.0

    # (z, D T_k u) = |D T_k u| tested against nonnegative bumps
    residual_pairing = 0.0
    if sup > 0:
        defects, magnitudes = [], []
        for level in levels:
            k = level * sup
            if isinstance(u, ScalarField):
                truncated = mesh.gradients(truncate(u_nodes, k))
                grad_k = np.broadcast_to(truncated[:, None, :], xq.shape)
            else:
                grad_k = grad_quad * (np.abs(u_quad) < k)[..., None]
            magnitude = np.linalg.norm(grad_k, axis=-1)
            defects.append(mesh.quad_weights * (magnitude - np.sum(z_quad * grad_k, axis=-1)))
            magnitudes.append(mesh.quad_weights * magnitude)
        defects, magnitudes = np.stack(defects), np.stack(magnitudes)
        for bump in _bumps(mesh, battery, seed):
            numerators = np.einsum("cq,lcq->l", bump, defects)
            denominators = np.einsum("cq,lcq->l", bump, magnitudes)
            valid = denominators > 0
            if np.any(valid):
                ratios = np.maximum(numerators[valid], 0.0) / denominators[valid]
                residual_pairing = max(residual_pairing, float(ratios.max()))

    # [z, nu] in Sgn(-u) where the trace is active
    faces = mesh.boundary_faces()
    trace = u_nodes[faces.nodes].mean(axis=1)
    active = np.abs(trace) > BOUNDARY_ACTIVATION * sup
    residual_boundary = 0.0
    if np.any(active):
        normals = mesh.domain.normal(faces.centroids) if mesh.domain is not None else faces.normals
        if isinstance(z, VectorField):
            z_faces = z.components[faces.cells]
        else:
            z_faces = z.value(faces.centroids)
        mismatch = np.abs(np.sum(z_faces * normals, axis=1) + np.sign(trace))
        residual_boundary = float(np.max(mismatch[active]))

    certificate = LimitCertificate(
        z_inf=z_inf,
        residual_pde=residual_pde,
        residual_pairing=residual_pairing,
        residual_boundary=residual_boundary,
        tolerances={"pde": tol_pde, "pairing": tol_pairing, "boundary": tol_boundary, "z": tol_z},
        battery_size=battery,
        levels=tuple(levels),
        seed=seed,
    )
    if certificate.accepted:
        logger.info(f"Certificate accepted: {certificate.as_dict()}")
    else:
        logger.warning(f"Certificate rejected, failed checks {certificate.failed_checks}")
    return certificate

