"""
p-Laplacian solver module for the lab.
Solves the regularized Dirichlet problem with drift on a simplicial mesh by
Picard iteration on P1 elements, with Newton acceleration near convergence, and evaluates the a-priori diagnostics
(energy bound, level-set decay, Hardy-type checks) on the result.
"""
import logging
from dataclasses import dataclass, field, replace
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np
from scipy.sparse import csr_matrix
from scipy.sparse.linalg import LinearOperator, gmres, spilu, spsolve

from config import (
    DIRECT_SOLVER_MAX_DOFS,
    DRIFT_TRUNCATION,
    ILU_DROP_TOL,
    ILU_FILL_FACTOR,
    LINEAR_TOL,
    MAX_PICARD_ITERATIONS,
    MAX_STEP_HALVINGS,
    NEWTON_SWITCH_RESIDUAL,
    PICARD_DAMPING,
    SOLVER_TOL,
)
from utils.errors import NumericalFailure, SolverDiverged, ValidationError
from utils.fields import AnalyticDatum, HardyDrift, ProblemSpec, ScalarField, VectorField
from utils.function_spaces import (
    SUPERCRITICAL,
    Constants,
    drift_weak_norm,
    energy_bound,
    energy_bound_limit,
    lq_norm,
    sharp_constants,
    threshold_classify,
)
from utils.mesh import Mesh

logger = logging.getLogger(__name__)


def truncate(s, k: float):
    """T_k(s): s clipped to [-k, k]."""
    if k <= 0:
        raise ValidationError("invalid-level", f"Truncation level must be positive, got {k}")
    return np.clip(s, -k, k)


def gk_part(s, k: float):
    """G_k(s) = s - T_k(s)."""
    return s - truncate(s, k)


@dataclass(frozen=True)
class SolverSettings:
    """
    Discretization and iteration settings.

    Args:
        epsilon: Relative regularization; the solver uses epsilon * max|grad u|. None means h**2
        truncation: Drift damping and datum truncation level n; None disables both
        tol: Relative nonlinear residual target
        linear_tol: Relative residual of the iterative linear solver
        max_iterations: Picard iteration limit
        damping: Step factor applied on a non-decreasing residual
        max_halvings: Number of damped retries per iteration
        rescale: Apply the homogeneity rescaling to each Picard update
        newton_switch: Residual below which Newton corrections are tried; None or 0 disables them
    """
    epsilon: Optional[float] = None
    truncation: Optional[float] = DRIFT_TRUNCATION
    tol: float = SOLVER_TOL
    linear_tol: float = LINEAR_TOL
    max_iterations: int = MAX_PICARD_ITERATIONS
    damping: float = PICARD_DAMPING
    max_halvings: int = MAX_STEP_HALVINGS
    rescale: bool = True
    newton_switch: Optional[float] = NEWTON_SWITCH_RESIDUAL

    def as_dict(self) -> dict:
        return {
            "epsilon": self.epsilon,
            "truncation": self.truncation,
            "tol": self.tol,
            "linear_tol": self.linear_tol,
            "max_iterations": self.max_iterations,
            "damping": self.damping,
            "max_halvings": self.max_halvings,
            "rescale": self.rescale,
            "newton_switch": self.newton_switch,
        }


@dataclass
class DiscreteProblem:
    """A problem instance on a mesh together with its solver settings."""
    spec: ProblemSpec
    mesh: Mesh
    settings: SolverSettings = field(default_factory=SolverSettings)

    def __post_init__(self):
        spec, mesh = self.spec, self.mesh
        if spec.p is None:
            raise ValidationError("missing-exponent", "A discrete problem needs p")
        if mesh.dimension != spec.dimension:
            raise ValidationError("mismatched-mesh", f"Mesh is {mesh.dimension}-dimensional, problem is {spec.dimension}")
        constants = sharp_constants(spec.dimension)
        margin = 1 - constants.gamma_p(spec.p) * self.drift_norm
        if margin <= 0:
            raise ValidationError(
                "p-out-of-range",
                f"p = {spec.p} violates gamma_p ||F|| < 1 (margin {margin:.3g})",
            )
        if self.epsilon <= 0:
            raise ValidationError("invalid-epsilon", f"Regularization must be positive, got {self.epsilon}")
        if self.settings.truncation is not None and self.settings.truncation < 1:
            raise ValidationError("invalid-truncation", f"Truncation level must be >= 1, got {self.settings.truncation}")
        if isinstance(spec.drift, HardyDrift) and spec.drift.lam != 0 and not mesh.contains_origin_in_interior():
            raise ValidationError("origin-not-interior", "A Hardy drift needs the origin inside the mesh")

    @property
    def p(self) -> float:
        return self.spec.p

    @property
    def epsilon(self) -> float:
        return self.settings.epsilon if self.settings.epsilon is not None else self.mesh.h ** 2

    @property
    def drift_norm(self) -> float:
        return drift_weak_norm(self.spec.drift, self.spec.dimension, self.mesh.measure)

    def with_p(self, p: float) -> "DiscreteProblem":
        return DiscreteProblem(self.spec.with_p(p), self.mesh, self.settings)

    def scaled(self, c: float) -> "DiscreteProblem":
        return DiscreteProblem(self.spec.scaled(c), self.mesh, self.settings)

    def with_settings(self, **changes) -> "DiscreteProblem":
        return DiscreteProblem(self.spec, self.mesh, replace(self.settings, **changes))


@dataclass
class SolveReport:
    """Per-p record of a solve and its norms."""
    p: float
    iterations: int
    residual: float
    converged: bool
    energy: float
    l1_norm: float
    l1star_norm: float
    linf_norm: float
    w11_norm: float
    field: ScalarField
    problem: ProblemSpec
    measure: float
    backend: str = "mesh"
    status: str = "converged"
    epsilon: float = 0.0
    residual_history: List[float] = field(default_factory=list)
    z: Optional[VectorField] = None

    @property
    def young_bound(self) -> float:
        """(1/p) integral |grad u|^p + ((p - 1)/p) |Omega|, an upper bound for the W^{1,1} norm."""
        return self.energy / self.p + (self.p - 1) / self.p * self.measure

    @property
    def z_inf(self) -> Optional[float]:
        return None if self.z is None else self.z.norms.get("inf")

    def summary(self) -> dict:
        return {
            "p": self.p,
            "backend": self.backend,
            "status": self.status,
            "converged": self.converged,
            "iterations": self.iterations,
            "residual": self.residual,
            "energy": self.energy,
            "l1_norm": self.l1_norm,
            "l1star_norm": self.l1star_norm,
            "linf_norm": self.linf_norm,
            "w11_norm": self.w11_norm,
            "young_bound": self.young_bound,
            "epsilon": self.epsilon,
            "z_inf": self.z_inf,
        }


def field_norms(u: ScalarField, gradient_magnitudes: np.ndarray, gradient_weights: np.ndarray, p: float) -> Dict[str, float]:
    """Energy, Lebesgue norms and total variation of a solution field."""
    n = u.dimension
    return {
        "energy": float(np.sum(gradient_weights * gradient_magnitudes ** p)),
        "w11_norm": float(np.sum(gradient_weights * gradient_magnitudes)),
        "l1_norm": lq_norm(u, 1),
        "l1star_norm": lq_norm(u, n / (n - 1)),
        "linf_norm": lq_norm(u, np.inf),
    }


def flux_vectors(gradients: np.ndarray, p: float, epsilon: float = 0.0) -> np.ndarray:
    """z = (|g|^2 + eps^2)^((p-2)/2) g, zero where g vanishes."""
    magnitudes = np.linalg.norm(gradients, axis=-1)
    with np.errstate(divide="ignore", invalid="ignore"):
        coefficient = np.where(magnitudes > 0, (magnitudes ** 2 + epsilon ** 2) ** ((p - 2) / 2), 0.0)
    return coefficient[..., None] * gradients


def vector_norms(vectors: np.ndarray, weights: np.ndarray) -> Dict[str, float]:
    magnitudes = np.linalg.norm(vectors, axis=-1) if vectors.ndim > 1 else np.abs(vectors)
    norms = {str(q): float(np.sum(weights * magnitudes ** q) ** (1 / q)) for q in (2, 4, 8)}
    norms["inf"] = float(magnitudes.max()) if magnitudes.size else 0.0
    return norms


class _Linearization:
    """
    Lagged operator of one Picard or Newton step, restricted to the interior unknowns.

    The CSR pattern of the interior block is fixed by the mesh and computed once;
    each assembly only scatters new element values into it.
    """

    def __init__(self, dp: DiscreteProblem):
        self.dp = dp
        mesh = dp.mesh
        spec = dp.spec
        self.mesh = mesh
        self.p = spec.p
        self.interior = mesh.interior
        size = self.interior.size
        n = mesh.dimension + 1
        self.stiffness = np.einsum("cik,cjk->cij", mesh.basis_gradients, mesh.basis_gradients) * mesh.volumes[:, None, None]

        numbering = np.full(mesh.num_nodes, -1, dtype=np.int64)
        numbering[self.interior] = np.arange(size)
        local_numbers = numbering[mesh.cells]
        rows = np.broadcast_to(local_numbers[:, :, None], (mesh.num_cells, n, n)).ravel()
        cols = np.broadcast_to(local_numbers[:, None, :], (mesh.num_cells, n, n)).ravel()
        self.kept = np.flatnonzero((rows >= 0) & (cols >= 0))
        keys = rows[self.kept] * size + cols[self.kept]
        unique, slots = np.unique(keys, return_inverse=True)
        self.slots = slots.ravel()
        self.indices = unique % size
        self.indptr = np.concatenate(([0], np.cumsum(np.bincount(unique // size, minlength=size))))

        radii = np.linalg.norm(mesh.quad_points, axis=-1)
        datum = spec.datum.value(radii)
        truncation = dp.settings.truncation
        if truncation is not None:
            datum = truncate(datum, truncation)
        local_load = np.einsum("cq,qi->ci", mesh.quad_weights * datum, mesh.quad_barycentric)
        self.load = np.bincount(mesh.cells.ravel(), weights=local_load.ravel(), minlength=mesh.num_nodes)[self.interior]
        self.load_norm = float(np.linalg.norm(self.load))

        self.drift = spec.drift.field(mesh.quad_points)
        self.drift_magnitude = spec.drift.magnitude(mesh.quad_points)
        self.has_drift = bool(np.any(self.drift_magnitude))
        logger.debug(f"Linearization on {size} unknowns with {self.indices.size} nonzeros")

    def _state(self, u: np.ndarray):
        """Cell gradients, lagged coefficient, absolute epsilon and projected drift for iterate u."""
        gradients = self.mesh.gradients(u)
        magnitudes = np.linalg.norm(gradients, axis=1)
        largest = float(magnitudes.max()) if magnitudes.size else 0.0
        if largest == 0:
            coefficient = np.ones(self.mesh.num_cells)
            damping = np.ones_like(self.drift_magnitude)
            epsilon = 0.0
        else:
            epsilon = self.dp.epsilon * largest
            coefficient = (magnitudes ** 2 + epsilon ** 2) ** ((self.p - 2) / 2)
            damping = np.ones_like(self.drift_magnitude)
            truncation = self.dp.settings.truncation
            if truncation is not None and self.has_drift:
                damping = 1 / (1 + magnitudes[:, None] ** (self.p - 1) * self.drift_magnitude / truncation)
        projected = None
        if self.has_drift:
            weighted = (self.mesh.quad_weights * damping)[..., None] * self.drift
            projected = np.einsum("qi,cqk->cik", self.mesh.quad_barycentric, weighted)
        return gradients, magnitudes, coefficient, epsilon, projected

    def local_matrices(self, u: np.ndarray, newton: bool = False) -> np.ndarray:
        """
        Element matrices of the lagged operator, or of its Jacobian when newton is set.

        The Jacobian differentiates the diffusion and drift coefficients in the
        gradient; epsilon and the drift damping stay frozen at the iterate.
        """
        gradients, magnitudes, coefficient, epsilon, projected = self._state(u)
        basis = self.mesh.basis_gradients
        local = coefficient[:, None, None] * self.stiffness
        if projected is not None:
            local = local - coefficient[:, None, None] * np.einsum("cik,cjk->cij", projected, basis)
        if newton:
            squared = magnitudes ** 2 + epsilon ** 2
            with np.errstate(divide="ignore", invalid="ignore"):
                kappa = np.where(squared > 0, (self.p - 2) / squared, 0.0)
            along = np.einsum("ck,cjk->cj", gradients, basis)
            rows = self.mesh.volumes[:, None] * along
            if projected is not None:
                rows = rows - np.einsum("ck,cik->ci", gradients, projected)
            local = local + (coefficient * kappa)[:, None, None] * rows[:, :, None] * along[:, None, :]
        return local

    def matrix(self, u: np.ndarray, newton: bool = False) -> csr_matrix:
        values = self.local_matrices(u, newton).ravel()[self.kept]
        data = np.bincount(self.slots, weights=values, minlength=self.indices.size)
        size = self.interior.size
        return csr_matrix((data, self.indices, self.indptr), shape=(size, size))

    def residual(self, u: np.ndarray) -> Tuple[float, np.ndarray]:
        """Return (relative interior residual, A(u) u on the interior), without assembling a matrix."""
        gradients, _, coefficient, _, projected = self._state(u)
        values = (coefficient * self.mesh.volumes)[:, None] * np.einsum("ck,cik->ci", gradients, self.mesh.basis_gradients)
        if projected is not None:
            values = values - coefficient[:, None] * np.einsum("ck,cik->ci", gradients, projected)
        action = np.bincount(self.mesh.cells.ravel(), weights=values.ravel(), minlength=self.mesh.num_nodes)[self.interior]
        return float(np.linalg.norm(action - self.load) / self.load_norm), action


class _LinearSolver:
    """Direct solves up to DIRECT_SOLVER_MAX_DOFS unknowns, ILU-preconditioned GMRES above."""

    max_reuses = 8

    def __init__(self):
        self.preconditioner: Optional[LinearOperator] = None
        self.kind: Optional[str] = None
        self.uses = 0
        self.factorizations = 0

    def _factor(self, matrix: csr_matrix, kind: str):
        try:
            ilu = spilu(matrix.tocsc(), drop_tol=ILU_DROP_TOL, fill_factor=ILU_FILL_FACTOR)
        except RuntimeError as e:
            raise NumericalFailure("singular-linearization", f"Incomplete factorization failed: {e}")
        self.preconditioner = LinearOperator(matrix.shape, ilu.solve)
        self.kind = kind
        self.uses = 0
        self.factorizations += 1

    def _gmres(self, matrix: csr_matrix, rhs: np.ndarray, rtol: float):
        return gmres(matrix, rhs, M=self.preconditioner, rtol=rtol, atol=0.0, restart=60, maxiter=20)

    def solve(self, matrix: csr_matrix, rhs: np.ndarray, rtol: float, kind: str) -> np.ndarray:
        """
        Solve matrix x = rhs.

        Args:
            matrix: Interior system
            rhs: Right-hand side
            rtol: Relative residual target of GMRES
            kind: "picard" or "newton"; the ILU factor is only reused for the same kind
        """
        size = rhs.size
        if size <= DIRECT_SOLVER_MAX_DOFS:
            solution = spsolve(matrix.tocsc(), rhs)
        else:
            stale = self.preconditioner is None or self.kind != kind or self.uses >= self.max_reuses
            if stale:
                self._factor(matrix, kind)
            solution, info = self._gmres(matrix, rhs, rtol)
            if info != 0 and not stale:
                self._factor(matrix, kind)
                solution, info = self._gmres(matrix, rhs, rtol)
            if info != 0:
                logger.warning(f"GMRES stopped with info={info} on {size} unknowns")
            self.uses += 1
        if not np.all(np.isfinite(solution)):
            raise NumericalFailure("singular-linearization", "Linearized system could not be solved")
        return solution


def _rescaled(candidate: np.ndarray, action: np.ndarray, load: np.ndarray, p: float) -> Optional[np.ndarray]:
    """Best multiple s*candidate using A(s v) s v = s^(p-1) A(v) v."""
    denominator = float(action @ action)
    if denominator == 0:
        return None
    ratio = float(action @ load) / denominator
    if ratio <= 0:
        return None
    with np.errstate(over="ignore"):
        factor = ratio ** (1 / (p - 1))
    if not np.isfinite(factor):
        return None
    return factor * candidate


def _damped(linearization: _Linearization, u: np.ndarray, direction: np.ndarray, residual: float,
            settings: SolverSettings):
    """First of u + theta*direction, theta = damping^k, that lowers the residual."""
    theta = settings.damping
    for _ in range(settings.max_halvings):
        trial = u + theta * direction
        trial_residual, trial_action = linearization.residual(trial)
        if trial_residual < residual:
            return trial, trial_residual, trial_action
        theta *= settings.damping
    return None


def _picard_update(linearization: _Linearization, solver: _LinearSolver, u: np.ndarray, residual: float,
                   settings: SolverSettings):
    interior = linearization.interior
    load = linearization.load
    rtol = float(np.clip(0.01 * residual, settings.linear_tol, 1e-4))
    step = np.zeros_like(u)
    step[interior] = solver.solve(linearization.matrix(u), load, rtol, "picard")

    candidates = [step]
    if settings.rescale:
        _, step_action = linearization.residual(step)
        rescaled = _rescaled(step, step_action, load, linearization.p)
        if rescaled is not None:
            candidates.insert(0, rescaled)
    trials = [(candidate, *linearization.residual(candidate)) for candidate in candidates]
    best = min(trials, key=lambda trial: trial[1])
    if best[1] >= residual:
        damped = _damped(linearization, u, best[0] - u, residual, settings)
        if damped is None:
            logger.warning(f"p={linearization.p}: residual did not decrease after {settings.max_halvings} halvings")
        else:
            best = damped
    return best


def _newton_update(linearization: _Linearization, solver: _LinearSolver, u: np.ndarray, action: np.ndarray,
                   residual: float, settings: SolverSettings):
    """Damped Newton correction, or None when no trial lowers the residual."""
    rtol = float(np.clip(residual, settings.linear_tol, 1e-2))
    correction = np.zeros_like(u)
    correction[linearization.interior] = solver.solve(
        linearization.matrix(u, newton=True), linearization.load - action, rtol, "newton")
    full = u + correction
    full_residual, full_action = linearization.residual(full)
    if full_residual < residual:
        return full, full_residual, full_action
    return _damped(linearization, u, correction, residual, settings)


def _report(dp: DiscreteProblem, u: np.ndarray, iterations: int, history: List[float], status: str) -> SolveReport:
    mesh = dp.mesh
    u_field = mesh.field(u)
    gradients = mesh.gradients(u)
    norms = field_norms(u_field, np.linalg.norm(gradients, axis=1), mesh.volumes, dp.p)
    largest = float(np.linalg.norm(gradients, axis=1).max()) if mesh.num_cells else 0.0
    z_vectors = flux_vectors(gradients, dp.p, dp.epsilon * largest)
    z = VectorField(mesh.centroids, z_vectors, mesh.volumes, mesh.dimension, support=mesh,
                    norms=vector_norms(z_vectors, mesh.volumes))
    return SolveReport(
        p=dp.p,
        iterations=iterations,
        residual=history[-1],
        converged=status == "converged",
        field=u_field,
        problem=dp.spec,
        measure=mesh.measure,
        backend="mesh",
        status=status,
        epsilon=dp.epsilon,
        residual_history=list(history),
        z=z,
        **norms,
    )


def solve_fixed_p(dp: DiscreteProblem, warm_start: Optional[np.ndarray] = None) -> SolveReport:
    """
    Solve the discrete problem at fixed p by damped Picard iteration.

    Once the residual drops below settings.newton_switch the iteration tries a
    damped Newton correction first and falls back to the Picard update when
    that correction does not lower the residual.

    Args:
        dp: Discrete problem
        warm_start: Optional nodal values to start from; boundary values are reset to zero

    Returns:
        SolveReport: Converged solution with its norms

    Raises:
        SolverDiverged: When the residual target is not met within max_iterations
    """
    settings = dp.settings
    linearization = _Linearization(dp)
    solver = _LinearSolver()
    mesh = dp.mesh
    interior = linearization.interior

    if linearization.load_norm == 0:
        logger.info(f"Zero datum at p={dp.p}: solution is identically zero")
        return _report(dp, np.zeros(mesh.num_nodes), 0, [0.0], "converged")

    u = np.zeros(mesh.num_nodes)
    if warm_start is not None:
        u[interior] = np.asarray(warm_start, dtype=float)[interior]

    residual, action = linearization.residual(u)
    history = [residual]
    iterations = 0
    newton_steps = 0
    while residual > settings.tol and iterations < settings.max_iterations:
        iterations += 1
        update = None
        if settings.newton_switch and residual < settings.newton_switch:
            update = _newton_update(linearization, solver, u, action, residual, settings)
            newton_steps += update is not None
        if update is None:
            update = _picard_update(linearization, solver, u, residual, settings)
        u, residual, action = update
        history.append(residual)
        logger.debug(f"p={dp.p} iteration {iterations}: residual {residual:.3e}")

    if residual > settings.tol:
        report = _report(dp, u, iterations, history, "diverged")
        logger.error(f"p={dp.p}: no convergence after {iterations} iterations (residual {residual:.3e})")
        raise SolverDiverged(f"Residual {residual:.3e} above {settings.tol:.1e} at p = {dp.p}", report)

    report = _report(dp, u, iterations, history, "converged")
    logger.info(f"Solved p={dp.p} in {iterations} iterations ({newton_steps} Newton, "
                f"{solver.factorizations} ILU factorizations): residual {residual:.3e}, "
                f"||u||_inf = {report.linf_norm:.6g}, energy = {report.energy:.6g}")
    return report


@dataclass
class EnergyCheck:
    lhs: float
    rhs: float
    ok: bool
    limit_factor: Optional[float] = None


def _datum_for_norms(problem: ProblemSpec, report: SolveReport):
    datum = problem.datum
    if isinstance(datum, AnalyticDatum) and problem.domain.kind == "ball" and np.isclose(datum.radius, problem.radius):
        return datum
    mesh = report.field.support
    if isinstance(mesh, Mesh):
        return mesh.quadrature_field(datum.value(np.linalg.norm(mesh.quad_points, axis=-1)))
    grid_radii = np.asarray(report.field.points)
    return ScalarField(grid_radii, datum.value(grid_radii), report.field.weights, problem.dimension, radial=True)


def energy_and_bound(report: SolveReport, constants: Optional[Constants] = None, tol: float = 1e-8) -> EnergyCheck:
    """
    Compare the p-energy with the a-priori bound.

    Args:
        report: Solve report
        constants: Sharp constants; derived from the dimension when omitted
        tol: Relative slack on the comparison

    Returns:
        EnergyCheck: (lhs, rhs, ok)

    Raises:
        ValidationError: bound-not-applicable in the supercritical regime
    """
    problem = report.problem
    dimension = problem.dimension
    constants = constants or sharp_constants(dimension)
    datum = _datum_for_norms(problem, report)
    lam = problem.lam or 0.0
    thresholds = threshold_classify(lam, datum, dimension, drift=problem.drift)
    if thresholds.governing == SUPERCRITICAL:
        raise ValidationError("bound-not-applicable", f"Supercritical data at p = {report.p}: {thresholds.thetas}")
    drift_norm = drift_weak_norm(problem.drift, dimension, report.measure)
    rhs = energy_bound(datum, report.p, dimension, drift_norm, report.measure)
    ok = report.energy <= rhs * (1 + tol)
    if not ok:
        logger.warning(f"Energy {report.energy:.6g} exceeds bound {rhs:.6g} at p = {report.p}")
    return EnergyCheck(report.energy, rhs, ok, energy_bound_limit(drift_norm, dimension))


@dataclass
class LevelSetReport:
    """Level-set diagnostics for the L-infinity bound."""
    estimate: float
    table: List[Tuple[float, float]]
    k0: float
    zero_level: Optional[float]
    decay_ok: bool
    violations: List[Tuple[float, float]]
    chebyshev_ok: bool
    stampacchia_bound: float
    datum_norm: float

    def as_dict(self) -> dict:
        return {
            "estimate": self.estimate,
            "k0": self.k0,
            "zero_level": self.zero_level,
            "decay_ok": self.decay_ok,
            "violations": [list(pair) for pair in self.violations],
            "chebyshev_ok": self.chebyshev_ok,
            "stampacchia_bound": self.stampacchia_bound,
            "datum_norm": self.datum_norm,
            "table": [list(row) for row in self.table],
        }


def linf_via_levels(report: SolveReport, f, q: float, tol: float = 1e-8) -> LevelSetReport:
    """
    Level-set decay table and sup-norm estimate.

    Args:
        report: Solve report holding u_p
        f: Datum (analytic or sampled) whose L^q norm is recorded
        q: Integrability exponent, must exceed N
        tol: Relative slack in the decay comparisons

    Returns:
        LevelSetReport: (k, |A_k|) table on k_j = k0 2^j with k0 the mean of |u|
    """
    u = report.field
    dimension = u.dimension
    if q <= dimension:
        raise ValidationError("estimate-not-guaranteed", f"The level-set estimate needs q > N, got q = {q}")
    datum_norm = lq_norm(f, q, dimension) if isinstance(f, AnalyticDatum) else lq_norm(f, q)
    if not np.isfinite(datum_norm):
        logger.warning(f"Datum is not in L^{q}; the level-set bound is diagnostic only")

    magnitudes = np.abs(u.values)
    estimate = float(magnitudes.max()) if magnitudes.size else 0.0
    if estimate == 0:
        return LevelSetReport(0.0, [], 0.0, None, True, [], True, 0.0, datum_norm)

    constants = sharp_constants(dimension)
    k0 = float(np.sum(u.weights * magnitudes) / u.measure)
    table = []
    k = k0
    while True:
        measure = float(u.weights[magnitudes >= k].sum())
        table.append((k, measure))
        if measure == 0:
            break
        k *= 2

    violations = []
    for i, (k, a_k) in enumerate(table):
        for l, a_l in table[i + 1:]:
            if a_l > constants.sobolev / (l - k) * a_k ** (1 + 1 / dimension) * (1 + tol):
                violations.append((k, l))
    star = dimension / (dimension - 1)
    l1star = lq_norm(u, star)
    chebyshev_ok = all(a_k <= (l1star / k) ** star * (1 + tol) for k, a_k in table)
    stampacchia = k0 + 2 ** (dimension + 1) * constants.sobolev * table[0][1] ** (1 / dimension)
    if violations:
        logger.warning(f"Level-set decay violated at {len(violations)} level pairs")
    return LevelSetReport(
        estimate=estimate,
        table=table,
        k0=k0,
        zero_level=table[-1][0],
        decay_ok=not violations,
        violations=violations,
        chebyshev_ok=chebyshev_ok,
        stampacchia_bound=float(stampacchia),
        datum_norm=datum_norm,
    )


def epsilon_sensitivity(dp: DiscreteProblem, factors: Sequence[float] = (0.5, 2.0),
                        base: Optional[SolveReport] = None) -> Dict[str, float]:
    """Relative L^2 change of the solution when epsilon is multiplied by each factor."""
    base = base or solve_fixed_p(dp)
    weights = dp.mesh.lumped_weights
    reference = float(np.sqrt(np.sum(weights * base.field.values ** 2)))
    changes = {}
    for factor in factors:
        perturbed = solve_fixed_p(dp.with_settings(epsilon=dp.epsilon * factor), warm_start=base.field.values)
        difference = float(np.sqrt(np.sum(weights * (perturbed.field.values - base.field.values) ** 2)))
        changes[f"{factor:g}"] = difference / reference if reference > 0 else 0.0
    logger.info(f"epsilon sensitivity at p={dp.p}: {changes}")
    return changes
