"""
Mesh module for the lab.
Simplicial meshes of disks, balls, squares and cubes with the P1 geometry the solver needs.
"""
import logging
import math
from dataclasses import dataclass, field
from typing import Optional, Tuple

import numpy as np
from scipy.spatial import Delaunay

from config import GRADED_REFINEMENT_FACTOR, GRADED_REFINEMENT_RADIUS
from utils.errors import ValidationError
from utils.fields import Domain, ScalarField

logger = logging.getLogger(__name__)

MESH_FORMAT_HEADER = "PLAPMESH 1"

# Interior quadrature rules on the reference simplex: barycentric points, weights summing to 1
_A3 = 0.5854101966249685
_B3 = 0.1381966011250105
QUADRATURE_RULES = {
    2: (
        np.array([[2 / 3, 1 / 6, 1 / 6], [1 / 6, 2 / 3, 1 / 6], [1 / 6, 1 / 6, 2 / 3]]),
        np.full(3, 1 / 3),
    ),
    3: (
        np.array([
            [_A3, _B3, _B3, _B3],
            [_B3, _A3, _B3, _B3],
            [_B3, _B3, _A3, _B3],
            [_B3, _B3, _B3, _A3],
        ]),
        np.full(4, 1 / 4),
    ),
}


@dataclass
class BoundaryFaces:
    """Boundary facets with their owning cell, outward normal, measure and centroid."""
    nodes: np.ndarray
    cells: np.ndarray
    normals: np.ndarray
    measures: np.ndarray
    centroids: np.ndarray


@dataclass(eq=False)
class Mesh:
    """
    Conforming simplicial mesh with cached P1 geometry.

    Args:
        nodes: Node coordinates, shape (n, N)
        cells: Simplex node indices, shape (m, N + 1)
        boundary: Boundary marker per node
        domain: Domain the mesh discretizes, if known
        h: Nominal mesh size; the largest cell diameter when not positive
    """
    nodes: np.ndarray
    cells: np.ndarray
    boundary: np.ndarray
    domain: Optional[Domain] = None
    h: float = 0.0
    volumes: np.ndarray = field(init=False, repr=False)
    basis_gradients: np.ndarray = field(init=False, repr=False)

    def __post_init__(self):
        self.nodes = np.asarray(self.nodes, dtype=float)
        self.cells = np.asarray(self.cells, dtype=np.int64)
        self.boundary = np.asarray(self.boundary, dtype=bool)
        dimension = self.dimension
        if dimension not in QUADRATURE_RULES:
            raise ValidationError("invalid-dimension", f"Meshes are supported in 2 and 3 dimensions, got {dimension}")
        if self.cells.shape[1] != dimension + 1:
            raise ValidationError("invalid-mesh", "Cells must be simplices of the node dimension")

        corners = self.nodes[self.cells]
        edges = corners[:, 1:, :] - corners[:, :1, :]
        determinants = np.linalg.det(edges)
        if np.any(np.abs(determinants) <= 0):
            raise ValidationError("degenerate-cell", "Mesh contains cells of zero volume")
        self.volumes = np.abs(determinants) / math.factorial(dimension)
        if not self.h > 0:
            self.h = float(np.max(np.linalg.norm(corners[:, :, None, :] - corners[:, None, :, :], axis=-1)))
            logger.info(f"Mesh size taken from the largest cell diameter: h = {self.h:.6g}")
        # grad phi_i for i >= 1 is row i-1 of edges^{-T}; grad phi_0 = -sum of the others
        inverse_transpose = np.linalg.inv(edges).transpose(0, 2, 1)
        reference = np.vstack((-np.ones((1, dimension)), np.eye(dimension)))
        self.basis_gradients = np.einsum("ij,cjk->cik", reference, inverse_transpose)

        bary, weights = QUADRATURE_RULES[dimension]
        self.quad_barycentric = bary
        self.quad_points = np.einsum("qi,cik->cqk", bary, corners)
        self.quad_weights = self.volumes[:, None] * weights[None, :]

        lumped = np.zeros(self.num_nodes)
        np.add.at(lumped, self.cells.ravel(), np.repeat(self.volumes / (dimension + 1), dimension + 1))
        self.lumped_weights = lumped
        self._faces: Optional[BoundaryFaces] = None
        logger.debug(f"Mesh with {self.num_nodes} nodes and {self.num_cells} cells, measure {self.measure:.6g}")

    @property
    def dimension(self) -> int:
        return self.nodes.shape[1]

    @property
    def num_nodes(self) -> int:
        return self.nodes.shape[0]

    @property
    def num_cells(self) -> int:
        return self.cells.shape[0]

    @property
    def measure(self) -> float:
        return float(self.volumes.sum())

    @property
    def interior(self) -> np.ndarray:
        return np.flatnonzero(~self.boundary)

    @property
    def centroids(self) -> np.ndarray:
        return self.nodes[self.cells].mean(axis=1)

    def gradients(self, u: np.ndarray) -> np.ndarray:
        """Cellwise gradient of the P1 interpolant of nodal values u, shape (m, N)."""
        return np.einsum("cik,ci->ck", self.basis_gradients, np.asarray(u)[self.cells])

    def quadrature_values(self, u: np.ndarray) -> np.ndarray:
        """P1 interpolant of u at the quadrature points, shape (m, q)."""
        return np.asarray(u)[self.cells] @ self.quad_barycentric.T

    def nodal_gradients(self, u: np.ndarray) -> np.ndarray:
        """Volume-weighted average of cell gradients around each node."""
        cell_gradients = self.gradients(u) * self.volumes[:, None]
        totals = np.zeros((self.num_nodes, self.dimension))
        weights = np.zeros(self.num_nodes)
        for corner in range(self.dimension + 1):
            np.add.at(totals, self.cells[:, corner], cell_gradients)
            np.add.at(weights, self.cells[:, corner], self.volumes)
        return totals / weights[:, None]

    def field(self, values: np.ndarray) -> ScalarField:
        """Nodal field with lumped quadrature weights."""
        return ScalarField(self.nodes, values, self.lumped_weights, self.dimension, support=self)

    def quadrature_field(self, values: np.ndarray) -> ScalarField:
        """Field sampled at the interior quadrature points."""
        return ScalarField(
            self.quad_points.reshape(-1, self.dimension),
            np.asarray(values).ravel(),
            self.quad_weights.ravel(),
            self.dimension,
        )

    def locate(self, point) -> np.ndarray:
        """Indices of the cells whose closure contains the point."""
        point = np.asarray(point, dtype=float)
        corners = self.nodes[self.cells]
        edges = corners[:, 1:, :] - corners[:, :1, :]
        local = np.linalg.solve(edges.transpose(0, 2, 1), (point - corners[:, 0, :])[..., None])[..., 0]
        bary = np.column_stack((1 - local.sum(axis=1), local))
        return np.flatnonzero(np.all(bary >= -1e-12, axis=1))

    def contains_origin_in_interior(self) -> bool:
        if self.locate(np.zeros(self.dimension)).size == 0:
            return False
        return bool(np.min(np.linalg.norm(self.nodes[self.boundary], axis=1)) > 0)

    def boundary_faces(self) -> BoundaryFaces:
        """Facets owned by exactly one cell, with outward normals."""
        if self._faces is not None:
            return self._faces
        dimension = self.dimension
        local = [np.delete(np.arange(dimension + 1), i) for i in range(dimension + 1)]
        faces = np.concatenate([self.cells[:, idx] for idx in local])
        owners = np.tile(np.arange(self.num_cells), dimension + 1)
        opposite = np.concatenate([self.cells[:, i] for i in range(dimension + 1)])
        keys = np.sort(faces, axis=1)
        _, index, counts = np.unique(keys, axis=0, return_index=True, return_counts=True)
        single = index[counts == 1]
        single = single[np.all(self.boundary[faces[single]], axis=1)]

        face_nodes = faces[single]
        corners = self.nodes[face_nodes]
        if dimension == 2:
            tangent = corners[:, 1] - corners[:, 0]
            normals = np.column_stack((tangent[:, 1], -tangent[:, 0]))
        else:
            normals = np.cross(corners[:, 1] - corners[:, 0], corners[:, 2] - corners[:, 0])
        lengths = np.linalg.norm(normals, axis=1)
        measures = lengths / (1 if dimension == 2 else 2)
        normals = normals / lengths[:, None]
        centroids = corners.mean(axis=1)
        outward = np.sum(normals * (centroids - self.nodes[opposite[single]]), axis=1)
        normals[outward < 0] *= -1
        self._faces = BoundaryFaces(face_nodes, owners[single], normals, measures, centroids)
        return self._faces


def _graded_size(r: float, h: float, radius: float, graded: bool) -> float:
    if not graded:
        return h
    inner = GRADED_REFINEMENT_RADIUS * radius
    fine = h / GRADED_REFINEMENT_FACTOR
    return fine + (h - fine) * min(max((r - inner) / inner, 0.0), 1.0)


def _shell_radii(h: float, radius: float, graded: bool) -> np.ndarray:
    radii = [0.0]
    while radii[-1] < radius:
        radii.append(radii[-1] + _graded_size(radii[-1], h, radius, graded))
    radii = np.asarray(radii)
    # stretch so the outermost shell sits exactly on the sphere
    return radii * (radius / radii[-1])


def _sphere_points(count: int, offset: float) -> np.ndarray:
    golden = np.pi * (3 - np.sqrt(5))
    index = np.arange(count) + 0.5
    z = 1 - 2 * index / count
    rho = np.sqrt(1 - z * z)
    phi = golden * index + offset
    return np.column_stack((rho * np.cos(phi), rho * np.sin(phi), z))


def ball_mesh(dimension: int, h: float, radius: float = 1.0, graded: bool = True) -> Mesh:
    """
    Unstructured mesh of the disk (N = 2) or ball (N = 3) by shells and Delaunay.

    Args:
        dimension: 2 or 3
        h: Target mesh size away from the origin
        radius: Ball radius
        graded: Refine by GRADED_REFINEMENT_FACTOR within GRADED_REFINEMENT_RADIUS * R

    Returns:
        Mesh: Mesh with the origin as a node
    """
    if h <= 0 or h > radius:
        raise ValidationError("invalid-mesh-size", f"Mesh size must lie in (0, R], got {h}")
    radii = _shell_radii(h, radius, graded)
    points = [np.zeros((1, dimension))]
    for k, r in enumerate(radii[1:], start=1):
        size = _graded_size(r, h, radius, graded)
        if dimension == 2:
            count = max(6, int(np.ceil(2 * np.pi * r / size)))
            angles = 2 * np.pi * (np.arange(count) + 0.5 * (k % 2)) / count
            points.append(r * np.column_stack((np.cos(angles), np.sin(angles))))
        elif dimension == 3:
            count = max(12, int(np.ceil(4 * np.pi * r * r / (0.5 * np.sqrt(3) * size * size))))
            points.append(r * _sphere_points(count, offset=0.7 * k))
        else:
            raise ValidationError("invalid-dimension", f"Ball meshes are supported for N = 2, 3, got {dimension}")
    nodes = np.vstack(points)
    cells = Delaunay(nodes).simplices

    corners = nodes[cells]
    volumes = np.abs(np.linalg.det(corners[:, 1:, :] - corners[:, :1, :])) / math.factorial(dimension)
    keep = volumes > 1e-12 * (h / GRADED_REFINEMENT_FACTOR) ** dimension
    if not np.all(keep):
        logger.warning(f"Dropping {np.count_nonzero(~keep)} slivers from the Delaunay triangulation")
    boundary = np.isclose(np.linalg.norm(nodes, axis=1), radius)
    mesh = Mesh(nodes, cells[keep], boundary, Domain("ball", radius), h)
    logger.info(f"Ball mesh N={dimension} h={h} graded={graded}: {mesh.num_nodes} nodes, {mesh.num_cells} cells")
    return mesh


_KUHN_3D = [
    (0, 1, 3, 7), (0, 1, 5, 7), (0, 2, 3, 7),
    (0, 2, 6, 7), (0, 4, 5, 7), (0, 4, 6, 7),
]


def square_mesh(dimension: int, divisions: int, half_width: float = 1.0) -> Mesh:
    """
    Structured mesh of [-R, R]^N: two triangles per square, six tetrahedra per cube.

    Args:
        dimension: 2 or 3
        divisions: Intervals per axis, even so that the origin is a node
        half_width: R

    Returns:
        Mesh: Kuhn triangulation of the square or cube
    """
    if divisions < 2 or divisions % 2:
        raise ValidationError("invalid-divisions", f"Divisions must be even and >= 2, got {divisions}")
    axis = np.linspace(-half_width, half_width, divisions + 1)
    grids = np.meshgrid(*([axis] * dimension), indexing="ij")
    nodes = np.column_stack([g.ravel() for g in grids])
    shape = (divisions + 1,) * dimension
    base = np.stack(np.meshgrid(*([np.arange(divisions)] * dimension), indexing="ij"), axis=-1).reshape(-1, dimension)

    def index(offset):
        return np.ravel_multi_index(tuple((base + offset).T), shape)

    if dimension == 2:
        v00, v10, v01, v11 = index((0, 0)), index((1, 0)), index((0, 1)), index((1, 1))
        cells = np.vstack((np.column_stack((v00, v10, v11)), np.column_stack((v00, v01, v11))))
    elif dimension == 3:
        corners = [index(((c >> 2) & 1, (c >> 1) & 1, c & 1)) for c in range(8)]
        cells = np.vstack([np.column_stack([corners[i] for i in tet]) for tet in _KUHN_3D])
    else:
        raise ValidationError("invalid-dimension", f"Square meshes are supported for N = 2, 3, got {dimension}")
    boundary = np.any(np.isclose(np.abs(nodes), half_width), axis=1)
    mesh = Mesh(nodes, cells, boundary, Domain("square", half_width), 2 * half_width / divisions)
    logger.info(f"Square mesh N={dimension} divisions={divisions}: {mesh.num_nodes} nodes, {mesh.num_cells} cells")
    return mesh


def build_mesh(domain: Domain, dimension: int, h: float, graded: bool = True) -> Mesh:
    """Mesh a ball or square domain at nominal size h."""
    if domain.kind == "ball":
        return ball_mesh(dimension, h, domain.radius, graded)
    divisions = max(2, 2 * int(np.ceil(domain.radius / h)))
    return square_mesh(dimension, divisions, domain.radius)


def write_mesh(mesh: Mesh, path: str):
    """Write a mesh in the ASCII PLAPMESH format."""
    lines = [MESH_FORMAT_HEADER, f"DIMENSION {mesh.dimension}"]
    if mesh.domain is not None:
        lines.append(f"DOMAIN {mesh.domain.kind} {mesh.domain.radius!r}")
    lines.append(f"H {mesh.h!r}")
    lines.append(f"NODES {mesh.num_nodes}")
    for point, marker in zip(mesh.nodes, mesh.boundary):
        lines.append(" ".join(repr(float(c)) for c in point) + f" {int(marker)}")
    lines.append(f"CELLS {mesh.num_cells}")
    for cell in mesh.cells:
        lines.append(" ".join(str(int(i)) for i in cell))
    lines.append("END")
    with open(path, "w", encoding="utf-8") as handle:
        handle.write("\n".join(lines) + "\n")
    logger.info(f"Wrote mesh to {path}")


def read_mesh(path: str) -> Mesh:
    """Read a mesh written by write_mesh."""
    try:
        with open(path, "r", encoding="utf-8") as handle:
            lines = [line.strip() for line in handle if line.strip()]
    except OSError as e:
        raise ValidationError("missing-file", f"Cannot read mesh {path}: {e}")
    if not lines or lines[0] != MESH_FORMAT_HEADER:
        raise ValidationError("invalid-mesh", f"{path} is not a {MESH_FORMAT_HEADER} file")

    domain = None
    h = 0.0
    cursor = 1
    try:
        dimension = int(lines[cursor].split()[1])
        cursor += 1
        if lines[cursor].startswith("DOMAIN"):
            _, kind, radius = lines[cursor].split()
            domain = Domain(kind, float(radius))
            cursor += 1
        if lines[cursor].startswith("H "):
            h = float(lines[cursor].split()[1])
            cursor += 1
        count = int(lines[cursor].split()[1])
        rows = np.array([line.split() for line in lines[cursor + 1:cursor + 1 + count]], dtype=float)
        cursor += 1 + count
        cell_count = int(lines[cursor].split()[1])
        cells = np.array([line.split() for line in lines[cursor + 1:cursor + 1 + cell_count]], dtype=np.int64)
    except (IndexError, ValueError) as e:
        raise ValidationError("invalid-mesh", f"Malformed mesh file {path}: {e}")
    return Mesh(rows[:, :dimension], cells, rows[:, dimension] > 0, domain, h)


def mesh_summary(mesh: Mesh) -> Tuple[int, int, float]:
    return mesh.num_nodes, mesh.num_cells, mesh.measure
