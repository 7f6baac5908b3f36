import numpy as np
import pytest

from utils.errors import ValidationError
from utils.fields import Domain
from utils.mesh import ball_mesh, build_mesh, mesh_summary, read_mesh, square_mesh, write_mesh


@pytest.fixture(scope="module")
def disk():
    return ball_mesh(2, 0.2, graded=False)


def test_disk_mesh_geometry(disk):
    assert disk.dimension == 2
    assert disk.measure == pytest.approx(np.pi, rel=0.03)
    assert disk.measure < np.pi
    assert disk.contains_origin_in_interior()
    np.testing.assert_allclose(np.linalg.norm(disk.nodes[disk.boundary], axis=1), 1.0)
    assert np.all(disk.volumes > 0)


def test_graded_mesh_is_finer_near_origin():
    coarse = ball_mesh(2, 0.2, graded=False)
    graded = ball_mesh(2, 0.2, graded=True)
    assert graded.num_nodes > coarse.num_nodes
    near = np.linalg.norm(graded.centroids, axis=1) < 0.05
    assert np.max(graded.volumes[near]) < np.max(coarse.volumes)


def test_ball_mesh_in_three_dimensions():
    mesh = ball_mesh(3, 0.35, graded=False)
    assert mesh.dimension == 3
    assert mesh.measure == pytest.approx(4 * np.pi / 3, rel=0.1)
    assert mesh.contains_origin_in_interior()


@pytest.mark.parametrize("dimension", [2, 3])
def test_square_mesh_measure(dimension):
    mesh = square_mesh(dimension, 4)
    assert mesh.measure == pytest.approx(2.0 ** dimension)
    assert mesh.num_cells == 4 ** dimension * (2 if dimension == 2 else 6)
    assert mesh.contains_origin_in_interior()


def test_square_mesh_needs_even_divisions():
    with pytest.raises(ValidationError) as exc:
        square_mesh(2, 3)
    assert exc.value.code == "invalid-divisions"


def test_invalid_mesh_size():
    with pytest.raises(ValidationError) as exc:
        ball_mesh(2, 2.0)
    assert exc.value.code == "invalid-mesh-size"


def test_gradients_of_linear_function_are_exact(disk):
    u = 2.0 * disk.nodes[:, 0] - 0.5 * disk.nodes[:, 1] + 1.0
    np.testing.assert_allclose(disk.gradients(u), np.tile([2.0, -0.5], (disk.num_cells, 1)), atol=1e-10)
    np.testing.assert_allclose(disk.nodal_gradients(u), np.tile([2.0, -0.5], (disk.num_nodes, 1)), atol=1e-10)


def test_quadrature_integrates_linear_functions(disk):
    values = disk.quadrature_values(1.0 + disk.nodes[:, 0])
    # the disk is symmetric, so x integrates to (nearly) zero
    assert np.sum(disk.quad_weights * values) == pytest.approx(disk.measure, abs=1e-10)
    assert disk.lumped_weights.sum() == pytest.approx(disk.measure)


def test_boundary_faces_point_outward(disk):
    faces = disk.boundary_faces()
    assert faces.nodes.shape[1] == 2
    assert np.all(np.sum(faces.normals * faces.centroids, axis=1) > 0)
    # polygon perimeter approaches 2 pi
    assert faces.measures.sum() == pytest.approx(2 * np.pi, rel=0.02)


def test_mesh_file_round_trip(tmp_path, disk):
    path = tmp_path / "disk.plapmesh"
    write_mesh(disk, str(path))
    loaded = read_mesh(str(path))
    assert mesh_summary(loaded) == (disk.num_nodes, disk.num_cells, pytest.approx(disk.measure))
    np.testing.assert_array_equal(loaded.nodes, disk.nodes)
    np.testing.assert_array_equal(loaded.boundary, disk.boundary)
    assert loaded.domain == disk.domain
    assert loaded.h == disk.h


def test_read_missing_and_malformed_mesh(tmp_path):
    with pytest.raises(ValidationError) as exc:
        read_mesh(str(tmp_path / "absent.plapmesh"))
    assert exc.value.code == "missing-file"
    bad = tmp_path / "bad.plapmesh"
    bad.write_text("NOT A MESH\n")
    with pytest.raises(ValidationError) as exc:
        read_mesh(str(bad))
    assert exc.value.code == "invalid-mesh"


def test_build_mesh_for_square_domain():
    mesh = build_mesh(Domain("square", 1.0), 2, 0.25)
    assert mesh.domain.kind == "square"
    assert mesh.h == pytest.approx(0.25)


def test_mesh_without_size_line_uses_cell_diameters(tmp_path):
    square = square_mesh(2, 4)
    path = tmp_path / "square.plapmesh"
    write_mesh(square, str(path))
    lines = [line for line in path.read_text().splitlines() if not line.startswith("H ")]
    path.write_text("\n".join(lines) + "\n")
    loaded = read_mesh(str(path))
    # Kuhn triangles of a 0.5 grid: the hypotenuse is the diameter
    assert loaded.h == pytest.approx(0.5 * np.sqrt(2))
