import numpy as np
import pytest

from pcupsample.geometry import GeometryError, NormalizationFrame, point_triangle_distances
from pcupsample.surfaces import (
    AmbiguousProjection,
    Box,
    Plane,
    Sphere,
    Torus,
    TriangleMesh,
    box_mesh,
    load_mesh,
    parse_surface,
    square_mesh,
    write_obj,
)

SHAPES = [Sphere(0.4, (0.1, 0, 0)), Plane((0, 0, 0.1), (1, 1, 1)), Box((0.3, 0.2, 0.1)), Torus(0.3, 0.1)]


@pytest.mark.parametrize("shape", SHAPES, ids=lambda s: s.kind)
def test_samples_lie_on_surface(shape):
    pts = shape.sample(500, np.random.default_rng(0))
    assert np.abs(shape.implicit(pts)).max() < 1e-12


@pytest.mark.parametrize("shape", SHAPES, ids=lambda s: s.kind)
def test_closest_points_lie_on_surface_at_reported_distance(shape):
    rng = np.random.default_rng(1)
    p = rng.uniform(-0.5, 0.5, size=(500, 3))
    q = shape.closest_points(p)
    assert np.abs(shape.implicit(q)).max() < 1e-10
    assert np.allclose(np.linalg.norm(q - p, axis=1), shape.distance(p), atol=1e-12)


@pytest.mark.parametrize("shape", SHAPES, ids=lambda s: s.kind)
def test_closest_point_beats_surface_samples(shape):
    rng = np.random.default_rng(2)
    p = rng.uniform(-0.5, 0.5, size=(50, 3))
    dense = shape.sample(20000, rng)
    brute = np.linalg.norm(p[:, None] - dense[None], axis=2).min(axis=1)
    assert np.all(shape.distance(p) <= brute + 1e-12)


def test_sphere_examples():
    s = Sphere(0.5)
    assert np.allclose(s.closest_points([[0.6, 0, 0]]), [[0.5, 0, 0]])
    assert np.isclose(s.distance([[0, 0, 0.6]])[0], 0.1)
    with pytest.raises(AmbiguousProjection, match="ambiguous projection"):
        s.closest_points([[0, 0, 0]])


def test_torus_axis_is_ambiguous():
    with pytest.raises(AmbiguousProjection):
        Torus(0.3, 0.1).closest_points([[0, 0, 0.2]])


def test_box_matches_its_mesh():
    rng = np.random.default_rng(3)
    box = Box((0.3, 0.2, 0.1), (0.05, 0, 0))
    mesh = box_mesh((0.3, 0.2, 0.1), (0.05, 0, 0))
    p = rng.uniform(-0.5, 0.5, size=(300, 3))
    p = p[np.abs(box.implicit(p)) > 1e-3]  # avoid medial-axis ties inside
    assert np.allclose(box.distance(p), mesh.distance(p), atol=1e-12)
    assert np.isclose(box.area, mesh.area)


def test_mesh_distance_is_min_over_triangles():
    rng = np.random.default_rng(4)
    mesh = box_mesh((0.3, 0.3, 0.3))
    p = rng.uniform(-1, 1, size=(40, 3))
    tri = mesh.vertices[mesh.faces]
    brute = np.array([point_triangle_distances(q, tri[:, 0], tri[:, 1], tri[:, 2]).min() for q in p])
    assert np.allclose(mesh.distance(p), brute, atol=1e-14)


def test_mesh_closed_and_boundary():
    assert box_mesh().is_closed
    sq = square_mesh(0.5)
    assert not sq.is_closed
    assert np.allclose(sq.boundary_distance([[0, 0, 0], [0.4, 0, 0]]), [0.5, 0.1])
    assert np.all(np.isinf(box_mesh().boundary_distance([[0, 0, 0.5]])))


def test_mesh_obj_roundtrip(tmp_path):
    mesh = box_mesh((0.1, 0.2, 0.3))
    path = tmp_path / "box.obj"
    write_obj(mesh, path)
    back = load_mesh(path)
    assert np.array_equal(back.vertices, mesh.vertices)
    assert np.array_equal(back.faces, mesh.faces)


def test_mesh_off_with_quads(tmp_path):
    path = tmp_path / "sq.off"
    path.write_text("OFF\n4 1 0\n0 0 0\n1 0 0\n1 1 0\n0 1 0\n4 0 1 2 3\n")
    mesh = load_mesh(path)
    assert len(mesh.faces) == 2 and np.isclose(mesh.area, 1.0)


def test_mesh_validation():
    with pytest.raises(GeometryError):
        TriangleMesh(np.zeros((3, 3)), [[0, 1, 5]])
    with pytest.raises(FileNotFoundError):
        load_mesh("/nonexistent/mesh.obj")


def test_parse_surface_roundtrip():
    for shape in SHAPES[:1] + SHAPES[2:]:
        again = parse_surface(shape.spec())
        assert again.spec() == shape.spec()
    assert isinstance(parse_surface("box:half=0.2"), Box)
    with pytest.raises(GeometryError):
        parse_surface("cone:r=1")
    with pytest.raises(GeometryError):
        parse_surface("sphere:center=0/0/0")


@pytest.mark.parametrize("shape", [Sphere(0.4, (0.1, 0.2, 0)), Torus(0.3, 0.1, (0, 0.1, 0)), Box((0.3, 0.2, 0.1)), Plane((0, 0, 0.2), (0, 1, 1))],
                         ids=lambda s: s.kind)
def test_transformed_surface_matches_frame(shape):
    frame = NormalizationFrame(translation=(0.1, -0.2, 0.05), scale=1.7)
    moved = shape.transformed(frame)
    pts = shape.sample(200, np.random.default_rng(5))
    assert np.abs(moved.implicit(frame.to_canonical(pts))).max() < 1e-12


def test_plane_patch_area_and_boundary():
    plane = Plane((0, 0, 0), (0, 0, 1), half=0.5)
    assert np.isclose(plane.area, 1.0)
    assert np.allclose(plane.boundary_distance([[0, 0, 0], [0.45, 0, 0]]), [0.5, 0.05])
