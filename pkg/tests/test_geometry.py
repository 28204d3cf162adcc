import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from pcupsample.geometry import (
    GeometryError,
    KnnIndex,
    NormalizationFrame,
    PointCloud,
    Triangle,
    closest_point_on_triangle,
    closest_points_on_triangles,
    denormalize_cloud,
    normalize_cloud,
    rotation_to_target,
    rotations_to_target,
)

coord = st.floats(-10, 10, allow_nan=False, allow_infinity=False)
vec3 = st.tuples(coord, coord, coord).map(np.array)


def test_closest_point_examples():
    tri = Triangle((0, 0, 0), (1, 0, 0), (0, 1, 0))
    assert np.allclose(closest_point_on_triangle((0.2, 0.3, 5.0), tri), (0.2, 0.3, 0.0))
    assert np.allclose(closest_point_on_triangle((2, 2, 0), tri), (0.5, 0.5, 0.0))
    assert np.allclose(closest_point_on_triangle((-1, -1, 0), tri), (0, 0, 0))
    assert np.allclose(closest_point_on_triangle((0.5, -3, 1), tri), (0.5, 0, 0))


def test_closest_point_degenerate_triangle_uses_segments():
    tri = Triangle((0, 0, 0), (1, 0, 0), (2, 0, 0))
    assert np.allclose(closest_point_on_triangle((1.5, 1.0, 0), tri), (1.5, 0, 0))
    point_tri = Triangle((1, 1, 1), (1, 1, 1), (1, 1, 1))
    assert np.allclose(closest_point_on_triangle((0, 0, 0), point_tri), (1, 1, 1))


def test_closest_point_rejects_nonfinite():
    with pytest.raises(GeometryError):
        closest_point_on_triangle((np.nan, 0, 0), Triangle((0, 0, 0), (1, 0, 0), (0, 1, 0)))
    with pytest.raises(GeometryError):
        Triangle((np.inf, 0, 0), (1, 0, 0), (0, 1, 0))


@settings(max_examples=200, deadline=None)
@given(vec3, vec3, vec3, vec3)
def test_closest_point_is_no_farther_than_vertices_and_edges(p, a, b, c):
    q = closest_points_on_triangles(p, a, b, c)
    d = np.linalg.norm(q - p)
    # compare against a coarse barycentric sample of the triangle
    u, v = np.meshgrid(np.linspace(0, 1, 11), np.linspace(0, 1, 11))
    keep = u + v <= 1
    s = a + u[keep, None] * (b - a) + v[keep, None] * (c - a)
    assert d <= np.linalg.norm(s - p, axis=1).min() + 1e-9 * (1 + np.abs(s).max())


def test_knn_single_offset_and_clamp():
    index = KnnIndex(np.array([[1.0, 1.0, 2.0]]))
    idx, dist = index.query((1, 1, 1), 5)
    assert idx.tolist() == [0] and dist.tolist() == [1.0]


def test_knn_ties_broken_by_index():
    corners = np.array([[x, y, z] for x in (0, 1) for y in (0, 1) for z in (0, 1)], dtype=float)
    index = KnnIndex(corners[::-1].copy())
    idx, dist = index.query((0.5, 0.5, 0.5), 8)
    assert idx.tolist() == list(range(8))
    assert np.allclose(dist, np.sqrt(0.75))


def test_knn_duplicates_ordered_by_index():
    pts = np.array([[0, 0, 0], [1, 0, 0], [0, 0, 0], [0, 0, 0]], dtype=float)
    idx, _ = KnnIndex(pts).query((0.1, 0, 0), 3)
    assert idx.tolist() == [0, 2, 3]


def test_knn_matches_brute_force_with_many_ties():
    rng = np.random.default_rng(0)
    pts = rng.integers(-2, 3, size=(200, 3)).astype(float)
    q = rng.integers(-2, 3, size=(50, 3)).astype(float) * 0.5
    idx, dist = KnnIndex(pts).query(q, 30)
    for row, qq in enumerate(q):
        d = np.linalg.norm(pts - qq, axis=1)
        want = np.lexsort((np.arange(len(pts)), d))[:30]
        assert idx[row].tolist() == want.tolist()
        assert np.allclose(dist[row], d[want])


def test_knn_empty_rejected():
    with pytest.raises(GeometryError, match="empty input"):
        KnnIndex(np.empty((0, 3)))


def test_normalize_roundtrip_and_canonical_extent():
    rng = np.random.default_rng(1)
    raw = PointCloud(rng.normal(size=(500, 3)) * [3, 1, 0.5] + [10, -4, 2])
    canon = normalize_cloud(raw)
    lo, hi = canon.points.min(axis=0), canon.points.max(axis=0)
    assert np.isclose((hi - lo).max(), 1.0)
    assert np.allclose(0.5 * (lo + hi), 0.0, atol=1e-12)
    back = denormalize_cloud(canon)
    assert np.allclose(back.points, raw.points, atol=1e-12)


def test_normalize_already_canonical_is_identity():
    pts = np.array([[-0.5, -0.5, -0.5], [0.5, 0.5, 0.5], [0.0, 0.1, 0.2]])
    assert normalize_cloud(PointCloud(pts)).frame.is_identity


def test_normalize_errors():
    with pytest.raises(GeometryError, match="empty input"):
        normalize_cloud(PointCloud(np.empty((0, 3))))
    with pytest.raises(GeometryError, match="degenerate extent"):
        normalize_cloud(PointCloud(np.ones((4, 3))))
    with pytest.raises(GeometryError):
        denormalize_cloud(PointCloud(np.zeros((2, 3))))


def test_frame_validation():
    with pytest.raises(GeometryError):
        NormalizationFrame(scale=0.0)
    with pytest.raises(GeometryError):
        NormalizationFrame(rotation=np.diag([1.0, 1.0, -1.0]))


@settings(max_examples=200, deadline=None)
@given(vec3)
def test_rotation_maps_direction_to_target(v):
    if np.linalg.norm(v) < 1e-3:
        return
    n = v / np.linalg.norm(v)
    r = rotation_to_target(n)
    assert np.allclose(r @ n, [1, 0, 0], atol=1e-12)
    assert np.allclose(r.T @ r, np.eye(3), atol=1e-12)
    assert np.isclose(np.linalg.det(r), 1.0)


def test_rotation_special_cases():
    assert np.allclose(rotation_to_target([1.0, 0, 0]), np.eye(3))
    assert np.allclose(rotation_to_target([-1.0, 0, 0]), np.diag([-1.0, -1.0, 1.0]))
    with pytest.raises(GeometryError, match="direction not normalized"):
        rotation_to_target([2.0, 0, 0])


def test_batched_rotations_match_single():
    rng = np.random.default_rng(2)
    ns = rng.normal(size=(20, 3))
    ns /= np.linalg.norm(ns, axis=1)[:, None]
    batch = rotations_to_target(ns)
    for n, r in zip(ns, batch):
        assert np.allclose(r, rotation_to_target(n), atol=1e-14)
