import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from pcupsample.geometry import KnnIndex, PointCloud, Triangle, closest_point_on_triangle
from pcupsample.seeding import (
    SeedBand,
    SeedingError,
    VoxelGridSpec,
    approx_dist_to_surface,
    candidate_radius,
    candidate_voxel_centres,
    default_grid,
    fan_distances,
    sample_seeds,
)
from pcupsample.surfaces import Box, Sphere


def plane_grid(spacing, half):
    g = np.arange(-half, half + 1e-12, spacing)
    xx, yy = np.meshgrid(g, g)
    return np.column_stack([xx.ravel(), yy.ravel(), np.zeros(xx.size)])


def box_surface_grid(half, h):
    pts = []
    for axis in range(3):
        a, b = [i for i in range(3) if i != axis]
        u, v = np.meshgrid(np.arange(-half[a], half[a] + 1e-12, h), np.arange(-half[b], half[b] + 1e-12, h))
        for side in (-1, 1):
            p = np.zeros((u.size, 3))
            p[:, a], p[:, b], p[:, axis] = u.ravel(), v.ravel(), side * half[axis]
            pts.append(p)
    return np.unique(np.vstack(pts).round(12), axis=0)


def test_voxel_centre_formula_and_keys():
    grid = VoxelGridSpec(0.5, (-2, -1, 0), (1, 1, 2))
    idx = np.array([[-2, -1, 0], [0, 0, 0], [1, 1, 2]])
    assert np.allclose(grid.centres(idx), [[-0.75, -0.25, 0.25], [0.25, 0.25, 0.25], [0.75, 0.75, 1.25]])
    keys = grid.keys(grid.all_indices())
    assert np.array_equal(keys, np.arange(np.prod(grid.shape)))
    assert np.array_equal(grid.unkey(grid.keys(idx)), idx)


def test_grid_and_band_validation():
    with pytest.raises(SeedingError):
        VoxelGridSpec(0.0, (0, 0, 0), (1, 1, 1))
    with pytest.raises(SeedingError):
        VoxelGridSpec(0.1, (0, 0, 0), (1, -1, 1))
    with pytest.raises(SeedingError):
        SeedBand(0.015, 0.011)
    with pytest.raises(SeedingError):
        SeedBand(fan_size=2)


def test_fan_distance_zero_at_cloud_point():
    rng = np.random.default_rng(0)
    pts = rng.uniform(size=(50, 3))
    cloud = PointCloud(pts)
    assert approx_dist_to_surface(pts[7], cloud, KnnIndex(pts), 10) == 0.0


def test_fan_distance_plane_grid_example():
    pts = plane_grid(0.002, 0.1)
    cloud = PointCloud(pts)
    d = approx_dist_to_surface((0.05, 0.05, 0.013), cloud, KnnIndex(pts), 10)
    assert abs(d - 0.013) <= 5e-4


def test_fan_of_three_points_is_single_triangle():
    pts = np.array([[0, 0, 0], [1, 0, 0], [0, 1, 0.5]], dtype=float)
    rng = np.random.default_rng(1)
    index = KnnIndex(pts)
    for c in rng.normal(size=(20, 3)):
        want = np.linalg.norm(closest_point_on_triangle(c, Triangle(*pts)) - c)
        for m in (3, 5, 10):
            assert np.isclose(approx_dist_to_surface(c, PointCloud(pts), index, m), want, rtol=0, atol=1e-15)


def test_fan_skips_duplicate_base_point():
    # p1 duplicated: the base edge must use the next distinct point
    pts = np.array([[0, 0, 0], [0, 0, 0], [1, 0, 0], [0, 1, 0]], dtype=float)
    d = fan_distances(np.array([[0.2, 0.2, 0.3]]), pts, KnnIndex(pts), 4)
    assert np.isclose(d[0], 0.3)
    # only two distinct points: segment distance
    seg = np.array([[0, 0, 0], [0, 0, 0], [0, 0, 0], [1, 0, 0]], dtype=float)
    assert np.isclose(fan_distances(np.array([[0.5, 0.4, 0]]), seg, KnnIndex(seg), 4)[0], 0.4)


def test_fan_needs_three_points():
    pts = np.zeros((2, 3))
    with pytest.raises(SeedingError, match="insufficient points for triangle fan"):
        fan_distances(np.zeros((1, 3)), pts, KnnIndex(pts), 10)


@settings(max_examples=30, deadline=None)
@given(st.integers(0, 10_000))
def test_fan_distance_non_increasing_in_m(seed):
    rng = np.random.default_rng(seed)
    pts = rng.uniform(-0.1, 0.1, size=(40, 3))
    c = rng.uniform(-0.12, 0.12, size=(25, 3))
    index = KnnIndex(pts)
    prev = None
    for m in range(3, 13):
        d = fan_distances(c, pts, index, m)
        if prev is not None:
            assert np.all(d <= prev)
        prev = d


def test_empty_seed_set_error():
    pts = plane_grid(0.01, 0.05)
    grid = VoxelGridSpec(0.004, (100, 100, 100), (110, 110, 110))
    with pytest.raises(SeedingError, match="empty seed set"):
        sample_seeds(PointCloud(pts), grid, SeedBand())


def test_plane_seeds_form_two_slabs():
    pts = plane_grid(0.004, 0.05)
    cloud = PointCloud(pts)
    band = SeedBand()
    seeds = sample_seeds(cloud, default_grid(cloud, 0.004, band), band)
    z = seeds.seeds[:, 2]
    assert (z > 0).sum() == (z < 0).sum() > 0
    inner = np.all(np.abs(seeds.seeds[:, :2]) < 0.045, axis=1)
    assert np.all((np.abs(z[inner]) >= 0.011) & (np.abs(z[inner]) <= 0.015))


def test_seed_set_invariants_and_order():
    rng = np.random.default_rng(2)
    pts = Sphere(0.1).sample(800, rng)
    cloud = PointCloud(pts)
    band = SeedBand()
    grid = default_grid(cloud, 0.004, band)
    s = sample_seeds(cloud, grid, band)
    assert np.all((s.approx_dists >= band.d_lower) & (s.approx_dists <= band.d_upper))
    keys = grid.keys(s.indices)
    assert np.all(np.diff(keys) > 0)  # distinct and lexicographic
    assert np.allclose(s.seeds, grid.centres(s.indices))
    again = sample_seeds(cloud, grid, band)
    assert np.array_equal(again.seeds, s.seeds) and np.array_equal(again.approx_dists, s.approx_dists)


def test_grow_matches_exhaustive():
    rng = np.random.default_rng(3)
    pts = Sphere(0.06).sample(120, rng)  # sparse: many seeds far from every point
    cloud = PointCloud(pts)
    band = SeedBand()
    grid = default_grid(cloud, 0.004, band)
    full = sample_seeds(cloud, grid, band, search="exhaustive")
    grow = sample_seeds(cloud, grid, band, search="grow")
    cand = sample_seeds(cloud, grid, band, search="candidates")
    assert np.array_equal(full.indices, grow.indices)
    # pruning by distance to the nearest cloud point loses seeds over holes
    assert len(cand) < len(full)
    assert set(map(tuple, cand.indices)) <= set(map(tuple, full.indices))


def test_candidates_within_radius():
    rng = np.random.default_rng(4)
    pts = rng.uniform(-0.05, 0.05, size=(30, 3))
    cloud = PointCloud(pts)
    band = SeedBand()
    grid = default_grid(cloud, 0.004, band)
    c = candidate_voxel_centres(cloud, grid, band)
    d = np.linalg.norm(c[:, None] - pts[None], axis=2).min(axis=1)
    assert np.all(d <= candidate_radius(grid, band) + 1e-12)
    far = VoxelGridSpec(0.004, (500, 500, 500), (501, 501, 501))
    assert len(candidate_voxel_centres(cloud, far, band)) == 0


def test_band_membership_at_fine_spacing_sphere():
    sphere = Sphere(0.1)
    n = int(sphere.area / 0.004**2 * 1.5)
    cloud = PointCloud(sphere.sample(n, np.random.default_rng(5)))
    band = SeedBand()
    seeds = sample_seeds(cloud, default_grid(cloud, 0.004, band), band)
    d = sphere.distance(seeds.seeds)
    assert np.all((d >= band.d_lower - 2e-3) & (d <= band.d_upper + 2e-3))


def test_box_edge_chords_break_band_membership():
    # Inside a box near an edge, the two nearest samples can lie on different
    # faces; the fan triangle then cuts the edge and sits closer to the seed
    # than either face. This happens at any sampling density.
    box = Box((0.1, 0.08, 0.06))
    cloud = PointCloud(box_surface_grid(box.half, 0.004))
    band = SeedBand()
    seeds = sample_seeds(cloud, default_grid(cloud, 0.004, band), band)
    d = box.distance(seeds.seeds)
    bad = ~((d >= band.d_lower - 2e-3) & (d <= band.d_upper + 2e-3))
    assert bad.any()
    off = seeds.seeds[bad]
    assert np.all(box.implicit(off) < 0)
    # every violator is near an edge: at least two faces within reach
    gaps = np.sort(np.array(box.half) - np.abs(off), axis=1)
    assert np.all(gaps[:, 1] <= 0.04)
