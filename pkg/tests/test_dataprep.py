import numpy as np
import pytest
from scipy import stats

from pcupsample.dataprep import (
    DataConfig,
    DataError,
    blue_noise_sample,
    build_training_set,
    direction_inputs,
    distance_inputs,
    dump_training_set,
    expand_family,
    gt_direction,
    gt_directions,
    gt_distance,
    load_training_set,
    sample_band_seeds,
    save_training_set,
)
from pcupsample.geometry import KnnIndex, point_triangle_distances
from pcupsample.surfaces import Plane, Sphere, Torus, box_mesh, parse_surface

SMALL = DataConfig(seeds_per_source=160, cloud_size=256)


def test_band_seeds_on_sphere():
    s = sample_band_seeds(Sphere(0.4), 2000, (0.009, 0.017), np.random.default_rng(0))
    d = np.abs(np.linalg.norm(s, axis=1) - 0.4)
    assert s.shape == (2000, 3)
    assert np.all((d >= 0.009) & (d <= 0.017))
    assert sample_band_seeds(Sphere(0.4), 0, (0.009, 0.017), np.random.default_rng(0)).shape == (0, 3)


def test_band_seeds_uniform_along_plane_normal():
    plane = Plane((0, 0, 0), (0, 0, 1), half=0.2)
    s = sample_band_seeds(plane, 4000, (0.009, 0.017), np.random.default_rng(1))
    z = np.abs(s[:, 2])
    inner = np.all(np.abs(s[:, :2]) <= 0.2, axis=1)
    counts, _ = np.histogram(z[inner], bins=8, range=(0.009, 0.017))
    assert stats.chisquare(counts).pvalue > 1e-3
    assert abs((s[inner, 2] > 0).mean() - 0.5) < 0.05


def test_band_validation():
    with pytest.raises(DataError):
        sample_band_seeds(Sphere(0.4), 10, (0.02, 0.01), np.random.default_rng(0))
    with pytest.raises(DataError, match="band unreachable"):
        sample_band_seeds(Sphere(0.4), 10, (1e-12, 2e-12), np.random.default_rng(0), max_trials=100_000)


def test_plane_direction_is_exact_with_mirroring():
    plane = Plane((0, 0, 0), (0, 0, 1))
    rng = np.random.default_rng(2)
    seeds = np.column_stack([rng.uniform(-0.1, 0.1, (50, 2)), rng.choice([-1, 1], 50) * 0.013])
    n = gt_directions(seeds, plane, 0.004, rng)
    assert np.allclose(n, np.column_stack([np.zeros((50, 2)), -np.sign(seeds[:, 2])]), atol=1e-12)


def test_sphere_direction_within_one_degree():
    sphere = Sphere(0.4)
    rng = np.random.default_rng(3)
    seeds = sample_band_seeds(sphere, 300, (0.009, 0.017), rng)
    n = gt_directions(seeds, sphere, 0.004, rng)
    radial = -seeds / np.linalg.norm(seeds, axis=1)[:, None]
    outside = np.linalg.norm(seeds, axis=1) > 0.4
    radial[~outside] *= -1
    ang = np.degrees(np.arccos(np.clip((n * radial).sum(axis=1), -1, 1)))
    assert ang.max() < 1.0


def test_zero_patch_radius_gives_nearest_point_direction():
    torus = Torus(0.3, 0.1)
    seed = np.array([0.3, 0.0, 0.115])
    n = gt_direction(seed, torus, 0.0, np.random.default_rng(0))
    assert np.allclose(n, (0, 0, -1), atol=1e-12)


def test_direction_points_toward_surface():
    torus = Torus(0.3, 0.1)
    rng = np.random.default_rng(4)
    seeds = sample_band_seeds(torus, 500, (0.009, 0.017), rng)
    n = gt_directions(seeds, torus, 0.004, rng)
    toward = torus.closest_points(seeds) - seeds
    assert np.all((n * toward).sum(axis=1) > 0)
    assert np.allclose(np.linalg.norm(n, axis=1), 1.0)


def test_direction_on_surface_rejected():
    with pytest.raises(DataError, match="seed lies on the surface"):
        gt_direction((0.4, 0, 0), Sphere(0.4), 0.0, np.random.default_rng(0))


def test_gt_distance_examples():
    assert np.isclose(gt_distance((0, 0, 0.6), Sphere(0.5)), 0.1)
    assert np.isclose(gt_distance((0.1, 0.2, -0.013), Plane((0, 0, 0), (0, 0, 1))), 0.013)
    mesh = box_mesh((0.2, 0.2, 0.2))
    seed = np.array([0.21, 0.05, -0.3])
    tri = mesh.vertices[mesh.faces]
    brute = point_triangle_distances(seed, tri[:, 0], tri[:, 1], tri[:, 2]).min()
    assert np.isclose(gt_distance(seed, mesh), brute, atol=1e-15)


def test_expand_family():
    rng = np.random.default_rng(5)
    shapes = expand_family("sphere:r=0.3~0.6", 50, rng)
    radii = np.array([s.radius for s in shapes])
    assert np.all((radii >= 0.3) & (radii <= 0.6)) and radii.std() > 0.05
    fixed = expand_family("torus:R=0.3,r=0.1", 3, rng)
    assert len({s.spec() for s in fixed}) == 1


def test_training_set_accounting():
    ts = build_training_set([Sphere(0.4)], SMALL)
    assert len(ts) == 160
    assert ts.clouds.shape == (10, 256, 3)
    assert np.array_equal(np.bincount(ts.cloud_ids), np.full(10, 16))
    assert np.allclose(ts.gt_distances, np.abs(np.linalg.norm(ts.seeds, axis=1) - 0.4))
    two = build_training_set([Sphere(0.4), Torus(0.3, 0.1)], SMALL)
    assert two.clouds.shape[0] == 20 and two.cloud_ids.max() == 19
    # each source owns its own random stream
    assert np.array_equal(two.seeds[:160], ts.seeds)


def test_network_inputs():
    ts = build_training_set([Sphere(0.4)], DataConfig(seeds_per_source=32, cloud_size=256))
    x = direction_inputs(ts, 20)
    assert x.shape == (32, 20, 3)
    cloud = ts.clouds[ts.cloud_ids[5]]
    nb, _ = KnnIndex(cloud).query(ts.seeds[5], 20)
    assert np.allclose(x[5], cloud[nb] - ts.seeds[5])
    r = distance_inputs(ts, 20)
    assert np.allclose(np.linalg.norm(r, axis=2), np.linalg.norm(x, axis=2))
    # rotated so the surface lies along +x
    assert np.mean(r[:, :5, 0].mean(axis=1) > 0) > 0.9


def test_serialization_is_byte_identical_and_roundtrips(tmp_path):
    a = build_training_set([Sphere(0.4), Torus(0.3, 0.1)], SMALL)
    b = build_training_set([Sphere(0.4), Torus(0.3, 0.1)], SMALL)
    assert dump_training_set(a) == dump_training_set(b)
    path = tmp_path / "train.txt"
    save_training_set(a, path)
    back = load_training_set(path)
    for name in ("seeds", "cloud_ids", "gt_directions", "gt_distances", "clouds"):
        assert np.array_equal(getattr(back, name), getattr(a, name))
    assert back.config == a.config and back.sources == a.sources
    assert [parse_surface(s).spec() for s in back.sources] == back.sources


def test_loader_rejects_bad_files(tmp_path):
    with pytest.raises(FileNotFoundError):
        load_training_set(tmp_path / "none.txt")
    bad = tmp_path / "bad.txt"
    bad.write_text("hello\n")
    with pytest.raises(DataError):
        load_training_set(bad)
    ts = build_training_set([Sphere(0.4)], DataConfig(seeds_per_source=16, cloud_size=64))
    text = dump_training_set(ts)
    tampered = tmp_path / "t.txt"
    tampered.write_text(text.replace('"seed": 0', '"seed": 1', 1))
    with pytest.raises(DataError, match="config hash mismatch"):
        load_training_set(tampered)


def test_build_requires_sources():
    with pytest.raises(DataError):
        build_training_set([], SMALL)


def test_blue_noise_sample_spacing():
    sphere = Sphere(0.4)
    rng = np.random.default_rng(6)
    blue = blue_noise_sample(sphere, 1000, rng)
    white = sphere.sample(1000, rng)
    assert np.abs(sphere.implicit(blue)).max() < 1e-12
    nn_blue = KnnIndex(blue).query(blue, 2)[1][:, 1]
    nn_white = KnnIndex(white).query(white, 2)[1][:, 1]
    assert nn_blue.min() > 3 * nn_white.min()
