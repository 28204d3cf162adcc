"""Training pairs for the direction and distance pretext tasks."""
from __future__ import annotations

import hashlib
import io
import json
import re
from dataclasses import asdict, dataclass
from pathlib import Path

import numpy as np

from .geometry import KnnIndex, rotations_to_target
from .surfaces import Surface, parse_surface

SET_HEADER = "# pcupsample-trainingset"
SET_VERSION = 1


class DataError(ValueError):
    pass


@dataclass(frozen=True)
class DataConfig:
    seeds_per_source: int = 5000
    group_size: int = 16
    cloud_size: int = 2048
    d_lower: float = 0.011
    d_upper: float = 0.015
    epsilon: float = 0.002
    patch_radius: float = 0.004
    seed: int = 0

    @property
    def band(self) -> tuple[float, float]:
        return self.d_lower - self.epsilon, self.d_upper + self.epsilon

    def digest(self) -> str:
        return hashlib.sha256(json.dumps(asdict(self), sort_keys=True).encode()).hexdigest()[:16]


@dataclass
class TrainingSet:
    seeds: np.ndarray  # (n, 3)
    cloud_ids: np.ndarray  # (n,)
    gt_directions: np.ndarray  # (n, 3)
    gt_distances: np.ndarray  # (n,)
    clouds: np.ndarray  # (c, cloud_size, 3)
    sources: list
    config: DataConfig

    def __len__(self):
        return len(self.seeds)


# ---------------------------------------------------------------------------
# shape families


_RANGE = re.compile(r"(-?[\d.eE+-]+)~(-?[\d.eE+-]+)")


def expand_family(spec: str, count: int, rng: np.random.Generator) -> list[Surface]:
    """Draw ``count`` concrete surfaces from a spec with ``lo~hi`` ranges.

    ``"sphere:r=0.3~0.6"`` yields spheres with uniformly drawn radii; a spec
    without ranges yields ``count`` copies of the same surface.
    """
    out = []
    for _ in range(count):
        concrete = _RANGE.sub(lambda m: repr(float(rng.uniform(float(m.group(1)), float(m.group(2))))), spec)
        out.append(parse_surface(concrete))
    return out


# ---------------------------------------------------------------------------
# sampling


def sample_band_seeds(
    source: Surface,
    count: int,
    band: tuple[float, float],
    rng: np.random.Generator,
    max_trials: int = 5_000_000,
) -> np.ndarray:
    """Rejection-sample points whose exact distance to ``source`` lies in ``band``.

    Proposals are uniform in the source bounding box dilated by ``band[1]``.
    """
    lo_d, hi_d = band
    if not (0 <= lo_d < hi_d):
        raise DataError("band must satisfy 0 <= lower < upper")
    if count == 0:
        return np.empty((0, 3))
    lo, hi = source.bounds
    lo, hi = lo - hi_d, hi + hi_d
    found, trials = [], 0
    have = 0
    batch = max(4096, 8 * count)
    while have < count:
        p = rng.uniform(lo, hi, size=(batch, 3))
        trials += batch
        d = source.distance(p)
        ok = p[(d >= lo_d) & (d <= hi_d)]
        found.append(ok)
        have += len(ok)
        if have < count and trials >= max_trials and have / trials < 1e-4:
            raise DataError(f"band unreachable: acceptance rate {have / trials:.2e} after {trials} trials")
    return np.concatenate(found)[:count]


def gt_directions(seeds, source: Surface, patch_radius: float, rng: np.random.Generator) -> np.ndarray:
    """Unit vectors from each seed toward the surface patch around its nearest point.

    Five surface points are averaged: the nearest point ``q`` itself and two
    mirrored pairs ``proj(q + o)``, ``proj(q - o)`` with ``o`` uniform in the
    ball of radius ``patch_radius``. Mirroring cancels the tangential
    component exactly on flat patches.
    """
    seeds = np.asarray(seeds, dtype=np.float64).reshape(-1, 3)
    q = source.closest_points(seeds)
    n = len(seeds)
    samples = [q]
    for _ in range(2):
        o = rng.normal(size=(n, 3))
        o *= (patch_radius * rng.uniform(size=n) ** (1 / 3) / np.maximum(np.linalg.norm(o, axis=1), 1e-300))[:, None]
        if patch_radius == 0:
            samples += [q, q]
        else:
            samples += [source.closest_points(q + o), source.closest_points(q - o)]
    avg = sum(s - seeds for s in samples) / 5.0
    norm = np.linalg.norm(avg, axis=1)
    if np.any(norm <= 1e-12):
        raise DataError("seed lies on the surface; direction undefined")
    return avg / norm[:, None]


def gt_direction(seed, source: Surface, patch_radius: float, rng: np.random.Generator) -> np.ndarray:
    return gt_directions(np.asarray(seed).reshape(1, 3), source, patch_radius, rng)[0]


def gt_distance(seed, source: Surface) -> float:
    return float(source.distance(np.asarray(seed).reshape(1, 3))[0])


def build_training_set(sources: list[Surface], config: DataConfig = DataConfig()) -> TrainingSet:
    """Seeds, ground truth and sparse clouds for every source.

    Each source draws from its own stream ``(config.seed, source index)``.
    Every consecutive ``group_size`` seeds of a source share one cloud.
    """
    if not sources:
        raise DataError("at least one source is required")
    seeds, cids, dirs, dists, clouds = [], [], [], [], []
    for i, src in enumerate(sources):
        rng = np.random.default_rng([config.seed, i])
        s = sample_band_seeds(src, config.seeds_per_source, config.band, rng)
        n_clouds = -(-len(s) // config.group_size)
        base = len(clouds)
        for _ in range(n_clouds):
            clouds.append(src.sample(config.cloud_size, rng))
        seeds.append(s)
        cids.append(base + np.arange(len(s)) // config.group_size)
        dirs.append(gt_directions(s, src, config.patch_radius, rng) if len(s) else np.empty((0, 3)))
        dists.append(src.distance(s) if len(s) else np.empty(0))
    return TrainingSet(
        np.concatenate(seeds),
        np.concatenate(cids).astype(np.int64),
        np.concatenate(dirs),
        np.concatenate(dists),
        np.array(clouds).reshape(-1, config.cloud_size, 3),
        [s.spec() for s in sources],
        config,
    )


# ---------------------------------------------------------------------------
# network inputs


def direction_inputs(ts: TrainingSet, k: int = 100) -> np.ndarray:
    """Seed-centred ``k``-nearest neighbourhoods, ``(n, k, 3)``."""
    out = np.empty((len(ts), min(k, ts.clouds.shape[1]), 3))
    for cid in np.unique(ts.cloud_ids):
        rows = np.nonzero(ts.cloud_ids == cid)[0]
        index = KnnIndex(ts.clouds[cid])
        nb, _ = index.query(ts.seeds[rows], k)
        out[rows] = ts.clouds[cid][nb] - ts.seeds[rows][:, None, :]
    return out


def distance_inputs(ts: TrainingSet, k: int = 30) -> np.ndarray:
    """Seed-centred neighbourhoods rotated so the ground-truth direction maps to +x."""
    offs = direction_inputs(ts, k)
    rot = rotations_to_target(ts.gt_directions)
    return np.einsum("nij,nkj->nki", rot, offs)


# ---------------------------------------------------------------------------
# file format


def _fmt(x: float) -> str:
    return repr(float(x))


def dump_training_set(ts: TrainingSet) -> str:
    buf = io.StringIO()
    cfg = json.dumps(asdict(ts.config), sort_keys=True)
    buf.write(f"{SET_HEADER} v{SET_VERSION}\n")
    buf.write(f"samples {len(ts)}\n")
    buf.write(f"clouds {len(ts.clouds)}\n")
    buf.write(f"cloud_size {ts.clouds.shape[1]}\n")
    buf.write(f"config_hash {ts.config.digest()}\n")
    buf.write(f"config {cfg}\n")
    buf.write(f"sources {json.dumps(ts.sources)}\n")
    buf.write("[samples] seed_x seed_y seed_z dir_x dir_y dir_z distance cloud_id\n")
    for s, d, dist, c in zip(ts.seeds, ts.gt_directions, ts.gt_distances, ts.cloud_ids):
        buf.write(" ".join(_fmt(v) for v in (*s, *d, dist)) + f" {int(c)}\n")
    buf.write("[clouds] x y z\n")
    for cloud in ts.clouds:
        for p in cloud:
            buf.write(f"{_fmt(p[0])} {_fmt(p[1])} {_fmt(p[2])}\n")
    return buf.getvalue()


def save_training_set(ts: TrainingSet, path) -> None:
    Path(path).write_text(dump_training_set(ts))


def load_training_set(path) -> TrainingSet:
    path = Path(path)
    if not path.exists():
        raise FileNotFoundError(f"training-set file not found: {path}")
    lines = path.read_text().splitlines()
    if not lines or not lines[0].startswith(SET_HEADER):
        raise DataError(f"{path}: not a training-set file")
    if lines[0] != f"{SET_HEADER} v{SET_VERSION}":
        raise DataError(f"{path}: unsupported version line {lines[0]!r}")
    head = {}
    i = 1
    while not lines[i].startswith("[samples]"):
        key, _, val = lines[i].partition(" ")
        head[key] = val
        i += 1
    n, nc, cs = int(head["samples"]), int(head["clouds"]), int(head["cloud_size"])
    config = DataConfig(**json.loads(head["config"]))
    if config.digest() != head["config_hash"]:
        raise DataError(f"{path}: config hash mismatch")
    rows = np.array([ln.split() for ln in lines[i + 1 : i + 1 + n]], dtype=np.float64).reshape(n, 8)
    j = i + 1 + n
    if not lines[j].startswith("[clouds]"):
        raise DataError(f"{path}: expected [clouds] section at line {j + 1}")
    pts = np.array([ln.split() for ln in lines[j + 1 : j + 1 + nc * cs]], dtype=np.float64)
    if pts.shape != (nc * cs, 3):
        raise DataError(f"{path}: cloud section has {len(pts)} points, header declares {nc * cs}")
    cids = rows[:, 7].astype(np.int64)
    if n and (cids.min() < 0 or cids.max() >= nc):
        raise DataError(f"{path}: sample references a missing cloud")
    return TrainingSet(rows[:, :3], cids, rows[:, 3:6], rows[:, 6], pts.reshape(nc, cs, 3), json.loads(head["sources"]), config)


def blue_noise_sample(source: Surface, n: int, rng: np.random.Generator, oversample: int = 10) -> np.ndarray:
    """Well-spaced surface samples: farthest point sampling over a uniform oversample.

    A cheap stand-in for Poisson-disk sampling; the first pick is the
    oversample's first point, so the result is a pure function of ``rng``.
    """
    from ._kernels import farthest_point_sampling

    dense = np.ascontiguousarray(source.sample(n * oversample, rng))
    return dense[farthest_point_sampling(dense, n, 0)]
