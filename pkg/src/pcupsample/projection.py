"""Project seeds onto the implicit surface: ``c_p = c + n * d``."""
from __future__ import annotations

from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from .geometry import GeometryError, KnnIndex, NormalizationFrame, PointCloud, rotations_to_target
from .nn import NetworkParams, forward
from .seeding import SeedSet
from .surfaces import Surface

_UNIT_TOL = 1e-6


class ProjectionError(GeometryError):
    def __init__(self, message, seed_index=None, seed=None):
        if seed_index is not None:
            message = f"seed {seed_index} at {np.asarray(seed).tolist()}: {message}"
        super().__init__(message)
        self.seed_index = seed_index
        self.seed = seed


@dataclass(frozen=True)
class DirectionInput:
    """Seed-centred offsets of the nearest cloud points, ``(m, k, 3)``."""

    neighborhoods: np.ndarray

    @property
    def k(self) -> int:
        return self.neighborhoods.shape[1]


@dataclass(frozen=True)
class DistanceInput:
    """Offsets rotated so each seed's direction estimate maps to +x."""

    neighborhoods: np.ndarray
    rotations: np.ndarray

    @property
    def k(self) -> int:
        return self.neighborhoods.shape[1]


@dataclass(frozen=True)
class ProjectionEstimate:
    direction: np.ndarray
    distance: float
    projected: np.ndarray


class Estimator:
    """Direction/distance estimator contract.

    Both methods are batched. ``seeds`` are passed alongside the network
    inputs so oracle backends can answer from closed forms; learned
    backends ignore them.
    """

    def estimate_directions(self, inp: DirectionInput, seeds: np.ndarray) -> np.ndarray:
        raise NotImplementedError

    def estimate_distances(self, inp: DistanceInput, seeds: np.ndarray) -> np.ndarray:
        raise NotImplementedError

    def for_frame(self, frame: NormalizationFrame) -> "Estimator":
        """Estimator acting in the canonical coordinates of ``frame``."""
        return self


class AnalyticEstimator(Estimator):
    """Oracle backend answering from a closed-form surface."""

    def __init__(self, surface: Surface):
        self.surface = surface

    def estimate_directions(self, inp, seeds):
        v = self.surface.closest_points(seeds) - seeds
        norm = np.linalg.norm(v, axis=1)
        if np.any(norm == 0):
            raise GeometryError("ambiguous projection: seed lies on the surface")
        return v / norm[:, None]

    def estimate_distances(self, inp, seeds):
        return self.surface.distance(seeds)

    def for_frame(self, frame):
        return AnalyticEstimator(self.surface.transformed(frame))


class LearnedEstimator(Estimator):
    def __init__(self, direction_params: NetworkParams, distance_params: NetworkParams, dtype=np.float64):
        if direction_params.spec.output_dim != 3 or distance_params.spec.output_dim != 1:
            raise GeometryError("learned estimator needs a 3-output direction net and a 1-output distance net")
        self.direction_params = direction_params
        self.distance_params = distance_params
        self.dtype = dtype

    def estimate_directions(self, inp, seeds):
        out = forward(self.direction_params, inp.neighborhoods, self.dtype).astype(np.float64)
        norm = np.linalg.norm(out, axis=1)
        if not np.all(np.isfinite(out)) or np.any(norm == 0):
            raise GeometryError("direction network produced a zero or non-finite vector")
        return out / norm[:, None]

    def estimate_distances(self, inp, seeds):
        out = forward(self.distance_params, inp.neighborhoods, self.dtype)[:, 0].astype(np.float64)
        if not np.all(np.isfinite(out)):
            raise GeometryError("distance network produced a non-finite value")
        return out


def analytic_estimator(shape: Surface | str) -> AnalyticEstimator:
    if isinstance(shape, str):
        from .surfaces import parse_surface

        shape = parse_surface(shape)
    return AnalyticEstimator(shape)


# ---------------------------------------------------------------------------
# input assembly


def assemble_direction_inputs(seeds, cloud: PointCloud, index: KnnIndex, k_dir: int = 100) -> DirectionInput:
    seeds = np.asarray(seeds, dtype=np.float64).reshape(-1, 3)
    if len(cloud) == 0:
        raise GeometryError("empty cloud")
    nb, _ = index.query(seeds, k_dir)
    nb = nb.reshape(len(seeds), -1)
    return DirectionInput(cloud.points[nb] - seeds[:, None, :])


def assemble_distance_inputs(seeds, directions, cloud: PointCloud, index: KnnIndex, k_dist: int = 30) -> DistanceInput:
    directions = np.asarray(directions, dtype=np.float64).reshape(-1, 3)
    offs = assemble_direction_inputs(seeds, cloud, index, k_dist).neighborhoods
    rot = rotations_to_target(directions)
    return DistanceInput(np.einsum("nij,nkj->nki", rot, offs), rot)


def assemble_direction_input(seed, cloud: PointCloud, index: KnnIndex, k_dir: int = 100) -> np.ndarray:
    """``(k, 3)`` offsets of the ``k_dir`` nearest points, ascending distance."""
    return assemble_direction_inputs(seed, cloud, index, k_dir).neighborhoods[0]


def assemble_distance_input(seed, direction, cloud: PointCloud, index: KnnIndex, k_dist: int = 30) -> np.ndarray:
    return assemble_distance_inputs(seed, direction, cloud, index, k_dist).neighborhoods[0]


# ---------------------------------------------------------------------------
# projection


@dataclass(frozen=True)
class ProjectionConfig:
    k_direction: int = 100
    k_distance: int = 30
    strict: bool = True
    chunk: int = 4096
    threads: int = 1


@dataclass
class ProjectionResult:
    cloud: PointCloud
    directions: np.ndarray
    distances: np.ndarray
    n_clamped: int = 0
    skipped: list = field(default_factory=list)


def _estimate(seeds, estimator, cloud, index, cfg):
    dir_in = assemble_direction_inputs(seeds, cloud, index, cfg.k_direction)
    n = estimator.estimate_directions(dir_in, seeds)
    dist_in = assemble_distance_inputs(seeds, n, cloud, index, cfg.k_distance)
    d = estimator.estimate_distances(dist_in, seeds)
    return n, d


def _run_chunk(seeds, offset, estimator, cloud, index, cfg):
    """Estimate a chunk; on failure retry seed by seed to isolate the culprits."""
    try:
        n, d = _estimate(seeds, estimator, cloud, index, cfg)
        return n, d, []
    except GeometryError:
        pass
    n = np.full((len(seeds), 3), np.nan)
    d = np.full(len(seeds), np.nan)
    bad = []
    for i, s in enumerate(seeds):
        try:
            ni, di = _estimate(s[None], estimator, cloud, index, cfg)
        except GeometryError as exc:
            if cfg.strict:
                raise ProjectionError(str(exc), offset + i, s) from exc
            bad.append(offset + i)
            continue
        n[i], d[i] = ni[0], di[0]
    return n, d, bad


def project_all(seeds: SeedSet | np.ndarray, estimator: Estimator, cloud: PointCloud, index: KnnIndex | None = None,
                config: ProjectionConfig = ProjectionConfig()) -> ProjectionResult:
    """Project every seed; output order follows seed order.

    In lenient mode failing seeds are dropped and listed in ``skipped``.
    Negative distance estimates are clamped to zero and counted.
    """
    pts = seeds.seeds if isinstance(seeds, SeedSet) else np.asarray(seeds, dtype=np.float64).reshape(-1, 3)
    if len(pts) == 0:
        raise ProjectionError("no seeds to project")
    if index is None:
        index = KnnIndex(cloud.points)
    starts = range(0, len(pts), config.chunk)
    job = lambda s: _run_chunk(pts[s : s + config.chunk], s, estimator, cloud, index, config)
    if config.threads > 1:
        with ThreadPoolExecutor(config.threads) as pool:
            parts = list(pool.map(job, starts))
    else:
        parts = [job(s) for s in starts]
    n = np.concatenate([p[0] for p in parts])
    d = np.concatenate([p[1] for p in parts])
    skipped = [i for p in parts for i in p[2]]
    keep = np.ones(len(pts), dtype=bool)
    keep[skipped] = False
    n, d, base = n[keep], d[keep], pts[keep]
    neg = d < 0
    d = np.where(neg, 0.0, d)
    projected = base + n * d[:, None]
    return ProjectionResult(cloud.with_points(projected), n, d, int(neg.sum()), skipped)


def project_seed(seed, estimator: Estimator, cloud: PointCloud, index: KnnIndex, k_dir: int = 100, k_dist: int = 30) -> ProjectionEstimate:
    seed = np.asarray(seed, dtype=np.float64).reshape(1, 3)
    try:
        n, d = _estimate(seed, estimator, cloud, index, ProjectionConfig(k_dir, k_dist))
    except GeometryError as exc:
        raise ProjectionError(str(exc), 0, seed[0]) from exc
    dist = max(float(d[0]), 0.0)
    return ProjectionEstimate(n[0], dist, seed[0] + n[0] * dist)
