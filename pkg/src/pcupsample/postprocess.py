"""Outlier removal, farthest point sampling and final sizing."""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from . import _kernels
from .geometry import GeometryError, KnnIndex, PointCloud, denormalize_cloud


class PostprocessError(GeometryError):
    pass


@dataclass(frozen=True)
class OutlierConfig:
    v: int = 16
    lam: float = 1.5

    def __post_init__(self):
        if int(self.v) != self.v or self.v < 1:
            raise PostprocessError("outlier neighbour count v must be a positive integer")
        if not self.lam > 1:
            raise PostprocessError("outlier multiplier lambda must exceed 1")


@dataclass(frozen=True)
class ScaleRequest:
    factor: float
    input_size: int

    def __post_init__(self):
        if not self.factor > 0:
            raise PostprocessError("scale factor must be positive")
        if self.target < 1:
            raise PostprocessError(f"target size floor({self.factor} * {self.input_size}) is zero")

    @property
    def target(self) -> int:
        # guard against 4.1 * 1000 = 4099.999...
        prod = self.factor * self.input_size
        near = round(prod)
        return int(near) if abs(prod - near) <= 1e-9 * max(1.0, abs(prod)) else int(math.floor(prod))


def average_bias(points: np.ndarray, v: int, index: KnnIndex | None = None) -> np.ndarray:
    """Mean distance from every point to its ``v`` nearest other points."""
    index = index or KnnIndex(points)
    _, dist = index.query(points, v + 1)
    # the first neighbour of each point is itself (or a coincident copy at distance 0)
    return dist[:, 1:].mean(axis=1)


def outlier_mask(points: np.ndarray, cfg: OutlierConfig = OutlierConfig()) -> np.ndarray:
    """True for points whose bias exceeds ``lam`` times the mean bias."""
    if len(points) <= cfg.v:
        raise PostprocessError("too few points for bias statistic")
    b = average_bias(points, cfg.v)
    return b > cfg.lam * b.mean()


def remove_outliers(cloud: PointCloud, cfg: OutlierConfig = OutlierConfig()) -> PointCloud:
    return cloud.with_points(cloud.points[~outlier_mask(cloud.points, cfg)])


def centroid_start(points: np.ndarray) -> int:
    d = ((points - points.mean(axis=0)) ** 2).sum(axis=1)
    return int(np.argmin(d))


def fps_indices(points: np.ndarray, n_samples: int, start: int | str = "centroid") -> np.ndarray:
    points = np.ascontiguousarray(points, dtype=np.float64)
    if not 1 <= n_samples <= len(points):
        raise PostprocessError(f"FPS target {n_samples} outside [1, {len(points)}]")
    if start == "centroid":
        start = centroid_start(points)
    elif isinstance(start, str) and start.startswith("index:"):
        start = int(start[6:])
    if not 0 <= int(start) < len(points):
        raise PostprocessError(f"FPS start index {start} out of range")
    return _kernels.farthest_point_sampling(points, int(n_samples), int(start))


def farthest_point_sampling(cloud: PointCloud, n_samples: int, start: int | str = "centroid") -> PointCloud:
    """Greedy max-min subset in selection order.

    ``start`` is ``"centroid"`` (point nearest the centroid), ``"index:<i>"``
    or an integer index.
    """
    return cloud.with_points(cloud.points[fps_indices(cloud.points, n_samples, start)])


def finalize(dense: PointCloud, req: ScaleRequest, outlier_cfg: OutlierConfig | None = OutlierConfig(),
             start: int | str = "centroid") -> PointCloud:
    """Remove outliers, return to raw coordinates, then subsample to ``req.target``.

    ``outlier_cfg=None`` skips outlier removal.
    """
    cleaned = remove_outliers(dense, outlier_cfg) if outlier_cfg is not None else dense
    if len(cleaned) < req.target:
        raise PostprocessError(
            f"only {len(cleaned)} points left for a target of {req.target}; "
            "oversample more seeds (reduce voxel size)"
        )
    raw = denormalize_cloud(cleaned) if cleaned.frame is not None else cleaned
    return farthest_point_sampling(raw, req.target, start)
