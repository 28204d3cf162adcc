"""Voxel-centre seed sampling around the implicit surface of a sparse cloud."""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from . import _kernels
from .geometry import GeometryError, KnnIndex, PointCloud


class SeedingError(GeometryError):
    pass


@dataclass(frozen=True)
class SeedBand:
    d_lower: float = 0.011
    d_upper: float = 0.015
    fan_size: int = 10

    def __post_init__(self):
        if not (0 < self.d_lower < self.d_upper):
            raise SeedingError("seed band needs 0 < d_lower < d_upper")
        if int(self.fan_size) != self.fan_size or self.fan_size < 3:
            raise SeedingError("fan size M must be an integer >= 3")


@dataclass(frozen=True)
class VoxelGridSpec:
    """Voxel grid anchored at the origin; centre of voxel (i, j, k) is ``(idx + 0.5) * l``.

    ``lo`` and ``hi`` are inclusive integer index bounds.
    """

    side_length: float
    lo: tuple
    hi: tuple

    def __post_init__(self):
        if not self.side_length > 0:
            raise SeedingError("voxel side length must be positive")
        lo = tuple(int(v) for v in self.lo)
        hi = tuple(int(v) for v in self.hi)
        if any(h < l for l, h in zip(lo, hi)):
            raise SeedingError("voxel grid bounds are degenerate")
        object.__setattr__(self, "lo", lo)
        object.__setattr__(self, "hi", hi)

    @classmethod
    def covering(cls, points: np.ndarray, side_length: float, pad: float) -> "VoxelGridSpec":
        """Grid over the bounding box of ``points`` dilated by ``pad``."""
        lo = np.floor((points.min(axis=0) - pad) / side_length).astype(int)
        hi = np.ceil((points.max(axis=0) + pad) / side_length).astype(int)
        return cls(side_length, tuple(lo), tuple(hi))

    @property
    def shape(self) -> tuple[int, int, int]:
        return tuple(h - l + 1 for l, h in zip(self.lo, self.hi))

    def centres(self, idx: np.ndarray) -> np.ndarray:
        return (np.asarray(idx, dtype=np.float64) + 0.5) * self.side_length

    def keys(self, idx: np.ndarray) -> np.ndarray:
        """Linear keys whose numeric order is lexicographic (x, y, z) order."""
        nx, ny, nz = self.shape
        rel = np.asarray(idx, dtype=np.int64) - np.array(self.lo)
        return (rel[:, 0] * ny + rel[:, 1]) * nz + rel[:, 2]

    def unkey(self, keys: np.ndarray) -> np.ndarray:
        nx, ny, nz = self.shape
        keys = np.asarray(keys, dtype=np.int64)
        z = keys % nz
        y = (keys // nz) % ny
        x = keys // (ny * nz)
        return np.stack([x, y, z], axis=1) + np.array(self.lo)

    def all_indices(self) -> np.ndarray:
        nx, ny, nz = self.shape
        return self.unkey(np.arange(nx * ny * nz, dtype=np.int64))


@dataclass(frozen=True)
class SeedSet:
    seeds: np.ndarray
    approx_dists: np.ndarray
    indices: np.ndarray

    def __len__(self):
        return len(self.seeds)


def default_grid(cloud: PointCloud, side_length: float, band: SeedBand) -> VoxelGridSpec:
    return VoxelGridSpec.covering(cloud.points, side_length, band.d_upper + side_length)


# ---------------------------------------------------------------------------
# distance approximation by triangle fans


def fan_distances(centres: np.ndarray, points: np.ndarray, index: KnnIndex, fan_size: int, chunk: int = 65536) -> np.ndarray:
    """Approximate distance from each centre to the surface sampled by ``points``.

    For each centre take its ``M`` nearest cloud points ``p1..pM`` (ascending
    distance) and return the distance to the nearest of the triangles
    ``(p1, p2, pm)``, ``m = 3..M``. When ``p2`` coincides with ``p1`` the
    first distinct point takes its place as the fan's base edge.
    """
    centres = np.asarray(centres, dtype=np.float64).reshape(-1, 3)
    if len(points) < 3:
        raise SeedingError("insufficient points for triangle fan")
    if fan_size < 3:
        raise SeedingError("fan size M must be >= 3")
    pts = np.ascontiguousarray(points, dtype=np.float64)
    out = np.empty(len(centres))
    for s in range(0, len(centres), chunk):
        c = centres[s : s + chunk]
        nb, _ = index.query(c, fan_size)
        res = np.empty(len(c))
        _kernels.fan_min(np.ascontiguousarray(c), pts, np.ascontiguousarray(nb, dtype=np.int64), res)
        out[s : s + chunk] = res
    return out


def approx_dist_to_surface(c, cloud: PointCloud, index: KnnIndex, fan_size: int) -> float:
    return float(fan_distances(np.asarray(c, dtype=np.float64).reshape(1, 3), cloud.points, index, fan_size)[0])


# ---------------------------------------------------------------------------
# candidate enumeration and seed selection

_NEIGHBOURS = np.array(
    [(i, j, k) for i in (-1, 0, 1) for j in (-1, 0, 1) for k in (-1, 0, 1) if (i, j, k) != (0, 0, 0)],
    dtype=np.int64,
)


def candidate_radius(grid: VoxelGridSpec, band: SeedBand) -> float:
    return band.d_upper + grid.side_length * math.sqrt(3.0) / 2.0


def _in_grid(grid: VoxelGridSpec, idx: np.ndarray) -> np.ndarray:
    return np.all((idx >= np.array(grid.lo)) & (idx <= np.array(grid.hi)), axis=1)


def candidate_keys(points: np.ndarray, grid: VoxelGridSpec, radius: float, chunk: int = 2048) -> np.ndarray:
    """Sorted keys of grid centres within ``radius`` of at least one point."""
    l = grid.side_length
    span = int(math.ceil(radius / l)) + 1
    rng = np.arange(-span, span + 1)
    offs = np.stack(np.meshgrid(rng, rng, rng, indexing="ij"), axis=-1).reshape(-1, 3)
    keys = []
    for s in range(0, len(points), chunk):
        p = points[s : s + chunk]
        base = np.floor(p / l).astype(np.int64)
        idx = (base[:, None, :] + offs[None]).reshape(-1, 3)
        owner = np.repeat(p, len(offs), axis=0)
        near = ((grid.centres(idx) - owner) ** 2).sum(axis=1) <= radius * radius
        idx = idx[near]
        idx = idx[_in_grid(grid, idx)]
        keys.append(np.unique(grid.keys(idx)))
    if not keys:
        return np.empty(0, dtype=np.int64)
    return np.unique(np.concatenate(keys))


def candidate_voxel_centres(cloud: PointCloud, grid: VoxelGridSpec, band: SeedBand | None = None) -> np.ndarray:
    """Voxel centres within ``d_upper + l*sqrt(3)/2`` of some cloud point, in lexicographic order."""
    band = band or SeedBand()
    keys = candidate_keys(cloud.points, grid, candidate_radius(grid, band))
    return grid.centres(grid.unkey(keys))


def sample_seeds(
    cloud: PointCloud,
    grid: VoxelGridSpec,
    band: SeedBand,
    index: KnnIndex | None = None,
    search: str = "grow",
) -> SeedSet:
    """Select voxel centres whose fan distance lies in ``[d_lower, d_upper]``.

    ``search`` picks which centres are evaluated:

    * ``"exhaustive"`` -- every centre of the grid;
    * ``"candidates"`` -- only :func:`candidate_voxel_centres`;
    * ``"grow"`` -- the candidates, then a flood fill over 26-neighbours of
      every evaluated centre whose fan distance is within one voxel of the
      band. This reaches seeds hovering over holes in sparse clouds, where
      the nearest cloud point is far away but a fan triangle is not.

    Seeds are returned in lexicographic grid order for every mode.
    """
    pts = cloud.points
    if index is None:
        index = KnnIndex(pts)
    m = band.fan_size
    if search == "exhaustive":
        keys = np.arange(int(np.prod(grid.shape)), dtype=np.int64)
        dists = fan_distances(grid.centres(grid.unkey(keys)), pts, index, m)
    elif search in ("candidates", "grow"):
        keys = candidate_keys(pts, grid, candidate_radius(grid, band))
        dists = fan_distances(grid.centres(grid.unkey(keys)), pts, index, m)
        if search == "grow":
            keys, dists = _grow(grid, band, pts, index, keys, dists)
    else:
        raise SeedingError(f"unknown seed search mode {search!r}")
    keep = (dists >= band.d_lower) & (dists <= band.d_upper)
    if not np.any(keep):
        raise SeedingError("empty seed set; check band/grid parameters")
    idx = grid.unkey(keys[keep])
    return SeedSet(grid.centres(idx), dists[keep], idx)


def _grow(grid, band, pts, index, keys, dists):
    margin = grid.side_length
    lo, hi = band.d_lower - margin, band.d_upper + margin
    frontier = keys[(dists >= lo) & (dists <= hi)]
    all_keys, all_d = [keys], [dists]
    seen = keys
    while len(frontier):
        idx = (grid.unkey(frontier)[:, None, :] + _NEIGHBOURS[None]).reshape(-1, 3)
        idx = idx[_in_grid(grid, idx)]
        new = np.unique(grid.keys(idx))
        pos = np.searchsorted(seen, new)
        pos[pos == len(seen)] = 0
        new = new[seen[pos] != new]
        if not len(new):
            break
        d = fan_distances(grid.centres(grid.unkey(new)), pts, index, band.fan_size)
        all_keys.append(new)
        all_d.append(d)
        seen = np.union1d(seen, new)
        frontier = new[(d >= lo) & (d <= hi)]
    keys = np.concatenate(all_keys)
    dists = np.concatenate(all_d)
    order = np.argsort(keys, kind="stable")
    return keys[order], dists[order]
