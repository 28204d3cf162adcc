"""Core geometric types and queries.

Point sets are plain ``(n, 3)`` float64 arrays wrapped in :class:`PointCloud`;
everything here is immutable after construction.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.spatial import cKDTree

from . import _kernels

TARGET_DIRECTION = np.array([1.0, 0.0, 0.0])


class GeometryError(ValueError):
    pass


def as_points(points) -> np.ndarray:
    """Coerce to a read-only ``(n, 3)`` float64 array of finite values."""
    arr = np.array(points, dtype=np.float64, copy=True)
    if arr.ndim == 1 and arr.size == 3:
        arr = arr.reshape(1, 3)
    if arr.ndim != 2 or arr.shape[1] != 3:
        raise GeometryError(f"expected an (n, 3) array, got shape {arr.shape}")
    if not np.all(np.isfinite(arr)):
        raise GeometryError("non-finite coordinates")
    arr.setflags(write=False)
    return arr


@dataclass(frozen=True)
class NormalizationFrame:
    """Map between raw and canonical coordinates.

    ``canonical = scale * rotation @ (raw + translation)``
    """

    translation: np.ndarray = field(default_factory=lambda: np.zeros(3))
    rotation: np.ndarray = field(default_factory=lambda: np.eye(3))
    scale: float = 1.0

    def __post_init__(self):
        t = np.asarray(self.translation, dtype=np.float64).reshape(3)
        r = np.asarray(self.rotation, dtype=np.float64).reshape(3, 3)
        if not np.all(np.isfinite(t)) or not np.all(np.isfinite(r)):
            raise GeometryError("non-finite frame")
        if not (np.isfinite(self.scale) and self.scale > 0):
            raise GeometryError("frame scale must be positive")
        if np.abs(r.T @ r - np.eye(3)).max() > 1e-9 or abs(np.linalg.det(r) - 1.0) > 1e-9:
            raise GeometryError("frame rotation is not a proper rotation")
        object.__setattr__(self, "translation", t)
        object.__setattr__(self, "rotation", r)
        object.__setattr__(self, "scale", float(self.scale))

    @property
    def is_identity(self) -> bool:
        return (
            self.scale == 1.0
            and not np.any(self.translation)
            and np.array_equal(self.rotation, np.eye(3))
        )

    def to_canonical(self, points: np.ndarray) -> np.ndarray:
        return self.scale * ((points + self.translation) @ self.rotation.T)

    def to_raw(self, points: np.ndarray) -> np.ndarray:
        return (points / self.scale) @ self.rotation - self.translation


@dataclass(frozen=True)
class PointCloud:
    points: np.ndarray
    frame: NormalizationFrame | None = None

    def __post_init__(self):
        object.__setattr__(self, "points", as_points(self.points))

    def __len__(self) -> int:
        return self.points.shape[0]

    def with_points(self, points) -> "PointCloud":
        return PointCloud(points, self.frame)


@dataclass(frozen=True)
class Triangle:
    a: np.ndarray
    b: np.ndarray
    c: np.ndarray

    def __post_init__(self):
        for name in ("a", "b", "c"):
            v = np.asarray(getattr(self, name), dtype=np.float64).reshape(3)
            if not np.all(np.isfinite(v)):
                raise GeometryError("non-finite triangle vertex")
            object.__setattr__(self, name, v)


class KnnIndex:
    """Exact k-nearest-neighbour index over a fixed point set.

    Results are ordered by ascending Euclidean distance, ties broken by
    ascending point index. Queries are read-only and thread-safe.
    """

    def __init__(self, points: np.ndarray):
        points = as_points(points)
        if len(points) == 0:
            raise GeometryError("empty input")
        self.points = points
        self._tree = cKDTree(points)

    def __len__(self) -> int:
        return len(self.points)

    def query(self, queries, k: int) -> tuple[np.ndarray, np.ndarray]:
        """Return ``(indices, distances)`` of shape ``(m, min(k, n))``."""
        q = np.asarray(queries, dtype=np.float64)
        single = q.ndim == 1
        q = q.reshape(-1, 3)
        n = len(self.points)
        k = min(int(k), n)
        if k < 1:
            raise GeometryError("k must be positive")
        kq = min(n, k + 1)
        dist, idx = self._tree.query(q, k=kq)
        dist = np.asarray(dist, dtype=np.float64).reshape(len(q), kq)
        idx = np.asarray(idx, dtype=np.int64).reshape(len(q), kq)
        # the tree orders equal distances arbitrarily; re-sort rows with ties
        tied = np.nonzero(np.any(np.diff(dist, axis=1) == 0, axis=1))[0]
        idx, dist = idx[:, :k].copy(), dist[:, :k].copy()
        if len(tied):
            idx[tied], dist[tied] = self._resolve_ties(q[tied], k)
        if single:
            return idx[0], dist[0]
        return idx, dist

    def _resolve_ties(self, q: np.ndarray, k: int):
        n = len(self.points)
        kq = min(n, k + 16)
        dist, idx = self._tree.query(q, k=kq)
        dist = np.asarray(dist, dtype=np.float64).reshape(len(q), kq)
        idx = np.asarray(idx, dtype=np.int64).reshape(len(q), kq)
        rows = np.broadcast_to(np.arange(len(q))[:, None], dist.shape)
        order = np.lexsort((idx.ravel(), dist.ravel(), rows.ravel())).reshape(dist.shape)
        order -= np.arange(len(q))[:, None] * kq
        idx = np.take_along_axis(idx, order, axis=1)
        dist = np.take_along_axis(dist, order, axis=1)
        if kq < n:
            # a tie run reaching the end of the fetched block may hide lower indices
            for row in np.nonzero(dist[:, -1] == dist[:, k - 1])[0]:
                reach = dist[row, k - 1] * (1 + 1e-12)
                cand = np.asarray(self._tree.query_ball_point(q[row], reach), dtype=np.int64)
                d = np.sqrt(((self.points[cand] - q[row]) ** 2).sum(axis=1))
                o = np.lexsort((cand, d))[:k]
                idx[row, :k] = cand[o]
                dist[row, :k] = d[o]
        return idx[:, :k], dist[:, :k]


def build_knn_index(cloud: PointCloud | np.ndarray) -> KnnIndex:
    points = cloud.points if isinstance(cloud, PointCloud) else cloud
    return KnnIndex(points)


# ---------------------------------------------------------------------------
# closest point on triangle


def closest_points_on_segments(p: np.ndarray, a: np.ndarray, b: np.ndarray) -> np.ndarray:
    ab = b - a
    denom = (ab * ab).sum(axis=-1)
    t = np.where(denom > 0, ((p - a) * ab).sum(axis=-1) / np.where(denom > 0, denom, 1.0), 0.0)
    t = np.clip(t, 0.0, 1.0)
    return a + t[..., None] * ab


def closest_points_on_triangles(p, a, b, c) -> np.ndarray:
    """Vectorised closest point on closed triangles ``(a, b, c)`` to ``p``.

    All arguments broadcast against each other with a trailing axis of 3.
    Uses the Voronoi-region walk from Ericson's Real-Time Collision
    Detection; degenerate (collinear) triangles fall back to the nearest
    point on their three edges.
    """
    p, a, b, c = np.broadcast_arrays(
        *(np.asarray(x, dtype=np.float64) for x in (p, a, b, c))
    )
    shape = p.shape
    flat = [np.ascontiguousarray(x.reshape(-1, 3)) for x in (p, a, b, c)]
    out = np.empty_like(flat[0])
    _kernels.closest_on_triangles(*flat, out)
    return out.reshape(shape)


def closest_point_on_triangle(p, tri: Triangle) -> np.ndarray:
    p = np.asarray(p, dtype=np.float64).reshape(3)
    if not np.all(np.isfinite(p)):
        raise GeometryError("non-finite query point")
    return closest_points_on_triangles(p, tri.a, tri.b, tri.c)


def point_triangle_distances(p, a, b, c) -> np.ndarray:
    q = closest_points_on_triangles(p, a, b, c)
    p = np.broadcast_to(np.asarray(p, dtype=np.float64), q.shape)
    return np.sqrt(((q - p) ** 2).sum(-1))


# ---------------------------------------------------------------------------
# normalisation


def normalize_cloud(cloud: PointCloud) -> PointCloud:
    """Centre on the bounding-box centre and scale the longest edge to 1."""
    pts = cloud.points
    if len(pts) == 0:
        raise GeometryError("empty input")
    lo, hi = pts.min(axis=0), pts.max(axis=0)
    extent = float((hi - lo).max())
    if extent <= 0:
        raise GeometryError("degenerate extent")
    center = 0.5 * (lo + hi)
    frame = NormalizationFrame(translation=-center, scale=1.0 / extent)
    if np.allclose(center, 0.0, rtol=0, atol=1e-15) and abs(extent - 1.0) <= 1e-15:
        frame = NormalizationFrame()
    return PointCloud(frame.to_canonical(pts), frame)


def denormalize_cloud(cloud: PointCloud) -> PointCloud:
    if cloud.frame is None:
        raise GeometryError("cloud has no normalization frame")
    return PointCloud(cloud.frame.to_raw(cloud.points), None)


# ---------------------------------------------------------------------------
# rotation normalisation


def rotation_to_target(n, target=TARGET_DIRECTION) -> np.ndarray:
    """Minimal-angle rotation taking unit vector ``n`` onto ``target``.

    For ``n == -target`` the rotation is 180 degrees about +z (or +y when
    the target itself lies on z).
    """
    n = np.asarray(n, dtype=np.float64).reshape(3)
    t = np.asarray(target, dtype=np.float64).reshape(3)
    if not np.all(np.isfinite(n)) or abs(np.linalg.norm(n) - 1.0) > 1e-6:
        raise GeometryError("direction not normalized")
    n = n / np.linalg.norm(n)
    return _rotation_between(n[None], t)[0]


def rotations_to_target(ns, target=TARGET_DIRECTION) -> np.ndarray:
    """Batched :func:`rotation_to_target` for an ``(m, 3)`` array."""
    ns = np.asarray(ns, dtype=np.float64).reshape(-1, 3)
    norms = np.linalg.norm(ns, axis=1)
    if not np.all(np.isfinite(ns)) or np.any(np.abs(norms - 1.0) > 1e-6):
        raise GeometryError("direction not normalized")
    return _rotation_between(ns / norms[:, None], np.asarray(target, dtype=np.float64))


def _rotation_between(ns: np.ndarray, t: np.ndarray) -> np.ndarray:
    # Rodrigues form R = cI + [v]x + vv^T/(1+c) with v = n x t, c = n.t.
    # Within ~0.8 degrees of the antipode 1/(1+c) amplifies rounding, so
    # there we rotate 180 degrees about the fixed axis first, then apply the
    # (now small) minimal remainder.
    m = len(ns)
    flip_axis = np.array([0.0, 0.0, 1.0]) if abs(t[2]) < 0.9 else np.array([0.0, 1.0, 0.0])
    flip_axis = flip_axis - flip_axis.dot(t) * t
    flip_axis /= np.linalg.norm(flip_axis)
    flip = 2.0 * np.outer(flip_axis, flip_axis) - np.eye(3)

    c = ns @ t
    far = c < -1.0 + 1e-4
    src = np.where(far[:, None], ns @ flip.T, ns)
    v = np.cross(src, t)
    cc = src @ t
    vx = np.zeros((m, 3, 3))
    vx[:, 0, 1], vx[:, 0, 2] = -v[:, 2], v[:, 1]
    vx[:, 1, 0], vx[:, 1, 2] = v[:, 2], -v[:, 0]
    vx[:, 2, 0], vx[:, 2, 1] = -v[:, 1], v[:, 0]
    r = cc[:, None, None] * np.eye(3) + vx + np.einsum("mi,mj->mij", v, v) / (1.0 + cc)[:, None, None]
    r[far] = r[far] @ flip
    # re-orthonormalise (polar projection) to keep R^T R = I at 1e-15 level
    u, _, vt = np.linalg.svd(r)
    return u @ vt
