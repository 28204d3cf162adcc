"""Reference surfaces with exact nearest-point queries.

Closed-form shapes (sphere, plane patch, box, torus) and triangle soups share
one interface: ``closest_points``, ``distance``, ``implicit``, ``sample``,
``area``, ``bounds`` and ``boundary_distance``. They double as the oracle
estimator backend, the pretext-task ground truth and the metric reference.
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .geometry import GeometryError, NormalizationFrame, closest_points_on_segments, closest_points_on_triangles

_SINGULAR_TOL = 1e-12


class AmbiguousProjection(GeometryError):
    """Query point sits on a singularity of the nearest-point map."""


def _vec(v) -> np.ndarray:
    return np.asarray(v, dtype=np.float64).reshape(3)


def _pts(p) -> np.ndarray:
    return np.asarray(p, dtype=np.float64).reshape(-1, 3)


def _fmt(v) -> str:
    if np.ndim(v) == 0:
        return repr(float(v))
    return "/".join(repr(float(x)) for x in v)


def _require_no_rotation(frame: NormalizationFrame, kind: str):
    if not np.array_equal(frame.rotation, np.eye(3)):
        raise GeometryError(f"{kind} surfaces only support axis-aligned frames")


class Surface:
    kind = "surface"

    def closest_points(self, points) -> np.ndarray:
        raise NotImplementedError

    def distance(self, points) -> np.ndarray:
        p = _pts(points)
        return np.linalg.norm(self.closest_points(p) - p, axis=1)

    def implicit(self, points) -> np.ndarray:
        """Zero exactly on the surface (signed where the shape is closed)."""
        return self.distance(points)

    def sample(self, n: int, rng: np.random.Generator) -> np.ndarray:
        raise NotImplementedError

    @property
    def area(self) -> float:
        raise NotImplementedError

    @property
    def bounds(self) -> tuple[np.ndarray, np.ndarray]:
        raise NotImplementedError

    def boundary_distance(self, points) -> np.ndarray:
        """Distance from on-surface points to the surface boundary (inf if closed)."""
        return np.full(len(_pts(points)), np.inf)

    def transformed(self, frame: NormalizationFrame) -> "Surface":
        raise NotImplementedError

    def spec(self) -> str:
        raise NotImplementedError

    def __repr__(self):
        return f"<{type(self).__name__} {self.spec()}>"


@dataclass(frozen=True, repr=False)
class Sphere(Surface):
    radius: float
    center: tuple = (0.0, 0.0, 0.0)
    kind = "sphere"

    def __post_init__(self):
        if not self.radius > 0:
            raise GeometryError("sphere radius must be positive")
        object.__setattr__(self, "center", tuple(_vec(self.center)))

    def closest_points(self, points):
        c = np.array(self.center)
        v = _pts(points) - c
        norm = np.linalg.norm(v, axis=1)
        if np.any(norm <= _SINGULAR_TOL * max(self.radius, 1.0)):
            raise AmbiguousProjection("ambiguous projection: point at sphere centre")
        return c + self.radius * v / norm[:, None]

    def distance(self, points):
        return np.abs(self.implicit(points))

    def implicit(self, points):
        return np.linalg.norm(_pts(points) - np.array(self.center), axis=1) - self.radius

    def sample(self, n, rng):
        v = rng.normal(size=(n, 3))
        v /= np.linalg.norm(v, axis=1)[:, None]
        return np.array(self.center) + self.radius * v

    @property
    def area(self):
        return 4.0 * math.pi * self.radius**2

    @property
    def bounds(self):
        c = np.array(self.center)
        return c - self.radius, c + self.radius

    def transformed(self, frame):
        c = frame.to_canonical(np.array(self.center)[None])[0]
        return Sphere(self.radius * frame.scale, tuple(c))

    def spec(self):
        return f"sphere:r={_fmt(self.radius)},center={_fmt(self.center)}"


@dataclass(frozen=True, repr=False)
class Plane(Surface):
    """Plane through ``point`` with unit ``normal``.

    Nearest-point queries use the infinite plane; sampling, area and bounds
    use the square patch of half side ``half`` centred on ``point``.
    """

    point: tuple = (0.0, 0.0, 0.0)
    normal: tuple = (0.0, 0.0, 1.0)
    half: float = 0.5
    kind = "plane"

    def __post_init__(self):
        n = _vec(self.normal)
        if np.linalg.norm(n) == 0:
            raise GeometryError("plane normal must be non-zero")
        object.__setattr__(self, "normal", tuple(n / np.linalg.norm(n)))
        object.__setattr__(self, "point", tuple(_vec(self.point)))
        if not self.half > 0:
            raise GeometryError("plane half extent must be positive")

    def basis(self) -> tuple[np.ndarray, np.ndarray]:
        n = np.array(self.normal)
        helper = np.array([1.0, 0.0, 0.0]) if abs(n[0]) < 0.9 else np.array([0.0, 1.0, 0.0])
        u = np.cross(n, helper)
        u /= np.linalg.norm(u)
        return u, np.cross(n, u)

    def implicit(self, points):
        return (_pts(points) - np.array(self.point)) @ np.array(self.normal)

    def distance(self, points):
        return np.abs(self.implicit(points))

    def closest_points(self, points):
        p = _pts(points)
        return p - self.implicit(p)[:, None] * np.array(self.normal)

    def sample(self, n, rng):
        u, v = self.basis()
        uv = rng.uniform(-self.half, self.half, size=(n, 2))
        return np.array(self.point) + uv[:, :1] * u + uv[:, 1:] * v

    @property
    def area(self):
        return (2.0 * self.half) ** 2

    @property
    def bounds(self):
        u, v = self.basis()
        ext = self.half * (np.abs(u) + np.abs(v))
        o = np.array(self.point)
        return o - ext, o + ext

    def boundary_distance(self, points):
        u, v = self.basis()
        rel = _pts(points) - np.array(self.point)
        return np.maximum(self.half - np.maximum(np.abs(rel @ u), np.abs(rel @ v)), 0.0)

    def transformed(self, frame):
        o = frame.to_canonical(np.array(self.point)[None])[0]
        n = frame.rotation @ np.array(self.normal)
        return Plane(tuple(o), tuple(n), self.half * frame.scale)

    def spec(self):
        return f"plane:point={_fmt(self.point)},normal={_fmt(self.normal)},half={_fmt(self.half)}"


@dataclass(frozen=True, repr=False)
class Box(Surface):
    half: tuple = (0.5, 0.5, 0.5)
    center: tuple = (0.0, 0.0, 0.0)
    kind = "box"

    def __post_init__(self):
        h = _vec(self.half)
        if np.any(h <= 0):
            raise GeometryError("box half extents must be positive")
        object.__setattr__(self, "half", tuple(h))
        object.__setattr__(self, "center", tuple(_vec(self.center)))

    def implicit(self, points):
        q = np.abs(_pts(points) - np.array(self.center)) - np.array(self.half)
        outside = np.linalg.norm(np.maximum(q, 0.0), axis=1)
        inside = np.minimum(q.max(axis=1), 0.0)
        return outside + inside

    def distance(self, points):
        return np.abs(self.implicit(points))

    def closest_points(self, points):
        h = np.array(self.half)
        rel = _pts(points) - np.array(self.center)
        out = np.clip(rel, -h, h)
        inside = np.all(np.abs(rel) < h, axis=1)
        if np.any(inside):
            r = rel[inside]
            gap = h - np.abs(r)
            axis = np.argmin(gap, axis=1)
            srt = np.sort(gap, axis=1)
            if np.any(srt[:, 1] - srt[:, 0] <= _SINGULAR_TOL):
                raise AmbiguousProjection("ambiguous projection: equidistant box faces")
            rows = np.arange(len(r))
            q = r.copy()
            q[rows, axis] = np.where(r[rows, axis] >= 0, h[axis], -h[axis])
            out[inside] = q
        return np.array(self.center) + out

    def _faces(self):
        # (axis, sign, area)
        return [(a, s, 4.0 * np.prod([self.half[i] for i in range(3) if i != a])) for a in range(3) for s in (-1, 1)]

    def sample(self, n, rng):
        faces = self._faces()
        w = np.array([f[2] for f in faces])
        which = rng.choice(len(faces), size=n, p=w / w.sum())
        h = np.array(self.half)
        pts = rng.uniform(-h, h, size=(n, 3))
        for i, (a, s, _) in enumerate(faces):
            pts[which == i, a] = s * h[a]
        return np.array(self.center) + pts

    @property
    def area(self):
        hx, hy, hz = self.half
        return 8.0 * (hx * hy + hy * hz + hx * hz)

    @property
    def bounds(self):
        c, h = np.array(self.center), np.array(self.half)
        return c - h, c + h

    def transformed(self, frame):
        _require_no_rotation(frame, "box")
        c = frame.to_canonical(np.array(self.center)[None])[0]
        return Box(tuple(np.array(self.half) * frame.scale), tuple(c))

    def spec(self):
        return f"box:half={_fmt(self.half)},center={_fmt(self.center)}"


@dataclass(frozen=True, repr=False)
class Torus(Surface):
    """Torus around the z axis: ring radius ``R``, tube radius ``r``."""

    R: float
    r: float
    center: tuple = (0.0, 0.0, 0.0)
    kind = "torus"

    def __post_init__(self):
        if not (self.R > self.r > 0):
            raise GeometryError("torus needs R > r > 0")
        object.__setattr__(self, "center", tuple(_vec(self.center)))

    def implicit(self, points):
        rel = _pts(points) - np.array(self.center)
        rho = np.hypot(rel[:, 0], rel[:, 1])
        return np.hypot(rho - self.R, rel[:, 2]) - self.r

    def distance(self, points):
        return np.abs(self.implicit(points))

    def closest_points(self, points):
        rel = _pts(points) - np.array(self.center)
        rho = np.hypot(rel[:, 0], rel[:, 1])
        if np.any(rho <= _SINGULAR_TOL):
            raise AmbiguousProjection("ambiguous projection: point on torus axis")
        ring = np.zeros_like(rel)
        ring[:, :2] = self.R * rel[:, :2] / rho[:, None]
        tube = rel - ring
        tn = np.linalg.norm(tube, axis=1)
        if np.any(tn <= _SINGULAR_TOL):
            raise AmbiguousProjection("ambiguous projection: point on torus core circle")
        return np.array(self.center) + ring + self.r * tube / tn[:, None]

    def sample(self, n, rng):
        out = np.empty((0, 2))
        # rejection on the tube angle: area element is proportional to R + r cos(v)
        while len(out) < n:
            u = rng.uniform(0, 2 * math.pi, size=2 * n)
            v = rng.uniform(0, 2 * math.pi, size=2 * n)
            keep = rng.uniform(0, 1, size=2 * n) * (self.R + self.r) <= self.R + self.r * np.cos(v)
            out = np.concatenate([out, np.stack([u[keep], v[keep]], axis=1)])
        u, v = out[:n, 0], out[:n, 1]
        w = self.R + self.r * np.cos(v)
        pts = np.stack([w * np.cos(u), w * np.sin(u), self.r * np.sin(v)], axis=1)
        return np.array(self.center) + pts

    @property
    def area(self):
        return 4.0 * math.pi**2 * self.R * self.r

    @property
    def bounds(self):
        c = np.array(self.center)
        e = np.array([self.R + self.r, self.R + self.r, self.r])
        return c - e, c + e

    def transformed(self, frame):
        _require_no_rotation(frame, "torus")
        c = frame.to_canonical(np.array(self.center)[None])[0]
        return Torus(self.R * frame.scale, self.r * frame.scale, tuple(c))

    def spec(self):
        return f"torus:R={_fmt(self.R)},r={_fmt(self.r)},center={_fmt(self.center)}"


class TriangleMesh(Surface):
    """Triangle soup with exact brute-force nearest-point queries."""

    kind = "mesh"

    def __init__(self, vertices, faces, path: str | None = None):
        self.vertices = np.asarray(vertices, dtype=np.float64).reshape(-1, 3)
        self.faces = np.asarray(faces, dtype=np.int64).reshape(-1, 3)
        if len(self.faces) == 0:
            raise GeometryError("mesh has no faces")
        if self.faces.min() < 0 or self.faces.max() >= len(self.vertices):
            raise GeometryError("mesh face index out of range")
        if not np.all(np.isfinite(self.vertices)):
            raise GeometryError("non-finite mesh vertex")
        self.path = path
        tri = self.vertices[self.faces]
        self._a, self._b, self._c = tri[:, 0], tri[:, 1], tri[:, 2]
        self._areas = 0.5 * np.linalg.norm(np.cross(self._b - self._a, self._c - self._a), axis=1)
        self._boundary = self._boundary_edges()

    def _boundary_edges(self) -> np.ndarray:
        e = np.concatenate([self.faces[:, [0, 1]], self.faces[:, [1, 2]], self.faces[:, [2, 0]]])
        e = np.sort(e, axis=1)
        uniq, counts = np.unique(e, axis=0, return_counts=True)
        return uniq[counts == 1]

    @property
    def is_closed(self) -> bool:
        return len(self._boundary) == 0

    def closest_points(self, points, chunk: int = 1 << 21):
        p = _pts(points)
        out = np.empty_like(p)
        nt = len(self.faces)
        step = max(1, chunk // nt)
        for s in range(0, len(p), step):
            q = p[s : s + step, None, :]
            cand = closest_points_on_triangles(q, self._a[None], self._b[None], self._c[None])
            d = ((cand - q) ** 2).sum(-1)
            best = np.argmin(d, axis=1)
            out[s : s + step] = cand[np.arange(len(best)), best]
        return out

    def sample(self, n, rng):
        which = rng.choice(len(self.faces), size=n, p=self._areas / self._areas.sum())
        r1 = np.sqrt(rng.uniform(size=n))
        r2 = rng.uniform(size=n)
        a, b, c = self._a[which], self._b[which], self._c[which]
        return (1 - r1)[:, None] * a + (r1 * (1 - r2))[:, None] * b + (r1 * r2)[:, None] * c

    @property
    def area(self):
        return float(self._areas.sum())

    @property
    def bounds(self):
        return self.vertices[self.faces.ravel()].min(axis=0), self.vertices[self.faces.ravel()].max(axis=0)

    def boundary_distance(self, points):
        p = _pts(points)
        if self.is_closed:
            return np.full(len(p), np.inf)
        a = self.vertices[self._boundary[:, 0]][None]
        b = self.vertices[self._boundary[:, 1]][None]
        q = closest_points_on_segments(p[:, None, :], a, b)
        return np.sqrt(((q - p[:, None, :]) ** 2).sum(-1)).min(axis=1)

    def transformed(self, frame):
        return TriangleMesh(frame.to_canonical(self.vertices), self.faces, self.path)

    def spec(self):
        return f"mesh:{self.path}" if self.path else f"mesh:<{len(self.faces)} faces>"


# ---------------------------------------------------------------------------
# parsing


def load_mesh(path) -> TriangleMesh:
    """Read an ASCII OBJ (``v``/``f`` records) or OFF triangle mesh."""
    path = Path(path)
    if not path.exists():
        raise FileNotFoundError(f"mesh file not found: {path}")
    text = path.read_text().split("\n")
    verts, faces = [], []
    if path.suffix.lower() == ".off":
        body = [ln.split("#")[0].strip() for ln in text]
        body = [ln for ln in body if ln]
        if body[0].upper().startswith("OFF"):
            head = body[0][3:].split() or body[1].split()
            rest = body[1:] if body[0][3:].split() else body[2:]
        else:
            raise GeometryError(f"{path}: missing OFF header")
        nv, nf = int(head[0]), int(head[1])
        verts = [[float(x) for x in ln.split()[:3]] for ln in rest[:nv]]
        for ln in rest[nv : nv + nf]:
            idx = [int(x) for x in ln.split()]
            poly = idx[1 : 1 + idx[0]]
            faces += [[poly[0], poly[i], poly[i + 1]] for i in range(1, len(poly) - 1)]
    else:
        for ln in text:
            tok = ln.split()
            if not tok:
                continue
            if tok[0] == "v":
                verts.append([float(x) for x in tok[1:4]])
            elif tok[0] == "f":
                poly = [int(t.split("/")[0]) for t in tok[1:]]
                poly = [i - 1 if i > 0 else len(verts) + i for i in poly]
                faces += [[poly[0], poly[i], poly[i + 1]] for i in range(1, len(poly) - 1)]
    return TriangleMesh(np.array(verts), np.array(faces), str(path))


def write_obj(mesh: TriangleMesh, path) -> None:
    with open(path, "w") as fh:
        for v in mesh.vertices:
            fh.write(f"v {float(v[0])!r} {float(v[1])!r} {float(v[2])!r}\n")
        for f in mesh.faces:
            fh.write(f"f {f[0] + 1} {f[1] + 1} {f[2] + 1}\n")


def _parse_value(text: str):
    parts = text.split("/")
    vals = [float(p) for p in parts]
    return vals[0] if len(vals) == 1 else tuple(vals)


def parse_surface(spec: str) -> Surface:
    """Parse ``kind:key=value,...`` (vectors as ``x/y/z``) or ``mesh:<path>``.

    >>> parse_surface("sphere:r=0.4")
    <Sphere sphere:r=0.4,center=0.0/0.0/0.0>
    """
    kind, _, rest = spec.strip().partition(":")
    kind = kind.lower()
    if kind == "mesh":
        return load_mesh(rest)
    kw = {}
    for item in filter(None, (s.strip() for s in rest.split(","))):
        key, eq, val = item.partition("=")
        if not eq:
            raise GeometryError(f"bad surface parameter {item!r} in {spec!r}")
        kw[key.strip()] = _parse_value(val.strip())
    try:
        if kind == "sphere":
            return Sphere(kw.pop("r"), kw.pop("center", (0.0, 0.0, 0.0)), **kw)
        if kind == "plane":
            return Plane(**kw)
        if kind == "box":
            half = kw.pop("half", 0.5)
            if np.ndim(half) == 0:
                half = (half,) * 3
            return Box(half, **kw)
        if kind == "torus":
            return Torus(**kw)
    except (KeyError, TypeError) as exc:
        raise GeometryError(f"bad surface spec {spec!r}: {exc}") from None
    raise GeometryError(f"unknown surface kind {kind!r}")


def box_mesh(half=(0.5, 0.5, 0.5), center=(0.0, 0.0, 0.0)) -> TriangleMesh:
    """Closed 12-triangle box, outward oriented."""
    h, c = _vec(half), _vec(center)
    corners = np.array([[x, y, z] for x in (-1, 1) for y in (-1, 1) for z in (-1, 1)], float)
    faces = [
        [0, 1, 3], [0, 3, 2], [4, 6, 7], [4, 7, 5],
        [0, 4, 5], [0, 5, 1], [2, 3, 7], [2, 7, 6],
        [0, 2, 6], [0, 6, 4], [1, 5, 7], [1, 7, 3],
    ]
    return TriangleMesh(c + corners * h, faces)


def square_mesh(half: float = 0.5, z: float = 0.0) -> TriangleMesh:
    """Open two-triangle square patch in the plane ``z``."""
    v = np.array([[-half, -half, z], [half, -half, z], [half, half, z], [-half, half, z]])
    return TriangleMesh(v, [[0, 1, 2], [0, 2, 3]])
