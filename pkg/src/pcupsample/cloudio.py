"""ASCII point cloud files: XYZ (``x y z`` per line) and vertex-only PLY.

Coordinates are written with 17 significant digits, so a write/read round
trip reproduces float64 values exactly.
"""
from __future__ import annotations

from pathlib import Path

import numpy as np

from .geometry import GeometryError

FORMATS = ("xyz", "ply")


class CloudFileError(GeometryError):
    pass


def detect_format(path) -> str:
    suffix = Path(path).suffix.lower().lstrip(".")
    if suffix in ("xyz", "txt", "pts"):
        return "xyz"
    if suffix == "ply":
        return "ply"
    raise CloudFileError(f"{path}: unknown cloud format (expected .xyz or .ply)")


def _parse_rows(lines, path, first_line) -> np.ndarray:
    rows = []
    for i, line in enumerate(lines):
        parts = line.split()
        if not parts or parts[0].startswith("#"):
            continue
        try:
            rows.append([float(v) for v in parts[:3]])
        except ValueError:
            raise CloudFileError(f"{path}:{first_line + i}: cannot parse coordinates {line.strip()!r}") from None
        if len(rows[-1]) != 3:
            raise CloudFileError(f"{path}:{first_line + i}: expected 3 coordinates")
    pts = np.array(rows, dtype=np.float64).reshape(-1, 3)
    if not np.all(np.isfinite(pts)):
        raise CloudFileError(f"{path}: non-finite coordinates")
    return pts


def _read_ply(path, lines) -> np.ndarray:
    if not lines or lines[0].strip() != "ply":
        raise CloudFileError(f"{path}: missing 'ply' magic line")
    n_vertex, props, element, fmt = None, [], None, None
    for i, line in enumerate(lines[1:], start=1):
        parts = line.split()
        if not parts:
            continue
        if parts[0] == "format":
            fmt = parts[1]
        elif parts[0] == "element":
            element = parts[1]
            if element == "vertex":
                n_vertex = int(parts[2])
        elif parts[0] == "property" and element == "vertex":
            props.append(parts[-1])
        elif parts[0] == "end_header":
            body = i + 1
            break
    else:
        raise CloudFileError(f"{path}: missing end_header")
    if fmt != "ascii":
        raise CloudFileError(f"{path}: only ASCII PLY is supported (got format {fmt})")
    if n_vertex is None:
        raise CloudFileError(f"{path}: no vertex element")
    try:
        cols = [props.index(c) for c in "xyz"]
    except ValueError:
        raise CloudFileError(f"{path}: vertex element lacks x/y/z properties") from None
    rows = lines[body : body + n_vertex]
    if len(rows) != n_vertex:
        raise CloudFileError(f"{path}: header declares {n_vertex} vertices, found {len(rows)}")
    try:
        data = np.array([r.split() for r in rows], dtype=np.float64)
    except ValueError:
        raise CloudFileError(f"{path}: malformed vertex rows") from None
    return data.reshape(n_vertex, -1)[:, cols]


def read_cloud(path) -> np.ndarray:
    path = Path(path)
    if not path.exists():
        raise CloudFileError(f"cloud file not found: {path}")
    fmt = detect_format(path)
    lines = path.read_text().splitlines()
    pts = _read_ply(path, lines) if fmt == "ply" else _parse_rows(lines, path, 1)
    if len(pts) == 0:
        raise CloudFileError(f"{path}: no points")
    return pts


def format_cloud(points: np.ndarray, fmt: str = "xyz") -> str:
    points = np.asarray(points, dtype=np.float64).reshape(-1, 3)
    body = "".join(f"{x:.17g} {y:.17g} {z:.17g}\n" for x, y, z in points)
    if fmt == "xyz":
        return body
    if fmt == "ply":
        head = (
            "ply\nformat ascii 1.0\n"
            f"element vertex {len(points)}\n"
            "property double x\nproperty double y\nproperty double z\n"
            "end_header\n"
        )
        return head + body
    raise CloudFileError(f"unknown cloud format {fmt!r}")


def write_cloud(path, points: np.ndarray) -> None:
    path = Path(path)
    path.write_text(format_cloud(points, detect_format(path)))
