"""Point cloud quality metrics: CD, EMD, F-score, point-to-surface, NUC."""
from __future__ import annotations

import hashlib
import json
import math
from dataclasses import asdict, dataclass, field

import numpy as np
from scipy.optimize import linear_sum_assignment
from scipy.spatial import cKDTree

from .geometry import GeometryError, PointCloud
from .surfaces import Surface

NUC_FRACTIONS = (0.002, 0.004, 0.006, 0.008, 0.010)
EXACT_EMD_LIMIT = 1024


class MetricsError(GeometryError):
    pass


def _pts(cloud) -> np.ndarray:
    pts = cloud.points if isinstance(cloud, PointCloud) else np.asarray(cloud, dtype=np.float64).reshape(-1, 3)
    if len(pts) == 0:
        raise MetricsError("empty cloud")
    return pts


def _nn_dist(src: np.ndarray, dst: np.ndarray) -> np.ndarray:
    return cKDTree(dst).query(src, k=1)[0]


def chamfer_distance(a, b) -> float:
    """Mean nearest-neighbour distance A->B plus B->A (Euclidean, not squared)."""
    a, b = _pts(a), _pts(b)
    return float(_nn_dist(a, b).mean() + _nn_dist(b, a).mean())


def _assignment_cost(a: np.ndarray, b: np.ndarray) -> float:
    cost = np.linalg.norm(a[:, None, :] - b[None, :, :], axis=2)
    r, c = linear_sum_assignment(cost)
    return float(cost[r, c].sum())


def earth_mover_distance(a, b, exact_limit: int = EXACT_EMD_LIMIT) -> tuple[float, bool]:
    """Mean cost of an optimal perfect matching; returns ``(value, exact)``.

    Above ``exact_limit`` points both clouds are ordered along the principal
    axis of their union and matched exactly within aligned blocks, which
    gives an upper bound on the true value.
    """
    a, b = _pts(a), _pts(b)
    if len(a) != len(b):
        raise MetricsError("EMD requires equal sizes")
    n = len(a)
    if n <= exact_limit:
        return _assignment_cost(a, b) / n, True
    both = np.vstack([a, b])
    centred = both - both.mean(axis=0)
    axis = np.linalg.svd(centred, full_matrices=False)[2][0]
    oa = np.lexsort((np.arange(n), a @ axis))
    ob = np.lexsort((np.arange(n), b @ axis))
    total = 0.0
    for s in range(0, n, exact_limit):
        total += _assignment_cost(a[oa[s : s + exact_limit]], b[ob[s : s + exact_limit]])
    return total / n, False


def f_score(pred, gt, tau: float = 0.01) -> float:
    if not tau > 0:
        raise MetricsError("tau must be positive")
    pred, gt = _pts(pred), _pts(gt)
    precision = float((_nn_dist(pred, gt) <= tau).mean())
    recall = float((_nn_dist(gt, pred) <= tau).mean())
    if precision + recall == 0:
        return 0.0
    return 2 * precision * recall / (precision + recall)


def point_to_surface_stats(pred, surface: Surface) -> tuple[float, float]:
    d = surface.distance(_pts(pred))
    return float(d.mean()), float(d.std())


def disk_radius(surface: Surface, p: float) -> float:
    return math.sqrt(p * surface.area / math.pi)


def disk_centres(surface: Surface, radius: float, n_disks: int, rng: np.random.Generator, max_rounds: int = 1000) -> np.ndarray:
    """Area-uniform surface samples whose disk of ``radius`` stays clear of any boundary."""
    out, have = [], 0
    for _ in range(max_rounds):
        c = surface.sample(max(n_disks, 1024), rng)
        c = c[surface.boundary_distance(c) >= radius]
        out.append(c)
        have += len(c)
        if have >= n_disks:
            return np.concatenate(out)[:n_disks]
    raise MetricsError("disk radius too large for the surface: no interior disk centres")


def nuc(pred, surface: Surface, p: float, n_disks: int = 9000, seed: int = 0) -> float:
    """Normalized uniformity coefficient over ``n_disks`` random disks of area fraction ``p``.

    Each disk's count is normalised by its expected value ``N * p``; the
    result is the population standard deviation of those ratios.
    """
    if not 0 < p < 1:
        raise MetricsError("area fraction p must lie in (0, 1)")
    pts = _pts(pred)
    radius = disk_radius(surface, p)
    rng = np.random.default_rng([seed, int(round(p * 1e6))])
    centres = disk_centres(surface, radius, n_disks, rng)
    counts = cKDTree(pts).query_ball_point(centres, radius, return_length=True)
    ratio = counts / (len(pts) * p)
    return float(ratio.std())


@dataclass(frozen=True)
class EvalConfig:
    tau: float = 0.01
    fractions: tuple = NUC_FRACTIONS
    n_disks: int = 9000
    seed: int = 0
    exact_emd_limit: int = EXACT_EMD_LIMIT


@dataclass
class MetricsReport:
    cd: float
    emd: float | None
    f_score: float
    mean_dist: float | None
    std_dist: float | None
    nuc: dict = field(default_factory=dict)
    meta: dict = field(default_factory=dict)

    def to_text(self) -> str:
        body = asdict(self)
        body["nuc"] = {repr(float(k)): v for k, v in self.nuc.items()}
        digest = hashlib.sha256(json.dumps(self.meta, sort_keys=True).encode()).hexdigest()[:16]
        lines = [f"config_hash={digest}"]
        for key in ("cd", "emd", "f_score", "mean_dist", "std_dist"):
            lines.append(f"{key}={json.dumps(body[key])}")
        for k, v in body["nuc"].items():
            lines.append(f"nuc[{k}]={json.dumps(v)}")
        lines.append(f"meta={json.dumps(self.meta, sort_keys=True)}")
        return "\n".join(lines) + "\n"

    @classmethod
    def from_text(cls, text: str) -> "MetricsReport":
        vals, nucs, meta = {}, {}, {}
        for line in text.strip().splitlines():
            key, _, val = line.partition("=")
            if key == "config_hash":
                continue
            if key == "meta":
                meta = json.loads(val)
            elif key.startswith("nuc["):
                nucs[float(key[4:-1])] = json.loads(val)
            else:
                vals[key] = json.loads(val)
        return cls(nuc=nucs, meta=meta, **vals)

    def table(self) -> str:
        """Values scaled as in the usual result tables: distances x1e3, p in percent."""
        def s(v, k=1e3):
            return "-" if v is None else f"{v * k:.3f}"
        rows = [
            f"CD (1e-3)      {s(self.cd)}",
            f"EMD (1e-3)     {s(self.emd)}",
            f"F-score (1e-3) {s(self.f_score)}",
            f"mean (1e-3)    {s(self.mean_dist)}",
            f"std (1e-3)     {s(self.std_dist)}",
        ]
        for p, v in sorted(self.nuc.items()):
            rows.append(f"NUC p={p * 100:.1f}%  {s(v)}")
        return "\n".join(rows)


def evaluate(pred, gt, surface: Surface | None = None, config: EvalConfig = EvalConfig()) -> MetricsReport:
    """All metrics for ``pred`` against ``gt`` (and ``surface`` when given).

    EMD is left empty when the clouds differ in size; surface metrics are
    left empty without a surface.
    """
    pred, gt = _pts(pred), _pts(gt)
    meta = {
        "n_pred": len(pred),
        "n_gt": len(gt),
        "tau": config.tau,
        "n_disks": config.n_disks,
        "seed": config.seed,
        "fractions": list(config.fractions),
    }
    emd = None
    if len(pred) == len(gt):
        emd, exact = earth_mover_distance(pred, gt, config.exact_emd_limit)
        meta["emd_exact"] = exact
    else:
        meta["emd_exact"] = None
    mean = std = None
    nucs = {}
    if surface is not None:
        mean, std = point_to_surface_stats(pred, surface)
        meta["surface"] = surface.spec()
        for p in config.fractions:
            nucs[float(p)] = nuc(pred, surface, p, config.n_disks, config.seed)
    return MetricsReport(chamfer_distance(pred, gt), emd, f_score(pred, gt, config.tau), mean, std, nucs, meta)
