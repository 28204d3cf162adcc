"""Configuration and end-to-end orchestration of the upsampling pipeline."""
from __future__ import annotations

import dataclasses
import time
from dataclasses import dataclass, fields
from pathlib import Path

import numpy as np

from .dataprep import DataConfig
from .geometry import GeometryError, KnnIndex, PointCloud, denormalize_cloud, normalize_cloud
from .metrics import NUC_FRACTIONS, EvalConfig
from .nn import NetworkSpec, TrainConfig, load_params
from .postprocess import OutlierConfig, ScaleRequest, fps_indices, outlier_mask
from .projection import Estimator, LearnedEstimator, ProjectionConfig, analytic_estimator, project_all
from .seeding import SeedBand, default_grid, sample_seeds


class ConfigError(ValueError):
    pass


class StageError(RuntimeError):
    def __init__(self, stage: str, exc: BaseException):
        super().__init__(f"stage '{stage}' failed: {exc}")
        self.stage = stage
        self.cause = exc


@dataclass(frozen=True)
class PipelineConfig:
    # seeding
    voxel_size: float = 0.004
    d_lower: float = 0.011
    d_upper: float = 0.015
    fan_size: int = 10
    seed_search: str = "grow"
    # projection
    k_direction: int = 100
    k_distance: int = 30
    estimator: str = ""
    strict_mode: bool = True
    threads: int = 1
    chunk: int = 4096
    # postprocess
    outlier_removal: bool = True
    outlier_v: int = 16
    outlier_lambda: float = 1.5
    fps_start: str = "centroid"
    # data generation
    seeds_per_source: int = 5000
    group_size: int = 16
    cloud_size: int = 2048
    epsilon: float = 0.002
    patch_radius: float = 0.004
    family_count: int = 1
    seed: int = 0
    # training
    epochs: int = 100
    batch_size: int = 64
    lr: float = 1e-4
    beta1: float = 0.9
    beta2: float = 0.999
    adam_eps: float = 1e-8
    weight_decay: float = 0.0
    train_dtype: str = "float32"
    norm: str = "layer"
    input_scale: float = 10.0
    direction_output_scale: float = 1.0
    distance_output_scale: float = 0.01
    # evaluation
    tau: float = 0.01
    nuc_fractions: tuple = NUC_FRACTIONS
    n_disks: int = 9000

    def __post_init__(self):
        # building the sub-configs runs their validation
        self.band()
        self.outlier_config()
        self.data_config()
        self.train_config()
        self.network_spec("direction")
        if self.voxel_size <= 0:
            raise ConfigError("voxel_size must be positive")
        if self.seed_search not in ("grow", "candidates", "exhaustive"):
            raise ConfigError(f"seed_search must be grow, candidates or exhaustive, not {self.seed_search!r}")
        for key in ("k_direction", "k_distance", "threads", "chunk", "family_count", "n_disks"):
            if getattr(self, key) < 1:
                raise ConfigError(f"{key} must be >= 1")
        if not self.tau > 0:
            raise ConfigError("tau must be positive")
        if not all(0 < p < 1 for p in self.nuc_fractions):
            raise ConfigError("nuc_fractions must lie in (0, 1)")
        if not (self.fps_start == "centroid" or self.fps_start.startswith("index:")):
            raise ConfigError("fps_start must be 'centroid' or 'index:<i>'")

    def band(self) -> SeedBand:
        try:
            return SeedBand(self.d_lower, self.d_upper, self.fan_size)
        except GeometryError as exc:
            raise ConfigError(str(exc)) from None

    def outlier_config(self) -> OutlierConfig:
        try:
            return OutlierConfig(self.outlier_v, self.outlier_lambda)
        except GeometryError as exc:
            raise ConfigError(str(exc)) from None

    def projection_config(self) -> ProjectionConfig:
        return ProjectionConfig(self.k_direction, self.k_distance, self.strict_mode, self.chunk, self.threads)

    def data_config(self) -> DataConfig:
        if self.seeds_per_source < 0 or self.group_size < 1 or self.cloud_size < 3:
            raise ConfigError("seeds_per_source >= 0, group_size >= 1 and cloud_size >= 3 are required")
        if self.epsilon < 0 or self.patch_radius < 0 or self.epsilon >= self.d_lower:
            raise ConfigError("epsilon must lie in [0, d_lower) and patch_radius must be >= 0")
        return DataConfig(self.seeds_per_source, self.group_size, self.cloud_size, self.d_lower, self.d_upper,
                          self.epsilon, self.patch_radius, self.seed)

    def train_config(self) -> TrainConfig:
        if self.epochs < 1 or self.batch_size < 1 or not self.lr > 0:
            raise ConfigError("epochs, batch_size and lr must be positive")
        if self.train_dtype not in ("float32", "float64"):
            raise ConfigError("train_dtype must be float32 or float64")
        return TrainConfig(self.epochs, self.batch_size, self.lr, self.beta1, self.beta2, self.adam_eps,
                           self.weight_decay, self.seed, self.train_dtype)

    def network_spec(self, task: str) -> NetworkSpec:
        if task not in ("direction", "distance"):
            raise ConfigError(f"task must be direction or distance, not {task!r}")
        out_dim, scale = (3, self.direction_output_scale) if task == "direction" else (1, self.distance_output_scale)
        try:
            return NetworkSpec(output_dim=out_dim, norm=self.norm, input_scale=self.input_scale, output_scale=scale)
        except ValueError as exc:
            raise ConfigError(str(exc)) from None

    def eval_config(self) -> EvalConfig:
        return EvalConfig(self.tau, tuple(self.nuc_fractions), self.n_disks, self.seed)

    def replace(self, **changes) -> "PipelineConfig":
        return dataclasses.replace(self, **changes)


def _coerce(name: str, kind, text: str):
    text = text.strip()
    try:
        if kind is bool or kind == "bool":
            low = text.lower()
            if low in ("1", "true", "yes", "on"):
                return True
            if low in ("0", "false", "no", "off"):
                return False
            raise ValueError(text)
        if kind is int or kind == "int":
            return int(text)
        if kind is float or kind == "float":
            return float(text)
        if kind is tuple or kind == "tuple":
            return tuple(float(v) for v in text.replace(",", " ").split())
        return text
    except ValueError:
        raise ConfigError(f"config key {name}: cannot parse {text!r} as {getattr(kind, '__name__', kind)}") from None


def parse_config(text: str, base: PipelineConfig = PipelineConfig()) -> PipelineConfig:
    """Parse flat ``key = value`` lines; ``#`` starts a comment. Unknown keys are rejected."""
    types = {f.name: f.type for f in fields(PipelineConfig)}
    changes = {}
    for no, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        key, eq, val = line.partition("=")
        key = key.strip()
        if not eq:
            raise ConfigError(f"line {no}: expected key = value")
        if key not in types:
            raise ConfigError(f"line {no}: unknown config key {key!r}")
        changes[key] = _coerce(key, types[key], val)
    return base.replace(**changes)


def load_config(path) -> PipelineConfig:
    path = Path(path)
    if not path.exists():
        raise ConfigError(f"config file not found: {path}")
    return parse_config(path.read_text())


def format_config(cfg: PipelineConfig) -> str:
    out = []
    for f in fields(cfg):
        v = getattr(cfg, f.name)
        if isinstance(v, tuple):
            v = " ".join(repr(x) for x in v)
        elif isinstance(v, bool):
            v = str(v).lower()
        out.append(f"{f.name} = {v}")
    return "\n".join(out) + "\n"


# ---------------------------------------------------------------------------
# estimators


def load_estimator(spec: str = "", params: list | tuple = ()) -> Estimator:
    """``analytic:<surface spec>``, ``learned:<file>,<file>`` or two params files."""
    if spec.startswith("analytic:"):
        return analytic_estimator(spec[len("analytic:"):])
    paths = list(params)
    if spec.startswith("learned:"):
        paths += [p for p in spec[len("learned:"):].split(",") if p]
    elif spec:
        raise ConfigError(f"estimator must be analytic:<shape> or learned:<files>, not {spec!r}")
    if not paths:
        raise ConfigError("no estimator: pass --estimator or two --params files")
    nets = {}
    for p in paths:
        net, meta = load_params(p)
        task = meta.get("task") or ("direction" if net.spec.output_dim == 3 else "distance")
        nets[task] = net
    if set(nets) != {"direction", "distance"}:
        raise ConfigError(f"learned estimator needs one direction and one distance params file, got {sorted(nets)}")
    return LearnedEstimator(nets["direction"], nets["distance"])


# ---------------------------------------------------------------------------
# orchestration


@dataclass
class UpsampleResult:
    outputs: dict
    counts: dict
    timings: dict


def _stage(name, timings, fn, *args, **kw):
    t0 = time.perf_counter()
    try:
        out = fn(*args, **kw)
    except (GeometryError, ValueError, ArithmeticError) as exc:
        raise StageError(name, exc) from exc
    timings[name] = time.perf_counter() - t0
    return out


def upsample(points, estimator: Estimator, scales, cfg: PipelineConfig = PipelineConfig(), log=None) -> UpsampleResult:
    """Normalize, seed, project, clean and size ``points`` for every factor in ``scales``.

    One dense cloud serves all requested factors.
    """
    raw = PointCloud(np.asarray(points, dtype=np.float64).reshape(-1, 3))
    n_in = len(raw)
    requests = [ScaleRequest(float(r), n_in) for r in scales]
    timings, counts = {}, {"input": n_in}

    canon = _stage("normalize", timings, normalize_cloud, raw)
    index = KnnIndex(canon.points)
    grid = default_grid(canon, cfg.voxel_size, cfg.band())
    seeds = _stage("seeding", timings, sample_seeds, canon, grid, cfg.band(), index, cfg.seed_search)
    counts["seeds"] = len(seeds)

    est = estimator.for_frame(canon.frame)
    proj = _stage("projection", timings, project_all, seeds, est, canon, index, cfg.projection_config())
    counts["projected"] = len(proj.cloud)
    counts["skipped"] = len(proj.skipped)
    counts["clamped"] = proj.n_clamped

    dense = proj.cloud
    if cfg.outlier_removal:
        mask = _stage("outliers", timings, outlier_mask, dense.points, cfg.outlier_config())
        dense = dense.with_points(dense.points[~mask])
        counts["outliers"] = int(mask.sum())
    else:
        counts["outliers"] = 0
    dense_raw = denormalize_cloud(dense)

    outputs = {}
    t0 = time.perf_counter()
    for req in requests:
        if len(dense_raw) < req.target:
            raise StageError("sizing", GeometryError(
                f"scale {req.factor:g} needs {req.target} points but only {len(dense_raw)} remain; "
                "oversample more seeds (reduce voxel size)"))
        idx = fps_indices(dense_raw.points, req.target, cfg.fps_start)
        outputs[req.factor] = dense_raw.points[idx]
    timings["sizing"] = time.perf_counter() - t0
    if log is not None:
        for k, v in counts.items():
            log(f"{k:>10}: {v}")
        for k, v in timings.items():
            log(f"{k:>10}: {v:.3f} s")
    return UpsampleResult(outputs, counts, timings)
