"""Small point-set networks trained with hand-written backprop and Adam.

Architecture: a shared per-point MLP (Linear + ReLU per layer), max pooling
over the neighbourhood, then a fully connected head whose hidden layers are
Linear -> normalisation -> ReLU and whose last layer is linear.
"""
from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

PARAMS_FORMAT = "pcupsample-network"
PARAMS_VERSION = 1


class TrainingError(RuntimeError):
    pass


@dataclass(frozen=True)
class NetworkSpec:
    point_widths: tuple = (64, 128, 256)
    head_widths: tuple = (128, 64, 32)
    output_dim: int = 3
    norm: str = "layer"  # "layer", "batch" or "none"
    input_scale: float = 10.0
    output_scale: float = 1.0

    def __post_init__(self):
        object.__setattr__(self, "point_widths", tuple(int(w) for w in self.point_widths))
        object.__setattr__(self, "head_widths", tuple(int(w) for w in self.head_widths))
        if self.output_dim not in (1, 3):
            raise ValueError("output_dim must be 1 or 3")
        if self.norm not in ("layer", "batch", "none"):
            raise ValueError(f"unknown normalisation {self.norm!r}")
        if not self.point_widths or min(self.point_widths + self.head_widths) < 1:
            raise ValueError("layer widths must be positive")

    @property
    def feature_dim(self) -> int:
        return self.point_widths[-1]

    def layout(self) -> list[tuple[str, tuple]]:
        shapes = []
        d = 3
        for i, w in enumerate(self.point_widths):
            shapes += [(f"enc{i}.W", (d, w)), (f"enc{i}.b", (w,))]
            d = w
        for i, w in enumerate(self.head_widths):
            shapes += [(f"fc{i}.W", (d, w)), (f"fc{i}.b", (w,))]
            if self.norm != "none":
                shapes += [(f"fc{i}.gamma", (w,)), (f"fc{i}.beta", (w,))]
            d = w
        shapes += [("out.W", (d, self.output_dim)), ("out.b", (self.output_dim,))]
        return shapes

    @property
    def n_params(self) -> int:
        return sum(int(np.prod(s)) for _, s in self.layout())


@dataclass
class NetworkParams:
    spec: NetworkSpec
    flat: np.ndarray
    seed: int = 0
    # batch-norm running statistics (inference only, never trained)
    buffers: dict = field(default_factory=dict)

    def __post_init__(self):
        self.flat = np.asarray(self.flat, dtype=np.float64)
        if self.flat.shape != (self.spec.n_params,):
            raise ValueError(f"parameter vector has {self.flat.size} entries, spec needs {self.spec.n_params}")

    def views(self, flat: np.ndarray | None = None) -> dict[str, np.ndarray]:
        flat = self.flat if flat is None else flat
        out, off = {}, 0
        for name, shape in self.spec.layout():
            size = int(np.prod(shape))
            out[name] = flat[off : off + size].reshape(shape)
            off += size
        return out

    def copy(self) -> "NetworkParams":
        return NetworkParams(self.spec, self.flat.copy(), self.seed, {k: v.copy() for k, v in self.buffers.items()})


def init_params(spec: NetworkSpec, seed: int = 0) -> NetworkParams:
    """He-style uniform init scaled by fan-in; biases and betas zero, gammas one."""
    rng = np.random.default_rng(seed)
    params = NetworkParams(spec, np.zeros(spec.n_params), seed)
    v = params.views()
    for name, shape in spec.layout():
        if name.endswith(".W"):
            bound = math.sqrt(6.0 / shape[0])
            if name == "out.W":
                bound = math.sqrt(3.0 / shape[0])
            v[name][...] = rng.uniform(-bound, bound, size=shape)
        elif name.endswith(".gamma"):
            v[name][...] = 1.0
    if spec.norm == "batch":
        for i, w in enumerate(spec.head_widths):
            params.buffers[f"fc{i}.mean"] = np.zeros(w)
            params.buffers[f"fc{i}.var"] = np.ones(w)
    return params


# ---------------------------------------------------------------------------
# forward / backward

_NORM_EPS = 1e-5
_BN_MOMENTUM = 0.1


def _canonical_order(x: np.ndarray) -> np.ndarray:
    # sort each neighbourhood lexicographically so results never depend on input order
    b, k, _ = x.shape
    rows = np.broadcast_to(np.arange(b)[:, None], (b, k))
    order = np.lexsort((x[..., 2].ravel(), x[..., 1].ravel(), x[..., 0].ravel(), rows.ravel()))
    return x.reshape(-1, 3)[order].reshape(b, k, 3)


def _forward(params: NetworkParams, x: np.ndarray, train: bool, dtype, cache: bool):
    spec = params.spec
    x = np.asarray(x, dtype=np.float64)
    if x.ndim == 2:
        x = x[None]
    if x.ndim != 3 or x.shape[-1] != 3 or x.shape[1] == 0:
        raise ValueError("neighbourhood must be a non-empty (batch, k, 3) array")
    if not np.all(np.isfinite(x)):
        raise ValueError("non-finite neighbourhood")
    v = {k: a.astype(dtype, copy=False) for k, a in params.views().items()}
    b, k, _ = x.shape
    h = (_canonical_order(x) * spec.input_scale).reshape(b * k, 3).astype(dtype)
    saved = {"enc_in": [], "fc": []}
    for i in range(len(spec.point_widths)):
        if cache:
            saved["enc_in"].append(h)
        h = np.maximum(h @ v[f"enc{i}.W"] + v[f"enc{i}.b"], 0)
    h = h.reshape(b, k, -1)
    arg = np.argmax(h, axis=1)
    feat = np.take_along_axis(h, arg[:, None, :], axis=1)[:, 0]
    if cache:
        saved["enc_out"] = h
        saved["pool_arg"] = arg
        saved["k"] = k
    h = feat
    for i in range(len(spec.head_widths)):
        z = h @ v[f"fc{i}.W"] + v[f"fc{i}.b"]
        entry = {"in": h}
        if spec.norm == "layer":
            mu = z.mean(axis=1, keepdims=True)
            var = z.var(axis=1, keepdims=True)
            inv = 1.0 / np.sqrt(var + _NORM_EPS)
            zh = (z - mu) * inv
            n = zh * v[f"fc{i}.gamma"] + v[f"fc{i}.beta"]
            entry.update(zh=zh, inv=inv)
        elif spec.norm == "batch":
            if train:
                mu = z.mean(axis=0)
                var = z.var(axis=0)
                if cache:
                    m = params.buffers
                    m[f"fc{i}.mean"] = (1 - _BN_MOMENTUM) * m[f"fc{i}.mean"] + _BN_MOMENTUM * mu
                    unbiased = var * b / max(b - 1, 1)
                    m[f"fc{i}.var"] = (1 - _BN_MOMENTUM) * m[f"fc{i}.var"] + _BN_MOMENTUM * unbiased
            else:
                mu = params.buffers[f"fc{i}.mean"].astype(dtype)
                var = params.buffers[f"fc{i}.var"].astype(dtype)
            inv = 1.0 / np.sqrt(var + _NORM_EPS)
            zh = (z - mu) * inv
            n = zh * v[f"fc{i}.gamma"] + v[f"fc{i}.beta"]
            entry.update(zh=zh, inv=inv)
        else:
            n = z
        h = np.maximum(n, 0)
        entry["pre"] = n
        saved["fc"].append(entry)
    saved["head_out"] = h
    y = (h @ v["out.W"] + v["out.b"]) * spec.output_scale
    return y, saved, v


def forward(params: NetworkParams, neighborhood, dtype=np.float64) -> np.ndarray:
    """Network output for one ``(k, 3)`` neighbourhood or a ``(B, k, 3)`` batch."""
    x = np.asarray(neighborhood)
    y, _, _ = _forward(params, x, False, dtype, cache=False)
    y = y.astype(np.float64)
    return y[0] if x.ndim == 2 else y


def loss_mse(pred, target) -> float:
    pred = np.asarray(pred, dtype=np.float64)
    target = np.asarray(target, dtype=np.float64)
    if pred.shape != target.shape:
        raise ValueError(f"length mismatch: {pred.shape} vs {target.shape}")
    return float(np.mean((pred - target) ** 2))


def loss_and_grad(params: NetworkParams, x, target, dtype=np.float64, train: bool = True) -> tuple[float, np.ndarray]:
    """Mean-squared-error loss over a batch and its exact gradient w.r.t. ``params.flat``."""
    spec = params.spec
    target = np.asarray(target, dtype=np.float64).reshape(len(x), spec.output_dim)
    y, s, v = _forward(params, x, train, dtype, cache=True)
    diff = y - target.astype(dtype)
    loss = float(np.mean(diff.astype(np.float64) ** 2))
    g = {}
    dy = (2.0 / diff.size) * diff * spec.output_scale
    h = s["head_out"]
    g["out.W"] = h.T @ dy
    g["out.b"] = dy.sum(axis=0)
    dh = dy @ v["out.W"].T
    for i in reversed(range(len(spec.head_widths))):
        e = s["fc"][i]
        dn = dh * (e["pre"] > 0)
        if spec.norm == "none":
            dz = dn
        else:
            g[f"fc{i}.gamma"] = (dn * e["zh"]).sum(axis=0)
            g[f"fc{i}.beta"] = dn.sum(axis=0)
            dzh = dn * v[f"fc{i}.gamma"]
            if spec.norm == "layer" or train:
                ax = 1 if spec.norm == "layer" else 0
                cnt = dzh.shape[ax]
                dz = e["inv"] / cnt * (
                    cnt * dzh
                    - dzh.sum(axis=ax, keepdims=True)
                    - e["zh"] * (dzh * e["zh"]).sum(axis=ax, keepdims=True)
                )
            else:
                dz = dzh * e["inv"]
        g[f"fc{i}.W"] = e["in"].T @ dz
        g[f"fc{i}.b"] = dz.sum(axis=0)
        dh = dz @ v[f"fc{i}.W"].T
    # max-pool: route the gradient to the arg-max point of each channel
    b, k = dh.shape[0], s["k"]
    enc = np.zeros_like(s["enc_out"])
    np.put_along_axis(enc, s["pool_arg"][:, None, :], dh[:, None, :], axis=1)
    dh = enc.reshape(b * k, -1)
    post = s["enc_out"].reshape(b * k, -1)
    for i in reversed(range(len(spec.point_widths))):
        dz = dh * (post > 0)
        hin = s["enc_in"][i]
        g[f"enc{i}.W"] = hin.T @ dz
        g[f"enc{i}.b"] = dz.sum(axis=0)
        if i:
            dh = dz @ v[f"enc{i}.W"].T
            post = hin
    flat = np.concatenate([g[name].astype(np.float64).ravel() for name, _ in spec.layout()])
    return loss, flat


def backward(params: NetworkParams, batch, dtype=np.float64) -> np.ndarray:
    """Gradient of the mean batch loss; ``batch`` is ``(neighbourhoods, targets)``."""
    x, t = batch
    return loss_and_grad(params, x, t, dtype)[1]


# ---------------------------------------------------------------------------
# Adam


@dataclass
class OptimizerState:
    lr: float = 1e-4
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    weight_decay: float = 0.0
    m: np.ndarray | None = None
    v: np.ndarray | None = None
    step: int = 0


def adam_step(params: NetworkParams, grads: np.ndarray, state: OptimizerState) -> tuple[NetworkParams, OptimizerState]:
    """One bias-corrected Adam update; returns new params and state (inputs untouched)."""
    grads = np.asarray(grads, dtype=np.float64)
    if grads.shape != params.flat.shape:
        raise ValueError("gradient shape does not match parameters")
    if not np.all(np.isfinite(grads)):
        raise TrainingError("diverged: non-finite gradient")
    if state.weight_decay:
        grads = grads + state.weight_decay * params.flat
    m = np.zeros_like(params.flat) if state.m is None else state.m
    v = np.zeros_like(params.flat) if state.v is None else state.v
    t = state.step + 1
    m = state.beta1 * m + (1 - state.beta1) * grads
    v = state.beta2 * v + (1 - state.beta2) * grads * grads
    mhat = m / (1 - state.beta1**t)
    vhat = v / (1 - state.beta2**t)
    new = params.copy()
    new.flat = params.flat - state.lr * mhat / (np.sqrt(vhat) + state.eps)
    if not np.all(np.isfinite(new.flat)):
        raise TrainingError("diverged: non-finite parameters")
    return new, OptimizerState(state.lr, state.beta1, state.beta2, state.eps, state.weight_decay, m, v, t)


# ---------------------------------------------------------------------------
# training


@dataclass(frozen=True)
class TrainConfig:
    epochs: int = 100
    batch_size: int = 64
    lr: float = 1e-4
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    weight_decay: float = 0.0
    seed: int = 0
    dtype: str = "float32"


@dataclass
class TrainResult:
    params: NetworkParams
    loss_curve: list


def train(spec: NetworkSpec, inputs: np.ndarray, targets: np.ndarray, config: TrainConfig = TrainConfig(), progress=None) -> TrainResult:
    """Minimise MSE over ``(inputs, targets)`` with mini-batch Adam.

    ``inputs`` is ``(n, k, 3)``; ``targets`` is ``(n, output_dim)``. The
    shuffle stream and initial weights both derive from ``config.seed``.
    """
    inputs = np.asarray(inputs, dtype=np.float64)
    if len(inputs) == 0:
        raise TrainingError("empty training set")
    targets = np.asarray(targets, dtype=np.float64).reshape(len(inputs), -1)
    if targets.shape[1] != spec.output_dim:
        raise TrainingError(f"targets have {targets.shape[1]} columns, network outputs {spec.output_dim}")
    dtype = np.dtype(config.dtype)
    params = init_params(spec, config.seed)
    state = OptimizerState(config.lr, config.beta1, config.beta2, config.eps, config.weight_decay)
    rng = np.random.default_rng([config.seed, 1])
    curve = []
    n = len(inputs)
    for epoch in range(config.epochs):
        order = rng.permutation(n)
        total = 0.0
        for s in range(0, n, config.batch_size):
            sel = order[s : s + config.batch_size]
            loss, grad = loss_and_grad(params, inputs[sel], targets[sel], dtype)
            if not math.isfinite(loss):
                raise TrainingError(f"diverged at epoch {epoch + 1}: non-finite loss")
            try:
                params, state = adam_step(params, grad, state)
            except TrainingError as exc:
                raise TrainingError(f"{exc} at epoch {epoch + 1}") from None
            total += loss * len(sel)
        curve.append(total / n)
        if progress is not None:
            progress(epoch + 1, curve[-1])
    return TrainResult(params, curve)


# ---------------------------------------------------------------------------
# parameter files


def save_params(params: NetworkParams, path, task: str | None = None, extra: dict | None = None) -> None:
    doc = {
        "format": PARAMS_FORMAT,
        "version": PARAMS_VERSION,
        "task": task,
        "seed": params.seed,
        "spec": asdict(params.spec),
        "layout": [[name, list(shape)] for name, shape in params.spec.layout()],
        "params": [float(x) for x in params.flat],
        "buffers": {k: [float(x) for x in v] for k, v in sorted(params.buffers.items())},
        "extra": extra or {},
    }
    Path(path).write_text(json.dumps(doc, indent=None, separators=(",", ":")) + "\n")


def load_params(path, expect_task: str | None = None) -> tuple[NetworkParams, dict]:
    path = Path(path)
    if not path.exists():
        raise FileNotFoundError(f"params file not found: {path}")
    doc = json.loads(path.read_text())
    if doc.get("format") != PARAMS_FORMAT:
        raise ValueError(f"{path}: not a network parameter file")
    if doc.get("version") != PARAMS_VERSION:
        raise ValueError(f"{path}: unsupported params version {doc.get('version')!r}")
    spec = NetworkSpec(**doc["spec"])
    if [[n, list(s)] for n, s in spec.layout()] != doc["layout"]:
        raise ValueError(f"{path}: layer layout does not match spec")
    task = doc.get("task")
    if expect_task is not None and task != expect_task:
        raise ValueError(f"{path}: holds a {task!r} network, expected {expect_task!r}")
    want = {"direction": 3, "distance": 1}.get(task)
    if want is not None and spec.output_dim != want:
        raise ValueError(f"{path}: {task} network must have output_dim {want}, found {spec.output_dim}")
    params = NetworkParams(spec, np.array(doc["params"]), doc.get("seed", 0), {k: np.array(v) for k, v in doc.get("buffers", {}).items()})
    return params, doc
