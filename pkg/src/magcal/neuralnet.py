"""Feed-forward calibration network (F -> 384 -> 128 -> 3, ELU) trained with momentum SGD.

Training streams data one month at a time: a month source is either an
in-memory ``CleanMonthTable`` or a zero-argument callable that loads one.
"""

from __future__ import annotations

import json
import math
import time
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Callable, Iterator, Sequence, Union

import numpy as np

from .core import SeededRng, derive_seed, shuffle_permutation
from .preprocess import CleanMonthTable

ELU_ALPHA = 1.0

MonthSource = Union[CleanMonthTable, Callable[[], CleanMonthTable]]


class TrainingError(RuntimeError):
    pass


def elu(x):
    x = np.asarray(x, dtype=np.float64)
    return np.where(x > 0, x, ELU_ALPHA * np.expm1(np.minimum(x, 0.0)))


def elu_grad(x):
    x = np.asarray(x, dtype=np.float64)
    return np.where(x > 0, 1.0, ELU_ALPHA * np.exp(np.minimum(x, 0.0)))


@dataclass(frozen=True)
class TrainConfig:
    lr0: float = 1e-3
    gamma: float = 0.5
    step_epochs: int = 10
    epochs: int = 30
    finetune_epochs: int = 10
    batch_size: int = 256
    momentum: float = 0.9
    validation_fraction: float = 0.1
    hidden: tuple[int, ...] = (384, 128)
    seed: int = 0

    def __post_init__(self):
        if not 0 < self.gamma <= 1:
            raise ValueError("gamma must lie in (0, 1]")
        if self.batch_size < 1:
            raise ValueError("batch_size must be >= 1")
        if not 0 <= self.validation_fraction < 1:
            raise ValueError("validation_fraction must lie in [0, 1)")
        if self.step_epochs < 1:
            raise ValueError("step_epochs must be >= 1")
        object.__setattr__(self, "hidden", tuple(int(h) for h in self.hidden))


def lr_at(epoch: int, cfg: TrainConfig) -> float:
    if epoch < 0:
        raise ValueError("epoch must be >= 0")
    return cfg.lr0 * cfg.gamma ** (epoch // cfg.step_epochs)


@dataclass
class ModelParams:
    weights: list[np.ndarray]   # W1 (F x h1), W2 (h1 x h2), W3 (h2 x 3)
    biases: list[np.ndarray]
    feature_names: tuple[str, ...]
    seed: int = 0
    meta: dict = field(default_factory=dict)
    # fixed output de-normalization: d_hat = target_mean + target_scale * (linear output)
    target_mean: np.ndarray = field(default_factory=lambda: np.zeros(3))
    target_scale: np.ndarray = field(default_factory=lambda: np.ones(3))

    def __post_init__(self):
        self.target_mean = np.asarray(self.target_mean, dtype=np.float64)
        self.target_scale = np.asarray(self.target_scale, dtype=np.float64)
        if len(self.weights) != len(self.biases):
            raise ValueError("weights and biases must pair up")
        if self.weights[0].shape[0] != len(self.feature_names):
            raise ValueError("first layer does not match the feature count")
        for w, b in zip(self.weights, self.biases):
            if b.shape != (w.shape[1],):
                raise ValueError("bias shape mismatch")
        for a, b in zip(self.weights, self.weights[1:]):
            if a.shape[1] != b.shape[0]:
                raise ValueError("layer dimensions do not chain")

    @property
    def dims(self) -> list[int]:
        return [self.weights[0].shape[0]] + [w.shape[1] for w in self.weights]

    def arrays(self) -> list[np.ndarray]:
        return [a for pair in zip(self.weights, self.biases) for a in pair]

    def copy(self) -> "ModelParams":
        return ModelParams([w.copy() for w in self.weights], [b.copy() for b in self.biases],
                           self.feature_names, self.seed, dict(self.meta),
                           self.target_mean.copy(), self.target_scale.copy())

    def to_json(self) -> dict:
        return {
            "dims": self.dims,
            "feature_names": list(self.feature_names),
            "seed": self.seed,
            "target_mean": self.target_mean.tolist(),
            "target_scale": self.target_scale.tolist(),
            "layers": [
                {"rows": w.shape[0], "cols": w.shape[1], "weights": w.ravel().tolist(), "bias": b.tolist()}
                for w, b in zip(self.weights, self.biases)
            ],
            "meta": self.meta,
        }

    @classmethod
    def from_json(cls, d: dict) -> "ModelParams":
        weights = [np.array(l["weights"], dtype=np.float64).reshape(l["rows"], l["cols"]) for l in d["layers"]]
        biases = [np.array(l["bias"], dtype=np.float64) for l in d["layers"]]
        return cls(weights, biases, tuple(d["feature_names"]), int(d["seed"]), d.get("meta", {}),
                   np.array(d.get("target_mean", [0.0] * 3)), np.array(d.get("target_scale", [1.0] * 3)))

    def save(self, path: Path) -> Path:
        path = Path(path)
        path.parent.mkdir(parents=True, exist_ok=True)
        path.write_text(json.dumps(self.to_json()) + "\n")
        return path

    @classmethod
    def load(cls, path: Path) -> "ModelParams":
        return cls.from_json(json.loads(Path(path).read_text()))


def init_params(feature_names: Sequence[str], hidden: Sequence[int] = (384, 128), seed: int = 0) -> ModelParams:
    """Fan-in scaled normal weights (He) for the hidden layers, zero biases.

    The linear output layer starts at zero, so an untrained model predicts
    the target mean and a zero disturbance is fitted exactly.
    """
    dims = [len(feature_names), *hidden, 3]
    rng = SeededRng(derive_seed(seed, "init"))
    weights, biases = [], []
    for fan_in, fan_out in zip(dims[:-2], dims[1:-1]):
        weights.append(rng.normal(fan_in * fan_out, sigma=math.sqrt(2.0 / fan_in)).reshape(fan_in, fan_out))
        biases.append(np.zeros(fan_out))
    weights.append(np.zeros((dims[-2], 3)))
    biases.append(np.zeros(3))
    return ModelParams(weights, biases, tuple(feature_names), seed)


def _forward_cache(params: ModelParams, x: np.ndarray):
    pre, act = [], [x]
    a = x
    last = len(params.weights) - 1
    for i, (w, b) in enumerate(zip(params.weights, params.biases)):
        z = a @ w + b
        if i == last:
            return pre, act, z
        pre.append(z)
        a = elu(z)
        act.append(a)


def forward(params: ModelParams, x) -> np.ndarray:
    """Predicted disturbance for one feature vector (shape (3,)) or a batch (n, 3)."""
    x = np.asarray(x, dtype=np.float64)
    single = x.ndim == 1
    xb = x[None, :] if single else x
    if xb.shape[1] != params.dims[0]:
        raise ValueError(f"expected {params.dims[0]} features, got {xb.shape[1]}")
    out = params.target_mean + params.target_scale * _forward_cache(params, xb)[2]
    return out[0] if single else out


def weighted_mse(predictions, targets, weights) -> float:
    """sum_i w_i |p_i - t_i|^2 / 3 / sum_i w_i."""
    p = np.asarray(predictions, dtype=np.float64).reshape(-1, 3)
    t = np.asarray(targets, dtype=np.float64).reshape(-1, 3)
    w = np.asarray(weights, dtype=np.float64).ravel()
    if not (len(p) == len(t) == len(w)):
        raise ValueError("predictions, targets and weights must have equal length")
    if np.any(w < 0):
        raise ValueError("weights must be non-negative")
    total = w.sum()
    if total <= 0:
        raise ValueError("weights are all zero")
    return float(w @ (np.sum((p - t) ** 2, axis=1) / 3.0) / total)


def gradient(params: ModelParams, x, targets, weights) -> tuple[float, list[np.ndarray]]:
    """Loss and exact gradient of ``weighted_mse(forward(params, x), targets, weights)``.

    Gradients come back in ``params.arrays()`` order: W1, b1, W2, b2, ...
    """
    loss, grads, _ = _loss_and_grad(params, x, targets, weights, params.target_mean, params.target_scale)
    return loss, grads


def _loss_and_grad(params, x, targets, weights, mean, scale):
    x = np.asarray(x, dtype=np.float64)
    targets = np.asarray(targets, dtype=np.float64)
    w = np.asarray(weights, dtype=np.float64)
    total = w.sum()
    if total <= 0:
        raise ValueError("weights are all zero")
    pre, act, out = _forward_cache(params, x)
    err = mean + scale * out - targets
    loss = float(w @ np.sum(err * err, axis=1) / (3.0 * total))

    delta = err * scale * (2.0 * w / (3.0 * total))[:, None]
    grads: list[np.ndarray] = []
    for i in range(len(params.weights) - 1, -1, -1):
        grads.append(delta.sum(axis=0))          # bias
        grads.append(act[i].T @ delta)            # weight
        if i > 0:
            delta = (delta @ params.weights[i].T) * elu_grad(pre[i - 1])
    grads.reverse()
    return loss, grads, err


# -- batching ------------------------------------------------------------------

def _load(source: MonthSource) -> CleanMonthTable:
    return source if isinstance(source, CleanMonthTable) else source()


@dataclass
class Batch:
    month_id: str
    rows: np.ndarray  # indices into that month's clean table
    x: np.ndarray
    y: np.ndarray
    w: np.ndarray


def iter_batches(sources: Sequence[MonthSource], epoch: int, cfg: TrainConfig,
                 month_ids: Sequence[str] | None = None) -> Iterator[Batch]:
    """Training batches for one epoch, holding only one month in memory.

    Month order and each month's row order are reshuffled per epoch from
    ``cfg.seed``; batches never straddle months.
    """
    n = len(sources)
    ids = list(month_ids) if month_ids is not None else None
    order = shuffle_permutation(n, SeededRng(derive_seed(cfg.seed, "epoch-months", epoch)))
    for m in order:
        table = _load(sources[m])
        key = ids[m] if ids is not None else table.month_id
        train = np.flatnonzero(~table.held_out)
        train = train[shuffle_permutation(len(train), SeededRng(derive_seed(cfg.seed, "epoch-rows", epoch, key)))]
        for s in range(0, len(train), cfg.batch_size):
            rows = train[s:s + cfg.batch_size]
            yield Batch(key, rows, table.features[rows], table.target[rows], table.weight[rows])
        del table


@dataclass
class TrainReport:
    epoch_losses: list[float] = field(default_factory=list)
    validation_loss: float = float("nan")
    epochs_run: int = 0
    wall_time_s: float = 0.0
    extra: dict = field(default_factory=dict)

    def to_json(self) -> dict:
        d = asdict(self)
        d["validation_loss"] = None if not math.isfinite(self.validation_loss) else self.validation_loss
        return d


def validation_loss(params: ModelParams, sources: Sequence[MonthSource]) -> float:
    """Weighted loss over the held-out rows of all sources, one month at a time."""
    num, den = 0.0, 0.0
    for src in sources:
        t = _load(src)
        v = t.held_out
        if not v.any():
            continue
        pred = forward(params, t.features[v])
        w = t.weight[v]
        num += float(w @ (np.sum((pred - t.target[v]) ** 2, axis=1) / 3.0))
        den += float(w.sum())
    return num / den if den > 0 else float("nan")


def zero_predictor_loss(sources: Sequence[MonthSource]) -> float:
    num, den = 0.0, 0.0
    for src in sources:
        t = _load(src)
        v = t.held_out
        num += float(t.weight[v] @ (np.sum(t.target[v] ** 2, axis=1) / 3.0))
        den += float(t.weight[v].sum())
    return num / den if den > 0 else float("nan")


def target_normalization(sources: Sequence[MonthSource]) -> tuple[np.ndarray, np.ndarray]:
    """Mean and std of the training targets, accumulated month by month."""
    n, s, sq = 0, np.zeros(3), np.zeros(3)
    for src in sources:
        t = _load(src)
        y = t.target[~t.held_out]
        n += len(y)
        s += y.sum(axis=0)
        sq += (y * y).sum(axis=0)
    if n == 0:
        raise TrainingError("no training rows")
    mean = s / n
    std = np.sqrt(np.maximum(sq / n - mean * mean, 0.0))
    return mean, np.where(std > 1e-6, std, 1.0)


def _fit(params: ModelParams, sources: Sequence[MonthSource], cfg: TrainConfig, epochs: int,
         month_ids: Sequence[str] | None = None) -> TrainReport:
    report = TrainReport()
    start = time.perf_counter()
    arrays = params.arrays()
    velocity = [np.zeros_like(a) for a in arrays]
    for epoch in range(epochs):
        lr = lr_at(epoch, cfg)
        num, den = 0.0, 0.0
        for batch in iter_batches(sources, epoch, cfg, month_ids):
            wsum = float(batch.w.sum())
            if wsum <= 0:
                continue
            # descend on standardized targets; loss differs from the nT loss only by per-component factors
            loss, grads, err = _loss_and_grad(params, batch.x, (batch.y - params.target_mean) / params.target_scale,
                                              batch.w, 0.0, 1.0)
            if not math.isfinite(loss):
                raise TrainingError(f"non-finite loss at epoch {epoch}, month {batch.month_id} (lr={lr:g})")
            for a, v, g in zip(arrays, velocity, grads):
                v *= cfg.momentum
                v -= lr * g
                a += v
            err *= params.target_scale
            num += float(batch.w @ np.sum(err * err, axis=1)) / 3.0
            den += wsum
        if den == 0:
            raise TrainingError("no training rows")
        report.epoch_losses.append(num / den)
        report.epochs_run += 1
    report.wall_time_s = time.perf_counter() - start
    return report


def train_global(sources: Sequence[MonthSource], cfg: TrainConfig = TrainConfig(),
                 month_ids: Sequence[str] | None = None) -> tuple[ModelParams, TrainReport]:
    """Train on every month's non-held-out rows, streaming month by month."""
    if not sources:
        raise TrainingError("no months to train on")
    first = _load(sources[0])
    params = init_params(first.feature_names, cfg.hidden, cfg.seed)
    del first
    params.target_mean, params.target_scale = target_normalization(sources)
    report = _fit(params, sources, cfg, cfg.epochs, month_ids)
    report.validation_loss = validation_loss(params, sources)
    params.meta = {"kind": "global", "config": asdict(cfg), "epochs_run": report.epochs_run}
    return params, report


def finetune_month(global_params: ModelParams, month: MonthSource,
                   cfg: TrainConfig = TrainConfig()) -> tuple[ModelParams, TrainReport]:
    """Continue training the global model on one month; the global params are not modified."""
    table = _load(month)
    if len(table) == 0:
        raise TrainingError(f"{table.month_id}: empty month")
    if table.feature_names != global_params.feature_names:
        raise TrainingError(f"{table.month_id}: features do not match the global model")
    params = global_params.copy()
    month_cfg = TrainConfig(**{**asdict(cfg), "seed": derive_seed(cfg.seed, "finetune", table.month_id)})
    report = _fit(params, [table], month_cfg, cfg.finetune_epochs)
    report.validation_loss = validation_loss(params, [table])
    report.extra["global_validation_loss"] = validation_loss(global_params, [table])
    params.meta = {"kind": "finetuned", "month_id": table.month_id, "config": asdict(cfg),
                   "epochs_run": report.epochs_run}
    return params, report
