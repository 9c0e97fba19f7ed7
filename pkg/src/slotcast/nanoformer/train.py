"""Training loop: windowed next-token objective, Adam, warmup + cosine schedule."""

from __future__ import annotations

import csv
import math
from dataclasses import asdict, dataclass, field
from typing import Callable, Sequence

import numpy as np

from .model import ConfigError, ModelParams, NonFiniteLoss, loss_and_grads, loss_only


class CorpusTooShort(ValueError):
    pass


@dataclass(frozen=True)
class TrainConfig:
    steps: int = 4000
    batch_windows: int = 2048
    micro_batch: int = 64
    window_len: int | None = None  # None: the model's context length
    learning_rate: float = 1e-3
    min_lr_ratio: float = 0.1
    warmup_steps: int = 100
    beta1: float = 0.9
    beta2: float = 0.99
    eps: float = 1e-8
    weight_decay: float = 0.0
    clip_norm: float = 1.0
    seed: int = 0
    train_fraction: float = 0.8
    eval_interval: int = 100
    eval_windows: int = 64

    def validate(self) -> None:
        if self.steps < 0:
            raise ConfigError("steps must be >= 0")
        if self.batch_windows < 1 or self.micro_batch < 1:
            raise ConfigError("batch_windows and micro_batch must be >= 1")
        if self.window_len is not None and self.window_len < 1:
            raise ConfigError("window_len must be >= 1")
        if not 0.0 < self.train_fraction < 1.0:
            raise ConfigError("train_fraction must lie in (0, 1)")
        if self.learning_rate <= 0 or self.clip_norm <= 0:
            raise ConfigError("learning_rate and clip_norm must be positive")
        if self.eval_interval < 1 or self.eval_windows < 1:
            raise ConfigError("eval_interval and eval_windows must be >= 1")

    def to_dict(self) -> dict:
        return asdict(self)


def lr_at(tc: TrainConfig, step: int) -> float:
    """Linear warmup to the base rate, then cosine decay to ``min_lr_ratio`` of it."""
    base = tc.learning_rate
    if step < tc.warmup_steps:
        return base * (step + 1) / tc.warmup_steps
    span = max(1, tc.steps - tc.warmup_steps)
    frac = min(1.0, (step - tc.warmup_steps) / span)
    floor = base * tc.min_lr_ratio
    return floor + 0.5 * (base - floor) * (1.0 + math.cos(math.pi * frac))


@dataclass
class TrainResult:
    params: ModelParams
    history: list[dict] = field(default_factory=list)
    best_step: int | None = None
    best_val_loss: float | None = None


def split_corpus(corpus: Sequence[int], train_fraction: float) -> tuple[np.ndarray, np.ndarray]:
    arr = np.asarray(corpus, dtype=np.int64)
    cut = int(round(len(arr) * train_fraction))
    return arr[:cut], arr[cut:]


def _windows(data: np.ndarray, starts: np.ndarray, length: int) -> tuple[np.ndarray, np.ndarray]:
    idx = starts[:, None] + np.arange(length + 1)[None, :]
    block = data[idx]
    return block[:, :-1], block[:, 1:]


class _Adam:
    def __init__(self, params: ModelParams, tc: TrainConfig):
        self.tc = tc
        self.m = {k: np.zeros_like(v) for k, v in params.tensors.items()}
        self.v = {k: np.zeros_like(v) for k, v in params.tensors.items()}
        self.t = 0

    def update(self, params: ModelParams, grads: dict[str, np.ndarray], lr: float) -> None:
        tc = self.tc
        self.t += 1
        c1 = 1.0 - tc.beta1 ** self.t
        c2 = 1.0 - tc.beta2 ** self.t
        for name, p in params.tensors.items():
            g = grads[name]
            m, v = self.m[name], self.v[name]
            m *= tc.beta1
            m += (1.0 - tc.beta1) * g
            v *= tc.beta2
            v += (1.0 - tc.beta2) * g * g
            step = (m / c1) / (np.sqrt(v / c2) + tc.eps)
            if tc.weight_decay and p.ndim >= 2:
                step = step + tc.weight_decay * p
            p -= (lr * step).astype(p.dtype)


def _batch_loss_grads(params: ModelParams, x: np.ndarray, y: np.ndarray, micro: int):
    """Mean loss and gradient over a batch, accumulated micro-batch by micro-batch
    in a fixed order so the result does not depend on how work is scheduled."""
    total = x.shape[0]
    loss = 0.0
    acc = {k: np.zeros(v.shape, dtype=np.float64) for k, v in params.tensors.items()}
    for lo in range(0, total, micro):
        hi = min(total, lo + micro)
        part, grads = loss_and_grads(params, x[lo:hi], y[lo:hi])
        w = (hi - lo) / total
        loss += part * w
        for k, g in grads.items():
            acc[k] += g * w
    return loss, acc


def eval_loss(params: ModelParams, data: np.ndarray, starts: np.ndarray, length: int,
              micro: int = 64) -> float:
    x, y = _windows(data, starts, length)
    total = x.shape[0]
    loss = 0.0
    for lo in range(0, total, micro):
        hi = min(total, lo + micro)
        loss += loss_only(params, x[lo:hi], y[lo:hi]) * (hi - lo) / total
    return loss


Reporter = Callable[[dict], None]


def train(params: ModelParams, corpus: Sequence[int], tc: TrainConfig,
          reporter: Reporter | None = None) -> TrainResult:
    """Train a copy of ``params`` on ``corpus`` and return the best-validation weights.

    The corpus is split contiguously into train/validation parts. Every step
    draws ``batch_windows`` windows (with replacement) at random offsets in the
    training part. Validation loss is measured every ``eval_interval`` steps
    and after the last step on a fixed set of validation windows.
    """
    tc.validate()
    cfg = params.config
    window = min(tc.window_len or cfg.context_len, cfg.context_len)
    if len(corpus) <= window + 1:
        raise CorpusTooShort(f"corpus has {len(corpus)} tokens; need more than {window + 1}")
    params = params.copy()
    if tc.steps == 0:
        return TrainResult(params)

    train_data, val_data = split_corpus(corpus, tc.train_fraction)
    if len(train_data) <= window:
        raise CorpusTooShort(f"training split has {len(train_data)} tokens; "
                             f"need more than {window}")
    if len(val_data) < 2:
        raise CorpusTooShort("validation split needs at least 2 tokens")
    val_window = min(window, len(val_data) - 1)

    rng = np.random.default_rng(tc.seed)
    val_starts = rng.integers(0, len(val_data) - val_window, size=tc.eval_windows)
    opt = _Adam(params, tc)
    result = TrainResult(params.copy())
    best = math.inf

    for step in range(tc.steps):
        lr = lr_at(tc, step)
        starts = rng.integers(0, len(train_data) - window, size=tc.batch_windows)
        x, y = _windows(train_data, starts, window)
        try:
            loss, grads = _batch_loss_grads(params, x, y, tc.micro_batch)
        except NonFiniteLoss as exc:
            raise NonFiniteLoss(f"step {step}: {exc}", result.params) from None
        norm = math.sqrt(sum(float((g * g).sum()) for g in grads.values()))
        if not math.isfinite(norm):
            raise NonFiniteLoss(f"step {step}: non-finite gradient norm", result.params)
        if norm > tc.clip_norm:
            scale = tc.clip_norm / norm
            for g in grads.values():
                g *= scale
        opt.update(params, grads, lr)
        if not params.all_finite():
            raise NonFiniteLoss(f"step {step}: parameters became non-finite", result.params)

        row = {"step": step + 1, "train_loss": loss, "val_loss": None, "lr": lr}
        if (step + 1) % tc.eval_interval == 0 or step + 1 == tc.steps:
            val = eval_loss(params, val_data, val_starts, val_window, tc.micro_batch)
            row["val_loss"] = val
            if val < best:
                best = val
                result.params = params.copy()
                result.best_step = step + 1
                result.best_val_loss = val
        result.history.append(row)
        if reporter is not None:
            reporter(row)
    return result


LOSS_CSV_FIELDS = ("step", "train_loss", "val_loss", "lr")


def write_loss_csv(history: Sequence[dict], fh) -> None:
    """Loss log: one row per step; ``val_loss`` is blank between evaluations."""
    w = csv.writer(fh, lineterminator="\n")
    w.writerow(LOSS_CSV_FIELDS)
    for row in history:
        val = row["val_loss"]
        w.writerow([row["step"], f"{row['train_loss']:.8f}",
                    "" if val is None else f"{val:.8f}", f"{row['lr']:.8e}"])
