"""Loss, Adam, the mini-batch training loop with early stopping, and metrics."""
from __future__ import annotations

import csv
import io
import json
import logging
import math
import time
from dataclasses import asdict, dataclass, field

import numpy as np

from . import tensor as T
from .data import Dataset
from .model import ModelConfig, STWAModel, count_scores
from .stgen import ConfigError
from .tensor import Tape, Tensor

log = logging.getLogger(__name__)

MAPE_FLOOR = 1e-3


def huber(pred: Tensor, target, delta: float = 1.0) -> Tensor:
    """Mean Huber loss; the quadratic branch includes ``|e| == delta``."""
    if delta <= 0:
        raise ConfigError(f"huber threshold must be > 0, got {delta}")
    target = target if isinstance(target, Tensor) else Tensor(target)
    if pred.shape != target.shape:
        raise T.ShapeError(f"huber: prediction {pred.shape} vs target {target.shape}")
    e = pred - target
    quad = np.abs(e.data.real) <= delta
    sq = T.mul(e, e) * 0.5
    lin = (T.tabs(e) - 0.5 * delta) * delta
    per = T.mul(sq, Tensor(quad.astype(np.float64))) + T.mul(lin, Tensor((~quad).astype(np.float64)))
    return T.mean(per)


def total_loss(pred: Tensor, target, kl: Tensor, alpha: float, delta: float = 1.0) -> Tensor:
    loss = huber(pred, target, delta)
    if alpha == 0:
        return loss
    return loss + kl * alpha


@dataclass
class AdamState:
    m: list
    v: list
    t: int = 0
    beta1: float = 0.9
    beta2: float = 0.999
    eps_hat: float = 1e-8

    @classmethod
    def for_params(cls, params) -> "AdamState":
        return cls([np.zeros_like(p.data) for p in params], [np.zeros_like(p.data) for p in params])


def adam_step(state: AdamState, params, grads, lr: float, names=None) -> None:
    """Bias-corrected Adam, in place. Entries whose gradient is exactly zero are left untouched."""
    for i, g in enumerate(grads):
        if not np.all(np.isfinite(g)):
            label = names[i] if names else f"#{i}"
            raise FloatingPointError(f"non-finite gradient for parameter {label}")
    state.t += 1
    b1, b2 = state.beta1, state.beta2
    c1 = 1 - b1 ** state.t
    c2 = 1 - b2 ** state.t
    for p, g, m, v in zip(params, grads, state.m, state.v):
        m *= b1
        m += (1 - b1) * g
        v *= b2
        v += (1 - b2) * g * g
        step = lr * (m / c1) / (np.sqrt(v / c2) + state.eps_hat)
        p.data -= np.where(g != 0, step, 0.0)


def clip_by_norm(grads, max_norm: float):
    total = math.sqrt(sum(float((g * g).sum()) for g in grads))
    if total <= max_norm or total == 0:
        return grads
    return [g * (max_norm / total) for g in grads]


def metrics(pred: np.ndarray, target: np.ndarray, mask_floor: float = MAPE_FLOOR) -> dict:
    """MAE, RMSE and MAPE (percent). MAPE is ``None`` when every target is masked."""
    pred = np.asarray(pred, dtype=np.float64)
    target = np.asarray(target, dtype=np.float64)
    e = pred - target
    mae = float(np.mean(np.abs(e)))
    rmse = float(math.sqrt(np.mean(e * e)))
    keep = np.abs(target) > mask_floor
    mape = float(np.mean(np.abs(e[keep] / target[keep])) * 100) if keep.any() else None
    return {"mae": mae, "rmse": rmse, "mape": mape}


@dataclass
class EpochRecord:
    epoch: int
    train_loss: float
    val_mae: float
    val_rmse: float
    val_mape: float | None
    seconds: float


@dataclass
class TrainReport:
    variant: str
    seed: int
    epochs: list = field(default_factory=list)
    best_epoch: int = 0
    best_val_mae: float = math.inf
    stop_reason: str = ""
    train_seconds: float = 0.0
    total_seconds: float = 0.0
    num_parameters: int = 0
    window_scores: int = 0
    canonical_scores: int = 0
    test_metrics: dict | None = None

    def to_json(self) -> str:
        return json.dumps(asdict(self), indent=2, sort_keys=True)

    def loss_curve_csv(self) -> str:
        """Per-epoch losses and validation metrics. Wall-clock lives in :meth:`timings_csv`."""
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["epoch", "train_loss", "val_mae", "val_rmse", "val_mape"])
        for r in self.epochs:
            w.writerow([r.epoch, repr(r.train_loss), repr(r.val_mae), repr(r.val_rmse),
                        "" if r.val_mape is None else repr(r.val_mape)])
        return buf.getvalue()

    def timings_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["epoch", "seconds"])
        for r in self.epochs:
            w.writerow([r.epoch, f"{r.seconds:.6f}"])
        return buf.getvalue()


def predict(model: STWAModel, x: np.ndarray, batch: int = 256) -> np.ndarray:
    """Eval-mode predictions in normalized units for a stack of windows."""
    out = []
    for i in range(0, len(x), batch):
        out.append(model.forward(x[i:i + batch], mode="eval").prediction.data)
    return np.concatenate(out, axis=0)


def evaluate(model: STWAModel, dataset: Dataset, split: str = "val") -> dict:
    win = getattr(dataset, split)
    pred = dataset.normalizer.denormalize_windows(predict(model, win.x))
    target = dataset.normalizer.denormalize_windows(win.y)
    return metrics(pred, target)


def train_step(model: STWAModel, params, state: AdamState, xb, yb, cfg: ModelConfig,
               rng: np.random.Generator, names=None) -> float:
    with Tape() as tape:
        tape.watch(*params)
        res = model.forward(xb, mode="train", rng=rng)
        loss = total_loss(res.prediction, yb, res.kl, cfg.alpha, cfg.delta)
        grads = tape.backward(loss)
    g = [grads[p.tape_id] for p in params]
    if cfg.clip_norm:
        g = clip_by_norm(g, cfg.clip_norm)
    adam_step(state, params, g, cfg.lr, names)
    return loss.item()


def fit(model: STWAModel, dataset: Dataset, cfg: ModelConfig | None = None,
        rng: np.random.Generator | None = None, max_epochs: int | None = None) -> TrainReport:
    """Train with Adam until ``patience`` epochs pass without a better validation MAE.

    The parameters from the best validation epoch are restored before returning.
    """
    cfg = cfg or model.config
    rng = rng if rng is not None else np.random.default_rng(cfg.seed)
    max_epochs = max_epochs or cfg.max_epochs
    for name in ("train", "val"):
        if len(getattr(dataset, name)) == 0:
            raise ConfigError(f"{name} split has no samples")
    named = list(model.named_parameters())
    names = [n for n, _ in named]
    params = [p for _, p in named]
    state = AdamState.for_params(params)
    window, canonical = count_scores(cfg)
    report = TrainReport(cfg.variant, cfg.seed, num_parameters=model.num_parameters(),
                         window_scores=window, canonical_scores=canonical)
    best = [p.data.copy() for p in params]
    since_best = 0
    t_start = time.perf_counter()
    x_all, y_all = dataset.train.x, dataset.train.y
    for epoch in range(1, max_epochs + 1):
        t0 = time.perf_counter()
        order = rng.permutation(len(x_all))
        losses, weights = [], []
        for i in range(0, len(order), cfg.batch):
            idx = order[i:i + cfg.batch]
            losses.append(train_step(model, params, state, x_all[idx], y_all[idx], cfg, rng, names))
            weights.append(len(idx))
        seconds = time.perf_counter() - t0
        report.train_seconds += seconds
        train_loss = float(np.average(losses, weights=weights))
        val = evaluate(model, dataset, "val")
        report.epochs.append(EpochRecord(epoch, train_loss, val["mae"], val["rmse"], val["mape"], seconds))
        log.info("epoch %d loss %.5f val_mae %.4f", epoch, train_loss, val["mae"])
        if val["mae"] < report.best_val_mae:
            report.best_val_mae = val["mae"]
            report.best_epoch = epoch
            best = [p.data.copy() for p in params]
            since_best = 0
        else:
            since_best += 1
            if since_best >= cfg.patience:
                report.stop_reason = f"no validation improvement for {cfg.patience} epochs"
                break
    else:
        report.stop_reason = f"reached max epochs ({max_epochs})"
    for p, b in zip(params, best):
        p.data[...] = b
    if len(dataset.test):
        report.test_metrics = evaluate(model, dataset, "test")
    report.total_seconds = time.perf_counter() - t_start
    return report
