"""Losses, the masked Adam loop, and evaluation metrics."""
from __future__ import annotations

import csv
import logging
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .backbone import ModelParams
from .data import BuoyDataset, GridField
from .model import OrcaModel
from .tensor import ShapeError, Tensor, as_tensor

log = logging.getLogger(__name__)

HISTORY_COLUMNS = ("epoch", "L", "L1", "L2", "val_L1")


class UndefinedLossError(ValueError):
    """Every buoy observation in the loss support is missing."""


class AlignmentError(ValueError):
    """An estimate and the buoy data do not share the same lattice."""


class DivergenceError(FloatingPointError):
    def __init__(self, epoch: int, value: float):
        super().__init__(f"loss became {value} during epoch {epoch}")
        self.epoch = epoch


@dataclass
class TrainConfig:
    lr: float = 0.001
    alpha: float = 0.3
    max_epochs: int = 50
    seed: int = 0
    windows_per_epoch: int | None = None
    patience: int | None = 10
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    # None: 1/sqrt(fan_in) for the output head, whose fan-in is tokens*buoys*width
    head_lr_scale: float | None = None

    def __post_init__(self):
        if not self.lr > 0:
            raise ValueError(f"lr must be positive, got {self.lr}")
        if not self.alpha >= 0:
            raise ValueError(f"alpha must be nonnegative, got {self.alpha}")
        if self.max_epochs < 1:
            raise ValueError(f"max_epochs must be at least 1, got {self.max_epochs}")

    def head_lr_multiplier(self, fan_in: int) -> float:
        if self.head_lr_scale is not None:
            return self.head_lr_scale
        return 1.0 / math.sqrt(fan_in)


@dataclass
class Split:
    train: slice
    val: slice
    test: slice


def split_time(T: int, ratios=(8, 1, 1)) -> Split:
    """Contiguous split along time, oldest steps to training."""
    total = sum(ratios)
    n_train = int(T * ratios[0] / total)
    n_val = int(T * ratios[1] / total)
    return Split(slice(0, n_train), slice(n_train, n_train + n_val), slice(n_train + n_val, T))


# ---------------------------------------------------------------------------
# losses


def _buoy_values(y_hat, locations) -> Tensor:
    y_hat = as_tensor(y_hat)
    loc = np.asarray(locations, dtype=np.int64).reshape(-1, 2)
    if y_hat.ndim != 3:
        raise ShapeError(f"estimate must be K x J x T, got {y_hat.shape}")
    return y_hat[loc[:, 0], loc[:, 1]]  # M x T


def loss_buoy(y_obs, y_hat, locations, mask=None) -> Tensor:
    """Mean squared error at buoy cells over buoys and time, skipping missing entries."""
    pred = _buoy_values(y_hat, locations)
    y_obs = np.asarray(y_obs)
    if y_obs.shape != pred.shape:
        raise ShapeError(f"observations {y_obs.shape} do not match buoy estimates {pred.shape}")
    keep = np.ones(y_obs.shape, dtype=bool) if mask is None else ~np.asarray(mask, dtype=bool)
    n = int(keep.sum())
    if n == 0:
        raise UndefinedLossError("no observed buoy values to compare against")
    diff = pred - np.where(keep, y_obs, 0.0).astype(pred.dtype)
    weights = keep.astype(pred.dtype) / n
    return (diff * diff * weights).sum()


def loss_phys(y_ref, y_hat) -> Tensor:
    """Mean squared distance to the numerical-model field over every cell and step."""
    y_hat = as_tensor(y_hat)
    ref = np.asarray(y_ref.values if isinstance(y_ref, GridField) else y_ref)
    if ref.shape != y_hat.shape:
        raise ShapeError(f"loss_phys: reference {ref.shape} and estimate {y_hat.shape} differ")
    diff = y_hat - ref.astype(y_hat.dtype)
    return (diff * diff).mean()


def total_loss(l1, l2, alpha: float):
    if alpha < 0:
        raise ValueError(f"alpha must be nonnegative, got {alpha}")
    return l1 + alpha * l2


# ---------------------------------------------------------------------------
# metrics


@dataclass(frozen=True)
class Metrics:
    mae: float
    mse: float
    rmse: float

    def as_row(self) -> dict:
        return {"mae": self.mae, "mse": self.mse, "rmse": self.rmse}


def metrics_from_errors(errors) -> Metrics:
    e = np.asarray(errors, dtype=np.float64).reshape(-1)
    if e.size == 0:
        raise UndefinedLossError("cannot compute metrics on an empty set")
    mse = float(np.mean(e * e))
    return Metrics(float(np.mean(np.abs(e))), mse, math.sqrt(mse))


def evaluate(y_hat, y_obs, locations, mask=None) -> Metrics:
    """MAE / MSE / RMSE of the estimate at buoy cells, ignoring missing observations."""
    pred = np.asarray(y_hat.data if isinstance(y_hat, Tensor) else y_hat, dtype=np.float64)
    loc = np.asarray(locations, dtype=np.int64).reshape(-1, 2)
    pred = pred[loc[:, 0], loc[:, 1]]
    y_obs = np.asarray(y_obs, dtype=np.float64)
    if y_obs.shape != pred.shape:
        raise ShapeError(f"observations {y_obs.shape} do not match buoy estimates {pred.shape}")
    keep = np.ones(y_obs.shape, dtype=bool) if mask is None else ~np.asarray(mask, dtype=bool)
    return metrics_from_errors((y_obs - pred)[keep])


def persistence_forecast(dataset: BuoyDataset, seg: slice) -> np.ndarray:
    """Repeat each buoy's last observed wave height before ``seg`` (M x len(seg))."""
    start, stop, _ = seg.indices(dataset.values.shape[2])
    swh, miss = dataset.swh, dataset.swh_mask
    out = np.zeros((swh.shape[0], stop - start))
    for m in range(swh.shape[0]):
        seen = np.flatnonzero(~miss[m, :start])
        out[m] = swh[m, seen[-1]] if len(seen) else swh[m, start]
    return out


def persistence_metrics(dataset: BuoyDataset, seg: slice) -> Metrics:
    pred = persistence_forecast(dataset, seg)
    obs, miss = dataset.swh[:, seg], dataset.swh_mask[:, seg]
    return metrics_from_errors((obs - pred)[~miss])


def segment_metrics(model: OrcaModel, dataset: BuoyDataset, seg: slice) -> Metrics:
    est = model.estimate(dataset, seg)
    return evaluate(est, dataset.swh[:, seg], model.locations, dataset.swh_mask[:, seg])


# ---------------------------------------------------------------------------
# optimisation


class Adam:
    """Adaptive-moment updates applied in place to the trainable arrays only."""

    def __init__(self, params: ModelParams, lr: float, beta1=0.9, beta2=0.999, eps=1e-8,
                 lr_scale: dict[str, float] | None = None):
        self.params, self.lr, self.b1, self.b2, self.eps = params, lr, beta1, beta2, eps
        self.names = params.trainable_names()
        self.lr_scale = lr_scale or {}
        self.m = {k: np.zeros_like(params.arrays[k]) for k in self.names}
        self.v = {k: np.zeros_like(params.arrays[k]) for k in self.names}
        self.t = 0

    def step(self, grads: dict[str, np.ndarray]) -> None:
        self.t += 1
        c1 = 1 - self.b1 ** self.t
        c2 = 1 - self.b2 ** self.t
        for k in self.names:
            g = grads.get(k)
            if g is None:
                continue
            m, v = self.m[k], self.v[k]
            g = g.astype(m.dtype, copy=False)
            # in place with one scratch buffer; the head is millions of entries
            buf = np.multiply(g, 1 - self.b1)
            m *= self.b1
            m += buf
            np.multiply(g, g, out=buf)
            buf *= 1 - self.b2
            v *= self.b2
            v += buf
            np.multiply(v, 1 / c2, out=buf)
            np.sqrt(buf, out=buf)
            buf += self.eps
            np.divide(m, buf, out=buf)
            buf *= self.lr * self.lr_scale.get(k, 1.0) / c1
            self.params.arrays[k] -= buf


@dataclass
class TrainResult:
    params: ModelParams
    history: list[dict] = field(default_factory=list)
    best_epoch: int = 0


def _window_loss(model, t, dataset, surrogate, ws, alpha):
    w = model.config.window
    sl = slice(ws, ws + w)
    y_hat = model.forward(dataset.values[:, :, sl], t)
    l1 = loss_buoy(dataset.swh[:, sl], y_hat, model.locations, dataset.swh_mask[:, sl])
    ref = surrogate.values[:, :, sl] if surrogate is not None else None
    if alpha > 0:
        l2 = loss_phys(ref, y_hat)
        return total_loss(l1, l2, alpha), l1.item(), l2.item()
    # alpha = 0 keeps the reference out of the graph entirely
    l2 = float(loss_phys(ref, y_hat.detach()).item()) if ref is not None else float("nan")
    return l1, l1.item(), l2


def segment_l1(model: OrcaModel, dataset: BuoyDataset, seg: slice) -> float:
    start, stop, _ = seg.indices(dataset.values.shape[2])
    if stop <= start:
        return float("nan")
    est = model.estimate(dataset, seg)
    return float(loss_buoy(dataset.swh[:, seg], est, model.locations, dataset.swh_mask[:, seg]).item())


def train(model: OrcaModel, dataset: BuoyDataset, surrogate: GridField | None, split: Split,
          config: TrainConfig) -> TrainResult:
    """Fit the trainable arrays of ``model`` in place; return the best-validation copy.

    Epoch 0 of the history is the untrained model.  Each later row averages
    the per-window losses seen during that epoch (before each update) and
    reports L1 on the validation segment afterwards.
    """
    if config.alpha > 0 and surrogate is None:
        raise ValueError("alpha > 0 needs a numerical-model field")
    if surrogate is not None:
        surrogate.check(dataset.grid, dataset.values.shape[2])
    w = model.config.window
    t0, t1, _ = split.train.indices(dataset.values.shape[2])
    starts = np.arange(t0, t1 - w + 1)
    if len(starts) == 0:
        raise ValueError(f"training segment of {t1 - t0} steps is shorter than the window {w}")
    rng = np.random.default_rng(config.seed)
    opt = Adam(model.params, config.lr, config.beta1, config.beta2, config.eps,
               {"head.w5": config.head_lr_multiplier(model.params["head.w5"].shape[0])})
    names = model.params.trainable_names()

    def record(epoch, rows):
        L, l1, l2 = (float(np.mean([r[i] for r in rows])) for i in range(3))
        val = segment_l1(model, dataset, split.val)
        return {"epoch": epoch, "L": L, "L1": l1, "L2": l2, "val_L1": val}

    init_rows = []
    for ws in starts:
        L, l1, l2 = _window_loss(model, model.bind(), dataset, surrogate, ws, config.alpha)
        init_rows.append((L.item(), l1, l2))
    history = [record(0, init_rows)]
    best, best_score, best_epoch, stale = model.params.copy(), _score(history[-1]), 0, 0

    for epoch in range(1, config.max_epochs + 1):
        order = rng.permutation(starts)
        if config.windows_per_epoch:
            order = order[:config.windows_per_epoch]
        rows = []
        for ws in order:
            t = model.bind()
            L, l1, l2 = _window_loss(model, t, dataset, surrogate, int(ws), config.alpha)
            value = L.item()
            if not math.isfinite(value):
                raise DivergenceError(epoch, value)
            L.backward(inputs=[t[k] for k in names])
            opt.step({k: t[k].grad for k in names})
            rows.append((value, l1, l2))
        history.append(record(epoch, rows))
        score = _score(history[-1])
        log.info("epoch %d L=%.4f L1=%.4f L2=%.4f val_L1=%.4f", epoch, *(history[-1][c] for c in HISTORY_COLUMNS[1:]))
        if score < best_score:
            best, best_score, best_epoch, stale = model.params.copy(), score, epoch, 0
        else:
            stale += 1
            if config.patience is not None and stale >= config.patience:
                break
    return TrainResult(best, history, best_epoch)


def _score(row: dict) -> float:
    v = row["val_L1"]
    return v if math.isfinite(v) else row["L1"]


def write_history_csv(path: str | Path, history: list[dict]) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.DictWriter(fh, fieldnames=HISTORY_COLUMNS)
        w.writeheader()
        for row in history:
            w.writerow({k: (row[k] if k == "epoch" else repr(float(row[k]))) for k in HISTORY_COLUMNS})


def read_history_csv(path: str | Path) -> list[dict]:
    with open(path, newline="") as fh:
        return [{k: (int(v) if k == "epoch" else float(v)) for k, v in row.items()} for row in csv.DictReader(fh)]

