"""Adam with decoupled L2, cosine annealing with warm restarts, early stopping, metrics."""
from __future__ import annotations

import csv
import logging
import math
import time
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Optional

import numpy as np

from . import tensor as T
from .loss import LossWeights, PriorVector, total_loss
from .model import Model, is_norm_param, predict, save_checkpoint
from .tensor import Tape, Tensor

log = logging.getLogger(__name__)

HISTORY_FIELDS = ("epoch", "lr", "l_dist", "l_point", "l_slope", "l_total", "val_mae")


class TrainingError(RuntimeError):
    pass


@dataclass
class TrainConfig:
    lr0: float = 1e-3
    l2_lambda: float = 1e-3
    batch_size: int = 64
    max_epochs: int = 300
    early_stop_patience: int = 20
    t0: int = 10
    t_mult: int = 2
    lr_min_ratio: float = 0.01
    beta1: float = 0.9
    beta2: float = 0.999
    adam_eps: float = 1e-8
    temperature: float = 1.0
    temperature_decay: float = 0.5
    seed: int = 0

    def validate(self) -> "TrainConfig":
        # lr0 = 0 is allowed: it freezes the weights, which the early-stopping check relies on
        if self.lr0 < 0 or self.early_stop_patience < 1 or self.t0 < 1 or self.t_mult < 1:
            raise ValueError("lr0 >= 0, patience >= 1, t0 >= 1 and t_mult >= 1 required")
        if self.batch_size < 2 or self.max_epochs < 1:
            raise ValueError("batch_size >= 2 and max_epochs >= 1 required")
        if self.temperature <= 0 or not (0 <= self.lr_min_ratio <= 1):
            raise ValueError("temperature > 0 and lr_min_ratio in [0, 1] required")
        return self


@dataclass
class Metrics:
    mae: float
    mse: float
    pearson: Optional[float]

    def as_dict(self) -> dict:
        return asdict(self)


def _cycle(epoch: int, t0: int, t_mult: int) -> tuple[int, int, int]:
    """(cycle index, position within cycle, cycle length)."""
    i, start, length = 0, 0, t0
    while epoch >= start + length:
        start += length
        length *= t_mult
        i += 1
    return i, epoch - start, length


def lr_schedule(epoch: int, config: TrainConfig) -> float:
    if epoch < 0:
        raise ValueError("epoch must be >= 0")
    _, t, length = _cycle(epoch, config.t0, config.t_mult)
    lr_min = config.lr0 * config.lr_min_ratio
    return lr_min + (config.lr0 - lr_min) / 2.0 * (1.0 + math.cos(math.pi * t / length))


def temperature_schedule(epoch: int, config: TrainConfig) -> float:
    i, _, _ = _cycle(epoch, config.t0, config.t_mult)
    return config.temperature * config.temperature_decay ** i


def pearson(a, b) -> Optional[float]:
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.size < 2:
        return None
    ac, bc = a - a.mean(), b - b.mean()
    den = math.sqrt(float((ac * ac).mean()) * float((bc * bc).mean()))
    if den == 0:
        return None
    return float(np.clip((ac * bc).mean() / den, -1.0, 1.0))


def metrics_from_predictions(preds, labels) -> Metrics:
    preds = np.asarray(preds, dtype=np.float64)
    labels = np.asarray(labels, dtype=np.float64)
    if preds.size == 0 or preds.shape != labels.shape:
        raise ValueError("predictions and labels must be non-empty and of equal length")
    err = preds - labels
    return Metrics(mae=float(np.abs(err).mean()), mse=float((err ** 2).mean()),
                   pearson=pearson(preds, labels))


def evaluate(model: Model, dataset) -> Metrics:
    """``dataset`` is (X[n, c, L], y[n]) of centre windows or a list of records."""
    from .augment import build_eval_set

    if isinstance(dataset, tuple):
        X, y = dataset
    else:
        X, y = build_eval_set(dataset, model.config.input_len, in_channels=model.config.in_channels)
    mode = model.mode
    model.eval()
    try:
        preds = predict(model, X)
    finally:
        model.mode = mode
    return metrics_from_predictions(preds, y)


@dataclass
class AdamState:
    step: int = 0
    m: dict = field(default_factory=dict)
    v: dict = field(default_factory=dict)


def adam_step(model: Model, state: AdamState, lr: float, config: TrainConfig) -> None:
    """Decoupled L2 shrink (non-norm weights only) followed by a bias-corrected Adam update."""
    state.step += 1
    b1, b2 = config.beta1, config.beta2
    c1 = 1.0 - b1 ** state.step
    c2 = 1.0 - b2 ** state.step
    for name, p in model.params.items():
        g = p.grad.astype(np.float64)
        m = state.m.get(name)
        if m is None:
            m = state.m[name] = np.zeros(p.data.shape)
            state.v[name] = np.zeros(p.data.shape)
        v = state.v[name]
        m *= b1
        m += (1.0 - b1) * g
        v *= b2
        v += (1.0 - b2) * g * g
        w = p.data.astype(np.float64)
        if config.l2_lambda and not is_norm_param(name):
            w *= 1.0 - lr * config.l2_lambda
        w -= lr * (m / c1) / (np.sqrt(v / c2) + config.adam_eps)
        p.data[...] = w


@dataclass
class TrainResult:
    model: Model
    history: list
    best_epoch: int
    best_val_mae: float
    stopped_early: bool
    seconds: float


def _snapshot(model: Model) -> dict:
    return {k: v.copy() for k, v in model.state_arrays().items()}


def train(model: Model, train_set, val_set, prior: PriorVector, weights: LossWeights,
          config: TrainConfig, out_dir=None, start_epoch: int = 0,
          adam_state: AdamState | None = None, history: list | None = None,
          time_budget_s: float | None = None, best_state: dict | None = None) -> TrainResult:
    """Minibatch training with early stopping on validation MAE.

    ``train_set`` / ``val_set`` are (X, y) pairs. Label standardisation
    constants are taken from the training labels. Returns the model restored
    to its best-validation weights. With ``out_dir`` the best and last
    checkpoints and the history CSV are written after every epoch.
    """
    config.validate()
    weights.validate()
    Xtr, ytr = train_set
    Xva, yva = val_set
    if len(ytr) < 2 or len(yva) < 1:
        raise ValueError("training needs >= 2 training and >= 1 validation samples")
    if start_epoch == 0:
        model.label_mean = float(np.mean(ytr))
        model.label_sd = float(np.std(ytr)) or 1.0
    dtype = model.dtype
    state = adam_state or AdamState()
    history = list(history or [])
    best_mae = min((h["val_mae"] for h in history), default=math.inf)
    best_epoch = min(history, key=lambda h: h["val_mae"])["epoch"] if history else -1
    if best_state is None and history:
        best_state = _snapshot(model)
    since_best = (history[-1]["epoch"] - best_epoch) if history else 0
    out_dir = Path(out_dir) if out_dir else None
    started = time.perf_counter()
    stopped_early = False
    n = len(ytr)
    bs = config.batch_size

    for epoch in range(start_epoch, config.max_epochs):
        lr = lr_schedule(epoch, config)
        temp = temperature_schedule(epoch, config)
        order = np.random.default_rng([config.seed, epoch]).permutation(n)
        model.train()
        sums = dict.fromkeys(("l_dist", "l_point", "l_slope", "l_total"), 0.0)
        n_batches = 0
        for b, start in enumerate(range(0, n, bs)):
            idx = order[start:start + bs]
            if idx.size < 2:
                continue
            xb = Tensor(Xtr[idx].astype(dtype, copy=False))
            yb = Tensor(ytr[idx].astype(dtype))
            model.zero_grad()
            with Tape() as tape:
                preds = model.forward(xb)
                loss, parts = total_loss(preds, yb, prior, weights, temp)
            if not all(math.isfinite(v) for v in parts.values()):
                raise TrainingError(f"non-finite loss at epoch {epoch}, batch {b}: {parts}")
            T.backward(tape, loss)
            adam_step(model, state, lr, config)
            for k in sums:
                sums[k] += parts[k]
            n_batches += 1
        val_mae = evaluate(model, (Xva, yva)).mae
        row = {"epoch": epoch, "lr": lr, **{k: v / max(n_batches, 1) for k, v in sums.items()},
               "val_mae": val_mae}
        history.append(row)
        log.info("epoch %d lr %.2e loss %.4f val_mae %.3f", epoch, lr, row["l_total"], val_mae)
        if val_mae < best_mae:
            best_mae, best_epoch, since_best = val_mae, epoch, 0
            best_state = _snapshot(model)
            if out_dir:
                save_checkpoint(model, out_dir / "best.ckpt", extra={"epoch": epoch})
        else:
            since_best += 1
        if out_dir:
            _save_last(model, state, epoch, out_dir)
            write_history(history, out_dir / "history.csv")
        if since_best >= config.early_stop_patience:
            stopped_early = True
            break
        if time_budget_s is not None and time.perf_counter() - started > time_budget_s:
            log.info("time budget exhausted after epoch %d", epoch)
            break

    if best_state is not None:
        model.load_state_arrays(best_state)
    model.eval()
    return TrainResult(model, history, best_epoch, best_mae, stopped_early,
                       time.perf_counter() - started)


def _save_last(model: Model, state: AdamState, epoch: int, out_dir: Path) -> None:
    arrays = {}
    for k in state.m:
        arrays[f"adam.m.{k}"] = state.m[k]
        arrays[f"adam.v.{k}"] = state.v[k]
    save_checkpoint(model, out_dir / "last.ckpt", extra={"epoch": epoch, "adam_step": state.step},
                    arrays=arrays)


def adam_state_from_checkpoint(extra: dict, arrays: dict) -> AdamState:
    state = AdamState(step=int(extra.get("adam_step", 0)))
    for k, v in arrays.items():
        if k.startswith("adam.m."):
            state.m[k[len("adam.m."):]] = v.astype(np.float64)
        elif k.startswith("adam.v."):
            state.v[k[len("adam.v."):]] = v.astype(np.float64)
    return state


def write_history(history: list, path) -> None:
    with Path(path).open("w", encoding="utf-8", newline="") as fh:
        w = csv.DictWriter(fh, fieldnames=HISTORY_FIELDS, lineterminator="\n")
        w.writeheader()
        for row in history:
            w.writerow({k: (repr(float(row[k])) if k != "epoch" else int(row[k])) for k in HISTORY_FIELDS})


def read_history(path) -> list:
    with Path(path).open("r", encoding="utf-8", newline="") as fh:
        return [{k: (int(v) if k == "epoch" else float(v)) for k, v in row.items()}
                for row in csv.DictReader(fh)]
