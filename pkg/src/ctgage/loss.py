"""Distribution-aligned regression loss.

``total = lambda_dist * L_dist + lambda_point * L_point + lambda_slope * L_slope``

* L_dist: mean |soft_sort(preds)_i - q_i| where q_i is the prior quantile at
  (i - 0.5) / N, i.e. the sorted batch is matched against N evenly spaced
  quantiles of a shrunken truncated-normal label prior.
* L_point: mean absolute error.
* L_slope: (beta - 1)^2 with beta = Cov(preds, y) / (Var(preds) + eps_var),
  population moments.
"""
from __future__ import annotations

import csv
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import tensor as T
from .tensor import Tensor


@dataclass
class PriorSpec:
    mu: float
    sigma: float
    label_min: float
    label_max: float
    shrink: float = 0.8
    step: float = 1.0
    epsilon: float = 1e-6

    def validate(self) -> "PriorSpec":
        if not self.sigma > 0:
            raise ValueError("prior sigma must be positive (labels are all equal?)")
        if not self.label_min < self.label_max:
            raise ValueError("label_min must be below label_max")
        if not (self.step > 0 and self.epsilon > 0 and self.shrink > 0):
            raise ValueError("step, epsilon and shrink must be positive")
        return self


@dataclass
class PriorVector:
    spec: PriorSpec
    bin_centers: np.ndarray
    probs: np.ndarray

    def __post_init__(self):
        cum = np.cumsum(self.probs)
        # CDF evaluated at bin centres (half of each bin's own mass)
        self._cdf_mid = cum - self.probs / 2.0

    def quantile(self, u):
        """Inverse CDF with linear interpolation between bin centres."""
        return np.interp(u, self._cdf_mid, self.bin_centers)

    def quantiles(self, n: int) -> np.ndarray:
        return self.quantile((np.arange(1, n + 1) - 0.5) / n)


@dataclass
class LossWeights:
    lambda_dist: float = 0.5
    lambda_point: float = 1.0
    lambda_slope: float = 0.1
    eps_var: float = 1e-8

    def validate(self) -> "LossWeights":
        if min(self.lambda_dist, self.lambda_point, self.lambda_slope, self.eps_var) < 0:
            raise ValueError("loss weights must be >= 0")
        if not self.lambda_point > 0:
            raise ValueError("lambda_point must be positive")
        return self


def build_prior(train_labels, step: float = 1.0, epsilon: float = 1e-6, shrink: float = 0.8,
                label_min: float | None = None, label_max: float | None = None) -> PriorVector:
    labels = np.asarray(train_labels, dtype=np.float64)
    if np.unique(labels).size < 2:
        raise ValueError("need at least two distinct labels to build a prior")
    spec = PriorSpec(mu=float(labels.mean()), sigma=float(labels.std()),
                     label_min=float(labels.min() if label_min is None else label_min),
                     label_max=float(labels.max() if label_max is None else label_max),
                     shrink=shrink, step=step, epsilon=epsilon).validate()
    return prior_from_spec(spec)


def prior_from_spec(spec: PriorSpec) -> PriorVector:
    spec.validate()
    n_bins = int(np.floor((spec.label_max - spec.label_min) / spec.step + 1e-9)) + 1
    centers = spec.label_min + spec.step * np.arange(n_bins)
    sd = spec.shrink * spec.sigma
    density = np.exp(-0.5 * ((centers - spec.mu) / sd) ** 2) / (sd * np.sqrt(2.0 * np.pi))
    probs = density + spec.epsilon
    probs = probs / probs.sum()
    return PriorVector(spec=spec, bin_centers=centers, probs=probs)


def dump_prior(prior: PriorVector, path) -> None:
    with Path(path).open("w", encoding="utf-8", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["bin_center", "prob"])
        for c, p in zip(prior.bin_centers, prior.probs):
            w.writerow([repr(float(c)), repr(float(p))])


def soft_sort(preds: Tensor, temperature: float) -> Tensor:
    """Ascending soft sort ``S @ preds`` with S_ij = softmax_j(-(x_j - sorted_i)^2 / temperature).

    The anchors ``sorted_i`` are the hard-sorted inputs, so gradient also
    flows through them (to the element that sits at rank i).
    """
    if temperature <= 0:
        raise ValueError("temperature must be positive")
    x = preds.data.astype(np.float64)
    n = x.size
    perm = np.argsort(x, kind="stable")
    h = x[perm]
    diff = x[None, :] - h[:, None]
    logits = -(diff ** 2) / temperature
    logits -= logits.max(axis=1, keepdims=True)
    S = np.exp(logits)
    S /= S.sum(axis=1, keepdims=True)
    y = S @ x

    def back(g):
        g = g.astype(np.float64).reshape(n)
        gx = S.T @ g
        A = g[:, None] * S * (x[None, :] - y[:, None])
        dD = 2.0 * diff / temperature
        gx -= (A * dD).sum(axis=0)
        gh = (A * dD).sum(axis=1)
        np.add.at(gx, perm, gh)
        return (gx.reshape(preds.shape).astype(preds.dtype),)

    return T._emit(y.reshape(preds.shape).astype(preds.dtype), (preds,), back)


def dist_loss(preds: Tensor, prior: PriorVector, temperature: float = 1.0) -> Tensor:
    n = preds.data.size
    q = Tensor(prior.quantiles(n).reshape(preds.shape).astype(preds.dtype))
    return T.mean(T.abs_(T.sub(soft_sort(preds, temperature), q)))


def point_loss(preds: Tensor, targets: Tensor) -> Tensor:
    if preds.shape != targets.shape:
        raise T.ShapeError(f"point_loss: preds {preds.shape} vs targets {targets.shape}")
    return T.mean(T.abs_(T.sub(preds, targets)))


def slope_loss(preds: Tensor, targets: Tensor, eps_var: float = 1e-8) -> Tensor:
    if preds.shape != targets.shape:
        raise T.ShapeError(f"slope_loss: preds {preds.shape} vs targets {targets.shape}")
    p = preds.data.astype(np.float64).ravel()
    t = targets.data.astype(np.float64).ravel()
    n = p.size
    if n < 2:
        raise ValueError("slope_loss needs at least two samples")
    pc, tc = p - p.mean(), t - t.mean()
    cov = (pc * tc).mean()
    var = (pc * pc).mean()
    denom = var + eps_var
    beta = cov / denom
    out = (beta - 1.0) ** 2

    def back(g):
        k = 2.0 * (beta - 1.0) * float(g)
        dp = (tc / n * denom - cov * 2.0 * pc / n) / denom ** 2
        dt = pc / n / denom
        return ((k * dp).reshape(preds.shape).astype(preds.dtype),
                (k * dt).reshape(targets.shape).astype(targets.dtype))

    return T._emit(np.asarray(out, dtype=preds.dtype), (preds, targets), back)


def slope_estimate(preds, targets, eps_var: float = 1e-8) -> float:
    p = np.asarray(preds, dtype=np.float64)
    t = np.asarray(targets, dtype=np.float64)
    pc, tc = p - p.mean(), t - t.mean()
    return float((pc * tc).mean() / ((pc * pc).mean() + eps_var))


def total_loss(preds: Tensor, targets: Tensor, prior: PriorVector, weights: LossWeights,
               temperature: float = 1.0) -> tuple[Tensor, dict]:
    """Weighted sum plus the three component values."""
    ld = dist_loss(preds, prior, temperature)
    lp = point_loss(preds, targets)
    ls = slope_loss(preds, targets, weights.eps_var)
    total = T.weighted_sum((ld, lp, ls), (weights.lambda_dist, weights.lambda_point, weights.lambda_slope))
    parts = {"l_dist": float(ld.data), "l_point": float(lp.data), "l_slope": float(ls.data),
             "l_total": float(total.data)}
    return total, parts
