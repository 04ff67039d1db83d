"""Central finite-difference checks for tape gradients."""
from __future__ import annotations

from typing import Callable, Optional, Sequence

import numpy as np

from .tensor import Tape, Tensor, backward, no_tape


def relative_error(analytic, numeric) -> float:
    """||a - n|| / max(||a||, ||n||), with 0 when both vanish."""
    a = np.asarray(analytic, dtype=np.float64).ravel()
    n = np.asarray(numeric, dtype=np.float64).ravel()
    scale = max(np.linalg.norm(a), np.linalg.norm(n))
    if scale == 0.0:
        return 0.0
    return float(np.linalg.norm(a - n) / scale)


def numeric_grad(fn: Callable[[], Tensor], t: Tensor, h: float = 1e-6,
                 indices: Optional[Sequence[int]] = None) -> np.ndarray:
    """d fn() / d t.data by central differences; entries not in ``indices`` stay 0."""
    flat = t.data.reshape(-1)
    out = np.zeros(flat.size)
    idx = range(flat.size) if indices is None else indices
    with no_tape():
        for i in idx:
            orig = flat[i]
            flat[i] = orig + h
            up = float(fn().data)
            flat[i] = orig - h
            down = float(fn().data)
            flat[i] = orig
            out[i] = (up - down) / (2.0 * h)
    return out.reshape(t.shape)


def check_gradients(fn: Callable[[], Tensor], tensors: Sequence[Tensor], h: float = 1e-6,
                    max_entries: Optional[int] = None, seed: int = 0) -> dict:
    """Relative error of the tape gradient against finite differences, per tensor.

    With ``max_entries`` only a random subset of each tensor is perturbed and
    the comparison is restricted to that subset.
    """
    for t in tensors:
        t.requires_grad = True
        t.grad = np.zeros_like(t.data)
    with Tape() as tape:
        loss = fn()
    backward(tape, loss, wrt=list(tensors))
    rng = np.random.default_rng(seed)
    errors = {}
    for k, t in enumerate(tensors):
        size = t.data.size
        if max_entries is not None and size > max_entries:
            idx = np.sort(rng.choice(size, max_entries, replace=False))
        else:
            idx = np.arange(size)
        num = numeric_grad(fn, t, h, idx).reshape(-1)[idx]
        ana = t.grad.reshape(-1)[idx]
        errors[t.name or f"arg{k}"] = relative_error(ana, num)
    return errors
