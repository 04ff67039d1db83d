"""Minimal reverse-mode automatic differentiation over dense numpy arrays.

Only the operators the Net1D regressor and its losses need are provided.
Operations executed inside an active :class:`Tape` are recorded together
with a closure that maps the output gradient to the parent gradients;
:func:`backward` replays the tape in exact reverse order.

    >>> x = Tensor(np.arange(3.0), requires_grad=True)
    >>> with Tape() as tape:
    ...     loss = sum_(mul(x, x))
    >>> backward(tape, loss)
    >>> x.grad
    array([0., 2., 4.])
"""
from __future__ import annotations

import threading
from typing import Callable, Optional, Sequence

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view


class ShapeError(ValueError):
    pass


class ContractError(RuntimeError):
    pass


class Tensor:
    __slots__ = ("data", "grad", "requires_grad", "name")

    def __init__(self, data, requires_grad: bool = False, name: Optional[str] = None):
        if isinstance(data, Tensor):
            data = data.data
        arr = np.asarray(data)
        if not np.issubdtype(arr.dtype, np.floating):
            arr = arr.astype(np.float64)
        self.data = arr
        self.requires_grad = requires_grad
        self.name = name
        self.grad = np.zeros_like(arr) if requires_grad else None

    @property
    def shape(self):
        return self.data.shape

    @property
    def dtype(self):
        return self.data.dtype

    def zero_grad(self):
        if self.requires_grad:
            self.grad = np.zeros_like(self.data)

    def item(self) -> float:
        return float(self.data.reshape(-1)[0])

    def numpy(self) -> np.ndarray:
        return self.data

    def __repr__(self):
        tag = f" name={self.name!r}" if self.name else ""
        return f"Tensor(shape={self.data.shape}, dtype={self.data.dtype}{tag})"


class _Node:
    __slots__ = ("out", "parents", "backward")

    def __init__(self, out, parents, backward):
        self.out = out
        self.parents = parents
        self.backward = backward


_state = threading.local()


def _active() -> Optional["Tape"]:
    stack = getattr(_state, "stack", None)
    return stack[-1] if stack else None


class Tape:
    """Ordered record of operations; a tape belongs to exactly one thread."""

    def __init__(self):
        self.nodes: list[_Node] = []
        self._produced: set[int] = set()

    def __enter__(self):
        if not hasattr(_state, "stack"):
            _state.stack = []
        _state.stack.append(self)
        return self

    def __exit__(self, *exc):
        _state.stack.pop()
        return False

    def __len__(self):
        return len(self.nodes)

    def record(self, out: Tensor, parents: Sequence[Tensor], backward: Callable):
        self.nodes.append(_Node(out, tuple(parents), backward))
        self._produced.add(id(out))


def no_tape():
    """Context that suspends recording (e.g. for evaluation inside a training step)."""
    return _Suspend()


class _Suspend:
    def __enter__(self):
        if not hasattr(_state, "stack"):
            _state.stack = []
        _state.stack.append(None)

    def __exit__(self, *exc):
        _state.stack.pop()
        return False


def _as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def _emit(data: np.ndarray, parents: Sequence[Tensor], backward: Callable) -> Tensor:
    tape = _active()
    track = tape is not None and any(p.requires_grad for p in parents)
    out = Tensor(data)
    if track:
        out.requires_grad = True
        tape.record(out, parents, backward)
    return out


def backward(tape: Tape, loss: Tensor, wrt: Optional[Sequence[Tensor]] = None) -> None:
    """Populate ``grad`` of every tracked tensor with d(loss)/d(tensor).

    Leaf gradients accumulate across calls; gradients of intermediate tensors
    are overwritten. When ``wrt`` is given, only those leaves receive gradient.
    """
    if loss.data.size != 1:
        raise ContractError(f"backward needs a scalar loss, got shape {loss.shape}")
    if id(loss) not in tape._produced:
        raise ContractError("loss was not produced on this tape")
    allowed = None if wrt is None else {id(t) for t in wrt}
    pending = {id(loss): np.ones_like(loss.data)}
    for node in reversed(tape.nodes):
        g = pending.pop(id(node.out), None)
        if g is None:
            continue
        node.out.grad = g
        parent_grads = node.backward(g)
        for p, pg in zip(node.parents, parent_grads):
            if pg is None or not p.requires_grad:
                continue
            key = id(p)
            if key in tape._produced:
                prev = pending.get(key)
                pending[key] = pg if prev is None else prev + pg
            elif allowed is None or key in allowed:
                if p.grad is None or p.grad.shape != p.data.shape:
                    p.grad = np.zeros_like(p.data)
                p.grad += pg


# ---------------------------------------------------------------- elementwise

def add(x: Tensor, y: Tensor) -> Tensor:
    if x.shape != y.shape:
        raise ShapeError(f"add: shapes {x.shape} and {y.shape} differ")
    return _emit(x.data + y.data, (x, y), lambda g: (g, g))


def sub(x: Tensor, y: Tensor) -> Tensor:
    if x.shape != y.shape:
        raise ShapeError(f"sub: shapes {x.shape} and {y.shape} differ")
    return _emit(x.data - y.data, (x, y), lambda g: (g, -g))


def mul(x: Tensor, y: Tensor) -> Tensor:
    if x.shape != y.shape:
        raise ShapeError(f"mul: shapes {x.shape} and {y.shape} differ")
    return _emit(x.data * y.data, (x, y), lambda g: (g * y.data, g * x.data))


def affine(x: Tensor, scale: float, shift: float = 0.0) -> Tensor:
    """``x * scale + shift`` with python-scalar coefficients."""
    return _emit(x.data * scale + shift, (x,), lambda g: (g * scale,))


def abs_(x: Tensor) -> Tensor:
    return _emit(np.abs(x.data), (x,), lambda g: (g * np.sign(x.data),))


def relu(x: Tensor) -> Tensor:
    # np.maximum keeps NaN, so corrupted activations still reach the loss check
    mask = x.data > 0
    return _emit(np.maximum(x.data, 0).astype(x.dtype), (x,), lambda g: (g * mask,))


def sigmoid(x: Tensor) -> Tensor:
    # split by sign so exp never overflows
    d = x.data
    e = np.exp(-np.abs(d))
    out = np.where(d >= 0, 1.0 / (1.0 + e), e / (1.0 + e)).astype(d.dtype)
    return _emit(out, (x,), lambda g: (g * out * (1.0 - out),))


def reshape(x: Tensor, shape) -> Tensor:
    old = x.shape
    return _emit(x.data.reshape(shape), (x,), lambda g: (g.reshape(old),))


def sum_(x: Tensor) -> Tensor:
    total = np.sum(x.data, dtype=np.float64).astype(x.dtype)
    return _emit(np.asarray(total), (x,), lambda g: (np.full_like(x.data, g),))


def mean(x: Tensor) -> Tensor:
    n = x.data.size
    total = (np.sum(x.data, dtype=np.float64) / n).astype(x.dtype)
    return _emit(np.asarray(total), (x,), lambda g: (np.full_like(x.data, g / n),))


def weighted_sum(terms: Sequence[Tensor], weights: Sequence[float]) -> Tensor:
    """Scalar ``sum_k w_k * t_k`` over scalar tensors."""
    vals = sum(float(w) * float(t.data) for t, w in zip(terms, weights))
    dtype = terms[0].dtype
    return _emit(np.asarray(vals, dtype=dtype), tuple(terms),
                 lambda g: tuple(g * w for w in weights))


# ---------------------------------------------------------------- layers

def dense(x: Tensor, w: Tensor, b: Optional[Tensor] = None) -> Tensor:
    """x[batch, f_in] @ w[f_in, f_out] + b[f_out]."""
    if x.data.ndim != 2 or w.data.ndim != 2 or x.shape[1] != w.shape[0]:
        raise ShapeError(f"dense: input {x.shape} incompatible with weights {w.shape}")
    out = x.data @ w.data
    if b is not None:
        if b.shape != (w.shape[1],):
            raise ShapeError(f"dense: bias {b.shape} does not match weights {w.shape}")
        out = out + b.data

    def back(g):
        gx = g @ w.data.T
        gw = x.data.T @ g
        if b is None:
            return gx, gw
        return gx, gw, g.sum(axis=0)

    parents = (x, w) if b is None else (x, w, b)
    return _emit(out, parents, back)


def _pad_amounts(kernel: int, padding) -> tuple[int, int]:
    if padding == "valid":
        return 0, 0
    if padding == "same":
        total = kernel - 1
        return total // 2, total - total // 2
    if isinstance(padding, int):
        return padding, padding
    raise ValueError(f"unknown padding {padding!r}")


def conv_output_length(length: int, kernel: int, stride: int, padding="same") -> int:
    left, right = _pad_amounts(kernel, padding)
    return (length + left + right - kernel) // stride + 1


def conv1d(x: Tensor, w: Tensor, b: Optional[Tensor] = None, stride: int = 1,
           padding="same") -> Tensor:
    """Cross-correlation of x[b, c_in, l] with w[c_out, c_in, k].

    ``"same"`` pads k - 1 samples in total, the odd one on the right, so the
    output length is ceil(l / stride).
    """
    if x.data.ndim != 3 or w.data.ndim != 3:
        raise ShapeError(f"conv1d: input {x.shape} / weights {w.shape} must be 3-D")
    nb, cin, length = x.shape
    cout, wcin, k = w.shape
    if cin != wcin:
        raise ShapeError(f"conv1d: input {x.shape} has {cin} channels, weights {w.shape} expect {wcin}")
    left, right = _pad_amounts(k, padding)
    if k > length + left + right:
        raise ShapeError(f"conv1d: kernel {k} longer than padded input {length + left + right}")
    xp = np.pad(x.data, ((0, 0), (0, 0), (left, right))) if left or right else x.data
    windows = sliding_window_view(xp, k, axis=2)[:, :, ::stride, :]
    lout = windows.shape[2]
    cols = np.ascontiguousarray(windows.transpose(0, 2, 1, 3)).reshape(nb * lout, cin * k)
    w2 = w.data.reshape(cout, cin * k)
    out = (cols @ w2.T).reshape(nb, lout, cout).transpose(0, 2, 1)
    if b is not None:
        out = out + b.data[None, :, None]
    out = np.ascontiguousarray(out)

    def back(g):
        g2 = g.transpose(0, 2, 1).reshape(nb * lout, cout)
        gw = (g2.T @ cols).reshape(cout, cin, k)
        gcols = (g2 @ w2).reshape(nb, lout, cin, k)
        gxp = np.zeros((nb, cin, xp.shape[2]), dtype=g.dtype)
        span = stride * (lout - 1) + 1
        for j in range(k):
            gxp[:, :, j:j + span:stride] += gcols[:, :, :, j].transpose(0, 2, 1)
        gx = gxp[:, :, left:left + length]
        if b is None:
            return gx, gw
        return gx, gw, g.sum(axis=(0, 2))

    parents = (x, w) if b is None else (x, w, b)
    return _emit(out, parents, back)


def batchnorm1d(x: Tensor, gamma: Tensor, beta: Tensor, running_mean: np.ndarray,
                running_var: np.ndarray, training: bool, momentum: float = 0.1,
                eps: float = 1e-5) -> Tensor:
    """Batch normalisation over x[b, c, l] (or x[b, c]) per channel.

    In training mode batch statistics are used and the running buffers are
    updated in place; in eval mode the running buffers are used.
    """
    if eps <= 0:
        raise ValueError("batchnorm eps must be positive")
    if x.data.ndim not in (2, 3) or gamma.shape != (x.shape[1],) or beta.shape != (x.shape[1],):
        raise ShapeError(f"batchnorm1d: input {x.shape}, gamma {gamma.shape}, beta {beta.shape}")
    axes = (0, 2) if x.data.ndim == 3 else (0,)
    bshape = (1, -1, 1) if x.data.ndim == 3 else (1, -1)
    dt = x.dtype
    if training:
        m = x.data.size // x.shape[1]
        mu = x.data.mean(axis=axes, dtype=np.float64)
        var = np.square(x.data - mu.reshape(bshape).astype(dt)).mean(axis=axes, dtype=np.float64)
        if momentum:
            unbiased = var * m / max(m - 1, 1)
            running_mean *= 1 - momentum
            running_mean += momentum * mu
            running_var *= 1 - momentum
            running_var += momentum * unbiased
    else:
        mu = running_mean.astype(np.float64)
        var = running_var.astype(np.float64)
    inv = (1.0 / np.sqrt(var + eps)).astype(dt).reshape(bshape)
    xhat = (x.data - mu.astype(dt).reshape(bshape)) * inv
    out = xhat * gamma.data.reshape(bshape) + beta.data.reshape(bshape)

    def back(g):
        ggamma = (g * xhat).sum(axis=axes, dtype=np.float64).astype(dt)
        gbeta = g.sum(axis=axes, dtype=np.float64).astype(dt)
        gxhat = g * gamma.data.reshape(bshape)
        if not training:
            return gxhat * inv, ggamma, gbeta
        s1 = gxhat.mean(axis=axes, dtype=np.float64).astype(dt).reshape(bshape)
        s2 = (gxhat * xhat).mean(axis=axes, dtype=np.float64).astype(dt).reshape(bshape)
        return inv * (gxhat - s1 - xhat * s2), ggamma, gbeta

    return _emit(out, (x, gamma, beta), back)


def max_pool1d(x: Tensor, kernel: int, stride: Optional[int] = None) -> Tensor:
    """Valid max pooling; ties route gradient to the lowest index."""
    stride = stride or kernel
    nb, c, length = x.shape
    if kernel > length:
        raise ShapeError(f"max_pool1d: kernel {kernel} longer than input {length}")
    windows = sliding_window_view(x.data, kernel, axis=2)[:, :, ::stride, :]
    arg = windows.argmax(axis=3)
    out = np.take_along_axis(windows, arg[..., None], axis=3)[..., 0]
    lout = out.shape[2]

    def back(g):
        gx = np.zeros_like(x.data)
        span = stride * (lout - 1) + 1
        for j in range(kernel):
            gx[:, :, j:j + span:stride] += np.where(arg == j, g, 0)
        return (gx,)

    return _emit(np.ascontiguousarray(out), (x,), back)


def global_avg_pool(x: Tensor) -> Tensor:
    """x[b, c, l] -> [b, c]."""
    length = x.shape[2]
    out = x.data.mean(axis=2, dtype=np.float64).astype(x.dtype)
    return _emit(out, (x,),
                 lambda g: (np.broadcast_to(g[:, :, None] / length, x.shape).copy(),))


def scale_channels(x: Tensor, s: Tensor) -> Tensor:
    """x[b, c, l] * s[b, c] broadcast along length."""
    if s.shape != x.shape[:2]:
        raise ShapeError(f"scale_channels: scales {s.shape} do not match input {x.shape}")
    out = x.data * s.data[:, :, None]
    return _emit(out, (x, s),
                 lambda g: (g * s.data[:, :, None], (g * x.data).sum(axis=2)))
