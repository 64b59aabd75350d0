"""Differentiable operations over `Tensor`.

Each op computes its forward value with numpy and registers a closure that maps
the upstream gradient to one gradient per input (None for non-differentiable
inputs).
"""

import math
from collections.abc import Sequence
from typing import Any

import numpy as np
from scipy.special import erf

from ..utilities.constants import LAYER_NORM_EPS
from ..utilities.errors import ConfigError, DimensionError
from .tensor import Tensor, record

_SQRT2 = math.sqrt(2.0)
_INV_SQRT_2PI = 1.0 / math.sqrt(2.0 * math.pi)


def as_tensor(x: Any) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def unbroadcast(grad: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    """Sums out the axes numpy broadcasting added so `grad` matches `shape`."""
    if grad.shape == shape:
        return grad
    while grad.ndim > len(shape):
        grad = grad.sum(axis=0)
    for axis, size in enumerate(shape):
        if size == 1 and grad.shape[axis] != 1:
            grad = grad.sum(axis=axis, keepdims=True)
    return grad


def _check_same_shape(op: str, a: Tensor, b: Tensor) -> None:
    if a.shape != b.shape:
        raise DimensionError(f"{op}: shape mismatch {a.shape} vs {b.shape}")


# --- Elementwise arithmetic ---

def add(a: Any, b: Any) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    out = Tensor(a.data + b.data)
    return record("add", (a, b), out,
                  lambda g: (unbroadcast(g, a.shape), unbroadcast(g, b.shape)))


def sub(a: Any, b: Any) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    out = Tensor(a.data - b.data)
    return record("sub", (a, b), out,
                  lambda g: (unbroadcast(g, a.shape), unbroadcast(-g, b.shape)))


def mul(a: Any, b: Any) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    out = Tensor(a.data * b.data)
    return record("mul", (a, b), out, lambda g: (
        unbroadcast(g * b.data, a.shape),
        unbroadcast(g * a.data, b.shape),
    ))


def div(a: Any, b: Any) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    out = Tensor(a.data / b.data)
    return record("div", (a, b), out, lambda g: (
        unbroadcast(g / b.data, a.shape),
        unbroadcast(-g * a.data / (b.data * b.data), b.shape),
    ))


def hadamard(a: Tensor, b: Tensor) -> Tensor:
    """Elementwise product of two tensors of identical shape."""
    _check_same_shape("hadamard", a, b)
    return mul(a, b)


def neg(x: Tensor) -> Tensor:
    return record("neg", (x,), Tensor(-x.data), lambda g: (-g,))


def scale(x: Tensor, c: float) -> Tensor:
    return record("scale", (x,), Tensor(x.data * c), lambda g: (g * c,))


def square(x: Tensor) -> Tensor:
    return record("square", (x,), Tensor(x.data * x.data), lambda g: (2.0 * g * x.data,))


def sqrt(x: Tensor) -> Tensor:
    y = np.sqrt(x.data)
    return record("sqrt", (x,), Tensor(y), lambda g: (0.5 * g / y,))


def abs_(x: Tensor) -> Tensor:
    return record("abs", (x,), Tensor(np.abs(x.data)), lambda g: (g * np.sign(x.data),))


def exp(x: Tensor) -> Tensor:
    y = np.exp(x.data)
    return record("exp", (x,), Tensor(y), lambda g: (g * y,))


def log(x: Tensor) -> Tensor:
    return record("log", (x,), Tensor(np.log(x.data)), lambda g: (g / x.data,))


# --- Reductions and shape ---

def _expand(g: np.ndarray, shape: tuple[int, ...], axis: int | None, keepdims: bool) -> np.ndarray:
    if axis is None:
        return np.broadcast_to(g, shape).copy()
    if not keepdims:
        g = np.expand_dims(g, axis)
    return np.broadcast_to(g, shape).copy()


def sum_(x: Tensor, axis: int | None = None, keepdims: bool = False) -> Tensor:
    out = Tensor(np.sum(x.data, axis=axis, keepdims=keepdims))
    return record("sum", (x,), out, lambda g: (_expand(g, x.shape, axis, keepdims),))


def mean(x: Tensor, axis: int | None = None, keepdims: bool = False) -> Tensor:
    count = x.size if axis is None else x.shape[axis]
    out = Tensor(np.mean(x.data, axis=axis, keepdims=keepdims))
    return record("mean", (x,), out,
                  lambda g: (_expand(g, x.shape, axis, keepdims) / count,))


def matmul(a: Tensor, b: Tensor) -> Tensor:
    if a.ndim != 2 or b.ndim != 2 or a.shape[1] != b.shape[0]:
        raise DimensionError(f"matmul: shape mismatch {a.shape} vs {b.shape}")
    out = Tensor(a.data @ b.data)
    return record("matmul", (a, b), out, lambda g: (g @ b.data.T, a.data.T @ g))


def transpose(x: Tensor) -> Tensor:
    if x.ndim != 2:
        raise DimensionError(f"transpose expects a matrix, got shape {x.shape}")
    return record("transpose", (x,), Tensor(x.data.T), lambda g: (g.T,))


def concat_last(a: Tensor, b: Tensor) -> Tensor:
    if a.shape[:-1] != b.shape[:-1]:
        raise DimensionError(f"concat_last: leading shapes differ {a.shape} vs {b.shape}")
    split = a.shape[-1]
    out = Tensor(np.concatenate([a.data, b.data], axis=-1))
    return record("concat_last", (a, b), out, lambda g: (g[..., :split], g[..., split:]))


def concat_rows(parts: Sequence[Tensor]) -> Tensor:
    if not parts:
        raise DimensionError("concat_rows needs at least one tensor")
    tail = parts[0].shape[1:]
    for p in parts:
        if p.shape[1:] != tail:
            raise DimensionError(f"concat_rows: trailing shapes differ {tail} vs {p.shape[1:]}")
    bounds = np.cumsum([0] + [p.shape[0] for p in parts])
    out = Tensor(np.concatenate([p.data for p in parts], axis=0))
    return record("concat_rows", tuple(parts), out,
                  lambda g: [g[bounds[i]:bounds[i + 1]] for i in range(len(parts))])


# --- Network nonlinearities ---

def gelu(x: Tensor) -> Tensor:
    """Exact GELU, x * Phi(x)."""
    cdf = 0.5 * (1.0 + erf(x.data / _SQRT2))
    pdf = _INV_SQRT_2PI * np.exp(-0.5 * x.data * x.data)
    return record("gelu", (x,), Tensor(x.data * cdf), lambda g: (g * (cdf + x.data * pdf),))


def softmax(x: Tensor, axis: int = -1) -> Tensor:
    shifted = x.data - np.max(x.data, axis=axis, keepdims=True)
    e = np.exp(shifted)
    y = e / np.sum(e, axis=axis, keepdims=True)
    return record("softmax", (x,), Tensor(y),
                  lambda g: (y * (g - np.sum(g * y, axis=axis, keepdims=True)),))


def log_softmax(x: Tensor, axis: int = -1) -> Tensor:
    shifted = x.data - np.max(x.data, axis=axis, keepdims=True)
    lse = np.log(np.sum(np.exp(shifted), axis=axis, keepdims=True))
    y = shifted - lse
    p = np.exp(y)
    return record("log_softmax", (x,), Tensor(y),
                  lambda g: (g - p * np.sum(g, axis=axis, keepdims=True),))


def layer_norm(x: Tensor, gain: Tensor, bias: Tensor, eps: float = LAYER_NORM_EPS) -> Tensor:
    """Standardizes the last axis of `x` then applies `gain` and `bias`."""
    n = x.shape[-1]
    if gain.shape != (n,) or bias.shape != (n,):
        raise DimensionError(
            f"layer_norm: gain {gain.shape} / bias {bias.shape} must match last dim {n}"
        )
    mu = np.mean(x.data, axis=-1, keepdims=True)
    centered = x.data - mu
    var = np.mean(centered * centered, axis=-1, keepdims=True)
    inv = 1.0 / np.sqrt(var + eps)
    xhat = centered * inv
    out = Tensor(xhat * gain.data + bias.data)

    def _backward(g: np.ndarray) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
        lead = tuple(range(g.ndim - 1))
        dxhat = g * gain.data
        dx = (inv / n) * (
            n * dxhat
            - np.sum(dxhat, axis=-1, keepdims=True)
            - xhat * np.sum(dxhat * xhat, axis=-1, keepdims=True)
        )
        return dx, np.sum(g * xhat, axis=lead), np.sum(g, axis=lead)

    return record("layer_norm", (x, gain, bias), out, _backward)


def dropout(x: Tensor, p: float, training: bool, rng: np.random.Generator | None = None) -> Tensor:
    """Inverted dropout; exact identity when not training."""
    if not 0.0 <= p < 1.0:
        raise ConfigError(f"dropout probability must lie in [0, 1), got {p}")
    if not training or p == 0.0:
        return x
    if rng is None:
        raise ConfigError("dropout in training mode needs a random generator")
    mask = (rng.random(x.shape) >= p) / (1.0 - p)
    return record("dropout", (x,), Tensor(x.data * mask), lambda g: (g * mask,))


def adaptive_max_pool_1d(x: Tensor, out_len: int) -> Tensor:
    """Max over `out_len` contiguous near-equal bins of the last axis."""
    length = x.shape[-1]
    if out_len < 1 or out_len > length:
        raise DimensionError(f"adaptive_max_pool_1d: out_len {out_len} vs input length {length}")
    starts = [(i * length) // out_len for i in range(out_len)]
    ends = [-(-((i + 1) * length) // out_len) for i in range(out_len)]
    flat = x.data.reshape(-1, length)
    winners = np.empty((flat.shape[0], out_len), dtype=np.int64)
    for i, (lo, hi) in enumerate(zip(starts, ends)):
        winners[:, i] = lo + np.argmax(flat[:, lo:hi], axis=1)
    rows = np.arange(flat.shape[0])[:, None]
    out = Tensor(flat[rows, winners].reshape(*x.shape[:-1], out_len))

    def _backward(g: np.ndarray) -> tuple[np.ndarray]:
        grad = np.zeros_like(flat)
        np.add.at(grad, (np.broadcast_to(rows, winners.shape), winners), g.reshape(-1, out_len))
        return (grad.reshape(x.shape),)

    return record("adaptive_max_pool_1d", (x,), out, _backward)


def grad_reverse(x: Tensor, scale: float = 1.0) -> Tensor:
    """Identity forward; multiplies the upstream gradient by -scale."""
    if scale <= 0:
        raise ConfigError(f"grad_reverse scale must be positive, got {scale}")
    return record("grad_reverse", (x,), Tensor(x.data), lambda g: (-scale * g,))


# --- Composites ---

def l2_normalize(x: Tensor, axis: int = -1) -> Tensor:
    return div(x, sqrt(sum_(square(x), axis=axis, keepdims=True)))


def linear(x: Tensor, weight: Tensor, bias: Tensor) -> Tensor:
    return add(matmul(x, weight), bias)


def standardize_columns(x: Tensor, eps: float = LAYER_NORM_EPS) -> Tensor:
    """Centres each column of a (B x n) batch and scales it to unit variance."""
    if x.ndim != 2:
        raise DimensionError(f"standardize_columns expects a matrix, got shape {x.shape}")
    centered = sub(x, mean(x, axis=0, keepdims=True))
    var = mean(square(centered), axis=0, keepdims=True)
    return div(centered, sqrt(add(var, eps)))
