"""Tensor primitives with explicit forward and backward passes.

Tensors are plain ``numpy.ndarray`` objects holding float64 data. Every
differentiable primitive comes as a ``*_forward`` function returning
``(output, cache)`` and a matching ``*_backward`` taking the upstream
gradient and the cache. Convenience wrappers without the cache are provided
for inference code and tests.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Optional, Sequence, Tuple

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from .errors import ConfigurationError, DimensionError

DTYPE = np.float64
ACTIVATIONS = ("relu", "gelu", "sigmoid", "tanh")


def as_tensor(x) -> np.ndarray:
    return np.asarray(x, dtype=DTYPE)


def _pair(v) -> Tuple[int, int]:
    if isinstance(v, (tuple, list)):
        return int(v[0]), int(v[1])
    return int(v), int(v)


# ---------------------------------------------------------------------------
# matmul


def matmul(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    a, b = as_tensor(a), as_tensor(b)
    if a.ndim != 2 or b.ndim != 2 or a.shape[1] != b.shape[0]:
        raise DimensionError(f"matmul: cannot multiply {a.shape} by {b.shape}")
    return a @ b


def matmul_backward(dy: np.ndarray, a: np.ndarray, b: np.ndarray):
    return dy @ b.T, a.T @ dy


# ---------------------------------------------------------------------------
# conv2d


@dataclass
class ConvCache:
    cols: np.ndarray
    x_shape: tuple
    w: np.ndarray
    stride: Tuple[int, int]
    pad: Tuple[int, int]
    wrap: bool
    out_hw: Tuple[int, int]
    batched: bool


def pad_panorama(x: np.ndarray, pad: Tuple[int, int], wrap: bool) -> np.ndarray:
    """Zero-pad rows; columns are zero- or circularly padded (``wrap``)."""
    ph, pw = pad
    if pw:
        if wrap:
            if pw > x.shape[-1]:
                raise DimensionError("circular padding wider than the input")
            x = np.concatenate([x[..., -pw:], x, x[..., :pw]], axis=-1)
        else:
            x = np.pad(x, [(0, 0)] * (x.ndim - 1) + [(pw, pw)])
    if ph:
        x = np.pad(x, [(0, 0)] * (x.ndim - 2) + [(ph, ph), (0, 0)])
    return x


def unpad_panorama(dxp: np.ndarray, shape: tuple, pad: Tuple[int, int], wrap: bool) -> np.ndarray:
    """Adjoint of :func:`pad_panorama`."""
    ph, pw = pad
    H, W = shape[-2], shape[-1]
    dx = dxp[..., ph:ph + H, :]
    core = dx[..., pw:pw + W].copy()
    if pw and wrap:
        core[..., W - pw:] += dx[..., :pw]
        core[..., :pw] += dx[..., pw + W:]
    return core


def conv2d_forward(x, kernels, stride=1, pad=0, wrap: bool = False, bias=None):
    """2D cross-correlation of ``C×H×W`` (or ``B×C×H×W``) input with ``K×C×kh×kw`` kernels.

    Rows are zero padded. Columns are zero padded, or circularly padded when
    ``wrap`` is set (panorama topology).
    """
    x = as_tensor(x)
    w = as_tensor(kernels)
    batched = x.ndim == 4
    if not batched:
        if x.ndim != 3:
            raise DimensionError(f"conv2d expects C×H×W input, got {x.shape}")
        x = x[None]
    if w.ndim != 4 or w.shape[1] != x.shape[1]:
        raise DimensionError(f"conv2d: kernel {w.shape} does not match input {x.shape}")
    sh, sw = _pair(stride)
    ph, pw = _pair(pad)
    B, C, H, W = x.shape
    K, _, kh, kw = w.shape
    Ho = (H + 2 * ph - kh) // sh + 1
    Wo = (W + 2 * pw - kw) // sw + 1
    if H + 2 * ph - kh < 0 or W + 2 * pw - kw < 0 or Ho <= 0 or Wo <= 0:
        raise DimensionError(f"conv2d: non-positive output extent for input {x.shape}, kernel {w.shape}")
    xp = pad_panorama(x, (ph, pw), wrap)
    win = sliding_window_view(xp, (kh, kw), axis=(2, 3))[:, :, ::sh, ::sw][:, :, :Ho, :Wo]
    cols = win.transpose(0, 2, 3, 1, 4, 5).reshape(B * Ho * Wo, C * kh * kw)
    out = cols @ w.reshape(K, -1).T
    if bias is not None:
        out = out + bias
    out = out.reshape(B, Ho, Wo, K).transpose(0, 3, 1, 2)
    if not batched:
        out = out[0]
    cache = ConvCache(cols, x.shape, w, (sh, sw), (ph, pw), wrap, (Ho, Wo), batched)
    return np.ascontiguousarray(out), cache


def conv2d(x, kernels, stride=1, pad=0, wrap: bool = False, bias=None) -> np.ndarray:
    return conv2d_forward(x, kernels, stride, pad, wrap, bias)[0]


def conv2d_backward(dy: np.ndarray, cache: ConvCache):
    """Return ``(dx, dkernels, dbias)``."""
    if not cache.batched:
        dy = dy[None]
    B, C, H, W = cache.x_shape
    K, _, kh, kw = cache.w.shape
    sh, sw = cache.stride
    Ho, Wo = cache.out_hw
    dym = dy.transpose(0, 2, 3, 1).reshape(B * Ho * Wo, K)
    dw = (dym.T @ cache.cols).reshape(cache.w.shape)
    db = dym.sum(axis=0)
    dcols = (dym @ cache.w.reshape(K, -1)).reshape(B, Ho, Wo, C, kh, kw)
    ph, pw = cache.pad
    dxp = np.zeros((B, C, H + 2 * ph, W + 2 * pw), dtype=DTYPE)
    for i in range(kh):
        for j in range(kw):
            dxp[:, :, i:i + sh * (Ho - 1) + 1:sh, j:j + sw * (Wo - 1) + 1:sw] += (
                dcols[:, :, :, :, i, j].transpose(0, 3, 1, 2)
            )
    dx = unpad_panorama(dxp, cache.x_shape, cache.pad, cache.wrap)
    if not cache.batched:
        dx = dx[0]
    return dx, dw, db


# ---------------------------------------------------------------------------
# softmax


def softmax(x, axis: int = -1) -> np.ndarray:
    x = as_tensor(x)
    z = x - x.max(axis=axis, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=axis, keepdims=True)


def softmax_backward(dy: np.ndarray, y: np.ndarray, axis: int = -1) -> np.ndarray:
    return y * (dy - (dy * y).sum(axis=axis, keepdims=True))


# ---------------------------------------------------------------------------
# layer norm


def layer_norm_forward(x, gain, bias, eps: float = 1e-5):
    x = as_tensor(x)
    if np.shape(gain)[-1] != x.shape[-1] or np.shape(bias)[-1] != x.shape[-1]:
        raise DimensionError("layer_norm: gain/bias length must match the last axis")
    mu = x.mean(axis=-1, keepdims=True)
    xc = x - mu
    var = (xc * xc).mean(axis=-1, keepdims=True)
    inv = 1.0 / np.sqrt(var + eps)
    xhat = xc * inv
    return xhat * gain + bias, (xhat, inv, gain)


def layer_norm(x, gain, bias, eps: float = 1e-5) -> np.ndarray:
    return layer_norm_forward(x, gain, bias, eps)[0]


def layer_norm_backward(dy: np.ndarray, cache):
    """Return ``(dx, dgain, dbias)``."""
    xhat, inv, gain = cache
    n = xhat.shape[-1]
    red = tuple(range(dy.ndim - 1))
    dgain = (dy * xhat).sum(axis=red)
    dbias = dy.sum(axis=red)
    dxhat = dy * gain
    dx = inv / n * (
        n * dxhat
        - dxhat.sum(axis=-1, keepdims=True)
        - xhat * (dxhat * xhat).sum(axis=-1, keepdims=True)
    )
    return dx, dgain, dbias


# ---------------------------------------------------------------------------
# activations

_GELU_C = np.sqrt(2.0 / np.pi)


def activation_forward(x, kind: str):
    """Elementwise nonlinearity; returns ``(y, cache)`` for :func:`activation_backward_cached`."""
    x = as_tensor(x)
    if kind == "relu":
        y = np.maximum(x, 0.0)
        return y, (kind, x > 0)
    if kind == "gelu":
        x2 = x * x
        t = np.tanh(_GELU_C * x * (1.0 + 0.044715 * x2))
        y = 0.5 * x * (1.0 + t)
        return y, (kind, x, x2, t)
    if kind == "sigmoid":
        y = _sigmoid(x)
        return y, (kind, y)
    if kind == "tanh":
        y = np.tanh(x)
        return y, (kind, y)
    raise ConfigurationError(f"unknown activation {kind!r}; expected one of {ACTIVATIONS}")


def activation(x, kind: str) -> np.ndarray:
    return activation_forward(x, kind)[0]


def _sigmoid(x: np.ndarray) -> np.ndarray:
    # split by sign so exp never overflows
    out = np.empty_like(x)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    e = np.exp(x[~pos])
    out[~pos] = e / (1.0 + e)
    return out


def activation_backward_cached(dy: np.ndarray, cache) -> np.ndarray:
    kind = cache[0]
    if kind == "relu":
        return dy * cache[1]
    if kind == "gelu":
        _, x, x2, t = cache
        dinner = _GELU_C * (1.0 + 3 * 0.044715 * x2)
        return dy * (0.5 * (1.0 + t) + 0.5 * x * (1.0 - t * t) * dinner)
    if kind in ("sigmoid", "tanh"):
        y = cache[1]
        return dy * (y * (1.0 - y) if kind == "sigmoid" else 1.0 - y * y)
    raise ConfigurationError(f"unknown activation {kind!r}; expected one of {ACTIVATIONS}")


def activation_backward(dy: np.ndarray, x: np.ndarray, kind: str) -> np.ndarray:
    """Gradient w.r.t. the activation *input* ``x``."""
    return activation_backward_cached(dy, activation_forward(x, kind)[1])


# ---------------------------------------------------------------------------
# 1D linear resize


def resize_matrix(length: int, new_len: int, wrap: bool = False) -> np.ndarray:
    """Matrix ``R`` of shape ``length × new_len`` with ``resize(x) = x @ R``.

    Default mode aligns endpoints. ``wrap=True`` treats the axis as periodic
    with pixel-centre alignment, which commutes with circular shifts whenever
    ``new_len`` is a multiple of ``length``.
    """
    if length < 1 or new_len < 1:
        raise DimensionError("resize_linear: lengths must be positive")
    R = np.zeros((length, new_len), dtype=DTYPE)
    if new_len == length:
        np.fill_diagonal(R, 1.0)
        return R
    j = np.arange(new_len)
    if wrap:
        src = (j + 0.5) * length / new_len - 0.5
        lo = np.floor(src).astype(int)
        t = src - lo
        np.add.at(R, (lo % length, j), 1.0 - t)
        np.add.at(R, ((lo + 1) % length, j), t)
        return R
    if length == 1:
        R[0, :] = 1.0
        return R
    src = j * (length - 1) / (new_len - 1) if new_len > 1 else np.zeros(1)
    lo = np.minimum(np.floor(src).astype(int), length - 2)
    t = src - lo
    np.add.at(R, (lo, j), 1.0 - t)
    np.add.at(R, (lo + 1, j), t)
    return R


def resize_linear(x, new_len: int, wrap: bool = False) -> np.ndarray:
    """Linearly resample the last axis of ``x`` (``C×L``) to ``new_len``."""
    x = as_tensor(x)
    if new_len == x.shape[-1]:
        return x.copy()
    return x @ resize_matrix(x.shape[-1], new_len, wrap)


def resize_linear_backward(dy: np.ndarray, length: int, wrap: bool = False) -> np.ndarray:
    if dy.shape[-1] == length:
        return dy.copy()
    return dy @ resize_matrix(length, dy.shape[-1], wrap).T


# ---------------------------------------------------------------------------
# batch/channel norm


@dataclass
class RunningStats:
    mean: np.ndarray
    var: np.ndarray
    momentum: float = 0.1

    @classmethod
    def fresh(cls, channels: int, momentum: float = 0.1) -> "RunningStats":
        return cls(np.zeros(channels), np.ones(channels), momentum)


def _channel_view(v: np.ndarray, ndim: int, axis: int) -> np.ndarray:
    shape = [1] * ndim
    shape[axis] = -1
    return v.reshape(shape)


def batch_channel_norm_forward(x, stats: RunningStats, train: bool, axis: int = 0,
                               eps: float = 1e-5, gain=None, bias=None):
    """Normalize each channel (``axis``) over all other axes.

    In training mode batch statistics are used and ``stats`` is updated in
    place with momentum; in evaluation mode the running statistics are used.
    """
    x = as_tensor(x)
    axis = axis % x.ndim
    C = x.shape[axis]
    if stats.mean.shape != (C,):
        raise DimensionError(f"batch_channel_norm: stats for {stats.mean.shape} channels, input has {C}")
    red = tuple(i for i in range(x.ndim) if i != axis)
    if train:
        mu = x.mean(axis=red)
        var = x.var(axis=red)
        m = stats.momentum
        stats.mean[...] = (1.0 - m) * stats.mean + m * mu
        stats.var[...] = (1.0 - m) * stats.var + m * var
    else:
        mu, var = stats.mean, stats.var
    inv = 1.0 / np.sqrt(var + eps)
    xhat = (x - _channel_view(mu, x.ndim, axis)) * _channel_view(inv, x.ndim, axis)
    g = np.ones(C) if gain is None else np.asarray(gain)
    b = np.zeros(C) if bias is None else np.asarray(bias)
    y = xhat * _channel_view(g, x.ndim, axis) + _channel_view(b, x.ndim, axis)
    return y, (xhat, inv, g, axis, red, train)


def batch_channel_norm(x, stats: RunningStats, train: bool, axis: int = 0, eps: float = 1e-5,
                       gain=None, bias=None) -> np.ndarray:
    return batch_channel_norm_forward(x, stats, train, axis, eps, gain, bias)[0]


def batch_channel_norm_backward(dy: np.ndarray, cache):
    """Return ``(dx, dgain, dbias)``."""
    xhat, inv, g, axis, red, train = cache
    nd = dy.ndim
    dgain = (dy * xhat).sum(axis=red)
    dbias = dy.sum(axis=red)
    dxhat = dy * _channel_view(g, nd, axis)
    invv = _channel_view(inv, nd, axis)
    if not train:
        return dxhat * invv, dgain, dbias
    n = dy.size // dy.shape[axis]
    s1 = dxhat.sum(axis=red, keepdims=True)
    s2 = (dxhat * xhat).sum(axis=red, keepdims=True)
    dx = invv / n * (n * dxhat - s1 - xhat * s2)
    return dx, dgain, dbias


# ---------------------------------------------------------------------------
# finite differences


def finite_diff_grad(f: Callable[[np.ndarray], float], x, h: float = 1e-5,
                     indices: Optional[Sequence[int]] = None) -> np.ndarray:
    """Central-difference gradient of scalar ``f`` at ``x``.

    With ``indices`` (flat positions) only those components are evaluated and
    a 1D array of the same length is returned.
    """
    x = as_tensor(x).copy()
    flat = x.reshape(-1)
    idx = range(flat.size) if indices is None else indices
    out = np.zeros(len(idx), dtype=DTYPE)
    for n, i in enumerate(idx):
        orig = flat[i]
        flat[i] = orig + h
        fp = float(f(x))
        flat[i] = orig - h
        fm = float(f(x))
        flat[i] = orig
        out[n] = (fp - fm) / (2.0 * h)
    if indices is None:
        return out.reshape(x.shape)
    return out


def relative_error(a, b, floor: float = 1e-12) -> float:
    """``‖a−b‖ / max(‖a‖, ‖b‖, floor)``."""
    a, b = as_tensor(a).ravel(), as_tensor(b).ravel()
    return float(np.linalg.norm(a - b) / max(np.linalg.norm(a), np.linalg.norm(b), floor))


# ---------------------------------------------------------------------------
# parameters and Adam


@dataclass
class Param:
    value: np.ndarray
    grad: np.ndarray = field(default=None)

    def __post_init__(self):
        self.value = as_tensor(self.value)
        if self.grad is None:
            self.grad = np.zeros_like(self.value)

    def zero_grad(self) -> None:
        self.grad[...] = 0.0


def gaussian_init(rng: np.random.Generator, shape, std: float = 0.02) -> np.ndarray:
    return rng.normal(0.0, std, size=shape)


@dataclass
class AdamState:
    m: np.ndarray
    v: np.ndarray
    t: int = 0

    @classmethod
    def like(cls, value: np.ndarray) -> "AdamState":
        return cls(np.zeros_like(value), np.zeros_like(value), 0)


def adam_step(value: np.ndarray, grad: np.ndarray, state: AdamState, lr: float = 1e-4,
              betas: Tuple[float, float] = (0.9, 0.999), eps: float = 1e-8) -> np.ndarray:
    """One bias-corrected Adam update of ``value`` in place; returns ``value``."""
    if value.shape != grad.shape or state.m.shape != value.shape:
        raise DimensionError("adam_step: shapes disagree")
    b1, b2 = betas
    state.t += 1
    state.m *= b1
    state.m += (1.0 - b1) * grad
    state.v *= b2
    state.v += (1.0 - b2) * grad * grad
    mhat = state.m / (1.0 - b1 ** state.t)
    vhat = state.v / (1.0 - b2 ** state.t)
    value -= lr * mhat / (np.sqrt(vhat) + eps)
    return value


class Adam:
    """Adam over a name → :class:`Param` mapping."""

    def __init__(self, params: dict, lr: float = 1e-4, betas=(0.9, 0.999), eps: float = 1e-8):
        self.params = params
        self.lr = lr
        self.betas = betas
        self.eps = eps
        self.state = {name: AdamState.like(p.value) for name, p in params.items()}

    def step(self) -> None:
        for name, p in self.params.items():
            adam_step(p.value, p.grad, self.state[name], self.lr, self.betas, self.eps)
