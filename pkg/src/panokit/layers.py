"""Parameterized layers built on :mod:`panokit.numerics`.

Each layer caches what it needs during ``forward`` and consumes that cache
in ``backward``, accumulating into ``Param.grad`` and returning the gradient
with respect to its input. Forward and backward must therefore alternate.
"""

from __future__ import annotations

from typing import Dict, Iterator, Tuple

import numpy as np

from . import numerics as nx
from .numerics import Param, RunningStats, gaussian_init


class Module:
    """Minimal container that discovers parameters and buffers by attribute walk."""

    _buffers: Tuple[str, ...] = ()

    def named_params(self, prefix: str = "") -> Iterator[Tuple[str, Param]]:
        for key, val in vars(self).items():
            if key.startswith("_"):
                continue
            name = f"{prefix}{key}"
            if isinstance(val, Param):
                yield name, val
            elif isinstance(val, Module):
                yield from val.named_params(name + ".")
            elif isinstance(val, (list, tuple)):
                for i, item in enumerate(val):
                    if isinstance(item, Module):
                        yield from item.named_params(f"{name}.{i}.")
                    elif isinstance(item, Param):
                        yield f"{name}.{i}", item

    def named_buffers(self, prefix: str = "") -> Iterator[Tuple[str, np.ndarray]]:
        for key in self._buffers:
            yield f"{prefix}{key}", getattr(self, key)
        for key, val in vars(self).items():
            if key.startswith("_"):
                continue
            if isinstance(val, Module):
                yield from val.named_buffers(f"{prefix}{key}.")
            elif isinstance(val, (list, tuple)):
                for i, item in enumerate(val):
                    if isinstance(item, Module):
                        yield from item.named_buffers(f"{prefix}{key}.{i}.")

    def params(self) -> Dict[str, Param]:
        return dict(self.named_params())

    def state_arrays(self) -> Dict[str, np.ndarray]:
        """All learned values and buffers, keyed by dotted name."""
        out = {name: p.value for name, p in self.named_params()}
        out.update({f"{name}@buffer": arr for name, arr in self.named_buffers()})
        return out

    def load_state_arrays(self, arrays: Dict[str, np.ndarray]) -> None:
        targets = self.state_arrays()
        missing = set(targets) - set(arrays)
        if missing:
            raise KeyError(f"missing arrays: {sorted(missing)[:5]}")
        for name, dst in targets.items():
            src = np.asarray(arrays[name], dtype=np.float64)
            if src.shape != dst.shape:
                raise ValueError(f"{name}: shape {src.shape} != {dst.shape}")
            dst[...] = src

    def zero_grad(self) -> None:
        for _, p in self.named_params():
            p.zero_grad()


class Linear(Module):
    """``y = x @ W + b`` over the last axis."""

    def __init__(self, rng: np.random.Generator, n_in: int, n_out: int, bias: bool = True):
        self.weight = Param(gaussian_init(rng, (n_in, n_out)))
        self.bias = Param(np.zeros(n_out)) if bias else None
        self._x = None

    def forward(self, x: np.ndarray) -> np.ndarray:
        self._x = x
        y = x @ self.weight.value
        if self.bias is not None:
            y = y + self.bias.value
        return y

    def backward(self, dy: np.ndarray) -> np.ndarray:
        x2 = self._x.reshape(-1, self._x.shape[-1])
        d2 = dy.reshape(-1, dy.shape[-1])
        self.weight.grad += x2.T @ d2
        if self.bias is not None:
            self.bias.grad += d2.sum(axis=0)
        return dy @ self.weight.value.T


class Conv2d(Module):
    def __init__(self, rng, c_in: int, c_out: int, kernel, stride=1, pad=0,
                 wrap: bool = True, bias: bool = True):
        kh, kw = nx._pair(kernel)
        self.weight = Param(gaussian_init(rng, (c_out, c_in, kh, kw)))
        self.bias = Param(np.zeros(c_out)) if bias else None
        self._stride, self._pad, self._wrap = stride, pad, wrap
        self._cache = None

    def forward(self, x: np.ndarray) -> np.ndarray:
        b = None if self.bias is None else self.bias.value
        y, self._cache = nx.conv2d_forward(x, self.weight.value, self._stride, self._pad, self._wrap, b)
        return y

    def backward(self, dy: np.ndarray) -> np.ndarray:
        dx, dw, db = nx.conv2d_backward(dy, self._cache)
        self.weight.grad += dw
        if self.bias is not None:
            self.bias.grad += db
        return dx


class Conv1d(Module):
    """Conv over ``B×C×L`` with circular padding along ``L`` (``kernel`` odd)."""

    def __init__(self, rng, c_in: int, c_out: int, kernel: int, wrap: bool = True):
        self.conv = Conv2d(rng, c_in, c_out, (1, kernel), 1, (0, kernel // 2), wrap)

    def forward(self, x: np.ndarray) -> np.ndarray:
        return self.conv.forward(x[:, :, None, :])[:, :, 0, :]

    def backward(self, dy: np.ndarray) -> np.ndarray:
        return self.conv.backward(dy[:, :, None, :])[:, :, 0, :]


class BatchNorm(Module):
    """Affine batch/channel norm; channel axis 1 of a batched tensor."""

    _buffers = ("running_mean", "running_var")

    def __init__(self, channels: int, momentum: float = 0.1, eps: float = 1e-5):
        self.gain = Param(np.ones(channels))
        self.bias = Param(np.zeros(channels))
        self.running_mean = np.zeros(channels)
        self.running_var = np.ones(channels)
        self._momentum, self._eps = momentum, eps
        self._cache = None

    def forward(self, x: np.ndarray, train: bool) -> np.ndarray:
        stats = RunningStats(self.running_mean, self.running_var, self._momentum)
        y, self._cache = nx.batch_channel_norm_forward(
            x, stats, train, axis=1, eps=self._eps, gain=self.gain.value, bias=self.bias.value)
        return y

    def backward(self, dy: np.ndarray) -> np.ndarray:
        dx, dg, db = nx.batch_channel_norm_backward(dy, self._cache)
        self.gain.grad += dg
        self.bias.grad += db
        return dx


class LayerNorm(Module):
    def __init__(self, dim: int, eps: float = 1e-5):
        self.gain = Param(np.ones(dim))
        self.bias = Param(np.zeros(dim))
        self._eps = eps
        self._cache = None

    def forward(self, x: np.ndarray) -> np.ndarray:
        y, self._cache = nx.layer_norm_forward(x, self.gain.value, self.bias.value, self._eps)
        return y

    def backward(self, dy: np.ndarray) -> np.ndarray:
        dx, dg, db = nx.layer_norm_backward(dy, self._cache)
        self.gain.grad += dg
        self.bias.grad += db
        return dx


class Activation(Module):
    def __init__(self, kind: str):
        nx.activation(np.zeros(1), kind)  # validate early
        self._kind = kind
        self._cache = None

    def forward(self, x: np.ndarray) -> np.ndarray:
        y, self._cache = nx.activation_forward(x, self._kind)
        return y

    def backward(self, dy: np.ndarray) -> np.ndarray:
        return nx.activation_backward_cached(dy, self._cache)
