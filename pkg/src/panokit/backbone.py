"""Small convolutional feature pyramid with strip pooling."""

from __future__ import annotations

from typing import List, Sequence

import numpy as np

from . import numerics as nx
from .errors import DimensionError
from .layers import Activation, BatchNorm, Conv2d, Module

DEFAULT_WIDTHS = (16, 32, 64, 128)


class StripPool(Module):
    """``relu(x + conv1x1(row mean) + conv1x1(column mean))`` with both means broadcast back."""

    def __init__(self, rng, channels: int):
        self.row_conv = Conv2d(rng, channels, channels, 1, wrap=False)
        self.col_conv = Conv2d(rng, channels, channels, 1, wrap=False)
        self._pre = None

    def row_branch(self, x: np.ndarray) -> np.ndarray:
        return self.row_conv.forward(x.mean(axis=3, keepdims=True))

    def forward(self, x: np.ndarray) -> np.ndarray:
        r = self.row_branch(x)
        c = self.col_conv.forward(x.mean(axis=2, keepdims=True))
        self._pre = x + r + c
        return nx.activation(self._pre, "relu")

    def backward(self, dy: np.ndarray) -> np.ndarray:
        dpre = nx.activation_backward(dy, self._pre, "relu")
        H, W = dpre.shape[2], dpre.shape[3]
        dr = self.row_conv.backward(dpre.sum(axis=3, keepdims=True))
        dc = self.col_conv.backward(dpre.sum(axis=2, keepdims=True))
        return dpre + dr / W + dc / H


class Block(Module):
    """conv3×3/2 → norm → relu → conv3×3 → relu → strip pool."""

    def __init__(self, rng, c_in: int, c_out: int):
        self.conv1 = Conv2d(rng, c_in, c_out, 3, stride=2, pad=1, wrap=True, bias=False)
        self.norm = BatchNorm(c_out)
        self.act1 = Activation("relu")
        self.conv2 = Conv2d(rng, c_out, c_out, 3, stride=1, pad=1, wrap=True)
        self.act2 = Activation("relu")
        self.pool = StripPool(rng, c_out)

    def forward(self, x: np.ndarray, train: bool = False) -> np.ndarray:
        h = self.conv1.forward(x)
        h = self.act1.forward(self.norm.forward(h, train))
        h = self.act2.forward(self.conv2.forward(h))
        return self.pool.forward(h)

    def backward(self, dy: np.ndarray) -> np.ndarray:
        d = self.pool.backward(dy)
        d = self.conv2.backward(self.act2.backward(d))
        d = self.norm.backward(self.act1.backward(d))
        return self.conv1.backward(d)


class Backbone(Module):
    def __init__(self, rng, in_channels: int, widths: Sequence[int] = DEFAULT_WIDTHS):
        chans = [in_channels, *widths]
        self.blocks = [Block(rng, chans[i], chans[i + 1]) for i in range(len(widths))]

    def forward(self, x: np.ndarray, train: bool = False) -> List[np.ndarray]:
        """Feature maps for a ``B×C×H×W`` batch; scale k is downsampled by ``2**(k+1)``."""
        H, W = x.shape[-2:]
        if H % 32 or W % 32:
            raise DimensionError(f"backbone input extents must be divisible by 32, got {H}×{W}")
        feats = []
        h = x
        for blk in self.blocks:
            h = blk.forward(h, train)
            feats.append(h)
        return feats

    def backward(self, dfeats: Sequence[np.ndarray]) -> np.ndarray:
        d = None
        for blk, df in zip(reversed(self.blocks), reversed(dfeats)):
            d = df if d is None else d + df
            d = blk.backward(d)
        return d


def backbone_forward(backbone: Backbone, image: np.ndarray, train: bool = False) -> List[np.ndarray]:
    """Unbatched convenience wrapper: ``C×H×W`` in, list of ``C_k×H_k×W_k`` out."""
    return [f[0] for f in backbone.forward(np.asarray(image, dtype=float)[None], train)]
