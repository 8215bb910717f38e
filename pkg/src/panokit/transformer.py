"""Pre-norm transformer encoder without a class token."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import numerics as nx
from .errors import ConfigurationError, DimensionError
from .layers import Activation, LayerNorm, Linear, Module


@dataclass(frozen=True)
class EncoderConfig:
    layers: int = 4
    heads: int = 4
    d_model: int = 256
    mlp_ratio: int = 4

    def __post_init__(self):
        if self.d_model % self.heads:
            raise ConfigurationError(f"d_model={self.d_model} not divisible by heads={self.heads}")


class MultiHeadSelfAttention(Module):
    def __init__(self, rng, d_model: int, heads: int):
        if d_model % heads:
            raise ConfigurationError("d_model must be divisible by heads")
        self.qkv = Linear(rng, d_model, 3 * d_model)
        self.proj = Linear(rng, d_model, d_model)
        self._heads = heads
        self._cache = None
        self.last_attention = None

    def forward(self, x: np.ndarray) -> np.ndarray:
        B, N, d = x.shape
        if d != self.proj.weight.value.shape[0]:
            raise DimensionError(f"attention expects width {self.proj.weight.value.shape[0]}, got {d}")
        h = self._heads
        dh = d // h
        qkv = self.qkv.forward(x).reshape(B, N, 3, h, dh).transpose(2, 0, 3, 1, 4)
        q, k, v = qkv[0], qkv[1], qkv[2]
        scale = 1.0 / np.sqrt(dh)
        att = nx.softmax(q @ k.transpose(0, 1, 3, 2) * scale, axis=-1)
        out = att @ v
        self._cache = (q, k, v, att, scale)
        self.last_attention = att
        return self.proj.forward(out.transpose(0, 2, 1, 3).reshape(B, N, d))

    def backward(self, dy: np.ndarray) -> np.ndarray:
        q, k, v, att, scale = self._cache
        B, h, N, dh = q.shape
        dout = self.proj.backward(dy).reshape(B, N, h, dh).transpose(0, 2, 1, 3)
        datt = dout @ v.transpose(0, 1, 3, 2)
        dv = att.transpose(0, 1, 3, 2) @ dout
        ds = nx.softmax_backward(datt, att, axis=-1) * scale
        dq = ds @ k
        dk = ds.transpose(0, 1, 3, 2) @ q
        dqkv = np.stack([dq, dk, dv]).transpose(1, 3, 0, 2, 4).reshape(B, N, 3 * h * dh)
        return self.qkv.backward(dqkv)


class MLP(Module):
    def __init__(self, rng, d_model: int, ratio: int):
        self.fc1 = Linear(rng, d_model, ratio * d_model)
        self.act = Activation("gelu")
        self.fc2 = Linear(rng, ratio * d_model, d_model)

    def forward(self, x):
        return self.fc2.forward(self.act.forward(self.fc1.forward(x)))

    def backward(self, dy):
        return self.fc1.backward(self.act.backward(self.fc2.backward(dy)))


class EncoderBlock(Module):
    """``y = x + attn(ln(x))``; ``z = y + mlp(ln(y))``."""

    def __init__(self, rng, cfg: EncoderConfig):
        self.ln1 = LayerNorm(cfg.d_model)
        self.attn = MultiHeadSelfAttention(rng, cfg.d_model, cfg.heads)
        self.ln2 = LayerNorm(cfg.d_model)
        self.mlp = MLP(rng, cfg.d_model, cfg.mlp_ratio)

    def forward(self, x: np.ndarray) -> np.ndarray:
        y = x + self.attn.forward(self.ln1.forward(x))
        return y + self.mlp.forward(self.ln2.forward(y))

    def backward(self, dz: np.ndarray) -> np.ndarray:
        dy = dz + self.ln2.backward(self.mlp.backward(dz))
        return dy + self.ln1.backward(self.attn.backward(dy))


class Encoder(Module):
    def __init__(self, rng, cfg: EncoderConfig):
        self.cfg = cfg
        self.blocks = [EncoderBlock(rng, cfg) for _ in range(cfg.layers)]
        self.norm = LayerNorm(cfg.d_model)
        self._shape = None
        self._keep = None

    def forward(self, tokens: np.ndarray, keep_rows=None) -> np.ndarray:
        """Run all blocks and the final norm; return only ``keep_rows`` (default: all)."""
        h = tokens
        for blk in self.blocks:
            h = blk.forward(h)
        h = self.norm.forward(h)
        self._shape = tokens.shape
        self._keep = keep_rows
        return h if keep_rows is None else h[:, keep_rows]

    def backward(self, dy: np.ndarray) -> np.ndarray:
        if self._keep is not None:
            full = np.zeros(self._shape)
            full[:, self._keep] = dy
            dy = full
        d = self.norm.backward(dy)
        for blk in reversed(self.blocks):
            d = blk.backward(d)
        return d


def encoder_forward(encoder: Encoder, seq) -> np.ndarray:
    """Room-layout features: encoded rows that come from feature-map patches."""
    return encoder.forward(seq.tokens, seq.feature_rows)
