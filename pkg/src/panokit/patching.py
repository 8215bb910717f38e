"""Patch sampling, patch embedding and recurrent position embedding."""

from __future__ import annotations

from dataclasses import dataclass
from typing import List, Optional, Sequence, Tuple, Union

import numpy as np

from .errors import ConfigurationError, DimensionError
from .layers import Activation, Linear, Module
from .numerics import Param, gaussian_init

IMAGE_SOURCE = -1
PE_MODES = ("rpe", "learned", "none")


@dataclass
class PatchSet:
    """Sampled patches. ``source`` is a 1-based feature scale or ``"image"``."""

    payload: np.ndarray
    source: Union[int, str]
    pos: np.ndarray
    row: Optional[np.ndarray] = None

    def __len__(self) -> int:
        return len(self.payload)


def sample_feature_patches(f, scale: int = 1) -> PatchSet:
    """One full-height ``C×H×1`` patch per column of a ``C×H×W`` map."""
    f = np.asarray(f, dtype=float)
    C, H, W = f.shape
    payload = f.transpose(2, 0, 1)[..., None].copy()
    return PatchSet(payload, scale, np.arange(W))


def sample_image_patches(img, P: int) -> PatchSet:
    """Non-overlapping ``P×P×C`` patches in row-major grid order."""
    img = np.asarray(img, dtype=float)
    C, H, W = img.shape
    if H % P or W % P:
        raise DimensionError(f"image {H}×{W} not divisible by patch size {P}")
    hb, wb = H // P, W // P
    payload = img.reshape(C, hb, P, wb, P).transpose(1, 3, 2, 4, 0).reshape(hb * wb, P, P, C)
    rows, cols = np.divmod(np.arange(hb * wb), wb)
    return PatchSet(payload, "image", cols, rows)


def reassemble_image_patches(ps: PatchSet, H: int, W: int) -> np.ndarray:
    P = ps.payload.shape[1]
    C = ps.payload.shape[3]
    hb, wb = H // P, W // P
    return ps.payload.reshape(hb, wb, P, P, C).transpose(4, 0, 2, 1, 3).reshape(C, H, W)


def _image_tokens(img: np.ndarray, P: int) -> np.ndarray:
    """Batched flatten of image patches: ``B×C×H×W`` → ``B×N×(P·P·C)``."""
    B, C, H, W = img.shape
    hb, wb = H // P, W // P
    return img.reshape(B, C, hb, P, wb, P).transpose(0, 2, 4, 3, 5, 1).reshape(B, hb * wb, P * P * C)


def _image_tokens_backward(d: np.ndarray, shape: tuple, P: int) -> np.ndarray:
    B, C, H, W = shape
    hb, wb = H // P, W // P
    return d.reshape(B, hb, wb, P, P, C).transpose(0, 5, 1, 3, 2, 4).reshape(shape)


# ---------------------------------------------------------------------------
# position embeddings


def recurrent_pe(pos, randinit, d_model: int) -> np.ndarray:
    """Sinusoidal code of ``pos + randinit``; sin on even, cos on odd components."""
    if d_model % 2:
        raise ConfigurationError("d_model must be even")
    arg = np.asarray(np.asarray(pos) + randinit, dtype=float)
    denom = 10000.0 ** (np.arange(0, d_model, 2) / d_model)
    a = arg[..., None] / denom
    out = np.empty(arg.shape + (d_model,))
    out[..., 0::2] = np.sin(a)
    out[..., 1::2] = np.cos(a)
    return out


def scale_offset(k: int, scale_widths: Sequence[int]) -> int:
    if not 1 <= k <= len(scale_widths):
        raise ValueError(f"scale index {k} outside 1..{len(scale_widths)}")
    return int(sum(scale_widths[:k - 1]))


def recurrent_pe_scale(pos, randinit, k: int, scale_widths: Sequence[int], d_model: int) -> np.ndarray:
    """Position code of scale-``k`` patches, shifted by the patch counts of earlier scales."""
    return recurrent_pe(np.asarray(pos) + scale_offset(k, scale_widths), randinit, d_model)


# ---------------------------------------------------------------------------
# embedders


class FeaturePatchEmbed(Module):
    """Height compression: ``d_model`` filters of shape ``C×H×1`` applied per column."""

    def __init__(self, rng, channels: int, height: int, d_model: int):
        self.weight = Param(gaussian_init(rng, (d_model, channels, height, 1)))
        self.bias = Param(np.zeros(d_model))
        self._x = None

    def forward(self, f: np.ndarray) -> np.ndarray:
        """``B×C×H×W`` → ``B×W×d_model``."""
        d, C, H, _ = self.weight.value.shape
        if f.shape[1:3] != (C, H):
            raise DimensionError(f"feature map {f.shape[1:3]} does not match embed weights {(C, H)}")
        B, _, _, W = f.shape
        self._x = f.transpose(0, 3, 1, 2).reshape(B, W, C * H)
        return self._x @ self.weight.value.reshape(d, -1).T + self.bias.value

    def backward(self, dy: np.ndarray) -> np.ndarray:
        d, C, H, _ = self.weight.value.shape
        B, W, _ = dy.shape
        wm = self.weight.value.reshape(d, -1)
        self.weight.grad += (dy.reshape(-1, d).T @ self._x.reshape(-1, C * H)).reshape(d, C, H, 1)
        self.bias.grad += dy.sum(axis=(0, 1))
        return (dy @ wm).reshape(B, W, C, H).transpose(0, 2, 3, 1)


def embed_feature_patch(patch, weight, bias=None) -> np.ndarray:
    """Embed one ``C×H×1`` patch with a ``d×C×H×1`` kernel."""
    patch = np.asarray(patch, dtype=float)
    weight = np.asarray(weight, dtype=float)
    if weight.ndim != 4 or weight.shape[1:] != patch.shape:
        raise DimensionError(f"kernel {weight.shape} does not match patch {patch.shape}")
    out = weight.reshape(weight.shape[0], -1) @ patch.reshape(-1)
    return out if bias is None else out + bias


class ImagePatchEmbed(Module):
    """flatten → linear → gelu → linear, plus a learned per-row vertical embedding."""

    def __init__(self, rng, patch: int, channels: int, n_rows: int, d_hidden: int, d_model: int,
                 row_embedding: bool = True):
        self.fc1 = Linear(rng, patch * patch * channels, d_hidden)
        self.act = Activation("gelu")
        self.fc2 = Linear(rng, d_hidden, d_model)
        self.row_embed = Param(gaussian_init(rng, (n_rows, d_model))) if row_embedding else None
        self._patch = patch
        self._shape = None
        self._rows = None

    def embed_tokens(self, tokens: np.ndarray, rows: np.ndarray) -> np.ndarray:
        out = self.fc2.forward(self.act.forward(self.fc1.forward(tokens)))
        if self.row_embed is not None:
            out = out + self.row_embed.value[rows]
        self._rows = rows
        return out

    def forward(self, img: np.ndarray) -> np.ndarray:
        """``B×C×H×W`` → ``B×N×d_model``."""
        self._shape = img.shape
        P = self._patch
        wb = img.shape[3] // P
        rows = np.arange((img.shape[2] // P) * wb) // wb
        return self.embed_tokens(_image_tokens(img, P), rows)

    def backward_tokens(self, dy: np.ndarray) -> np.ndarray:
        if self.row_embed is not None:
            np.add.at(self.row_embed.grad, self._rows, dy.sum(axis=0))
        return self.fc1.backward(self.act.backward(self.fc2.backward(dy)))

    def backward(self, dy: np.ndarray) -> np.ndarray:
        return _image_tokens_backward(self.backward_tokens(dy), self._shape, self._patch)


def embed_image_patch(embedder: ImagePatchEmbed, patch, row: int = 0) -> np.ndarray:
    """Embed one ``P×P×C`` patch sitting in patch-grid row ``row``."""
    flat = np.asarray(patch, dtype=float).reshape(1, 1, -1)
    return embedder.embed_tokens(flat, np.array([row]))[0, 0]


# ---------------------------------------------------------------------------
# sequence assembly


@dataclass
class EmbeddingSequence:
    """Token matrix ``B×N×d`` with per-row source (scale k ≥ 1, or -1 for image) and position."""

    tokens: np.ndarray
    source: np.ndarray
    pos: np.ndarray

    @property
    def feature_rows(self) -> np.ndarray:
        return np.flatnonzero(self.source > 0)


class SequenceEmbedder(Module):
    """Embeds a feature pyramid and image patches into one position-coded sequence."""

    def __init__(self, rng, channels: Sequence[int], heights: Sequence[int], widths: Sequence[int],
                 image_shape: Tuple[int, int, int], patch: int, d_model: int, d_hidden: int,
                 pe_mode: str = "rpe", image_patches: bool = True, row_embedding: bool = True):
        if pe_mode not in PE_MODES:
            raise ConfigurationError(f"pe_mode must be one of {PE_MODES}, got {pe_mode!r}")
        C, H, W = image_shape
        if H % patch or W % patch:
            raise DimensionError(f"image {H}×{W} not divisible by patch size {patch}")
        self.scale_widths = tuple(int(w) for w in widths)
        self.d_model = d_model
        self.pe_mode = pe_mode
        self.feature_embeds = [FeaturePatchEmbed(rng, c, h, d_model) for c, h in zip(channels, heights)]
        self.image_embed = (ImagePatchEmbed(rng, patch, C, H // patch, d_hidden, d_model, row_embedding)
                            if image_patches else None)
        n_img = (H // patch) * (W // patch) if image_patches else 0
        self._img_pos = np.arange(n_img) % (W // patch)
        self.n_tokens = sum(self.scale_widths) + n_img
        self.learned_pe = Param(gaussian_init(rng, (self.n_tokens, d_model))) if pe_mode == "learned" else None
        source = [np.full(w, k + 1) for k, w in enumerate(self.scale_widths)]
        pos = [np.arange(w) for w in self.scale_widths]
        source.append(np.full(n_img, IMAGE_SOURCE))
        pos.append(self._img_pos)
        self._source = np.concatenate(source)
        self._pos = np.concatenate(pos)

    @property
    def n_feature_tokens(self) -> int:
        return sum(self.scale_widths)

    def position_codes(self, randinit: int = 0) -> np.ndarray:
        if self.pe_mode == "none":
            return np.zeros((self.n_tokens, self.d_model))
        if self.pe_mode == "learned":
            return self.learned_pe.value
        parts = [recurrent_pe_scale(np.arange(w), randinit, k + 1, self.scale_widths, self.d_model)
                 for k, w in enumerate(self.scale_widths)]
        parts.append(recurrent_pe(self._img_pos, randinit, self.d_model).reshape(-1, self.d_model))
        return np.concatenate(parts, axis=0)

    def forward(self, feats: Sequence[np.ndarray], image: np.ndarray, randinit: int = 0) -> EmbeddingSequence:
        parts = [emb.forward(f) for emb, f in zip(self.feature_embeds, feats)]
        if self.image_embed is not None:
            parts.append(self.image_embed.forward(image))
        tokens = np.concatenate(parts, axis=1) + self.position_codes(randinit)
        return EmbeddingSequence(tokens, self._source, self._pos)

    def backward(self, dtokens: np.ndarray) -> Tuple[List[np.ndarray], Optional[np.ndarray]]:
        if self.learned_pe is not None:
            self.learned_pe.grad += dtokens.sum(axis=0)
        dfeats = []
        start = 0
        for emb, w in zip(self.feature_embeds, self.scale_widths):
            dfeats.append(emb.backward(dtokens[:, start:start + w]))
            start += w
        dimg = None
        if self.image_embed is not None:
            dimg = self.image_embed.backward(dtokens[:, start:])
        return dfeats, dimg


def draw_randinit(rng: np.random.Generator, scale_widths: Sequence[int]) -> int:
    """Integer start offset in ``[0, max scale width)``."""
    return int(rng.integers(0, max(scale_widths)))
