"""End-to-end layout network: edge maps → CNN pyramid → patch tokens → encoder → head."""

from __future__ import annotations

from dataclasses import dataclass, asdict
from typing import Optional, Tuple

import numpy as np

from .backbone import DEFAULT_WIDTHS, Backbone
from .edge_enhance import FreqMaskParams, enhance
from .errors import ConfigurationError, DimensionError
from .layers import Module
from .layout_head import HeadOutput, LayoutHead
from .patching import PE_MODES, SequenceEmbedder, draw_randinit
from .transformer import Encoder, EncoderConfig


@dataclass(frozen=True)
class ModelConfig:
    height: int = 64
    width: int = 128
    patch: int = 16
    d_model: int = 256
    layers: int = 4
    heads: int = 4
    mlp_ratio: int = 4
    d_hidden: int = 256
    channels: Tuple[int, ...] = DEFAULT_WIDTHS
    head_channels: Optional[int] = None
    pe_mode: str = "rpe"
    edge_enhance: bool = True
    image_patches: bool = True
    row_embedding: bool = True
    alpha: float = 20.0
    beta: float = 25.0
    theta: float = 100.0

    def __post_init__(self):
        if self.height % 32 or self.width % 32:
            raise ConfigurationError("image height and width must be divisible by 32")
        if self.height % self.patch or self.width % self.patch:
            raise ConfigurationError("image extents must be divisible by the patch size")
        if self.pe_mode not in PE_MODES:
            raise ConfigurationError(f"pe_mode must be one of {PE_MODES}")
        if self.d_model % self.heads or self.d_model % 2:
            raise ConfigurationError("d_model must be even and divisible by heads")
        FreqMaskParams(self.alpha, self.beta, self.theta)

    @property
    def in_channels(self) -> int:
        return 5 if self.edge_enhance else 3

    @property
    def scale_widths(self) -> Tuple[int, ...]:
        return tuple(self.width // 2 ** (k + 1) for k in range(len(self.channels)))

    @property
    def scale_heights(self) -> Tuple[int, ...]:
        return tuple(self.height // 2 ** (k + 1) for k in range(len(self.channels)))

    def to_dict(self) -> dict:
        d = asdict(self)
        d["channels"] = list(self.channels)
        return d


class LayoutModel(Module):
    def __init__(self, cfg: ModelConfig, seed: int = 0):
        rng = np.random.default_rng(seed)
        self.cfg = cfg
        self.mask_params = FreqMaskParams(cfg.alpha, cfg.beta, cfg.theta)
        self.backbone = Backbone(rng, cfg.in_channels, cfg.channels)
        self.embedder = SequenceEmbedder(
            rng, cfg.channels, cfg.scale_heights, cfg.scale_widths,
            (cfg.in_channels, cfg.height, cfg.width), cfg.patch, cfg.d_model, cfg.d_hidden,
            pe_mode=cfg.pe_mode, image_patches=cfg.image_patches, row_embedding=cfg.row_embedding)
        self.encoder = Encoder(rng, EncoderConfig(cfg.layers, cfg.heads, cfg.d_model, cfg.mlp_ratio))
        self.head = LayoutHead(rng, cfg.d_model, cfg.scale_widths, cfg.width, cfg.head_channels)
        self.last_randinit = 0

    def prepare_input(self, images: np.ndarray) -> np.ndarray:
        """RGB batch ``B×3×H×W`` → network input (edge maps appended when enabled)."""
        images = np.asarray(images, dtype=float)
        if images.ndim == 3:
            images = images[None]
        if images.shape[1:] != (3, self.cfg.height, self.cfg.width):
            raise DimensionError(f"expected B×3×{self.cfg.height}×{self.cfg.width}, got {images.shape}")
        if not self.cfg.edge_enhance:
            return images
        return np.stack([enhance(im, self.mask_params) for im in images])

    def forward(self, images: np.ndarray, train: bool = False,
                rng: Optional[np.random.Generator] = None, randinit: Optional[int] = None) -> HeadOutput:
        """Predict boundaries for an RGB batch.

        In training mode ``randinit`` is drawn from ``rng``; in evaluation mode it is 0.
        """
        x = self.prepare_input(images)
        return self.forward_prepared(x, train, rng, randinit)

    def forward_prepared(self, x: np.ndarray, train: bool = False,
                         rng: Optional[np.random.Generator] = None,
                         randinit: Optional[int] = None) -> HeadOutput:
        if randinit is None:
            randinit = draw_randinit(rng, self.cfg.scale_widths) if (train and rng is not None) else 0
        self.last_randinit = randinit
        feats = self.backbone.forward(x, train)
        seq = self.embedder.forward(feats, x, randinit)
        layout = self.encoder.forward(seq.tokens, seq.feature_rows)
        return self.head.forward(layout, train)

    def backward(self, grads: HeadOutput) -> np.ndarray:
        dlayout = self.head.backward(grads)
        dtokens = self.encoder.backward(dlayout)
        dfeats, dimg = self.embedder.backward(dtokens)
        dx = self.backbone.backward(dfeats)
        return dx if dimg is None else dx + dimg
