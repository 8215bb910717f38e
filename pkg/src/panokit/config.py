"""Run configuration: flat key=value files, presets and validation."""

from __future__ import annotations

from dataclasses import asdict, dataclass, fields, replace
from pathlib import Path
from typing import Dict, Optional, Tuple

from .dataset import AugmentFlags
from .edge_enhance import FreqMaskParams
from .errors import ConfigurationError
from .layout_head import LossWeights
from .model import ModelConfig

LR_SCHEDULES = ("constant", "cosine")


@dataclass(frozen=True)
class RunConfig:
    # image and network
    height: int = 64
    width: int = 128
    patch: int = 16
    d_model: int = 256
    layers: int = 4
    heads: int = 4
    mlp_ratio: int = 4
    d_hidden: int = 256
    head_channels: int = 0
    # edge enhancement
    alpha: float = 20.0
    beta: float = 25.0
    theta: float = 100.0
    # loss
    corner_weight: float = 1.0
    boundary_weight: float = 1.0
    boundary_loss: str = "3d"
    corner_sigma: float = 1.5
    # optimisation
    lr: float = 3e-4
    batch_size: int = 8
    epochs: int = 60
    warmup_epochs: int = 3
    lr_schedule: str = "cosine"
    seed: int = 0
    # data
    n_train: int = 64
    n_val: int = 16
    # ablation switches
    pe_mode: str = "rpe"
    edge_enhance: bool = True
    image_patches: bool = True
    augment_flip: bool = True
    augment_roll: bool = True
    augment_gamma: bool = False
    augment_masks: bool = False
    mask_count: int = 50
    mask_size: int = 50
    time_budget: float = 0.0

    def __post_init__(self):
        for name in ("batch_size", "epochs", "n_train"):
            if getattr(self, name) < 1:
                raise ConfigurationError(f"{name} must be >= 1")
        if self.n_val < 0 or self.warmup_epochs < 0 or self.time_budget < 0:
            raise ConfigurationError("n_val, warmup_epochs and time_budget must be >= 0")
        if not self.lr > 0:
            raise ConfigurationError("lr must be positive")
        if self.lr_schedule not in LR_SCHEDULES:
            raise ConfigurationError(f"lr_schedule must be one of {LR_SCHEDULES}")
        if self.corner_sigma < 0:
            raise ConfigurationError("corner_sigma must be >= 0")
        # building these runs every module's own checks
        self.model_config()
        self.loss_weights()
        FreqMaskParams(self.alpha, self.beta, self.theta)

    def model_config(self) -> ModelConfig:
        try:
            return ModelConfig(
                height=self.height, width=self.width, patch=self.patch, d_model=self.d_model,
                layers=self.layers, heads=self.heads, mlp_ratio=self.mlp_ratio, d_hidden=self.d_hidden,
                head_channels=self.head_channels or None, pe_mode=self.pe_mode,
                edge_enhance=self.edge_enhance, image_patches=self.image_patches,
                alpha=self.alpha, beta=self.beta, theta=self.theta)
        except (ValueError, TypeError) as exc:
            raise ConfigurationError(str(exc)) from exc

    def loss_weights(self) -> LossWeights:
        return LossWeights(self.corner_weight, self.boundary_weight, self.boundary_loss)

    def augment_flags(self) -> AugmentFlags:
        return AugmentFlags(self.augment_flip, self.augment_roll, self.augment_gamma, self.augment_masks,
                            mask_count=self.mask_count, mask_size=self.mask_size)

    @property
    def augmenting(self) -> bool:
        return self.augment_flip or self.augment_roll or self.augment_gamma or self.augment_masks

    def to_dict(self) -> dict:
        return asdict(self)


# Published full-scale values for the settings that have one.
PUBLISHED_DEFAULTS: Dict[str, object] = {
    "height": 512,
    "width": 1024,
    "alpha": 20.0,
    "beta": 25.0,
    "theta": 100.0,
    "lr": 1e-4,
    "batch_size": 8,
    "epochs": 300,
    "warmup_epochs": 0,
    "lr_schedule": "constant",
    "mask_count": 50,
    "mask_size": 50,
    "augment_flip": True,
    "augment_roll": True,
    "augment_gamma": True,
    "augment_masks": True,
}

HELP: Dict[str, str] = {
    "height": "panorama height in pixels (multiple of 32)",
    "width": "panorama width in pixels (multiple of 32)",
    "patch": "image patch side P",
    "d_model": "token width",
    "layers": "encoder blocks",
    "heads": "attention heads",
    "mlp_ratio": "MLP hidden width as a multiple of d_model",
    "d_hidden": "hidden width of the image-patch embedder",
    "head_channels": "head conv width (0 = d_model)",
    "alpha": "vertical-mask angle bound in degrees",
    "beta": "horizontal-mask angle bound in degrees",
    "theta": "high-pass radius at 512 px, scaled to the image",
    "corner_weight": "weight of the corner BCE term",
    "boundary_weight": "weight of the boundary term",
    "boundary_loss": "boundary loss: 3d (plane distances) or l1 (latitudes)",
    "corner_sigma": "Gaussian width of corner targets in columns (0 = one-hot)",
    "lr": "Adam learning rate",
    "batch_size": "samples per step",
    "epochs": "passes over the training set",
    "warmup_epochs": "linear learning-rate warm-up",
    "lr_schedule": "constant, or cosine decay to zero after warm-up",
    "seed": "seed for data, initialisation and augmentation",
    "n_train": "synthetic training rooms",
    "n_val": "synthetic held-out rooms",
    "pe_mode": "position code: rpe, learned or none",
    "edge_enhance": "append the two FFT edge maps to the input",
    "image_patches": "add raw-image patch tokens",
    "augment_flip": "random left-right mirror",
    "augment_roll": "random horizontal roll",
    "augment_gamma": "random gamma in [0.5, 2]",
    "augment_masks": "random zeroed squares",
    "mask_count": "squares per image",
    "mask_size": "square side at 1024 px width, scaled to the image",
    "time_budget": "stop after this many seconds (0 = no limit)",
}

PRESETS: Dict[str, Dict[str, object]] = {
    "desk": {},
    "overfit16": {
        "n_train": 16, "n_val": 0, "epochs": 20, "augment_flip": False, "augment_roll": False,
        "warmup_epochs": 0, "lr": 2e-4,
    },
    "smoke": {"n_train": 8, "n_val": 4, "epochs": 1, "d_model": 64, "d_hidden": 64, "layers": 1},
}


def _coerce(name: str, text: str, default):
    if isinstance(default, bool):
        low = text.strip().lower()
        if low in ("1", "true", "yes", "on"):
            return True
        if low in ("0", "false", "no", "off"):
            return False
        raise ConfigurationError(f"{name}: expected a boolean, got {text!r}")
    try:
        return type(default)(text.strip())
    except ValueError as exc:
        raise ConfigurationError(f"{name}: {exc}") from exc


def field_defaults() -> Dict[str, object]:
    return {f.name: f.default for f in fields(RunConfig)}


def parse_overrides(pairs: Dict[str, str]) -> Dict[str, object]:
    defaults = field_defaults()
    out = {}
    for key, text in pairs.items():
        if key not in defaults:
            raise ConfigurationError(f"unknown setting {key!r}")
        out[key] = text if not isinstance(text, str) else _coerce(key, text, defaults[key])
    return out


def parse_config_text(text: str) -> Dict[str, str]:
    pairs = {}
    for lineno, line in enumerate(text.splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigurationError(f"line {lineno}: expected key=value")
        key, val = line.split("=", 1)
        pairs[key.strip()] = val.strip()
    return pairs


def format_config(cfg: RunConfig) -> str:
    return "".join(f"{k} = {v}\n" for k, v in cfg.to_dict().items())


def build_config(preset: str = "desk", path: Optional[Path] = None,
                 overrides: Optional[Dict[str, str]] = None) -> RunConfig:
    """Preset, then config file, then explicit overrides."""
    if preset not in PRESETS:
        raise ConfigurationError(f"unknown preset {preset!r}; choose from {sorted(PRESETS)}")
    values = dict(PRESETS[preset])
    if path is not None:
        values.update(parse_overrides(parse_config_text(Path(path).read_text())))
    if overrides:
        values.update(parse_overrides(overrides))
    try:
        return replace(RunConfig(), **values)
    except TypeError as exc:
        raise ConfigurationError(str(exc)) from exc


def help_table() -> Tuple[str, ...]:
    """One line per setting: name, desk default and published default."""
    lines = []
    for f in fields(RunConfig):
        published = PUBLISHED_DEFAULTS.get(f.name, "-")
        lines.append(f"{f.name:<16} desk={f.default!s:<8} published={published!s:<8} {HELP.get(f.name, '')}")
    return tuple(lines)
