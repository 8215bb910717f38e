"""Directional high-pass edge maps computed in the frequency domain."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional, Tuple

import numpy as np

from .errors import ConfigurationError, SymmetryViolationError

REFERENCE_SIZE = 512


@dataclass(frozen=True)
class FreqMaskParams:
    """Direction thresholds ``alpha``/``beta`` (degrees) and radial cutoff ``theta`` (bins).

    ``theta`` is quoted for 512×1024 inputs and rescaled by ``min(H, W)/512``
    unless ``scale_theta`` is False.
    """

    alpha: float = 20.0
    beta: float = 25.0
    theta: float = 100.0
    scale_theta: bool = True

    def __post_init__(self):
        if not 0 < self.alpha < self.beta < 90:
            raise ConfigurationError(f"need 0 < alpha < beta < 90, got {self.alpha}, {self.beta}")
        if self.theta < 0:
            raise ConfigurationError("theta must be non-negative")

    def cutoff(self, H: int, W: int) -> float:
        if self.scale_theta:
            return self.theta * min(H, W) / REFERENCE_SIZE
        return self.theta


def fft2(channel) -> np.ndarray:
    """Centred 2D DFT; the zero frequency sits at ``(H//2, W//2)``."""
    return np.fft.fftshift(np.fft.fft2(np.asarray(channel, dtype=float)))


def ifft2(spectrum: np.ndarray, rtol: float = 1e-6) -> np.ndarray:
    """Inverse of :func:`fft2`, returning the real part.

    Raises :class:`SymmetryViolationError` when the imaginary part is not
    negligible, which means the spectrum lost its Hermitian symmetry.
    """
    z = np.fft.ifft2(np.fft.ifftshift(spectrum))
    scale = np.abs(z.real).max(initial=0.0)
    imag = np.abs(z.imag).max(initial=0.0)
    if imag > rtol * scale and imag > 1e-300:
        raise SymmetryViolationError(f"inverse FFT imaginary part {imag:.3g} vs real {scale:.3g}")
    return z.real.copy()


def _offsets(H: int, W: int) -> Tuple[np.ndarray, np.ndarray]:
    du = np.arange(H)[:, None] - H // 2
    dv = np.arange(W)[None, :] - W // 2
    return np.broadcast_to(du, (H, W)), np.broadcast_to(dv, (H, W))


def direction_grid(H: int, W: int) -> np.ndarray:
    """Unsigned angle (degrees) of every frequency bin from the horizontal frequency axis."""
    du, dv = _offsets(H, W)
    return np.degrees(np.arctan2(np.abs(du), np.abs(dv)))


def radius_grid(H: int, W: int) -> np.ndarray:
    du, dv = _offsets(H, W)
    return np.hypot(du, dv)


def build_masks(params: FreqMaskParams, H: int, W: int) -> Tuple[np.ndarray, np.ndarray]:
    """Binary masks ``(M_v, M_h)``: near-horizontal and near-vertical high-frequency bands."""
    D = direction_grid(H, W)
    high = radius_grid(H, W) > params.cutoff(H, W)
    m_v = ((D < params.alpha) & high).astype(float)
    m_h = ((D >= params.beta) & high).astype(float)
    return m_v, m_h


def zscore(x: np.ndarray, eps: float = 1e-12) -> np.ndarray:
    """Zero mean, unit std; inputs with (near) zero variance map to zeros."""
    xc = x - x.mean()
    sd = xc.std()
    if sd <= eps * max(1.0, np.abs(x).max()):
        return np.zeros_like(x)
    return xc / sd


def edge_maps(gray: np.ndarray, params: FreqMaskParams,
              masks: Optional[Tuple[np.ndarray, np.ndarray]] = None) -> Tuple[np.ndarray, np.ndarray]:
    """Raw (un-normalised) edge maps ``(E_v, E_h)`` of a single channel."""
    H, W = gray.shape
    m_v, m_h = masks if masks is not None else build_masks(params, H, W)
    spectrum = fft2(gray)
    return ifft2(m_v * spectrum), ifft2(m_h * spectrum)


def enhance(image, params: FreqMaskParams = FreqMaskParams()) -> np.ndarray:
    """Append the two z-scored edge maps to a ``C×H×W`` image."""
    image = np.asarray(image, dtype=float)
    gray = image.mean(axis=0)
    e_v, e_h = edge_maps(gray, params)
    return np.concatenate([image, zscore(e_v)[None], zscore(e_h)[None]], axis=0)
