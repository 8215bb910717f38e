"""Layout prediction head and training losses."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional, Sequence, Tuple

import numpy as np

from . import numerics as nx
from .errors import ConfigurationError, DimensionError
from .geometry import GAMMA_MIN, column_longitudes
from .layers import Activation, BatchNorm, Conv1d, Conv2d, Module

HALF_PI = 0.5 * np.pi
# pre-activation giving a latitude of 30 degrees under (pi/4)(1 + tanh z)
LATITUDE_BIAS = float(np.arctanh(2.0 * (np.pi / 6) / HALF_PI - 1.0))
BOUNDARY_LOSSES = ("3d", "l1")
# keeps saturated activations strictly inside their open ranges
OUTPUT_MARGIN = 1e-9


@dataclass
class HeadOutput:
    y_w: np.ndarray
    y_c: np.ndarray
    y_f: np.ndarray

    def take(self, i: int) -> "HeadOutput":
        return HeadOutput(self.y_w[i], self.y_c[i], self.y_f[i])


def _latitudes(z: np.ndarray):
    t1, t2 = np.tanh(z[:, 1]), np.tanh(z[:, 2])
    return 0.5 * HALF_PI * (1.0 + t1), -0.5 * HALF_PI * (1.0 + t2), t1, t2


def _squash(z: np.ndarray):
    """Raw head channels to in-range outputs plus the masks where the margin clamp is inactive."""
    m = OUTPUT_MARGIN
    y_w = nx.activation(z[:, 0], "sigmoid")
    y_c, y_f, _, _ = _latitudes(z)
    inside = (
        (y_w > m) & (y_w < 1.0 - m),
        (y_c > m) & (y_c < HALF_PI - m),
        (y_f < -m) & (y_f > -HALF_PI + m),
    )
    out = HeadOutput(np.clip(y_w, m, 1.0 - m), np.clip(y_c, m, HALF_PI - m), np.clip(y_f, -HALF_PI + m, -m))
    return out, inside


class LayoutHead(Module):
    """Per-scale rows → resize → vertical stack → height squeeze → Conv1D(3,3,1) → y_w, y_c, y_f.

    Output activations keep every prediction in range: ``y_w = sigmoid(z0)``,
    ``y_c = (pi/4)(1 + tanh z1)`` and ``y_f = -(pi/4)(1 + tanh z2)``.
    """

    def __init__(self, rng, d_model: int, scale_widths: Sequence[int], w_out: int,
                 channels: Optional[int] = None):
        ch = channels or d_model
        self.scale_widths = tuple(int(s) for s in scale_widths)
        self.w_out = int(w_out)
        K = len(self.scale_widths)
        self.squeeze = Conv2d(rng, d_model, ch, (K, 1), wrap=False)
        self.conv1 = Conv1d(rng, ch, ch, 3)
        self.bn1 = BatchNorm(ch)
        self.act1 = Activation("relu")
        self.conv2 = Conv1d(rng, ch, ch, 3)
        self.bn2 = BatchNorm(ch)
        self.act2 = Activation("relu")
        self.conv3 = Conv1d(rng, ch, 3, 1)
        self.conv3.conv.bias.value[:] = (0.0, LATITUDE_BIAS, LATITUDE_BIAS)
        self._z = None
        self._inside = None

    def forward(self, feat: np.ndarray, train: bool = False) -> HeadOutput:
        """``B×(Σ s_k)×d`` layout features → per-column predictions of length ``w_out``."""
        if feat.ndim != 3 or feat.shape[1] != sum(self.scale_widths):
            raise DimensionError(f"feature rows {feat.shape[1:2]} do not match scale widths {self.scale_widths}")
        maps = []
        start = 0
        for s in self.scale_widths:
            part = feat[:, start:start + s].transpose(0, 2, 1)
            maps.append(nx.resize_linear(part, self.w_out, wrap=True))
            start += s
        h = self.squeeze.forward(np.stack(maps, axis=2))[:, :, 0]
        h = self.act1.forward(self.bn1.forward(self.conv1.forward(h), train))
        h = self.act2.forward(self.bn2.forward(self.conv2.forward(h), train))
        z = self.conv3.forward(h)
        out, self._inside = _squash(z)
        self._z = z
        return out

    def backward(self, grads: HeadOutput) -> np.ndarray:
        z = self._z
        in_w, in_c, in_f = self._inside
        _, _, t1, t2 = _latitudes(z)
        dz = np.empty_like(z)
        dz[:, 0] = nx.activation_backward(grads.y_w * in_w, z[:, 0], "sigmoid")
        dz[:, 1] = grads.y_c * in_c * 0.5 * HALF_PI * (1.0 - t1 * t1)
        dz[:, 2] = -grads.y_f * in_f * 0.5 * HALF_PI * (1.0 - t2 * t2)
        d = self.conv3.backward(dz)
        d = self.conv2.backward(self.bn2.backward(self.act2.backward(d)))
        d = self.conv1.backward(self.bn1.backward(self.act1.backward(d)))
        dstack = self.squeeze.backward(d[:, :, None, :])
        parts = []
        for k, s in enumerate(self.scale_widths):
            parts.append(nx.resize_linear_backward(dstack[:, :, k], s, wrap=True).transpose(0, 2, 1))
        return np.concatenate(parts, axis=1)


def head_forward(head: LayoutHead, feat: np.ndarray, train: bool = False) -> HeadOutput:
    """Unbatched convenience wrapper around :meth:`LayoutHead.forward`."""
    out = head.forward(np.asarray(feat, dtype=float)[None], train)
    return out.take(0)


# ---------------------------------------------------------------------------
# losses


def loss_corner(pred, gt, eps: float = 1e-7) -> Tuple[float, np.ndarray]:
    """Mean binary cross-entropy and its gradient w.r.t. ``pred``."""
    pred = np.asarray(pred, dtype=float)
    gt = np.asarray(gt, dtype=float)
    p = np.clip(pred, eps, 1.0 - eps)
    n = pred.size
    loss = -np.mean(gt * np.log(p) + (1.0 - gt) * np.log(1.0 - p))
    grad = -(gt / p - (1.0 - gt) / (1.0 - p)) / n
    grad = np.where((pred > eps) & (pred < 1.0 - eps), grad, 0.0)
    return float(loss), grad


def _plane_distance_terms(pred, gt, plane_y, sign, gamma_min):
    """Horizontal hit distances for predicted/true latitudes and d(dist)/d(pred)."""
    lat = sign * pred
    guarded = lat > gamma_min
    g = np.where(guarded, pred, sign * gamma_min)
    gt_safe = np.where(sign * gt > gamma_min, gt, sign * gamma_min)
    d_pred = plane_y / np.tan(g)
    d_gt = plane_y / np.tan(gt_safe)
    dd = np.where(guarded, -plane_y / np.sin(g) ** 2, 0.0)
    return d_pred, d_gt, dd


def loss_boundary_3d(y_c, y_f, gt_c, gt_f, ceil_height, deltas=None,
                     gamma_min: float = GAMMA_MIN) -> Tuple[float, np.ndarray, np.ndarray]:
    """Mean L1 distance between predicted and true boundary points on the floor/ceiling planes.

    Floor points lie on ``y = -1``; ceiling points on ``y = ceil_height`` (the
    ground-truth height). Arrays are ``W`` or ``B×W``; ``ceil_height`` is a
    scalar or length-``B``. Returns ``(loss, dloss/dy_c, dloss/dy_f)``.
    """
    y_c, y_f, gt_c, gt_f = (np.asarray(a, dtype=float) for a in (y_c, y_f, gt_c, gt_f))
    W = y_c.shape[-1]
    if deltas is None:
        deltas = column_longitudes(W)
    h = np.asarray(ceil_height, dtype=float)
    if h.ndim == 1 and y_c.ndim == 2:
        h = h[:, None]
    # L1 over (x, y, z) of two points on one plane at the same longitude
    w = np.abs(np.sin(deltas)) + np.abs(np.cos(deltas))
    fp, fg, dfp = _plane_distance_terms(y_f, gt_f, -1.0, -1.0, gamma_min)
    cp, cg, dcp = _plane_distance_terms(y_c, gt_c, h, 1.0, gamma_min)
    floor_term = np.abs(fp - fg) * w
    ceil_term = np.abs(cp - cg) * w
    n = y_c.size
    loss = float(np.sum(floor_term + ceil_term) / (2.0 * n))
    g_f = np.sign(fp - fg) * w * dfp / (2.0 * n)
    g_c = np.sign(cp - cg) * w * dcp / (2.0 * n)
    return loss, g_c, g_f


def loss_boundary_l1(y_c, y_f, gt_c, gt_f) -> Tuple[float, np.ndarray, np.ndarray]:
    """Image-space alternative: mean absolute latitude error of both boundaries."""
    y_c, y_f, gt_c, gt_f = (np.asarray(a, dtype=float) for a in (y_c, y_f, gt_c, gt_f))
    n = y_c.size
    loss = float((np.abs(y_c - gt_c).sum() + np.abs(y_f - gt_f).sum()) / (2.0 * n))
    return loss, np.sign(y_c - gt_c) / (2.0 * n), np.sign(y_f - gt_f) / (2.0 * n)


@dataclass(frozen=True)
class LossWeights:
    corner: float = 1.0
    boundary: float = 1.0
    boundary_kind: str = "3d"

    def __post_init__(self):
        if self.boundary_kind not in BOUNDARY_LOSSES:
            raise ConfigurationError(f"boundary loss must be one of {BOUNDARY_LOSSES}")


def total_loss(pred: HeadOutput, gt_c, gt_f, gt_w, ceil_height,
               weights: LossWeights = LossWeights()) -> Tuple[float, HeadOutput, dict]:
    """Weighted sum of the corner and boundary losses.

    Returns ``(loss, gradients as a HeadOutput, per-term values)``.
    """
    l_cor, g_w = loss_corner(pred.y_w, gt_w)
    if weights.boundary_kind == "3d":
        l_bon, g_c, g_f = loss_boundary_3d(pred.y_c, pred.y_f, gt_c, gt_f, ceil_height)
    else:
        l_bon, g_c, g_f = loss_boundary_l1(pred.y_c, pred.y_f, gt_c, gt_f)
    total = weights.corner * l_cor + weights.boundary * l_bon
    grads = HeadOutput(weights.corner * g_w, weights.boundary * g_c, weights.boundary * g_f)
    return total, grads, {"corner": l_cor, "boundary": l_bon}
