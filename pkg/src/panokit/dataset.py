"""Samples: loading, augmentation and a synthetic room generator with exact labels."""

from __future__ import annotations

import colorsys
from dataclasses import dataclass, replace
from pathlib import Path
from typing import List, Optional, Sequence

import numpy as np
from PIL import Image

from .geometry import (
    CornerAnnotation,
    FloorPlan,
    FLOOR_Y,
    LayoutBoundaries,
    annotation_ceiling_height,
    annotation_floor_polygon,
    column_longitudes,
    corners_to_boundaries,
    ray_polygon_distance,
    sphere_to_pixel,
)
from .io import read_annotation

ROOM_KINDS = ("box", "L")


@dataclass
class Sample:
    image: np.ndarray
    annotation: CornerAnnotation
    boundaries: LayoutBoundaries
    identifier: str
    ceil_height: float
    polygon: Optional[np.ndarray] = None
    smooth_sigma: Optional[float] = None

    @property
    def height(self) -> int:
        return self.image.shape[1]

    @property
    def width(self) -> int:
        return self.image.shape[2]

    @property
    def n_walls(self) -> int:
        return self.annotation.n_walls

    def floorplan(self) -> FloorPlan:
        poly = self.polygon
        if poly is None:
            poly = annotation_floor_polygon(self.annotation, self.width, self.height)
        return FloorPlan(poly, FLOOR_Y, self.ceil_height)


def _rerender(s: Sample, image: np.ndarray, ann: CornerAnnotation, polygon) -> Sample:
    W, H = image.shape[2], image.shape[1]
    b = corners_to_boundaries(ann, W, H, s.smooth_sigma)
    return replace(s, image=image, annotation=ann, boundaries=b, polygon=polygon)


def make_sample(image, ann: CornerAnnotation, identifier: str, polygon=None,
                smooth_sigma: Optional[float] = None) -> Sample:
    image = np.asarray(image, dtype=float)
    H, W = image.shape[1:]
    b = corners_to_boundaries(ann, W, H, smooth_sigma)
    h = annotation_ceiling_height(ann, W, H)
    return Sample(image, ann, b, identifier, h, polygon, smooth_sigma)


# ---------------------------------------------------------------------------
# loading


def load_image(path, W: int, H: int) -> np.ndarray:
    """Decode an 8-bit image and bilinearly resize it to ``3×H×W`` in [0, 1]."""
    with Image.open(path) as im:
        im = im.convert("RGB")
        size = im.size
        if size != (W, H):
            im = im.resize((W, H), Image.BILINEAR)
        arr = np.asarray(im, dtype=float) / 255.0
    return arr.transpose(2, 0, 1).copy(), size


def load_sample(image_path, annot_path, W: int, H: int, smooth_sigma: Optional[float] = None) -> Sample:
    image, (W0, H0) = load_image(image_path, W, H)
    ann = read_annotation(annot_path)
    ann = CornerAnnotation(ann.corners * np.array([W / W0, H / H0])).validate()
    return make_sample(image, ann, Path(image_path).stem, smooth_sigma=smooth_sigma)


# ---------------------------------------------------------------------------
# geometric transforms


def _sort_corners(corners: np.ndarray) -> np.ndarray:
    pairs = corners.reshape(-1, 2, 2)
    order = np.argsort(pairs[:, 0, 0], kind="stable")
    return pairs[order].reshape(-1, 2)


def roll_sample(s: Sample, shift: int) -> Sample:
    """Rotate the camera: roll image columns by ``shift`` (np.roll convention)."""
    W = s.width
    shift = int(shift) % W
    corners = s.annotation.corners.copy()
    corners[:, 0] = (corners[:, 0] + shift) % W
    ann = CornerAnnotation(_sort_corners(corners))
    poly = None
    if s.polygon is not None:
        phi = 2.0 * np.pi * shift / W
        x, z = s.polygon[:, 0], s.polygon[:, 1]
        poly = np.stack([x * np.cos(phi) + z * np.sin(phi), z * np.cos(phi) - x * np.sin(phi)], axis=1)
    return _rerender(s, np.roll(s.image, shift, axis=2), ann, poly)


def flip_sample(s: Sample) -> Sample:
    """Mirror left-right."""
    W = s.width
    corners = s.annotation.corners.copy()
    corners[:, 0] = (W - corners[:, 0]) % W
    ann = CornerAnnotation(_sort_corners(corners))
    poly = None
    if s.polygon is not None:
        poly = s.polygon * np.array([-1.0, 1.0])
    return _rerender(s, s.image[:, :, ::-1].copy(), ann, poly)


def gamma_sample(s: Sample, g: float) -> Sample:
    if g == 1.0:
        return replace(s, image=s.image.copy())
    return replace(s, image=np.clip(s.image, 0.0, 1.0) ** g)


def mask_sample(s: Sample, rng: np.random.Generator, count: int = 50, size: int = 50,
                reference_width: int = 1024) -> Sample:
    """Zero ``count`` square patches whose side is ``size`` scaled by ``W / reference_width``."""
    H, W = s.height, s.width
    side = max(1, int(round(size * W / reference_width)))
    img = s.image.copy()
    for _ in range(count):
        r = int(rng.integers(0, max(1, H - side + 1)))
        c = int(rng.integers(0, max(1, W - side + 1)))
        img[:, r:r + side, c:c + side] = 0.0
    return replace(s, image=img)


@dataclass(frozen=True)
class AugmentFlags:
    flip: bool = True
    roll: bool = True
    gamma: bool = True
    masks: bool = True
    gamma_range: tuple = (0.5, 2.0)
    mask_count: int = 50
    mask_size: int = 50


def augment(s: Sample, rng: np.random.Generator, flags: AugmentFlags = AugmentFlags()) -> Sample:
    if flags.flip and rng.random() < 0.5:
        s = flip_sample(s)
    if flags.roll:
        s = roll_sample(s, int(rng.integers(0, s.width)))
    if flags.gamma:
        s = gamma_sample(s, float(rng.uniform(*flags.gamma_range)))
    if flags.masks:
        s = mask_sample(s, rng, flags.mask_count, flags.mask_size)
    return s


# ---------------------------------------------------------------------------
# synthetic rooms


MIN_CORNER_GAP = 1.5 * 2.0 * np.pi / 64


def _corner_gap(poly: np.ndarray) -> float:
    """Smallest angular separation between corners as seen from the camera."""
    d = np.sort(np.arctan2(poly[:, 0], poly[:, 1]))
    gaps = np.diff(np.concatenate([d, d[:1] + 2 * np.pi]))
    return float(gaps.min())


def random_room_polygon(rng: np.random.Generator, kind: str) -> np.ndarray:
    """Floor polygon in the camera frame (camera at the origin, camera height 1).

    Rooms whose corners crowd closer than ``MIN_CORNER_GAP`` in longitude are
    redrawn so every corner stays separable by peak finding.
    """
    if kind not in ROOM_KINDS:
        raise ValueError(f"room kind must be one of {ROOM_KINDS}")
    while True:
        poly = _draw_room(rng, kind)
        if _corner_gap(poly) >= MIN_CORNER_GAP:
            return poly


def _draw_room(rng: np.random.Generator, kind: str) -> np.ndarray:
    margin = 0.3
    if kind == "box":
        a, b = rng.uniform(0.5, 3.0, size=2)
        poly = np.array([[-a, -b], [a, -b], [a, b], [-a, b]])
        cam = np.array([rng.uniform(-a + margin, a - margin), rng.uniform(-b + margin, b - margin)])
    else:
        a, b = rng.uniform(1.0, 3.0, size=2)
        # notch removes the (+x, +z) corner; camera stays in the region that sees every wall
        nx_ = -a + rng.uniform(0.45, 0.75) * 2 * a
        nz_ = -b + rng.uniform(0.45, 0.75) * 2 * b
        poly = np.array([[-a, -b], [a, -b], [a, nz_], [nx_, nz_], [nx_, b], [-a, b]])
        cam = np.array([rng.uniform(-a + margin, nx_ - margin), rng.uniform(-b + margin, nz_ - margin)])
    phi = rng.uniform(0.0, 2.0 * np.pi)
    c, s = np.cos(phi), np.sin(phi)
    rel = poly - cam
    return np.stack([rel[:, 0] * c - rel[:, 1] * s, rel[:, 0] * s + rel[:, 1] * c], axis=1)


def polygon_annotation(poly: np.ndarray, ceil_height: float, W: int, H: int) -> CornerAnnotation:
    delta = np.arctan2(poly[:, 0], poly[:, 1])
    dist = np.hypot(poly[:, 0], poly[:, 1])
    u, v_f = sphere_to_pixel(delta, -np.arctan2(1.0, dist), W, H)
    _, v_c = sphere_to_pixel(delta, np.arctan2(ceil_height, dist), W, H)
    u = np.mod(u, W)
    rows = np.empty((2 * len(poly), 2))
    rows[0::2, 0] = u
    rows[0::2, 1] = v_c
    rows[1::2, 0] = u
    rows[1::2, 1] = v_f
    return CornerAnnotation(_sort_corners(rows))


def _wall_index(poly: np.ndarray, deltas: np.ndarray) -> np.ndarray:
    """Index of the wall segment hit first by each ray."""
    p = poly
    e = np.roll(p, -1, axis=0) - p
    dx, dz = np.sin(deltas)[:, None], np.cos(deltas)[:, None]
    denom = dx * e[None, :, 1] - dz * e[None, :, 0]
    with np.errstate(divide="ignore", invalid="ignore"):
        t = (p[None, :, 0] * e[None, :, 1] - p[None, :, 1] * e[None, :, 0]) / denom
        s = (p[None, :, 0] * dz - p[None, :, 1] * dx) / denom
    valid = (np.abs(denom) > 1e-15) & (t > 1e-12) & (s >= -1e-9) & (s <= 1 + 1e-9)
    return np.where(valid, t, np.inf).argmin(axis=1)


def render_room(rng: np.random.Generator, poly: np.ndarray, ceil_height: float, W: int, H: int,
                noise: float = 0.02) -> np.ndarray:
    """Flat-shaded panorama with dark anti-aliased boundary lines, ``3×H×W`` in [0, 1]."""
    n = len(poly)
    hue0 = rng.uniform()
    walls = np.array([colorsys.hsv_to_rgb((hue0 + i / n) % 1.0, rng.uniform(0.35, 0.7),
                                          rng.uniform(0.55, 0.85)) for i in range(n)])
    floor_rgb = np.array(colorsys.hsv_to_rgb(rng.uniform(), rng.uniform(0.2, 0.5), rng.uniform(0.2, 0.4)))
    ceil_rgb = np.array(colorsys.hsv_to_rgb(rng.uniform(), rng.uniform(0.0, 0.15), rng.uniform(0.85, 0.97)))

    deltas = column_longitudes(W)
    d = ray_polygon_distance(poly, deltas)
    wall = _wall_index(poly, deltas)
    gam = (0.5 - (np.arange(H) + 0.5) / H) * np.pi
    height = np.tan(gam)[:, None] * d[None, :]
    img = np.empty((H, W, 3))
    img[:] = walls[wall][None, :, :]
    img[height > ceil_height] = ceil_rgb
    img[height < FLOOR_Y] = floor_rgb

    rows = np.arange(H)[:, None] + 0.5
    v_c = (0.5 - np.arctan2(ceil_height, d) / np.pi) * H
    v_f = (0.5 + np.arctan2(1.0, d) / np.pi) * H
    line = np.maximum(np.clip(1.0 - np.abs(rows - v_c[None]), 0, 1), np.clip(1.0 - np.abs(rows - v_f[None]), 0, 1))
    ann_u = np.mod(sphere_to_pixel(np.arctan2(poly[:, 0], poly[:, 1]), 0.0, W, H)[0], W)
    cols = np.arange(W) + 0.5
    du = np.abs(cols[:, None] - ann_u[None, :]) % W
    vert = np.clip(1.0 - np.minimum(du, W - du).min(axis=1), 0, 1)
    between = (rows >= v_c[None]) & (rows <= v_f[None])
    line = np.maximum(line, vert[None, :] * between)
    img *= (1.0 - 0.8 * line)[..., None]
    if noise:
        img += rng.normal(0.0, noise, size=img.shape)
    return np.clip(img, 0.0, 1.0).transpose(2, 0, 1).copy()


def synth_room(rng: np.random.Generator, kind: str = "box", W: int = 128, H: int = 64,
               identifier: str = "", smooth_sigma: Optional[float] = None) -> Sample:
    poly = random_room_polygon(rng, kind)
    h = float(rng.uniform(0.8, 2.0))
    ann = polygon_annotation(poly, h, W, H)
    image = render_room(rng, poly, h, W, H)
    b = corners_to_boundaries(ann, W, H, smooth_sigma)
    return Sample(image, ann, b, identifier or f"synth-{kind}", h, poly, smooth_sigma)


def synth_dataset(seed: int, n: int, W: int = 128, H: int = 64, kinds: Sequence[str] = ROOM_KINDS,
                  smooth_sigma: Optional[float] = None, prefix: str = "room") -> List[Sample]:
    """``n`` rooms cycling through ``kinds``; bit-reproducible for a given seed."""
    rng = np.random.default_rng(seed)
    return [synth_room(rng, kinds[i % len(kinds)], W, H, f"{prefix}{i:04d}", smooth_sigma) for i in range(n)]
