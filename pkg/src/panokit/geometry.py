"""Equirectangular geometry, ground-truth boundary rendering and layout IoU.

Conventions
-----------
* Pixel column ``u`` maps to longitude ``delta = (u/W - 0.5) * 2*pi`` and row
  ``v`` to latitude ``gamma = (0.5 - v/H) * pi``; pixel index ``i`` is sampled
  at coordinate ``i + 0.5``.
* 3D frame: camera at the origin, ``y`` up, ``delta = 0`` looks along ``+z``
  and ``delta = +pi/2`` along ``+x``.
* The camera height is normalised to 1, so the floor is the plane ``y = -1``.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import List, NamedTuple, Optional, Sequence

import numpy as np

from .errors import (
    DegenerateLayoutError,
    DimensionError,
    HorizonDegenerateError,
    InvalidAnnotationError,
    UndefinedMetricError,
)

GAMMA_MIN = 1e-3
FLOOR_Y = -1.0


class SpherePoint(NamedTuple):
    delta: np.ndarray
    gamma: np.ndarray


class Point3(NamedTuple):
    x: np.ndarray
    y: np.ndarray
    z: np.ndarray


def pixel_to_sphere(u, v, W: int, H: int) -> SpherePoint:
    u = np.asarray(u, dtype=float)
    v = np.asarray(v, dtype=float)
    return SpherePoint((u / W - 0.5) * 2.0 * np.pi, (0.5 - v / H) * np.pi)


def sphere_to_pixel(delta, gamma, W: int, H: int):
    delta = np.asarray(delta, dtype=float)
    gamma = np.asarray(gamma, dtype=float)
    return (delta / (2.0 * np.pi) + 0.5) * W, (0.5 - gamma / np.pi) * H


def column_longitudes(W: int) -> np.ndarray:
    """Longitude of every column centre."""
    return pixel_to_sphere(np.arange(W) + 0.5, 0.0, W, 1).delta


def sphere_to_3d(delta, gamma, s) -> Point3:
    delta, gamma, s = (np.asarray(a, dtype=float) for a in (delta, gamma, s))
    cg = np.cos(gamma)
    return Point3(s * cg * np.sin(delta), s * np.sin(gamma), s * np.cos(delta) * cg)


def project_to_plane(delta, gamma, plane_y: float, gamma_min: float = GAMMA_MIN) -> Point3:
    """Intersect the viewing ray ``(delta, gamma)`` with the horizontal plane ``y = plane_y``."""
    gamma = np.asarray(gamma, dtype=float)
    plane_y = np.asarray(plane_y, dtype=float)
    ok = (np.sign(gamma) == np.sign(plane_y)) & (np.abs(gamma) > gamma_min)
    if not np.all(ok):
        raise HorizonDegenerateError(
            f"ray latitude must share the sign of plane_y={plane_y} and exceed {gamma_min} rad")
    p = sphere_to_3d(delta, gamma, plane_y / np.sin(gamma))
    return Point3(p.x, np.broadcast_to(plane_y, np.shape(p.y)).astype(float).copy(), p.z)


def floor_distance(gamma, plane_y: float = FLOOR_Y) -> np.ndarray:
    """Horizontal distance at which a ray of latitude ``gamma`` meets ``y = plane_y``."""
    return plane_y / np.tan(gamma)


# ---------------------------------------------------------------------------
# data types


@dataclass
class LayoutBoundaries:
    y_c: np.ndarray
    y_f: np.ndarray
    y_w: np.ndarray

    def __post_init__(self):
        self.y_c = np.asarray(self.y_c, dtype=float)
        self.y_f = np.asarray(self.y_f, dtype=float)
        self.y_w = np.asarray(self.y_w, dtype=float)
        if not (self.y_c.shape == self.y_f.shape == self.y_w.shape):
            raise DimensionError("boundary channels must have equal length")

    @property
    def width(self) -> int:
        return self.y_c.shape[-1]

    def roll(self, r: int) -> "LayoutBoundaries":
        return LayoutBoundaries(np.roll(self.y_c, r), np.roll(self.y_f, r), np.roll(self.y_w, r))


@dataclass
class CornerAnnotation:
    """Corner pixels ``(u, v)``: rows alternate ceiling then floor, left to right."""

    corners: np.ndarray

    def __post_init__(self):
        self.corners = np.asarray(self.corners, dtype=float).reshape(-1, 2)

    @property
    def ceiling(self) -> np.ndarray:
        return self.corners[0::2]

    @property
    def floor(self) -> np.ndarray:
        return self.corners[1::2]

    @property
    def n_walls(self) -> int:
        return len(self.corners) // 2

    def validate(self, tol: float = 1e-6) -> "CornerAnnotation":
        n = len(self.corners)
        if n % 2 or n < 8:
            raise InvalidAnnotationError(f"need an even number (>= 8) of corner rows, got {n}")
        c, f = self.ceiling, self.floor
        if np.any(np.abs(c[:, 0] - f[:, 0]) > tol):
            raise InvalidAnnotationError("ceiling/floor pairs must share the same column u")
        if np.any(c[:, 1] >= f[:, 1]):
            raise InvalidAnnotationError("ceiling corner must lie above its floor corner")
        if np.any(np.diff(c[:, 0]) < 0):
            raise InvalidAnnotationError("corners must be ordered left to right")
        return self


@dataclass
class FloorPlan:
    """Counter-clockwise floor polygon in the ``(x, z)`` plane plus plane heights."""

    vertices: np.ndarray
    floor_y: float = FLOOR_Y
    ceil_y: float = 1.0

    def __post_init__(self):
        v = np.asarray(self.vertices, dtype=float).reshape(-1, 2)
        if len(v) < 3:
            raise DimensionError("a floor plan needs at least 3 vertices")
        if not self.ceil_y > 0 > self.floor_y:
            raise DegenerateLayoutError(f"need ceil_y > 0 > floor_y, got {self.ceil_y}, {self.floor_y}")
        if not is_simple_polygon(v):
            raise DegenerateLayoutError("floor plan polygon self-intersects")
        if _signed_area(v) < 0:
            v = v[::-1].copy()
        self.vertices = v
        self.floor_y = float(self.floor_y)
        self.ceil_y = float(self.ceil_y)

    @property
    def height(self) -> float:
        return self.ceil_y - self.floor_y


def _signed_area(v: np.ndarray) -> float:
    x, y = v[:, 0], v[:, 1]
    return 0.5 * float(np.dot(x, np.roll(y, -1)) - np.dot(np.roll(x, -1), y))


def _segments_cross(p1, p2, q1, q2) -> bool:
    def orient(a, b, c):
        return (b[0] - a[0]) * (c[1] - a[1]) - (b[1] - a[1]) * (c[0] - a[0])

    d1, d2 = orient(q1, q2, p1), orient(q1, q2, p2)
    d3, d4 = orient(p1, p2, q1), orient(p1, p2, q2)
    return (d1 * d2 < 0) and (d3 * d4 < 0)


def is_simple_polygon(v: np.ndarray) -> bool:
    """True when no two non-adjacent edges properly cross."""
    n = len(v)
    for i in range(n):
        a1, a2 = v[i], v[(i + 1) % n]
        for j in range(i + 2, n):
            if i == 0 and j == n - 1:
                continue
            if _segments_cross(a1, a2, v[j], v[(j + 1) % n]):
                return False
    return True


# ---------------------------------------------------------------------------
# rendering ground truth


def ray_polygon_distance(polygon: np.ndarray, deltas: np.ndarray) -> np.ndarray:
    """Distance along each horizontal ray ``(sin delta, cos delta)`` to the nearest polygon edge."""
    p = np.asarray(polygon, dtype=float)
    q = np.roll(p, -1, axis=0)
    e = q - p
    dx, dz = np.sin(deltas)[:, None], np.cos(deltas)[:, None]
    denom = dx * e[None, :, 1] - dz * e[None, :, 0]
    with np.errstate(divide="ignore", invalid="ignore"):
        t = (p[None, :, 0] * e[None, :, 1] - p[None, :, 1] * e[None, :, 0]) / denom
        s = (p[None, :, 0] * dz - p[None, :, 1] * dx) / denom
    valid = (np.abs(denom) > 1e-15) & (t > 1e-12) & (s >= -1e-9) & (s <= 1 + 1e-9)
    t = np.where(valid, t, np.inf)
    d = t.min(axis=1)
    if not np.all(np.isfinite(d)):
        raise InvalidAnnotationError("a camera ray misses the wall polygon (camera outside the room?)")
    return d


def annotation_floor_polygon(ann: CornerAnnotation, W: int, H: int) -> np.ndarray:
    f = ann.floor
    sp = pixel_to_sphere(f[:, 0], f[:, 1], W, H)
    try:
        p = project_to_plane(sp.delta, sp.gamma, FLOOR_Y)
    except HorizonDegenerateError as exc:
        raise InvalidAnnotationError(f"floor corner cannot be projected: {exc}") from exc
    return np.stack([p.x, p.z], axis=1)


def annotation_ceiling_height(ann: CornerAnnotation, W: int, H: int) -> float:
    """Mean over corners of ``tan(gamma_ceiling) / tan(-gamma_floor)`` (camera height 1)."""
    gc = pixel_to_sphere(ann.ceiling[:, 0], ann.ceiling[:, 1], W, H).gamma
    gf = pixel_to_sphere(ann.floor[:, 0], ann.floor[:, 1], W, H).gamma
    return float(np.mean(np.tan(gc) / np.tan(-gf)))


def corner_columns(u: np.ndarray, W: int) -> np.ndarray:
    """Column whose span contains each corner coordinate."""
    return np.floor(np.asarray(u, dtype=float)).astype(int) % W


def corners_to_boundaries(ann: CornerAnnotation, W: int, H: int,
                          smooth_sigma: Optional[float] = None) -> LayoutBoundaries:
    """Render per-column ceiling/floor latitudes and the corner map from an annotation.

    ``smooth_sigma`` (columns) replaces the binary corner map with Gaussian
    bumps centred on the exact corner coordinates.
    """
    ann.validate()
    poly = annotation_floor_polygon(ann, W, H)
    h = annotation_ceiling_height(ann, W, H)
    if not h > 0:
        raise InvalidAnnotationError("ceiling height must be positive")
    d = ray_polygon_distance(poly, column_longitudes(W))
    y_f = -np.arctan2(1.0, d)
    y_c = np.arctan2(h, d)
    u = ann.floor[:, 0]
    if smooth_sigma:
        centres = np.arange(W) + 0.5
        diff = np.abs(centres[:, None] - u[None, :]) % W
        dist = np.minimum(diff, W - diff)
        y_w = np.exp(-0.5 * (dist / smooth_sigma) ** 2).max(axis=1)
    else:
        y_w = np.zeros(W)
        y_w[corner_columns(u, W)] = 1.0
    return LayoutBoundaries(y_c, y_f, y_w)


# ---------------------------------------------------------------------------
# floor-plan extraction


def peak_find(y_w, min_sep: Optional[int] = None, thresh: float = 0.5) -> List[int]:
    """Columns of wrap-aware local maxima above ``thresh`` after greedy suppression."""
    y = np.asarray(y_w, dtype=float)
    W = len(y)
    if min_sep is None:
        min_sep = max(1, W // 64)
    if min_sep < 1:
        raise ValueError("min_sep must be >= 1")
    is_max = (y >= np.roll(y, 1)) & (y >= np.roll(y, -1)) & (y > thresh)
    cand = np.flatnonzero(is_max)
    cand = cand[np.argsort(-y[cand], kind="stable")]
    kept: List[int] = []
    for j in cand:
        if all(min(abs(j - k), W - abs(j - k)) > min_sep for k in kept):
            kept.append(int(j))
    if len(kept) < 3:
        raise DegenerateLayoutError(f"found {len(kept)} corner peaks, need at least 3")
    return sorted(kept)


def _fit_line(points: np.ndarray):
    """Total-least-squares line through ``points``: (centroid, unit direction)."""
    m = points.mean(axis=0)
    _, _, vt = np.linalg.svd(points - m, full_matrices=False)
    return m, vt[0]


def _intersect(la, lb, min_sin: float):
    (pa, da), (pb, db) = la, lb
    cross = da[0] * db[1] - da[1] * db[0]
    if abs(cross) < min_sin:
        return None
    t = ((pb[0] - pa[0]) * db[1] - (pb[1] - pa[1]) * db[0]) / cross
    return pa + t * da


def refine_vertices(points: np.ndarray, cols: np.ndarray, W: int, coarse: np.ndarray,
                    margin: int = 2, min_sin: float = np.sin(np.radians(10.0))) -> np.ndarray:
    """Replace column-snapped vertices by intersections of per-wall line fits.

    ``points`` holds the floor point of every column. Each wall uses the
    columns strictly between its two corner columns, ``margin`` columns in
    from either end. A vertex keeps its coarse position when a neighbouring
    wall has fewer than 3 usable columns, the walls are nearly parallel or
    the intersection lands far from the coarse estimate.
    """
    n = len(cols)
    lines = []
    for i in range(n):
        a, b = cols[i], cols[(i + 1) % n]
        span = (b - a) % W if n > 1 else W
        idx = (a + np.arange(margin, span - margin + 1)) % W
        lines.append(_fit_line(points[idx]) if len(idx) >= 3 else None)
    out = coarse.copy()
    for i in range(n):
        la, lb = lines[i - 1], lines[i]
        if la is None or lb is None:
            continue
        v = _intersect(la, lb, min_sin)
        if v is not None and np.linalg.norm(v - coarse[i]) < 0.25 * np.linalg.norm(coarse[i]):
            out[i] = v
    return out


def boundaries_to_floorplan(b: LayoutBoundaries, peaks: Sequence[int], refine: bool = True) -> FloorPlan:
    """Floor plan from boundaries and corner columns.

    Each corner column is projected onto the floor plane. With ``refine`` the
    vertices are then moved to the intersections of lines fitted to each
    wall's floor points, which removes the column quantization of corners.
    """
    if len(peaks) < 3:
        raise DegenerateLayoutError("need at least 3 corner columns")
    W = b.width
    deltas = column_longitudes(W)
    cols = np.sort(np.asarray(peaks, dtype=int))
    p = project_to_plane(deltas[cols], b.y_f[cols], FLOOR_Y)
    verts = np.stack([p.x, p.z], axis=1)
    ok = b.y_f < -GAMMA_MIN
    if refine and ok.all():
        d_all = floor_distance(b.y_f)
        pts = np.stack([d_all * np.sin(deltas), d_all * np.cos(deltas)], axis=1)
        refined = refine_vertices(pts, cols, W, verts)
        if is_simple_polygon(refined):
            verts = refined
    d = floor_distance(b.y_f[ok])
    ceil_y = float(np.median(np.tan(b.y_c[ok]) * d))
    return FloorPlan(verts, FLOOR_Y, ceil_y)


# ---------------------------------------------------------------------------
# areas and IoU


def polygon_area(vertices) -> float:
    """Shoelace area, positive for counter-clockwise order."""
    v = np.asarray(vertices, dtype=float).reshape(-1, 2)
    if len(v) < 3:
        raise DimensionError("polygon_area needs at least 3 vertices")
    return _signed_area(v)


def rasterize(vertices, bbox, res: int = 1024) -> np.ndarray:
    """Even-odd fill of cell centres on a ``res×res`` grid spanning ``bbox = (x0, y0, x1, y1)``."""
    v = np.asarray(vertices, dtype=float)
    x0, y0, x1, y1 = bbox
    xs = x0 + (np.arange(res) + 0.5) * (x1 - x0) / res
    ys = y0 + (np.arange(res) + 0.5) * (y1 - y0) / res
    mask = np.zeros((res, res), dtype=bool)
    n = len(v)
    for i in range(n):
        (xa, ya), (xb, yb) = v[i], v[(i + 1) % n]
        rows = np.flatnonzero((ya > ys) != (yb > ys))
        if rows.size == 0:
            continue
        xint = xa + (ys[rows] - ya) * (xb - xa) / (yb - ya)
        mask[rows] ^= xs[None, :] < xint[:, None]
    return mask


def _joint_raster(a: FloorPlan, b: FloorPlan, res: int):
    pts = np.vstack([a.vertices, b.vertices])
    x0, y0 = pts.min(axis=0)
    x1, y1 = pts.max(axis=0)
    bbox = (x0, y0, x1, y1)
    cell = (x1 - x0) * (y1 - y0) / (res * res)
    return rasterize(a.vertices, bbox, res), rasterize(b.vertices, bbox, res), cell


def iou2d(a: FloorPlan, b: FloorPlan, res: int = 1024) -> float:
    ma, mb, _ = _joint_raster(a, b, res)
    union = np.count_nonzero(ma | mb)
    if union == 0:
        raise UndefinedMetricError("2D IoU of empty polygons")
    return np.count_nonzero(ma & mb) / union


def iou3d(a: FloorPlan, b: FloorPlan, res: int = 1024) -> float:
    ma, mb, cell = _joint_raster(a, b, res)
    area_a = np.count_nonzero(ma) * cell
    area_b = np.count_nonzero(mb) * cell
    area_i = np.count_nonzero(ma & mb) * cell
    overlap_h = max(0.0, min(a.ceil_y, b.ceil_y) - max(a.floor_y, b.floor_y))
    inter = area_i * overlap_h
    union = area_a * a.height + area_b * b.height - inter
    if union <= 0:
        raise UndefinedMetricError("3D IoU of empty prisms")
    return inter / union
