import math

import numpy as np
import pytest
from hypothesis import assume, given, settings, strategies as st

from panokit import geometry as g
from panokit.dataset import polygon_annotation, random_room_polygon
from panokit.errors import (DegenerateLayoutError, DimensionError, HorizonDegenerateError,
                            InvalidAnnotationError, UndefinedMetricError)

from oracles import random_convex_polygon, raster_iou, shoelace


def square(half=1.0, centre=(0.0, 0.0)):
    cx, cz = centre
    return np.array([[cx - half, cz - half], [cx + half, cz - half], [cx + half, cz + half], [cx - half, cz + half]])


def camera_clearance(poly):
    """Signed distance from the origin to the nearest edge of a counter-clockwise polygon."""
    e = np.roll(poly, -1, axis=0) - poly
    cross = (e[:, 0] * -poly[:, 1] - e[:, 1] * -poly[:, 0]) / np.linalg.norm(e, axis=1)
    return cross.min()


def plan(vertices, ceil_y=1.0):
    return g.FloorPlan(np.asarray(vertices, dtype=float), -1.0, ceil_y)


def vertex_errors(true_poly, got_poly):
    """Relative distance from each true vertex to its nearest recovered vertex."""
    d = np.linalg.norm(true_poly[:, None] - got_poly[None], axis=2).min(axis=1)
    return d / np.linalg.norm(true_poly, axis=1)


# --- spherical conversions --------------------------------------------------


def test_pixel_to_sphere_examples():
    W, H = 1024, 512
    assert tuple(g.pixel_to_sphere(W / 2, H / 2, W, H)) == (0.0, 0.0)
    assert tuple(g.pixel_to_sphere(0, 0, W, H)) == pytest.approx((-math.pi, math.pi / 2))
    assert tuple(g.pixel_to_sphere(3 * W / 4, H / 4, W, H)) == pytest.approx((math.pi / 2, math.pi / 4))


def test_sphere_to_pixel_examples():
    assert g.sphere_to_pixel(0.0, 0.0, 1024, 512) == (512, 256)
    u, v = g.sphere_to_pixel(math.pi / 2, math.pi / 4, 1024, 512)
    assert (u, v) == pytest.approx((768, 128))


def test_column_longitudes_sample_pixel_centres():
    d = g.column_longitudes(4)
    np.testing.assert_allclose(d, (np.arange(4) + 0.5) / 4 * 2 * np.pi - np.pi)


def test_pixel_sphere_round_trip():
    rng = np.random.default_rng(0)
    W, H = 1024, 512
    u, v = rng.uniform(0, W, 1000), rng.uniform(0, H, 1000)
    sp = g.pixel_to_sphere(u, v, W, H)
    uu, vv = g.sphere_to_pixel(sp.delta, sp.gamma, W, H)
    np.testing.assert_allclose(uu, u, atol=1e-9)
    np.testing.assert_allclose(vv, v, atol=1e-9)


def test_sphere_to_3d_examples():
    assert tuple(g.sphere_to_3d(0, 0, 1)) == pytest.approx((0, 0, 1))
    assert tuple(g.sphere_to_3d(math.pi / 2, 0, 2)) == pytest.approx((2, 0, 0))
    assert tuple(g.sphere_to_3d(0, -math.pi / 4, math.sqrt(2))) == pytest.approx((0, -1, 1))


def test_sphere_to_3d_inverse():
    rng = np.random.default_rng(1)
    d, gm, s = rng.uniform(-np.pi, np.pi, 500), rng.uniform(-1.5, 1.5, 500), rng.uniform(0.1, 5, 500)
    p = g.sphere_to_3d(d, gm, s)
    np.testing.assert_allclose(np.arctan2(p.x, p.z), d, atol=1e-9)
    np.testing.assert_allclose(np.arcsin(p.y / s), gm, atol=1e-9)


def test_project_to_plane_examples():
    assert tuple(g.project_to_plane(0.0, -math.pi / 4, -1.0)) == pytest.approx((0, -1, 1))
    p = g.project_to_plane(math.pi / 2, -math.atan(0.5), -1.0)
    assert tuple(p) == pytest.approx((2, -1, 0))
    assert p.y == -1.0
    with pytest.raises(HorizonDegenerateError):
        g.project_to_plane(0.0, math.pi / 4, -1.0)
    with pytest.raises(HorizonDegenerateError):
        g.project_to_plane(0.0, -1e-4, -1.0)


# --- annotations and rendering ----------------------------------------------


def test_annotation_validation():
    with pytest.raises(InvalidAnnotationError):
        g.CornerAnnotation(np.zeros((6, 2))).validate()
    bad = polygon_annotation(square(), 1.0, 64, 32).corners.copy()
    bad[0, 1], bad[1, 1] = bad[1, 1], bad[0, 1]
    with pytest.raises(InvalidAnnotationError):
        g.CornerAnnotation(bad).validate()


def test_square_room_rendering():
    W, H = 1024, 512
    ann = polygon_annotation(square(), 1.0, W, H)
    b = g.corners_to_boundaries(ann, W, H)
    # column closest to delta = 0 sees the wall at distance ~1
    j = W // 2
    d = g.floor_distance(b.y_f[j])
    assert d == pytest.approx(1 / math.cos(g.column_longitudes(W)[j]), rel=1e-9)
    assert b.y_f[j] == pytest.approx(-math.pi / 4, abs=1e-4)
    np.testing.assert_allclose(b.y_f, np.roll(b.y_f, W // 4), atol=1e-12)
    wall_centres = [W // 2 - 1, W // 2]
    assert b.y_f[wall_centres].min() == pytest.approx(b.y_f.min(), abs=1e-5)
    assert int(b.y_w.sum()) == 4
    assert np.all(b.y_c > 0) and np.all(b.y_f < 0)


def test_rendering_rejects_outside_camera():
    poly = square(1.0, centre=(5.0, 0.0))
    ann = polygon_annotation(poly, 1.0, 256, 128)
    with pytest.raises(InvalidAnnotationError):
        g.corners_to_boundaries(ann, 256, 128)


def test_rendering_roll_equivariance_exact():
    W, H = 256, 128
    ann = polygon_annotation(square(1.3, (0.2, -0.1)), 1.4, W, H)
    b = g.corners_to_boundaries(ann, W, H)
    r = 32
    rolled = ann.corners.copy()
    rolled[:, 0] = (rolled[:, 0] + r) % W
    order = np.argsort(rolled[0::2, 0], kind="stable")
    rows = np.empty_like(rolled)
    rows[0::2], rows[1::2] = rolled[0::2][order], rolled[1::2][order]
    b2 = g.corners_to_boundaries(g.CornerAnnotation(rows), W, H)
    np.testing.assert_allclose(b2.y_f, b.roll(r).y_f, atol=1e-12)
    np.testing.assert_allclose(b2.y_c, b.roll(r).y_c, atol=1e-12)
    np.testing.assert_array_equal(b2.y_w, b.roll(r).y_w)


def test_smoothed_corner_targets_peak_at_corners():
    W, H = 256, 128
    ann = polygon_annotation(square(), 1.0, W, H)
    b = g.corners_to_boundaries(ann, W, H, smooth_sigma=1.5)
    # corners of a centred square fall on column boundaries, so either neighbour is a valid peak
    got = np.array(g.peak_find(b.y_w))
    assert np.all(np.abs(got - np.sort(ann.floor[:, 0])) <= 1.0)


# --- peak finding -----------------------------------------------------------


def test_peak_find_examples():
    y = np.zeros(64)
    y[[3, 20, 40, 60]] = 1.0
    assert g.peak_find(y) == [3, 20, 40, 60]
    y = np.zeros(64)
    y[[3, 20, 40]] = 1.0
    y[10], y[11] = 0.9, 0.8
    assert g.peak_find(y, min_sep=3) == [3, 10, 20, 40]


def test_peak_find_wraps_around():
    y = np.zeros(64)
    y[[0, 20, 40]] = 1.0
    y[63] = 0.95
    assert g.peak_find(y, min_sep=2) == [0, 20, 40]


def test_peak_find_gaussian_bumps():
    W = 256
    centres = [17, 90, 150, 230]
    x = np.arange(W)
    y = sum(np.exp(-0.5 * ((x - c) / 3.0) ** 2) for c in centres)
    got = g.peak_find(y)
    assert all(abs(a - b) <= 1 for a, b in zip(got, centres))


def test_peak_find_too_few():
    y = np.zeros(64)
    y[[3, 30]] = 1.0
    with pytest.raises(DegenerateLayoutError):
        g.peak_find(y)


# --- floor-plan extraction --------------------------------------------------


def round_trip(poly, h, W=1024, H=512, refine=True):
    ann = polygon_annotation(poly, h, W, H)
    b = g.corners_to_boundaries(ann, W, H)
    return g.boundaries_to_floorplan(b, g.corner_columns(ann.floor[:, 0], W), refine=refine)


def test_square_round_trip():
    fp = round_trip(square(), 1.0)
    assert vertex_errors(square(), fp.vertices).max() < 0.02
    assert fp.ceil_y == pytest.approx(1.0, rel=0.02)


def test_unrefined_projection_is_also_within_tolerance_on_square():
    fp = round_trip(square(1.0, (0.1, 0.05)), 1.0, refine=False)
    assert vertex_errors(square(1.0, (0.1, 0.05)), fp.vertices).max() < 0.02


def test_floorplan_needs_three_peaks():
    b = g.LayoutBoundaries(np.full(8, 0.5), np.full(8, -0.5), np.zeros(8))
    with pytest.raises(DegenerateLayoutError):
        g.boundaries_to_floorplan(b, [1, 2])


def test_floorplan_rejects_horizon_floor():
    b = g.LayoutBoundaries(np.full(8, 0.5), np.zeros(8), np.zeros(8))
    with pytest.raises(HorizonDegenerateError):
        g.boundaries_to_floorplan(b, [0, 3, 6])


@settings(max_examples=40, deadline=None)
@given(st.integers(0, 2 ** 31), st.integers(4, 8))
def test_convex_round_trip(seed, n):
    rng = np.random.default_rng(seed)
    poly = random_convex_polygon(rng, n, center=rng.uniform(-0.3, 0.3, 2), scale=rng.uniform(1.0, 3.0))
    assume(camera_clearance(poly) > 0.2)
    h = rng.uniform(0.8, 2.0)
    fp = round_trip(poly, h)
    assert len(fp.vertices) == n
    assert vertex_errors(poly, fp.vertices).max() < 0.02
    assert fp.ceil_y == pytest.approx(h, rel=0.02)


@pytest.mark.parametrize("kind", ["box", "L"])
def test_generator_rooms_round_trip(kind):
    rng = np.random.default_rng(7)
    for _ in range(25):
        poly = random_room_polygon(rng, kind)
        fp = round_trip(poly, 1.3)
        assert vertex_errors(poly, fp.vertices).max() < 0.02


# --- area and IoU -----------------------------------------------------------


def test_polygon_area_examples():
    assert g.polygon_area([[0, 0], [1, 0], [1, 1], [0, 1]]) == 1.0
    assert g.polygon_area([[0, 0], [2, 0], [0, 2]]) == 2.0
    assert g.polygon_area([[0, 0], [0, 2], [2, 0]]) == -2.0
    with pytest.raises(DimensionError):
        g.polygon_area([[0, 0], [1, 1]])


def test_polygon_area_matches_raster_count():
    rng = np.random.default_rng(2)
    poly = random_convex_polygon(rng, 6, scale=1.5)
    lo, hi = poly.min(0), poly.max(0)
    mask = g.rasterize(poly, (*lo, *hi), 2048)
    est = mask.mean() * np.prod(hi - lo)
    assert abs(est - g.polygon_area(poly)) / g.polygon_area(poly) < 0.005
    assert g.polygon_area(poly) == pytest.approx(shoelace(poly))


def test_floor_plan_is_normalised_counter_clockwise():
    fp = plan(square()[::-1])
    assert g.polygon_area(fp.vertices) > 0


def test_floor_plan_rejects_bowtie_and_bad_planes():
    with pytest.raises(DegenerateLayoutError):
        plan([[0, 0], [1, 1], [1, 0], [0, 1]])
    with pytest.raises(DegenerateLayoutError):
        g.FloorPlan(square(), -1.0, -0.5)


def test_iou2d_examples():
    a = plan(square(0.5))
    assert g.iou2d(a, a) == 1.0
    assert g.iou2d(a, plan(square(0.5, (0.5, 0)))) == pytest.approx(1 / 3, abs=0.01)
    assert g.iou2d(a, plan(square(0.5, (3, 0)))) == 0.0


def test_iou3d_examples():
    a = plan(square(0.5))
    assert g.iou3d(a, a) == pytest.approx(1.0)
    assert g.iou3d(a, plan(square(0.5), ceil_y=3.0)) == pytest.approx(0.5)
    assert g.iou3d(a, plan(square(0.5, (3, 0)))) == 0.0


def test_iou_undefined_for_zero_area():
    a = g.FloorPlan.__new__(g.FloorPlan)
    a.vertices, a.floor_y, a.ceil_y = np.zeros((3, 2)), -1.0, 1.0
    with pytest.raises(UndefinedMetricError):
        g.iou2d(a, a)
    with pytest.raises(UndefinedMetricError):
        g.iou3d(a, a)


@settings(max_examples=30, deadline=None)
@given(st.integers(0, 2 ** 31))
def test_iou2d_symmetric_and_bounded(seed):
    rng = np.random.default_rng(seed)
    a = plan(random_convex_polygon(rng, scale=rng.uniform(0.5, 2)))
    b = plan(random_convex_polygon(rng, center=rng.uniform(-1, 1, 2), scale=rng.uniform(0.5, 2)))
    v = g.iou2d(a, b, res=256)
    assert 0.0 <= v <= 1.0
    assert v == g.iou2d(b, a, res=256)


def test_iou2d_matches_pil_oracle_on_a_few_pairs():
    rng = np.random.default_rng(3)
    for _ in range(5):
        a = random_convex_polygon(rng, scale=1.0)
        b = random_convex_polygon(rng, center=rng.uniform(-0.8, 0.8, 2), scale=rng.uniform(0.6, 1.4))
        assert abs(g.iou2d(plan(a), plan(b)) - raster_iou(a, b, res=2048)) < 0.01
