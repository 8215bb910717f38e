import math

import numpy as np
import pytest

from panokit import layout_head as lh
from panokit.errors import ConfigurationError, DimensionError
from panokit.gradcheck import check_function, check_module

WIDTHS = (8, 4, 2, 1)


def _head(seed=0, d=8, w_out=16, widths=WIDTHS):
    return lh.LayoutHead(np.random.default_rng(seed), d, widths, w_out)


def _in_range(out):
    return (np.all((out.y_w > 0) & (out.y_w < 1)) and np.all((out.y_c > 0) & (out.y_c < np.pi / 2))
            and np.all((out.y_f < 0) & (out.y_f > -np.pi / 2)))


def test_desk_output_length():
    head = lh.LayoutHead(np.random.default_rng(1), 256, (64, 32, 16, 8), 128, channels=32)
    out = lh.head_forward(head, np.random.default_rng(2).normal(size=(120, 256)))
    assert out.y_w.shape == out.y_c.shape == out.y_f.shape == (128,)
    assert _in_range(out)


def test_row_count_mismatch():
    with pytest.raises(DimensionError):
        _head().forward(np.zeros((1, 14, 8)))


def test_zero_final_weights_start_at_thirty_degrees():
    head = _head()
    head.conv3.conv.weight.value[...] = 0
    out = lh.head_forward(head, np.random.default_rng(3).normal(size=(15, 8)))
    np.testing.assert_allclose(out.y_w, 0.5)
    np.testing.assert_allclose(out.y_c, np.pi / 6, atol=1e-12)
    np.testing.assert_allclose(out.y_f, -np.pi / 6, atol=1e-12)


@pytest.mark.parametrize("scale", [1e3, -1e3])
def test_outputs_stay_in_open_ranges_when_saturated(scale):
    head = _head()
    head.conv3.conv.weight.value[...] = scale
    out = lh.head_forward(head, np.abs(np.random.default_rng(4).normal(size=(15, 8))) * 10)
    assert _in_range(out)


def test_head_roll_equivariance():
    widths = (32, 16, 8, 4)
    head = _head(w_out=64, widths=widths)
    feat = np.random.default_rng(5).normal(size=(60, 8))
    base = lh.head_forward(head, feat)
    parts, start = [], 0
    for s in widths:
        parts.append(np.roll(feat[start:start + s], s // 4, axis=0))
        start += s
    shifted = lh.head_forward(head, np.concatenate(parts))
    assert not np.allclose(shifted.y_c, base.y_c)
    for a, b in ((shifted.y_w, base.y_w), (shifted.y_c, base.y_c), (shifted.y_f, base.y_f)):
        np.testing.assert_allclose(a, np.roll(b, 16), atol=1e-12)


def test_head_gradient():
    rng = np.random.default_rng(6)
    head = _head(d=6, w_out=12)
    for p in head.params().values():
        p.value[...] = rng.normal(scale=0.5, size=p.value.shape)

    def fwd(x):
        o = head.forward(x, train=True)
        return (o.y_w, o.y_c, o.y_f)

    def bwd(r):
        return head.backward(lh.HeadOutput(*r))

    res = check_module("head", head, fwd, bwd, rng.normal(size=(2, 15, 6)), rng)
    assert res.max_rel_err < 1e-4


# --- corner loss ------------------------------------------------------------


def test_corner_loss_examples():
    gt = np.array([1.0, 0.0, 1.0])
    assert lh.loss_corner(np.clip(gt, 1e-7, 1 - 1e-7), gt)[0] == pytest.approx(0, abs=1e-6)
    assert lh.loss_corner(np.full(4, 0.5), np.array([1.0, 0, 0, 1]))[0] == pytest.approx(math.log(2))
    assert lh.loss_corner(np.array([0.9, 0.1]), np.array([1.0, 0.0]))[0] == pytest.approx(0.10536, abs=1e-5)


# --- boundary losses --------------------------------------------------------


def test_3d_loss_zero_at_truth():
    rng = np.random.default_rng(7)
    c, f = rng.uniform(0.1, 1.4, 32), -rng.uniform(0.1, 1.4, 32)
    loss, g_c, g_f = lh.loss_boundary_3d(c, f, c, f, 1.3)
    assert loss == 0.0


def test_3d_loss_single_column_hand_case():
    c = np.array([0.5])
    loss, _, _ = lh.loss_boundary_3d(c, np.array([-math.pi / 4]), c, np.array([-math.atan(0.5)]), 1.0,
                                     deltas=np.array([0.0]))
    # floor points (0,-1,1) and (0,-1,2) are 1 apart; the ceiling term is zero and the two terms are averaged
    assert 2 * loss == pytest.approx(1.0)


def test_3d_loss_positive_off_truth():
    rng = np.random.default_rng(8)
    c, f = rng.uniform(0.1, 1.4, 32), -rng.uniform(0.1, 1.4, 32)
    assert lh.loss_boundary_3d(c + 1e-6, f, c, f, 1.3)[0] > 0


def floor_term(gamma, err):
    loss, _, _ = lh.loss_boundary_3d(np.array([0.5]), np.array([gamma + err]), np.array([0.5]), np.array([gamma]),
                                     1.0, deltas=np.array([0.0]))
    return 2 * loss


def test_3d_loss_imbalance_hand_pair():
    one = math.radians(1.0)
    assert floor_term(math.radians(-45), one) > floor_term(math.radians(-80), one)


def test_3d_floor_term_decreases_with_steeper_latitude():
    one = math.radians(1.0)
    grid = np.radians(np.linspace(-5, -88, 84))
    terms = [floor_term(gm, one) for gm in grid]
    assert np.all(np.diff(terms) < 0)


def test_3d_loss_guard_gives_finite_penalty():
    loss, g_c, g_f = lh.loss_boundary_3d(np.array([1e-6]), np.array([-1e-6]), np.array([0.5]), np.array([-0.5]), 1.0)
    assert np.isfinite(loss) and loss > 0
    assert g_c[0] == 0.0 and g_f[0] == 0.0


def test_l1_loss_hand_case():
    loss, g_c, g_f = lh.loss_boundary_l1(np.array([0.5, 0.4]), np.array([-0.5, -0.2]),
                                         np.array([0.3, 0.4]), np.array([-0.5, -0.6]))
    assert loss == pytest.approx((0.2 + 0.4) / 4)


@pytest.mark.parametrize("kind", ["3d", "l1"])
def test_boundary_loss_gradients(kind):
    rng = np.random.default_rng(9)
    gt_c, gt_f = rng.uniform(0.2, 1.2, (2, 10)), -rng.uniform(0.2, 1.2, (2, 10))
    c, f = gt_c + rng.normal(scale=0.1, size=(2, 10)), gt_f + rng.normal(scale=0.1, size=(2, 10))
    fn = lh.loss_boundary_3d if kind == "3d" else lh.loss_boundary_l1
    extra = (np.array([1.1, 1.6]),) if kind == "3d" else ()

    res = check_function(kind, lambda a, b: np.array(fn(a, b, gt_c, gt_f, *extra)[0]),
                         lambda r, a, b: tuple(r * g for g in fn(a, b, gt_c, gt_f, *extra)[1:]), [c, f], rng)
    assert res.max_rel_err < 1e-4


# --- total loss -------------------------------------------------------------


def test_total_loss_composition():
    gt_c, gt_f = np.array([0.5]), np.array([-math.atan(0.5)])
    gt_w = np.array([1.0])
    pred = lh.HeadOutput(np.array([0.9]), gt_c.copy(), np.array([-math.pi / 4]))
    total, _, terms = lh.total_loss(pred, gt_c, gt_f, gt_w, 1.0)
    assert total == pytest.approx(terms["corner"] + terms["boundary"])
    assert terms["corner"] == pytest.approx(-math.log(0.9))
    only_b, _, _ = lh.total_loss(pred, gt_c, gt_f, gt_w, 1.0, lh.LossWeights(0.0, 1.0))
    assert only_b == pytest.approx(terms["boundary"])
    exact = lh.HeadOutput(np.array([1 - 1e-9]), gt_c, gt_f)
    assert lh.total_loss(exact, gt_c, gt_f, gt_w, 1.0)[0] == pytest.approx(0, abs=1e-6)


def test_loss_weights_validation():
    with pytest.raises(ConfigurationError):
        lh.LossWeights(boundary_kind="l2")


def test_total_loss_gradient_through_head():
    rng = np.random.default_rng(10)
    head = _head(d=6, w_out=12)
    for p in head.params().values():
        p.value[...] = rng.normal(scale=0.3, size=p.value.shape)
    gt_c, gt_f = rng.uniform(0.3, 1.0, (2, 12)), -rng.uniform(0.3, 1.0, (2, 12))
    gt_w = (rng.random((2, 12)) > 0.8).astype(float)
    h = np.array([1.2, 0.9])

    def fwd(x):
        return np.array(lh.total_loss(head.forward(x, True), gt_c, gt_f, gt_w, h)[0])

    def bwd(r):
        _, grads, _ = lh.total_loss(head.forward(head_input, True), gt_c, gt_f, gt_w, h)
        return head.backward(lh.HeadOutput(grads.y_w * r, grads.y_c * r, grads.y_f * r))

    head_input = rng.normal(size=(2, 15, 6))
    res = check_module("total", head, fwd, bwd, head_input, rng)
    assert res.max_rel_err < 1e-4
