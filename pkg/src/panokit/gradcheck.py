"""Finite-difference verification of every hand-written backward pass.

Each check builds a small instance, contracts its output with a fixed random
tensor ``r`` to get the scalar ``f = sum(r * y)``, and compares the analytic
gradients with central differences on a random subset of input and parameter
entries.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Dict, List, Optional, Sequence

import numpy as np

from . import numerics as nx
from .backbone import Block, StripPool
from .layers import BatchNorm, Conv2d, LayerNorm, Linear, Module
from .layout_head import HeadOutput, LayoutHead, loss_boundary_3d, loss_boundary_l1, loss_corner
from .model import ModelConfig, LayoutModel
from .patching import FeaturePatchEmbed, ImagePatchEmbed, SequenceEmbedder
from .transformer import EncoderBlock, EncoderConfig, MultiHeadSelfAttention

TOLERANCE = 1e-4
# Below this norm both gradients are treated as zero: a bias feeding a
# train-mode batch norm has an exactly zero gradient, and the relative error
# of two round-off residues carries no information.
ZERO_NORM = 1e-8


@dataclass
class CheckResult:
    name: str
    max_rel_err: float
    n_entries: int
    tol: float = TOLERANCE

    @property
    def passed(self) -> bool:
        return bool(self.max_rel_err < self.tol)


def _probe(rng, size: int, n: int) -> np.ndarray:
    return np.sort(rng.choice(size, size=min(size, n), replace=False))


def _compare(f, x, analytic, rng, n_probe, h) -> tuple:
    idx = _probe(rng, x.size, n_probe)
    num = nx.finite_diff_grad(f, x, h=h, indices=idx)
    ana = analytic.reshape(-1)[idx]
    if max(np.linalg.norm(ana), np.linalg.norm(num)) < ZERO_NORM:
        return 0.0, len(idx)
    return nx.relative_error(ana, num), len(idx)


def check_function(name: str, fwd: Callable, bwd: Callable, inputs: Sequence[np.ndarray],
                   rng, n_probe: int = 24, h: float = 1e-5, tol: float = TOLERANCE) -> CheckResult:
    """Stateless op: ``fwd(*inputs) -> y`` and ``bwd(r, *inputs) -> grads per input``."""
    inputs = [np.array(a, dtype=float) for a in inputs]
    r = rng.normal(size=np.shape(fwd(*inputs)))
    grads = bwd(r, *inputs)
    worst, count = 0.0, 0
    for k, (x, g) in enumerate(zip(inputs, grads)):
        if g is None:
            continue

        def f(xk, k=k):
            args = list(inputs)
            args[k] = xk
            return float(np.sum(r * fwd(*args)))

        err, n = _compare(f, x, g, rng, n_probe, h)
        worst, count = max(worst, err), count + n
    return CheckResult(name, worst, count, tol)


def check_module(name: str, module: Module, fwd: Callable, bwd: Callable, x: np.ndarray,
                 rng, n_probe: int = 24, h: float = 1e-5, tol: float = TOLERANCE,
                 params: Optional[Dict[str, nx.Param]] = None) -> CheckResult:
    """Layer with parameters: checks the input gradient and every parameter gradient.

    ``fwd(x)`` returns an array (or a tuple contracted element-wise); ``bwd(r)``
    returns the input gradient (``None`` when the input is not differentiable).
    """
    x = np.array(x, dtype=float)

    def contract(y, r):
        if isinstance(y, tuple):
            return float(sum(np.sum(a * b) for a, b in zip(y, r)))
        return float(np.sum(y * r))

    y = fwd(x)
    r = tuple(rng.normal(size=a.shape) for a in y) if isinstance(y, tuple) else rng.normal(size=y.shape)
    module.zero_grad()
    fwd(x)
    dx = bwd(r)
    worst, count = 0.0, 0
    if dx is not None:
        err, n = _compare(lambda xv: contract(fwd(xv), r), x, dx, rng, n_probe, h)
        worst, count = err, n
    for pname, p in (params or module.params()).items():
        analytic = p.grad.copy()
        original = p.value.copy()

        def f(v, p=p):
            p.value[...] = v
            return contract(fwd(x), r)

        err, n = _compare(f, original, analytic, rng, n_probe, h)
        p.value[...] = original
        worst, count = max(worst, err), count + n
    return CheckResult(name, worst, count, tol)


# ---------------------------------------------------------------------------
# the suite


def _conv_checks(rng) -> List[CheckResult]:
    out = []
    for label, stride, pad, wrap in (("conv2d", 1, 1, False), ("conv2d_wrap", 1, 1, True),
                                     ("conv2d_stride2_wrap", 2, 1, True)):
        x = rng.normal(size=(2, 3, 6, 8))
        w = rng.normal(size=(4, 3, 3, 3))
        b = rng.normal(size=4)

        def fwd(x, w, b, stride=stride, pad=pad, wrap=wrap):
            return nx.conv2d(x, w, stride, pad, wrap, b)

        def bwd(r, x, w, b, stride=stride, pad=pad, wrap=wrap):
            _, cache = nx.conv2d_forward(x, w, stride, pad, wrap, b)
            return nx.conv2d_backward(r, cache)

        out.append(check_function(label, fwd, bwd, [x, w, b], rng))
    return out


def _elementwise_checks(rng) -> List[CheckResult]:
    out = []
    for kind in nx.ACTIVATIONS:
        x = rng.normal(size=(5, 7))
        if kind == "relu":
            x = np.where(np.abs(x) < 0.05, 0.3, x)
        out.append(check_function(
            f"activation_{kind}", lambda x, k=kind: nx.activation(x, k),
            lambda r, x, k=kind: [nx.activation_backward(r, x, k)], [x], rng))
    x = rng.normal(size=(3, 6))
    out.append(check_function("softmax", nx.softmax,
                              lambda r, x: [nx.softmax_backward(r, nx.softmax(x), -1)], [x], rng))
    for wrap in (False, True):
        x = rng.normal(size=(2, 3, 5))
        out.append(check_function(
            f"resize_linear{'_wrap' if wrap else ''}", lambda x, w=wrap: nx.resize_linear(x, 12, w),
            lambda r, x, w=wrap: [nx.resize_linear_backward(r, 5, w)], [x], rng))
    return out


def _norm_checks(rng) -> List[CheckResult]:
    ln = LayerNorm(6)
    ln.gain.value[:] = rng.normal(1.0, 0.3, size=6)
    ln.bias.value[:] = rng.normal(size=6)
    bn = BatchNorm(3)
    bn.gain.value[:] = rng.normal(1.0, 0.3, size=3)
    bn.bias.value[:] = rng.normal(size=3)
    return [
        check_module("layer_norm", ln, ln.forward, ln.backward, rng.normal(size=(4, 6)), rng),
        check_module("batch_norm_train", bn, lambda x: bn.forward(x, True), bn.backward,
                     rng.normal(size=(4, 3, 5)), rng),
        check_module("batch_norm_eval", bn, lambda x: bn.forward(x, False), bn.backward,
                     rng.normal(size=(4, 3, 5)), rng),
    ]


def _layer_checks(rng) -> List[CheckResult]:
    lin = Linear(rng, 5, 4)
    conv = Conv2d(rng, 3, 4, 3, stride=2, pad=1, wrap=True)
    for m in (lin, conv):
        for p in m.params().values():
            p.value[...] = rng.normal(size=p.value.shape) * 0.5
    return [
        check_module("linear", lin, lin.forward, lin.backward, rng.normal(size=(3, 2, 5)), rng),
        check_module("conv2d_layer", conv, conv.forward, conv.backward, rng.normal(size=(2, 3, 6, 8)), rng),
    ]


def _scaled(module: Module, rng, scale: float = 0.3) -> Module:
    """Larger weights than the default init so every path carries signal."""
    for p in module.params().values():
        if p.value.ndim > 1:
            p.value[...] = rng.normal(size=p.value.shape) * scale
    return module


def _transformer_checks(rng) -> List[CheckResult]:
    attn = _scaled(MultiHeadSelfAttention(rng, 8, 2), rng)
    block = _scaled(EncoderBlock(rng, EncoderConfig(1, 2, 8, 2)), rng)
    return [
        check_module("attention", attn, attn.forward, attn.backward, rng.normal(size=(2, 5, 8)), rng),
        check_module("encoder_block", block, block.forward, block.backward, rng.normal(size=(2, 5, 8)), rng),
    ]


def _backbone_checks(rng) -> List[CheckResult]:
    pool = _scaled(StripPool(rng, 3), rng)
    block = _scaled(Block(rng, 3, 4), rng, 0.4)
    return [
        check_module("strip_pool", pool, pool.forward, pool.backward, rng.normal(size=(2, 3, 4, 6)), rng),
        check_module("backbone_block", block, lambda x: block.forward(x, True), block.backward,
                     rng.normal(size=(2, 3, 8, 8)), rng),
    ]


def _patch_checks(rng) -> List[CheckResult]:
    fe = _scaled(FeaturePatchEmbed(rng, 3, 4, 6), rng)
    ie = _scaled(ImagePatchEmbed(rng, 4, 3, 2, 5, 6, row_embedding=True), rng)
    ie.row_embed.value[...] = rng.normal(size=ie.row_embed.value.shape)
    seq = _scaled(SequenceEmbedder(rng, (2, 3), (4, 2), (8, 4), (3, 8, 16), 4, 6, 5), rng)
    feats = [rng.normal(size=(2, 2, 4, 8)), rng.normal(size=(2, 3, 2, 4))]
    img = rng.normal(size=(2, 3, 8, 16))

    def seq_fwd(x):
        return seq.forward(feats, x, randinit=3).tokens

    def seq_bwd(r):
        _, dimg = seq.backward(r)
        return dimg

    return [
        check_module("feature_patch_embed", fe, fe.forward, fe.backward, rng.normal(size=(2, 3, 4, 7)), rng),
        check_module("image_patch_embed", ie, ie.forward, ie.backward, rng.normal(size=(2, 3, 8, 12)), rng),
        check_module("sequence_embedder", seq, seq_fwd, seq_bwd, img, rng),
    ]


def _head_checks(rng) -> List[CheckResult]:
    head = _scaled(LayoutHead(rng, 6, (8, 4), 16, channels=5), rng)

    def fwd(x):
        o = head.forward(x, True)
        return (o.y_w, o.y_c, o.y_f)

    def bwd(r):
        return head.backward(HeadOutput(*r))

    return [check_module("layout_head", head, fwd, bwd, rng.normal(size=(2, 12, 6)), rng)]


def _loss_checks(rng) -> List[CheckResult]:
    W = 16
    gt_w = (rng.random((2, W)) < 0.2).astype(float)
    p_w = rng.uniform(0.05, 0.95, size=(2, W))
    gt_c = rng.uniform(0.2, 1.2, size=(2, W))
    gt_f = -rng.uniform(0.2, 1.2, size=(2, W))
    p_c = gt_c + rng.uniform(0.05, 0.2, size=(2, W)) * rng.choice([-1, 1], size=(2, W))
    p_f = gt_f + rng.uniform(0.05, 0.2, size=(2, W)) * rng.choice([-1, 1], size=(2, W))
    h = np.array([1.3, 0.9])
    return [
        check_function("loss_corner", lambda p: loss_corner(p, gt_w)[0],
                       lambda r, p: [r * loss_corner(p, gt_w)[1]], [p_w], rng),
        check_function("loss_boundary_3d",
                       lambda c, f: loss_boundary_3d(c, f, gt_c, gt_f, h)[0],
                       lambda r, c, f: [r * g for g in loss_boundary_3d(c, f, gt_c, gt_f, h)[1:]],
                       [p_c, p_f], rng, h=1e-6),
        check_function("loss_boundary_l1",
                       lambda c, f: loss_boundary_l1(c, f, gt_c, gt_f)[0],
                       lambda r, c, f: [r * g for g in loss_boundary_l1(c, f, gt_c, gt_f)[1:]],
                       [p_c, p_f], rng, h=1e-6),
    ]


def _model_check(rng) -> List[CheckResult]:
    cfg = ModelConfig(height=32, width=64, patch=16, d_model=8, layers=1, heads=2, mlp_ratio=2,
                      d_hidden=8, channels=(3, 3, 4, 4), head_channels=6)
    model = LayoutModel(cfg, seed=int(rng.integers(1 << 30)))
    _scaled(model, rng, 0.3)
    x = model.prepare_input(rng.uniform(size=(2, 3, 32, 64)))

    def fwd(v):
        o = model.forward_prepared(v, train=True, randinit=5)
        return (o.y_w, o.y_c, o.y_f)

    def bwd(r):
        return model.backward(HeadOutput(*r))

    names = sorted(model.params())
    picked = {n: model.params()[n] for n in rng.choice(names, size=min(8, len(names)), replace=False)}
    return [check_module("model_end_to_end", model, fwd, bwd, x, rng, n_probe=16, params=picked)]


SECTIONS: Dict[str, Callable] = {
    "conv": _conv_checks,
    "elementwise": _elementwise_checks,
    "norm": _norm_checks,
    "layers": _layer_checks,
    "attention": _transformer_checks,
    "backbone": _backbone_checks,
    "patching": _patch_checks,
    "head": _head_checks,
    "losses": _loss_checks,
    "model": _model_check,
}


def run_suite(seed: int = 0, sections: Optional[Sequence[str]] = None,
              tol: float = TOLERANCE) -> List[CheckResult]:
    rng = np.random.default_rng(seed)
    results = []
    for key in sections or SECTIONS:
        for res in SECTIONS[key](rng):
            res.tol = tol
            results.append(res)
    return results


def format_report(results: Sequence[CheckResult]) -> str:
    lines = [f"{'check':<24} {'max_rel_err':>12} {'entries':>8}  status"]
    for r in results:
        lines.append(f"{r.name:<24} {r.max_rel_err:>12.3e} {r.n_entries:>8d}  {'ok' if r.passed else 'FAIL'}")
    n_fail = sum(not r.passed for r in results)
    lines.append(f"{len(results) - n_fail}/{len(results)} checks passed (tolerance {results[0].tol:g})"
                 if results else "no checks run")
    return "\n".join(lines)
