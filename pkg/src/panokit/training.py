"""Training loop, inference and IoU evaluation."""

from __future__ import annotations

import time
from dataclasses import dataclass, field
from typing import Callable, Dict, List, Optional, Sequence

import numpy as np

from .config import RunConfig
from .dataset import Sample, augment, synth_dataset
from .errors import DegenerateLayoutError, PanokitError
from .geometry import FloorPlan, LayoutBoundaries, boundaries_to_floorplan, iou2d, iou3d, peak_find
from .layout_head import HeadOutput, total_loss
from .model import LayoutModel
from .numerics import Adam

TRAIN_SEED_OFFSET = 0
VAL_SEED_OFFSET = 10_007


def make_splits(cfg: RunConfig):
    sigma = cfg.corner_sigma or None
    train = synth_dataset(cfg.seed + TRAIN_SEED_OFFSET, cfg.n_train, cfg.width, cfg.height,
                          smooth_sigma=sigma, prefix="train")
    val = synth_dataset(cfg.seed + VAL_SEED_OFFSET, cfg.n_val, cfg.width, cfg.height,
                        smooth_sigma=sigma, prefix="val")
    return train, val


def stack_batch(samples: Sequence[Sample]):
    images = np.stack([s.image for s in samples])
    gt_c = np.stack([s.boundaries.y_c for s in samples])
    gt_f = np.stack([s.boundaries.y_f for s in samples])
    gt_w = np.stack([s.boundaries.y_w for s in samples])
    h = np.array([s.ceil_height for s in samples])
    return images, gt_c, gt_f, gt_w, h


def train_step(model: LayoutModel, opt: Adam, samples: Sequence[Sample], cfg: RunConfig,
               rng: np.random.Generator) -> Dict[str, float]:
    images, gt_c, gt_f, gt_w, h = stack_batch(samples)
    model.zero_grad()
    pred = model.forward(images, train=True, rng=rng)
    loss, grads, parts = total_loss(pred, gt_c, gt_f, gt_w, h, cfg.loss_weights())
    model.backward(grads)
    opt.step()
    return {"loss": loss, **parts}


def predict(model: LayoutModel, images: np.ndarray, batch_size: int = 8) -> List[HeadOutput]:
    """Evaluation-mode outputs, one per image."""
    out = []
    for i in range(0, len(images), batch_size):
        pred = model.forward(images[i:i + batch_size], train=False)
        out.extend(pred.take(j) for j in range(len(pred.y_w)))
    return out


def extract_corners(y_w: np.ndarray, thresh: float = 0.5, floor: float = 0.05) -> List[int]:
    """Corner columns, halving the threshold until at least three peaks appear."""
    t = thresh
    while True:
        try:
            return peak_find(y_w, thresh=t)
        except DegenerateLayoutError:
            t *= 0.5
            if t < floor:
                raise


def extract_floorplan(out: HeadOutput) -> FloorPlan:
    b = LayoutBoundaries(out.y_c, out.y_f, out.y_w)
    return boundaries_to_floorplan(b, extract_corners(out.y_w))


@dataclass
class EvalResult:
    ids: List[str]
    iou2d: np.ndarray
    iou3d: np.ndarray
    n_walls: List[int]
    failures: int = 0

    @property
    def mean2d(self) -> float:
        return float(np.mean(self.iou2d)) if len(self.iou2d) else float("nan")

    @property
    def mean3d(self) -> float:
        return float(np.mean(self.iou3d)) if len(self.iou3d) else float("nan")


def score_plans(pairs, ids, n_walls) -> EvalResult:
    """IoU of (prediction, ground truth) plan pairs; a missing prediction scores 0."""
    i2, i3, fails = [], [], 0
    for pred, gt in pairs:
        if pred is None:
            i2.append(0.0)
            i3.append(0.0)
            fails += 1
            continue
        i2.append(iou2d(pred, gt))
        i3.append(iou3d(pred, gt))
    return EvalResult(list(ids), np.array(i2), np.array(i3), list(n_walls), fails)


def evaluate(model: LayoutModel, samples: Sequence[Sample], batch_size: int = 8) -> EvalResult:
    if not samples:
        return EvalResult([], np.zeros(0), np.zeros(0), [])
    outs = predict(model, np.stack([s.image for s in samples]), batch_size)
    pairs = []
    for out, s in zip(outs, samples):
        try:
            pred = extract_floorplan(out)
        except PanokitError:
            pred = None
        pairs.append((pred, s.floorplan()))
    return score_plans(pairs, [s.identifier for s in samples], [s.n_walls for s in samples])


@dataclass
class TrainResult:
    model: LayoutModel
    history: List[dict] = field(default_factory=list)
    seconds: float = 0.0


def learning_rate(cfg: RunConfig, step: int, total_steps: int) -> float:
    """Linear warm-up over ``warmup_epochs``, then constant or cosine decay to zero."""
    per_epoch = total_steps / cfg.epochs
    warm = int(round(cfg.warmup_epochs * per_epoch))
    if step < warm:
        return cfg.lr * (step + 1) / warm
    if cfg.lr_schedule == "constant" or total_steps <= warm:
        return cfg.lr
    frac = (step - warm) / (total_steps - warm)
    return cfg.lr * 0.5 * (1.0 + np.cos(np.pi * frac))


def train(cfg: RunConfig, log: Optional[Callable[[dict], None]] = None,
          train_set: Optional[List[Sample]] = None, val_set: Optional[List[Sample]] = None,
          eval_train: bool = False) -> TrainResult:
    """Train on synthetic rooms; one history row per epoch.

    Deterministic for a fixed ``cfg.seed``.
    """
    t0 = time.perf_counter()
    if train_set is None or val_set is None:
        tr, va = make_splits(cfg)
        train_set = tr if train_set is None else train_set
        val_set = va if val_set is None else val_set
    model = LayoutModel(cfg.model_config(), seed=cfg.seed)
    opt = Adam(model.params(), lr=cfg.lr)
    rng = np.random.default_rng(cfg.seed + 1)
    flags = cfg.augment_flags()
    steps_per_epoch = int(np.ceil(len(train_set) / cfg.batch_size))
    total = cfg.epochs * steps_per_epoch
    result = TrainResult(model)
    step = 0
    for epoch in range(1, cfg.epochs + 1):
        order = rng.permutation(len(train_set))
        losses = []
        for i in range(0, len(order), cfg.batch_size):
            batch = [train_set[j] for j in order[i:i + cfg.batch_size]]
            if cfg.augmenting:
                batch = [augment(s, rng, flags) for s in batch]
            opt.lr = learning_rate(cfg, step, total)
            losses.append(train_step(model, opt, batch, cfg, rng))
            step += 1
        row = {"epoch": epoch}
        for key in losses[0]:
            row[key] = float(np.mean([d[key] for d in losses]))
        if val_set:
            ev = evaluate(model, val_set)
            row["val_iou2d"], row["val_iou3d"] = ev.mean2d, ev.mean3d
        if eval_train:
            ev = evaluate(model, train_set)
            row["train_iou2d"], row["train_iou3d"] = ev.mean2d, ev.mean3d
        row["seconds"] = time.perf_counter() - t0
        result.history.append(row)
        if log is not None:
            log(row)
        if cfg.time_budget and row["seconds"] > cfg.time_budget:
            break
    result.seconds = time.perf_counter() - t0
    return result
