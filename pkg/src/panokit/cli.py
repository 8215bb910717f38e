"""``panokit`` command line: enhance, render-gt, train-toy, infer, eval, gradcheck.

Results go to stdout as tab-separated rows; figures and data files go under
``--out``. Exit codes: 0 success, 1 runtime failure, 2 usage or input error.
"""

from __future__ import annotations

import argparse
import os
import sys
from dataclasses import fields
from pathlib import Path
from typing import Dict, List, Optional, Sequence

import numpy as np
from PIL import Image, UnidentifiedImageError

from . import io as pio
from . import plotting
from .config import PUBLISHED_DEFAULTS, HELP, RunConfig, build_config, format_config, help_table
from .dataset import load_image, synth_dataset
from .edge_enhance import FreqMaskParams, enhance
from .errors import ConfigurationError, InvalidAnnotationError, PanokitError
from .geometry import (
    CornerAnnotation,
    FloorPlan,
    LayoutBoundaries,
    annotation_ceiling_height,
    annotation_floor_polygon,
    corner_columns,
    corners_to_boundaries,
)
from .gradcheck import format_report, run_suite, SECTIONS
from .layout_head import HeadOutput
from .model import LayoutModel
from .training import EvalResult, extract_corners, extract_floorplan, predict, score_plans, train

USAGE_ERRORS = (FileNotFoundError, IsADirectoryError, ConfigurationError, InvalidAnnotationError,
                UnidentifiedImageError, KeyError)


class UsageError(Exception):
    """Bad arguments or inputs; exit code 2."""


def _emit(*cols) -> None:
    print("\t".join(str(c) for c in cols))


def _fmt(x: float) -> str:
    return f"{x:.6f}"


def _require(path: Path) -> Path:
    if not Path(path).exists():
        raise UsageError(f"no such file: {path}")
    return Path(path)


# ---------------------------------------------------------------------------
# enhance


def cmd_enhance(args) -> int:
    params = FreqMaskParams(args.alpha, args.beta, args.theta)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    for path in args.images:
        _require(path)
        with Image.open(path) as im:
            W0, H0 = im.size
        W = args.width or W0
        H = args.height or H0
        image, _ = load_image(path, W, H)
        x = enhance(image, params)
        e_v, e_h = x[3], x[4]
        stem = Path(path).stem
        for name, arr in (("ev", e_v), ("eh", e_h)):
            pio.save_raw(out / f"{stem}_{name}.npy", arr)
            Image.fromarray(pio.to_uint8(arr)).save(out / f"{stem}_{name}.png")
            _emit(stem, name, out / f"{stem}_{name}.npy", out / f"{stem}_{name}.png")
        fig = plotting.edge_maps(image, e_v, e_h, out / f"{stem}_edges.png")
        _emit(stem, "figure", fig)
    return 0


# ---------------------------------------------------------------------------
# render-gt


def _plan_from_annotation(ann, W: int, H: int) -> FloorPlan:
    return FloorPlan(annotation_floor_polygon(ann, W, H), -1.0, annotation_ceiling_height(ann, W, H))


def cmd_render_gt(args) -> int:
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    if args.synthetic:
        kinds = ("box", "L") if args.kind == "mixed" else (args.kind,)
        samples = synth_dataset(args.seed, args.synthetic, args.width, args.height, kinds, prefix="room")
        lines = []
        for s in samples:
            img_path = out / f"{s.identifier}.png"
            ann_path = out / f"{s.identifier}.txt"
            Image.fromarray(np.round(np.moveaxis(s.image, 0, -1) * 255).astype(np.uint8)).save(img_path)
            pio.write_annotation(ann_path, s.annotation)
            pio.write_json(out / f"{s.identifier}.floorplan.json", pio.floorplan_to_dict(s.floorplan()))
            lines.append(f"{img_path.name}\t{ann_path.name}\n")
            _emit(s.identifier, s.n_walls, _fmt(s.ceil_height), img_path, ann_path)
        (out / "manifest.tsv").write_text("".join(lines))
        return 0
    if not args.annotation:
        raise UsageError("render-gt needs an annotation file or --synthetic N")
    ann = pio.read_annotation(_require(args.annotation))
    W, H = args.width, args.height
    image = None
    if args.image:
        _require(args.image)
        with Image.open(args.image) as im:
            W0, H0 = im.size
        image, _ = load_image(args.image, W, H)
        ann = CornerAnnotation(ann.corners * np.array([W / W0, H / H0])).validate()
    b = corners_to_boundaries(ann, W, H, args.sigma or None)
    stem = Path(args.annotation).stem
    cols = sorted(set(corner_columns(ann.floor[:, 0], W).tolist()))
    pio.write_json(out / f"{stem}.json", pio.prediction_to_dict(b, cols, stem))
    plan = _plan_from_annotation(ann, W, H)
    pio.write_json(out / f"{stem}.floorplan.json", pio.floorplan_to_dict(plan))
    _emit(stem, ann.n_walls, _fmt(plan.ceil_y), out / f"{stem}.json")
    if image is not None:
        fig = plotting.layout_overlay(image, b.y_c, b.y_f, out / f"{stem}_gt.png", corners=cols,
                                      floor=(None, plan.vertices))
        _emit(stem, "figure", fig)
    return 0


# ---------------------------------------------------------------------------
# train-toy


def _config_from_args(args) -> RunConfig:
    overrides: Dict[str, str] = {}
    for f in fields(RunConfig):
        val = getattr(args, f"cfg_{f.name}", None)
        if val is not None:
            overrides[f.name] = str(val)
    for item in args.set or ():
        if "=" not in item:
            raise ConfigurationError(f"--set expects key=value, got {item!r}")
        k, v = item.split("=", 1)
        overrides[k.strip()] = v.strip()
    return build_config(args.preset, args.config, overrides)


def _model_meta(cfg: RunConfig) -> dict:
    return {"run_config": cfg.to_dict()}


def _model_from_weights(stem) -> LayoutModel:
    stem = Path(stem)
    _require(stem.with_suffix(".json"))
    arrays, meta = pio.load_weights(stem)
    cfg = RunConfig(**meta["run_config"])
    model = LayoutModel(cfg.model_config(), seed=cfg.seed)
    model.load_state_arrays(arrays)
    return model


# wall-clock time is left out so seeded runs produce identical logs
HISTORY_KEYS = ("epoch", "loss", "corner", "boundary", "val_iou2d", "val_iou3d", "train_iou2d", "train_iou3d")


def cmd_train_toy(args) -> int:
    cfg = _config_from_args(args)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    (out / "config.txt").write_text(format_config(cfg))
    keys: List[str] = []
    rows: List[str] = []

    def log(row):
        if not keys:
            keys.extend(k for k in HISTORY_KEYS if k in row)
            _emit(*keys)
            rows.append("\t".join(keys) + "\n")
        vals = [row[k] if k == "epoch" else _fmt(row[k]) for k in keys]
        _emit(*vals)
        sys.stdout.flush()
        rows.append("\t".join(str(v) for v in vals) + "\n")

    result = train(cfg, log, eval_train=args.eval_train)
    (out / "metrics.tsv").write_text("".join(rows))
    pio.save_weights(out / "model", result.model.state_arrays(), _model_meta(cfg))
    fig = plotting.training_curves(result.history, out / "curves.png")
    print(f"# {result.seconds:.1f} s  weights {out / 'model.bin'}  metrics {out / 'metrics.tsv'}  figure {fig}",
          file=sys.stderr)
    return 0


# ---------------------------------------------------------------------------
# infer


def cmd_infer(args) -> int:
    model = _model_from_weights(args.weights)
    cfg = model.cfg
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    paths = [_require(p) for p in args.images]
    images = np.stack([load_image(p, cfg.width, cfg.height)[0] for p in paths])
    preds = predict(model, images)
    status = 0
    for p, img, pred in zip(paths, images, preds):
        stem = p.stem
        b = LayoutBoundaries(pred.y_c, pred.y_f, pred.y_w)
        try:
            cols = extract_corners(pred.y_w)
            plan = extract_floorplan(pred)
        except PanokitError as exc:
            print(f"{stem}: {exc}", file=sys.stderr)
            cols, plan, status = [], None, 1
        pio.write_json(out / f"{stem}.json", pio.prediction_to_dict(b, cols, stem))
        if plan is not None:
            pio.write_json(out / f"{stem}.floorplan.json", pio.floorplan_to_dict(plan))
        fig = plotting.layout_overlay(img, pred.y_c, pred.y_f, out / f"{stem}_layout.png", corners=cols,
                                      floor=(plan.vertices, None) if plan is not None else None)
        _emit(stem, len(cols), _fmt(plan.ceil_y) if plan else "nan", out / f"{stem}.json", fig)
    return status


# ---------------------------------------------------------------------------
# eval


def corner_bucket(n_walls: int) -> str:
    return "10+" if n_walls >= 10 else str(n_walls)


def _bucket_key(label: str) -> int:
    return int(label.rstrip("+"))


def group_results(res: EvalResult) -> Dict[str, Dict[str, float]]:
    groups: Dict[str, List[int]] = {}
    for i, n in enumerate(res.n_walls):
        groups.setdefault(corner_bucket(n), []).append(i)
    out = {}
    for label in sorted(groups, key=_bucket_key):
        idx = groups[label]
        out[label] = {"count": len(idx), "iou2d": float(np.mean(res.iou2d[idx])),
                      "iou3d": float(np.mean(res.iou3d[idx]))}
    return out


def _load_plan(path: Path, W: Optional[int], H: Optional[int]):
    """Floor plan and wall count from a prediction, floor-plan or annotation file."""
    if path.suffix == ".txt":
        ann = pio.read_annotation(path)
        if not W:
            raise UsageError("annotation ground truth needs --width")
        H = H or W // 2
        return _plan_from_annotation(ann, W, H), ann.n_walls
    doc = pio.read_json(path)
    if doc.get("kind") == "floorplan":
        plan = pio.floorplan_from_dict(doc)
        return plan, len(plan.vertices)
    if doc.get("kind") == "prediction":
        b, _ = pio.prediction_from_dict(doc)
        plan = extract_floorplan(HeadOutput(b.y_w, b.y_c, b.y_f))
        return plan, len(plan.vertices)
    raise UsageError(f"{path}: unrecognised document kind {doc.get('kind')!r}")


def _index(directory: Path) -> Dict[str, Path]:
    """Identifier → file, preferring floor-plan documents over raw predictions."""
    found: Dict[str, Path] = {}
    rank = {".floorplan.json": 0, ".json": 1, ".txt": 2}
    for p in sorted(directory.iterdir()):
        for suffix, r in rank.items():
            if p.name.endswith(suffix):
                ident = p.name[: -len(suffix)]
                if ident not in found or rank[_suffix(found[ident])] > r:
                    found[ident] = p
                break
    return found


def _suffix(p: Path) -> str:
    return ".floorplan.json" if p.name.endswith(".floorplan.json") else p.suffix


def cmd_eval(args) -> int:
    pred_dir, gt_dir = _require(Path(args.pred)), _require(Path(args.gt))
    preds, gts = _index(pred_dir), _index(gt_dir)
    ids = sorted(set(preds) & set(gts))
    if not ids:
        raise UsageError("prediction and ground-truth directories share no identifiers")
    pairs, walls = [], []
    for ident in ids:
        gt_plan, n = _load_plan(gts[ident], args.width, args.height)
        try:
            pred_plan, _ = _load_plan(preds[ident], args.width, args.height)
        except PanokitError as exc:
            print(f"{ident}: {exc}", file=sys.stderr)
            pred_plan = None
        pairs.append((pred_plan, gt_plan))
        walls.append(n)
    res = score_plans(pairs, ids, walls)
    _emit("id", "corners", "iou2d", "iou3d")
    for i, ident in enumerate(ids):
        _emit(ident, walls[i], _fmt(res.iou2d[i]), _fmt(res.iou3d[i]))
    groups = group_results(res)
    for label, g in groups.items():
        _emit(f"group:{label}", g["count"], _fmt(g["iou2d"]), _fmt(g["iou3d"]))
    _emit("mean", len(ids), _fmt(res.mean2d), _fmt(res.mean3d))
    if args.out:
        out = Path(args.out)
        out.mkdir(parents=True, exist_ok=True)
        fig = plotting.iou_by_group(groups, out / "iou_by_corners.png")
        print(f"# figure {fig}", file=sys.stderr)
    return 0


# ---------------------------------------------------------------------------
# gradcheck


def cmd_gradcheck(args) -> int:
    results = run_suite(args.seed, args.section or None, args.tol)
    print(format_report(results))
    if args.out:
        fig = plotting.gradcheck_errors([r.name for r in results], [r.max_rel_err for r in results],
                                        args.tol, Path(args.out) / "gradcheck.png")
        print(f"# figure {fig}", file=sys.stderr)
    return 0 if all(r.passed for r in results) else 1


# ---------------------------------------------------------------------------
# parser


def _bool(text: str) -> str:
    if text.lower() not in ("1", "0", "true", "false", "yes", "no", "on", "off"):
        raise argparse.ArgumentTypeError(f"expected a boolean, got {text!r}")
    return text


def _add_config_flags(p: argparse.ArgumentParser) -> None:
    g = p.add_argument_group("settings (desk default | published default)")
    for f in fields(RunConfig):
        published = PUBLISHED_DEFAULTS.get(f.name, "-")
        kind = _bool if isinstance(f.default, bool) else type(f.default)
        g.add_argument(f"--{f.name.replace('_', '-')}", dest=f"cfg_{f.name}", type=kind, default=None,
                       metavar=type(f.default).__name__.upper(),
                       help=f"{HELP.get(f.name, '')} [desk {f.default} | published {published}]")


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="panokit", description=__doc__,
                                 formatter_class=argparse.RawDescriptionHelpFormatter)
    sub = ap.add_subparsers(dest="command", required=True)

    p = sub.add_parser("enhance", help="write vertical/horizontal FFT edge maps")
    p.add_argument("images", nargs="+", type=Path)
    p.add_argument("--out", default="enhance_out")
    p.add_argument("--width", type=int, default=0, help="resize width (0 = keep)")
    p.add_argument("--height", type=int, default=0, help="resize height (0 = keep)")
    p.add_argument("--alpha", type=float, default=20.0)
    p.add_argument("--beta", type=float, default=25.0)
    p.add_argument("--theta", type=float, default=100.0)
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=cmd_enhance)

    p = sub.add_parser("render-gt", help="render boundaries and floor plan from corners, or write synthetic rooms")
    p.add_argument("annotation", nargs="?", type=Path)
    p.add_argument("--image", type=Path)
    p.add_argument("--synthetic", type=int, default=0, metavar="N", help="write N synthetic rooms instead")
    p.add_argument("--kind", choices=("box", "L", "mixed"), default="mixed")
    p.add_argument("--width", type=int, default=1024)
    p.add_argument("--height", type=int, default=512)
    p.add_argument("--sigma", type=float, default=0.0, help="Gaussian corner width in columns")
    p.add_argument("--out", default="gt_out")
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=cmd_render_gt)

    p = sub.add_parser("train-toy", help="train on synthetic rooms",
                       formatter_class=argparse.RawDescriptionHelpFormatter,
                       epilog="setting          desk     published\n" + "\n".join(help_table()))
    p.add_argument("--preset", default="desk")
    p.add_argument("--config", type=Path, help="key=value settings file")
    p.add_argument("--set", action="append", metavar="KEY=VALUE", help="override one setting")
    p.add_argument("--out", default="train_out")
    p.add_argument("--eval-train", action="store_true", help="also report IoU on the training rooms")
    _add_config_flags(p)
    p.set_defaults(func=cmd_train_toy)

    p = sub.add_parser("infer", help="predict layouts with trained weights")
    p.add_argument("images", nargs="+", type=Path)
    p.add_argument("--weights", required=True, type=Path, help="weights stem (model.bin / model.json)")
    p.add_argument("--out", default="infer_out")
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=cmd_infer)

    p = sub.add_parser("eval", help="2D/3D IoU of predictions against ground truth")
    p.add_argument("pred", type=Path)
    p.add_argument("gt", type=Path)
    p.add_argument("--width", type=int, default=0, help="image width for annotation ground truth")
    p.add_argument("--height", type=int, default=0)
    p.add_argument("--out")
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("gradcheck", help="finite-difference check of every backward pass")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--section", action="append", choices=sorted(SECTIONS))
    p.add_argument("--tol", type=float, default=1e-4)
    p.add_argument("--out")
    p.set_defaults(func=cmd_gradcheck)
    return ap


def _thread_limit():
    text = os.environ.get("PANOKIT_THREADS")
    if not text:
        return None
    try:
        n = int(text)
    except ValueError:
        raise UsageError(f"PANOKIT_THREADS must be an integer, got {text!r}")
    if n < 1:
        raise UsageError("PANOKIT_THREADS must be >= 1")
    from threadpoolctl import threadpool_limits
    return threadpool_limits(limits=n)


def main(argv: Optional[Sequence[str]] = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    try:
        limiter = _thread_limit()
        try:
            return args.func(args)
        finally:
            if limiter is not None:
                limiter.restore_original_limits()
    except (UsageError, *USAGE_ERRORS) as exc:
        print(f"panokit {args.command}: {exc}", file=sys.stderr)
        return 2
    except PanokitError as exc:
        print(f"panokit {args.command}: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
