"""On-disk formats: corner annotations, floor plans, predictions, weights, raw arrays."""

from __future__ import annotations

import json
from pathlib import Path
from typing import Dict, List, Optional, Sequence, Tuple, Union

import numpy as np

from .errors import InvalidAnnotationError
from .geometry import CornerAnnotation, FloorPlan, LayoutBoundaries

PathLike = Union[str, Path]


# ---------------------------------------------------------------------------
# corner annotations: one "u v" pair per line, ceiling/floor alternating


def parse_annotation(text: str) -> CornerAnnotation:
    rows = []
    for lineno, line in enumerate(text.splitlines(), 1):
        line = line.strip()
        if not line or line.startswith("#"):
            continue
        parts = line.split()
        if len(parts) != 2:
            raise InvalidAnnotationError(f"line {lineno}: expected 'u v', got {line!r}")
        try:
            rows.append((float(parts[0]), float(parts[1])))
        except ValueError as exc:
            raise InvalidAnnotationError(f"line {lineno}: {exc}") from exc
    if len(rows) % 2:
        raise InvalidAnnotationError(f"odd number of corner lines ({len(rows)})")
    return CornerAnnotation(np.array(rows, dtype=float)).validate()


def format_annotation(ann: CornerAnnotation) -> str:
    return "".join(f"{float(u)!r} {float(v)!r}\n" for u, v in ann.corners)


def read_annotation(path: PathLike) -> CornerAnnotation:
    return parse_annotation(Path(path).read_text())


def write_annotation(path: PathLike, ann: CornerAnnotation) -> None:
    Path(path).write_text(format_annotation(ann))


def read_manifest(path: PathLike) -> List[Tuple[Path, Path]]:
    """``image_path<TAB>annot_path`` per line; relative paths resolve against the manifest."""
    path = Path(path)
    pairs = []
    for lineno, line in enumerate(path.read_text().splitlines(), 1):
        if not line.strip():
            continue
        parts = line.split("\t")
        if len(parts) != 2:
            raise ValueError(f"{path}:{lineno}: expected two tab-separated paths")
        pairs.append(tuple((path.parent / p.strip()) for p in parts))
    return pairs


# ---------------------------------------------------------------------------
# floor plans and predictions (JSON documents)


def floorplan_to_dict(fp: FloorPlan) -> dict:
    return {"kind": "floorplan", "vertices": fp.vertices.tolist(), "floor_y": fp.floor_y, "ceil_y": fp.ceil_y}


def floorplan_from_dict(d: dict) -> FloorPlan:
    return FloorPlan(np.asarray(d["vertices"], dtype=float), d["floor_y"], d["ceil_y"])


def prediction_to_dict(b: LayoutBoundaries, corners: Sequence[int], identifier: str = "") -> dict:
    return {
        "kind": "prediction",
        "id": identifier,
        "width": int(b.width),
        "y_c": b.y_c.tolist(),
        "y_f": b.y_f.tolist(),
        "y_w": b.y_w.tolist(),
        "corners": [int(c) for c in corners],
    }


def prediction_from_dict(d: dict) -> Tuple[LayoutBoundaries, List[int]]:
    return LayoutBoundaries(d["y_c"], d["y_f"], d["y_w"]), [int(c) for c in d["corners"]]


def write_json(path: PathLike, doc: dict) -> None:
    Path(path).write_text(json.dumps(doc, indent=1) + "\n")


def read_json(path: PathLike) -> dict:
    return json.loads(Path(path).read_text())


# ---------------------------------------------------------------------------
# weights: flat little-endian float64 blob plus a JSON manifest


def save_weights(stem: PathLike, arrays: Dict[str, np.ndarray], meta: Optional[dict] = None) -> None:
    stem = Path(stem)
    entries = []
    offset = 0
    with open(stem.with_suffix(".bin"), "wb") as fh:
        for name, arr in arrays.items():
            a = np.array(arr, dtype="<f8", order="C")
            fh.write(a.tobytes())
            entries.append({"name": name, "shape": list(a.shape), "offset": offset, "count": int(a.size)})
            offset += a.size
    manifest = {"dtype": "float64-le", "arrays": entries, "meta": meta or {}}
    write_json(stem.with_suffix(".json"), manifest)


def load_weights(stem: PathLike) -> Tuple[Dict[str, np.ndarray], dict]:
    stem = Path(stem)
    manifest = read_json(stem.with_suffix(".json"))
    blob = np.fromfile(stem.with_suffix(".bin"), dtype="<f8")
    arrays = {}
    for e in manifest["arrays"]:
        chunk = blob[e["offset"]:e["offset"] + e["count"]]
        arrays[e["name"]] = chunk.reshape(tuple(e["shape"])).astype(np.float64)
    return arrays, manifest.get("meta", {})


# ---------------------------------------------------------------------------
# raw array dumps


def save_raw(path: PathLike, arr: np.ndarray) -> None:
    np.save(path, np.asarray(arr, dtype=np.float64), allow_pickle=False)


def load_raw(path: PathLike) -> np.ndarray:
    return np.load(path, allow_pickle=False)


def to_uint8(arr: np.ndarray) -> np.ndarray:
    """Min-max scale to 0..255 (constant input maps to 0)."""
    a = np.asarray(arr, dtype=float)
    lo, hi = a.min(), a.max()
    if hi - lo <= 0:
        return np.zeros(a.shape, dtype=np.uint8)
    return np.round((a - lo) / (hi - lo) * 255).astype(np.uint8)
