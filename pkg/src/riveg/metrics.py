"""Geometry and agreement kernels: box IoU, mask IoU, Dice, Fleiss kappa."""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path
from typing import Any, Sequence

import numpy as np

from .corpus import BBox, RleMask, iter_jsonl
from .errors import DataError


def box_iou(a: BBox, b: BBox) -> float:
    """Intersection over union of two boxes, continuous-area convention."""
    if a.area <= 0 or b.area <= 0:
        raise ValueError("box_iou requires boxes with positive area")
    iw = min(a.x2, b.x2) - max(a.x1, b.x1)
    ih = min(a.y2, b.y2) - max(a.y1, b.y1)
    if iw <= 0 or ih <= 0:
        return 0.0
    inter = iw * ih
    union = a.area + b.area - inter
    return inter / union


def _mask_intersection(a: RleMask, b: RleMask) -> int:
    """Overlap pixel count computed directly on one-runs, without decoding."""
    runs_a = a.one_runs()
    runs_b = b.one_runs()
    i = j = 0
    inter = 0
    while i < len(runs_a) and j < len(runs_b):
        a_lo, a_hi = runs_a[i]
        b_lo, b_hi = runs_b[j]
        lo = max(a_lo, b_lo)
        hi = min(a_hi, b_hi)
        if hi > lo:
            inter += hi - lo
        if a_hi <= b_hi:
            i += 1
        else:
            j += 1
    return inter


def _check_mask_pair(a: RleMask, b: RleMask) -> None:
    if a.width != b.width or a.height != b.height:
        raise DataError(
            f"mask dimension mismatch: {a.width}x{a.height} vs {b.width}x{b.height}"
        )
    if a.area == 0 and b.area == 0:
        raise DataError("both masks are empty; overlap is undefined")


def mask_iou(a: RleMask, b: RleMask) -> float:
    """Pixel-level IoU of two masks on the same canvas."""
    _check_mask_pair(a, b)
    inter = _mask_intersection(a, b)
    union = a.area + b.area - inter
    return inter / union


def dice_coefficient(a: RleMask, b: RleMask) -> float:
    """Dice overlap 2|A∩B| / (|A|+|B|)."""
    _check_mask_pair(a, b)
    inter = _mask_intersection(a, b)
    return 2 * inter / (a.area + b.area)


@dataclass(frozen=True)
class AgreementTable:
    """Item-by-category rating counts with a constant rater count per item."""

    counts: np.ndarray

    def __post_init__(self) -> None:
        arr = np.asarray(self.counts)
        if arr.ndim != 2 or arr.shape[0] < 1 or arr.shape[1] < 1:
            raise ValueError(f"agreement table must be 2D and non-empty, got shape {arr.shape}")
        if not np.issubdtype(arr.dtype, np.integer):
            if not np.all(arr == np.floor(arr)):
                raise ValueError("agreement table entries must be integers")
            arr = arr.astype(np.int64)
        if np.any(arr < 0):
            raise ValueError("agreement table entries must be non-negative")
        row_sums = arr.sum(axis=1)
        r = int(row_sums[0])
        if np.any(row_sums != r):
            raise ValueError(f"row sums differ: {sorted(set(int(x) for x in row_sums))}")
        if r < 2:
            raise ValueError(f"need at least 2 raters per item, got {r}")
        object.__setattr__(self, "counts", arr)

    @property
    def raters(self) -> int:
        return int(self.counts[0].sum())


def fleiss_kappa(table: AgreementTable | Sequence[Sequence[int]] | np.ndarray) -> float:
    """Chance-corrected multi-rater agreement.

    Per-item agreement is (sum_j n_ij^2 - r) / (r (r - 1)); expected
    agreement is the sum of squared category proportions. The degenerate
    all-one-category table returns 1.0.
    """
    if not isinstance(table, AgreementTable):
        table = AgreementTable(np.asarray(table))
    counts = table.counts.astype(np.float64)
    n_items, _ = counts.shape
    r = float(table.raters)
    p_items = (np.sum(counts**2, axis=1) - r) / (r * (r - 1))
    p_bar = float(np.mean(p_items))
    p_cat = counts.sum(axis=0) / (n_items * r)
    p_e = float(np.sum(p_cat**2))
    if p_e >= 1.0:
        if p_bar == 1.0:
            return 1.0
        raise DataError("expected agreement is 1 but observed agreement is not")
    return (p_bar - p_e) / (1.0 - p_e)


@dataclass(frozen=True)
class DualAnnotation:
    """One item annotated independently by two raters.

    Categories may be explicit; when absent they derive from mask
    presence (groundable vs ungroundable).
    """

    item_id: str
    category_a: str
    category_b: str
    mask_a: RleMask | None = None
    mask_b: RleMask | None = None


def load_dual_annotations(path: str | Path) -> list[DualAnnotation]:
    """Read dual-annotation JSONL: {"id", "category_a"?, "category_b"?, "mask_a"?, "mask_b"?}."""
    out: list[DualAnnotation] = []
    for line_no, obj in iter_jsonl(path):
        where = f"{path}:{line_no}"
        if not isinstance(obj, dict) or "id" not in obj:
            raise DataError(f"{where}: expected an object with an id")
        masks: dict[str, RleMask | None] = {}
        for key in ("mask_a", "mask_b"):
            raw = obj.get(key)
            if raw is None:
                masks[key] = None
                continue
            try:
                masks[key] = RleMask.from_obj(raw)
            except (KeyError, TypeError, ValueError) as exc:
                raise DataError(f"{where}.{key}: {exc}") from None
        cat_a = obj.get("category_a")
        cat_b = obj.get("category_b")
        if cat_a is None:
            cat_a = "groundable" if masks["mask_a"] is not None else "ungroundable"
        if cat_b is None:
            cat_b = "groundable" if masks["mask_b"] is not None else "ungroundable"
        out.append(
            DualAnnotation(
                item_id=str(obj["id"]),
                category_a=str(cat_a),
                category_b=str(cat_b),
                mask_a=masks["mask_a"],
                mask_b=masks["mask_b"],
            )
        )
    if not out:
        raise DataError(f"{path}: no annotation pairs found")
    return out


def agreement_summary(
    annotations: Sequence[DualAnnotation], consistency_iou: float = 0.5
) -> dict[str, Any]:
    """Fleiss kappa over the two raters' categories plus mask-pair Dice.

    Mask pairs with IoU above consistency_iou count as consistent.
    """
    categories = sorted({a.category_a for a in annotations} | {a.category_b for a in annotations})
    index = {c: i for i, c in enumerate(categories)}
    table = np.zeros((len(annotations), len(categories)), dtype=np.int64)
    for i, ann in enumerate(annotations):
        table[i, index[ann.category_a]] += 1
        table[i, index[ann.category_b]] += 1
    kappa = fleiss_kappa(AgreementTable(table))
    dices = []
    consistent = 0
    for ann in annotations:
        if ann.mask_a is None or ann.mask_b is None:
            continue
        dices.append(dice_coefficient(ann.mask_a, ann.mask_b))
        if mask_iou(ann.mask_a, ann.mask_b) > consistency_iou:
            consistent += 1
    return {
        "n_items": len(annotations),
        "categories": categories,
        "fleiss_kappa": kappa,
        "n_mask_pairs": len(dices),
        "mean_dice": sum(dices) / len(dices) if dices else None,
        "consistent_fraction": consistent / len(dices) if dices else None,
    }
