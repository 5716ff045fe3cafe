"""The five-task evaluation protocol: MNER, GMNER, SMNER, EEG, EES,
plus TopN-Prec@IoU, threshold sweeps, and report emission.

Matching is greedy one-to-one in prediction order: each predicted triple
consumes at most one still-unconsumed gold entity that it fully matches.
Precision/recall are micro-averaged over the corpus.
"""

from __future__ import annotations

import io
import json
from dataclasses import dataclass
from pathlib import Path
from typing import Any, Iterable, Mapping, Sequence

from .corpus import BBox, DatasetSplit, EntityType, GoldEntity, RleMask, iter_jsonl
from .errors import DataError
from .metrics import box_iou, mask_iou
from .pipeline import PredictionRecord, PredictionTriple

TASKS = ("mner", "gmner", "smner", "eeg", "ees")


@dataclass(frozen=True)
class MatchPolicy:
    task: str
    iou_threshold: float = 0.5
    iou_rule: str = "gte"

    def __post_init__(self) -> None:
        if self.task not in TASKS:
            raise ValueError(f"task must be one of {TASKS}, got {self.task!r}")
        if not 0.0 <= self.iou_threshold < 1.0:
            raise ValueError(f"IoU threshold must be in [0,1), got {self.iou_threshold}")
        if self.iou_rule not in ("gte", "gt"):
            raise ValueError(f"IoU rule must be 'gte' or 'gt', got {self.iou_rule!r}")

    def passes(self, iou: float) -> bool:
        if self.iou_rule == "gte":
            return iou >= self.iou_threshold
        return iou > self.iou_threshold

    def to_obj(self) -> dict[str, Any]:
        return {"task": self.task, "iou_threshold": self.iou_threshold, "iou_rule": self.iou_rule}


@dataclass(frozen=True)
class ScoreReport:
    task: str
    precision: float
    recall: float
    f1: float
    n_pred: int
    n_gold: int
    n_correct: int
    policy: Mapping[str, Any]

    def to_obj(self) -> dict[str, Any]:
        return {
            "task": self.task,
            "precision": self.precision,
            "recall": self.recall,
            "f1": self.f1,
            "n_pred": self.n_pred,
            "n_gold": self.n_gold,
            "n_correct": self.n_correct,
            "policy": dict(self.policy),
        }


def _region_correct(pred: PredictionTriple, gold: GoldEntity, policy: MatchPolicy) -> bool:
    if not gold.boxes:
        return pred.box is None
    if pred.box is None:
        return False
    return any(policy.passes(box_iou(pred.box, g)) for g in gold.boxes)


def _mask_correct(pred: PredictionTriple, gold: GoldEntity, policy: MatchPolicy) -> bool:
    if not gold.masks:
        return pred.mask is None
    if pred.mask is None:
        return False
    return any(policy.passes(mask_iou(pred.mask, g)) for g in gold.masks)


def triple_correct(pred: PredictionTriple, gold: GoldEntity, policy: MatchPolicy) -> bool:
    """All elements the task cares about must be right."""
    if pred.start != gold.start or pred.end != gold.end:
        return False
    if policy.task in ("mner", "gmner", "smner") and pred.etype != gold.etype:
        return False
    if policy.task == "mner":
        return True
    if policy.task in ("gmner", "eeg"):
        return _region_correct(pred, gold, policy)
    return _mask_correct(pred, gold, policy)


def _f1(precision: float, recall: float) -> float:
    if precision + recall == 0:
        return 0.0
    return 2 * precision * recall / (precision + recall)


def score_task(
    gold: DatasetSplit,
    preds: Sequence[PredictionRecord],
    policy: MatchPolicy,
) -> ScoreReport:
    """Micro-averaged P/R/F1 over the split under greedy one-to-one matching."""
    by_id = gold.sample_by_id()
    n_gold = sum(len(s.entities) for s in gold.samples)
    n_pred = 0
    n_correct = 0
    consumed: dict[str, list[bool]] = {}
    for record in preds:
        if record.sample_id not in by_id:
            raise DataError(f"prediction references unknown sample id {record.sample_id!r}")
        sample = by_id[record.sample_id]
        flags = consumed.setdefault(record.sample_id, [False] * len(sample.entities))
        for triple in record.triples:
            n_pred += 1
            for gi, entity in enumerate(sample.entities):
                if flags[gi]:
                    continue
                if triple_correct(triple, entity, policy):
                    flags[gi] = True
                    n_correct += 1
                    break
    precision = n_correct / n_pred if n_pred else 0.0
    recall = n_correct / n_gold if n_gold else 0.0
    return ScoreReport(
        task=policy.task,
        precision=precision,
        recall=recall,
        f1=_f1(precision, recall),
        n_pred=n_pred,
        n_gold=n_gold,
        n_correct=n_correct,
        policy=policy.to_obj(),
    )


def iou_sweep(
    gold: DatasetSplit,
    preds: Sequence[PredictionRecord],
    task: str,
    thresholds: Sequence[float],
    iou_rule: str = "gte",
) -> list[tuple[float, ScoreReport]]:
    """One report per threshold; thresholds must be strictly increasing."""
    if not thresholds:
        raise DataError("at least one threshold is required")
    if any(b <= a for a, b in zip(thresholds, thresholds[1:])):
        raise DataError(f"thresholds must be strictly increasing, got {list(thresholds)}")
    out = []
    for threshold in thresholds:
        policy = MatchPolicy(task=task, iou_threshold=threshold, iou_rule=iou_rule)
        out.append((threshold, score_task(gold, preds, policy)))
    return out


def topn_prec_at(
    gold: DatasetSplit,
    candidates: Mapping[tuple[str, str], Sequence[tuple[BBox, float]]],
    n: int,
    threshold: float = 0.5,
) -> float:
    """Fraction of groundable gold entities hit by a top-n candidate box.

    Candidates rank by descending score, ties by list order; a hit is a
    candidate with IoU >= threshold against any gold box of the entity.
    """
    if n < 1:
        raise DataError(f"n must be >= 1, got {n}")
    total = 0
    hits = 0
    for sample in gold.samples:
        for entity in sample.entities:
            if not entity.groundable:
                continue
            total += 1
            ranked = sorted(
                enumerate(candidates.get((sample.id, entity.surface), [])),
                key=lambda item: (-item[1][1], item[0]),
            )
            top = [box for _, (box, _) in ranked[:n]]
            if any(box_iou(box, g) >= threshold for box in top for g in entity.boxes):
                hits += 1
    if total == 0:
        raise DataError("split has no groundable entities to score")
    return hits / total


def load_candidates(path: str | Path) -> dict[tuple[str, str], list[tuple[BBox, float]]]:
    """Read candidate boxes from JSONL {"id","surface","candidates"}."""
    out: dict[tuple[str, str], list[tuple[BBox, float]]] = {}
    for line_no, obj in iter_jsonl(path):
        where = f"{path}:{line_no}"
        if not isinstance(obj, dict) or not {"id", "surface", "candidates"} <= set(obj):
            raise DataError(f"{where}: expected an object with id, surface and candidates")
        entries = []
        for i, cand in enumerate(obj["candidates"]):
            if not isinstance(cand, dict) or "box" not in cand or "score" not in cand:
                raise DataError(f"{where}: candidates[{i}] must carry box and score")
            try:
                entries.append((BBox(*[float(v) for v in cand["box"]]), float(cand["score"])))
            except (TypeError, ValueError) as exc:
                raise DataError(f"{where}: candidates[{i}]: {exc}") from None
        out[(str(obj["id"]), str(obj["surface"]))] = entries
    return out


def _triple_to_obj(triple: PredictionTriple) -> dict[str, Any]:
    return {
        "surface": triple.surface,
        "start": triple.start,
        "end": triple.end,
        "type": triple.etype.value,
        "box": triple.box.as_list() if triple.box is not None else None,
        "mask": triple.mask.to_obj() if triple.mask is not None else None,
    }


def predictions_to_bytes(records: Iterable[PredictionRecord]) -> bytes:
    """Canonical JSONL serialization of prediction records."""
    buf = io.StringIO()
    for record in records:
        obj = {
            "id": record.sample_id,
            "triples": [_triple_to_obj(t) for t in record.triples],
        }
        buf.write(json.dumps(obj, ensure_ascii=False) + "\n")
    return buf.getvalue().encode("utf-8")


def write_predictions(records: Iterable[PredictionRecord], path: str | Path) -> None:
    Path(path).write_bytes(predictions_to_bytes(records))


def read_predictions(path: str | Path) -> list[PredictionRecord]:
    records: list[PredictionRecord] = []
    for line_no, obj in iter_jsonl(path):
        where = f"{path}:{line_no}"
        if not isinstance(obj, dict) or "id" not in obj or "triples" not in obj:
            raise DataError(f"{where}: expected an object with id and triples")
        triples = []
        for i, t in enumerate(obj["triples"]):
            t_where = f"{where}.triples[{i}]"
            if not isinstance(t, dict):
                raise DataError(f"{t_where}: expected an object")
            try:
                box = BBox(*[float(v) for v in t["box"]]) if t.get("box") is not None else None
                mask = RleMask.from_obj(t["mask"]) if t.get("mask") is not None else None
                triples.append(
                    PredictionTriple(
                        surface=str(t["surface"]),
                        start=int(t["start"]),
                        end=int(t["end"]),
                        etype=EntityType(t["type"]),
                        box=box,
                        mask=mask,
                    )
                )
            except (KeyError, TypeError, ValueError) as exc:
                raise DataError(f"{t_where}: {exc}") from None
        records.append(PredictionRecord(str(obj["id"]), tuple(triples)))
    return records


def _fmt(x: float) -> str:
    return f"{x:.4f}"


def emit_report(reports: Sequence[ScoreReport], format: str = "json") -> bytes:
    """Deterministic serialization of one or more score reports."""
    if format == "json":
        obj = {"reports": [r.to_obj() for r in reports]}
        return (json.dumps(obj, sort_keys=True, ensure_ascii=False) + "\n").encode("utf-8")
    if format == "markdown":
        lines = [
            "| Task | Pre. | Rec. | F1 | Correct | Pred | Gold |",
            "| --- | --- | --- | --- | --- | --- | --- |",
        ]
        for r in reports:
            lines.append(
                f"| {r.task.upper()} | {_fmt(r.precision)} | {_fmt(r.recall)} | "
                f"{_fmt(r.f1)} | {r.n_correct} | {r.n_pred} | {r.n_gold} |"
            )
        return ("\n".join(lines) + "\n").encode("utf-8")
    raise DataError(f"unknown report format {format!r}")


def emit_sweep(sweep: Sequence[tuple[float, ScoreReport]], format: str = "json") -> bytes:
    """Deterministic serialization of an IoU threshold sweep."""
    if format == "json":
        obj = {
            "sweep": [
                {"threshold": threshold, "report": report.to_obj()}
                for threshold, report in sweep
            ]
        }
        return (json.dumps(obj, sort_keys=True, ensure_ascii=False) + "\n").encode("utf-8")
    if format == "markdown":
        lines = [
            "| IoU | Task | Pre. | Rec. | F1 | Correct | Pred | Gold |",
            "| --- | --- | --- | --- | --- | --- | --- | --- |",
        ]
        for threshold, r in sweep:
            lines.append(
                f"| {threshold:g} | {r.task.upper()} | {_fmt(r.precision)} | "
                f"{_fmt(r.recall)} | {_fmt(r.f1)} | {r.n_correct} | {r.n_pred} | {r.n_gold} |"
            )
        return ("\n".join(lines) + "\n").encode("utf-8")
    raise DataError(f"unknown report format {format!r}")
