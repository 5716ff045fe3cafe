"""Canonical data model for grounded/segmented multimodal NER corpora.

Covers the gold JSONL schema, sample validation, the uncompressed
column-major RLE mask codec, box rasterization, and split statistics.
"""

from __future__ import annotations

import json
import logging
import math
from dataclasses import dataclass, field
from enum import Enum
from pathlib import Path
from typing import Any, Iterator, Mapping, Sequence

import numpy as np

from .errors import DataError

log = logging.getLogger("riveg.corpus")

SPLIT_NAMES = ("train", "dev", "test")


class EntityType(str, Enum):
    PER = "PER"
    LOC = "LOC"
    ORG = "ORG"
    MISC = "MISC"


ENTITY_TYPES: tuple[EntityType, ...] = (
    EntityType.PER,
    EntityType.LOC,
    EntityType.ORG,
    EntityType.MISC,
)


@dataclass(frozen=True)
class BBox:
    """Continuous box, top-left (x1, y1) to bottom-right (x2, y2)."""

    x1: float
    y1: float
    x2: float
    y2: float

    def __post_init__(self) -> None:
        for name in ("x1", "y1", "x2", "y2"):
            v = getattr(self, name)
            if isinstance(v, bool) or not isinstance(v, (int, float)) or not math.isfinite(v):
                raise ValueError(f"box coordinate {name} must be finite, got {v!r}")
            if v < 0:
                raise ValueError(f"box coordinate {name} must be >= 0, got {v}")
            object.__setattr__(self, name, float(v))
        if not self.x1 < self.x2 or not self.y1 < self.y2:
            raise ValueError(
                f"degenerate box ({self.x1}, {self.y1}, {self.x2}, {self.y2}): "
                "require x1 < x2 and y1 < y2"
            )

    @property
    def area(self) -> float:
        return (self.x2 - self.x1) * (self.y2 - self.y1)

    def clamped(self, width: int, height: int) -> "BBox":
        """Clamp to an image canvas; raises if nothing remains inside."""
        x1 = min(max(self.x1, 0.0), float(width))
        y1 = min(max(self.y1, 0.0), float(height))
        x2 = min(max(self.x2, 0.0), float(width))
        y2 = min(max(self.y2, 0.0), float(height))
        if not x1 < x2 or not y1 < y2:
            raise ValueError(
                f"box ({self.x1}, {self.y1}, {self.x2}, {self.y2}) lies outside "
                f"a {width}x{height} image"
            )
        return BBox(x1, y1, x2, y2)

    def as_list(self) -> list[float]:
        return [self.x1, self.y1, self.x2, self.y2]


@dataclass(frozen=True)
class RleMask:
    """Binary mask as column-major run lengths; the first run counts zeros.

    Pixel order is column by column (x major, y minor within a column).
    Runs alternate zero/one; only the leading zero run may be empty.
    """

    width: int
    height: int
    counts: tuple[int, ...]

    def __post_init__(self) -> None:
        if self.width < 1 or self.height < 1:
            raise ValueError(f"mask dimensions must be >= 1, got {self.width}x{self.height}")
        if not self.counts:
            raise ValueError("mask counts must be non-empty")
        clean = []
        for i, c in enumerate(self.counts):
            if isinstance(c, bool) or (isinstance(c, float) and not c.is_integer()):
                raise ValueError(f"mask counts[{i}] is not an integer: {c!r}")
            c = int(c)
            if c < 0:
                raise ValueError(f"mask counts[{i}] is negative: {c}")
            if c == 0 and i != 0:
                raise ValueError(f"mask counts[{i}] is a non-leading zero run")
            clean.append(c)
        counts = tuple(clean)
        object.__setattr__(self, "counts", counts)
        total = sum(counts)
        if total != self.width * self.height:
            raise ValueError(
                f"mask counts sum to {total}, expected width*height = "
                f"{self.width * self.height}"
            )

    @property
    def area(self) -> int:
        """Number of one-pixels."""
        return int(sum(self.counts[1::2]))

    def one_runs(self) -> list[tuple[int, int]]:
        """Half-open [start, end) intervals of one-pixels in flat pixel order."""
        runs = []
        pos = 0
        for i, c in enumerate(self.counts):
            if i % 2 == 1 and c > 0:
                runs.append((pos, pos + c))
            pos += c
        return runs

    def to_obj(self) -> dict[str, Any]:
        return {"w": self.width, "h": self.height, "counts": list(self.counts)}

    @classmethod
    def from_obj(cls, obj: Mapping[str, Any]) -> "RleMask":
        w, h = obj["w"], obj["h"]
        for name, v in (("w", w), ("h", h)):
            if isinstance(v, bool) or not isinstance(v, int):
                raise ValueError(f"mask {name} must be an integer, got {v!r}")
        return cls(width=w, height=h, counts=tuple(obj["counts"]))


def rle_encode(bitmap: np.ndarray | Sequence[Sequence[bool]]) -> RleMask:
    """Encode a (height, width) boolean grid into an RleMask."""
    arr = np.asarray(bitmap, dtype=bool)
    if arr.ndim != 2 or arr.shape[0] < 1 or arr.shape[1] < 1:
        raise ValueError(f"bitmap must be a 2D grid with both dims >= 1, got shape {arr.shape}")
    height, width = arr.shape
    flat = arr.flatten(order="F")
    # Run boundaries: indices where the value changes, plus both ends.
    changes = np.flatnonzero(flat[1:] != flat[:-1]) + 1
    bounds = np.concatenate(([0], changes, [flat.size]))
    runs = np.diff(bounds)
    counts: list[int] = [int(c) for c in runs]
    if flat[0]:
        counts.insert(0, 0)
    return RleMask(width=width, height=height, counts=tuple(counts))


def rle_decode(mask: RleMask) -> np.ndarray:
    """Decode an RleMask back into a (height, width) boolean grid."""
    total = sum(mask.counts)
    if total != mask.width * mask.height:
        raise DataError(
            f"mask counts sum to {total}, expected {mask.width * mask.height}"
        )
    values = np.arange(len(mask.counts)) % 2 == 1
    flat = np.repeat(values, np.asarray(mask.counts, dtype=np.int64))
    return flat.reshape((mask.height, mask.width), order="F")


def rasterize_box(box: BBox, width: int, height: int) -> RleMask:
    """Half-open rasterization of a box onto an integer pixel grid.

    Pixel (x, y) is filled iff x1 <= x < x2 and y1 <= y < y2. For
    integer boxes the pixel count equals the continuous area.
    """
    grid = np.zeros((height, width), dtype=bool)
    x_lo = max(math.ceil(box.x1), 0)
    x_hi = min(math.ceil(box.x2), width)
    y_lo = max(math.ceil(box.y1), 0)
    y_hi = min(math.ceil(box.y2), height)
    if x_lo < x_hi and y_lo < y_hi:
        grid[y_lo:y_hi, x_lo:x_hi] = True
    return rle_encode(grid)


@dataclass(frozen=True)
class ImageInfo:
    path: str
    width: int
    height: int


@dataclass(frozen=True)
class GoldEntity:
    surface: str
    start: int
    end: int
    etype: EntityType
    boxes: tuple[BBox, ...] = ()
    masks: tuple[RleMask, ...] = ()

    @property
    def groundable(self) -> bool:
        return len(self.boxes) > 0


@dataclass(frozen=True)
class Sample:
    id: str
    tokens: tuple[str, ...]
    image: ImageInfo
    entities: tuple[GoldEntity, ...] = ()
    caption: str | None = None
    description: str | None = None
    knowledge: Mapping[str, str] | None = None


@dataclass(frozen=True)
class DatasetSplit:
    name: str
    samples: tuple[Sample, ...]

    def __post_init__(self) -> None:
        if self.name not in SPLIT_NAMES:
            raise ValueError(f"split name must be one of {SPLIT_NAMES}, got {self.name!r}")

    def sample_by_id(self) -> dict[str, Sample]:
        return {s.id: s for s in self.samples}


@dataclass(frozen=True)
class Violation:
    """One broken sample invariant; names the offending field and rule."""

    field: str
    rule: str
    message: str

    def __str__(self) -> str:
        return f"{self.field}: {self.rule}: {self.message}"


def validate_sample(sample: Sample) -> list[Violation]:
    """Check all sample-level invariants; violations are data, not errors."""
    out: list[Violation] = []
    n = len(sample.tokens)
    if n < 1:
        out.append(Violation("tokens", "non-empty", "sample has no tokens"))
    if sample.image.width < 1 or sample.image.height < 1:
        out.append(
            Violation(
                "image",
                "positive-dims",
                f"image dims {sample.image.width}x{sample.image.height}",
            )
        )
    seen: dict[tuple[int, int, EntityType], int] = {}
    for i, ent in enumerate(sample.entities):
        label = f"entities[{i}]"
        if not (0 <= ent.start < ent.end <= n):
            out.append(
                Violation(
                    label,
                    "offset-range",
                    f"entity offset out of range: [{ent.start},{ent.end}) with {n} tokens",
                )
            )
        else:
            joined = " ".join(sample.tokens[ent.start : ent.end])
            if ent.surface != joined:
                out.append(
                    Violation(
                        f"{label}.surface",
                        "surface-mismatch",
                        f"surface {ent.surface!r} != joined tokens {joined!r}",
                    )
                )
        if bool(ent.boxes) != bool(ent.masks):
            out.append(
                Violation(
                    label,
                    "groundability-mismatch",
                    f"boxes/masks groundability mismatch: {len(ent.boxes)} boxes, "
                    f"{len(ent.masks)} masks",
                )
            )
        for j, box in enumerate(ent.boxes):
            if box.x2 > sample.image.width or box.y2 > sample.image.height:
                out.append(
                    Violation(
                        f"{label}.boxes[{j}]",
                        "box-bounds",
                        f"box {box.as_list()} exceeds image "
                        f"{sample.image.width}x{sample.image.height}",
                    )
                )
        for j, mask in enumerate(ent.masks):
            if mask.width != sample.image.width or mask.height != sample.image.height:
                out.append(
                    Violation(
                        f"{label}.masks[{j}]",
                        "mask-dims",
                        f"mask is {mask.width}x{mask.height}, image is "
                        f"{sample.image.width}x{sample.image.height}",
                    )
                )
        key = (ent.start, ent.end, ent.etype)
        if key in seen:
            out.append(
                Violation(
                    label,
                    "duplicate-entity",
                    f"identical (start,end,type) as entities[{seen[key]}]",
                )
            )
        else:
            seen[key] = i
    return out


_SAMPLE_KEYS = {"id", "tokens", "image", "caption", "description", "knowledge", "entities"}
_IMAGE_KEYS = {"path", "width", "height"}
_ENTITY_KEYS = {"surface", "start", "end", "type", "boxes", "masks"}
_MASK_KEYS = {"w", "h", "counts"}


def _require(obj: Mapping[str, Any], key: str, where: str) -> Any:
    if key not in obj:
        raise DataError(f"{where}: missing required field {key!r}")
    return obj[key]


def _check_unknown(obj: Mapping[str, Any], allowed: set, where: str, strict: bool) -> None:
    unknown = set(obj) - allowed
    if not unknown:
        return
    if strict:
        raise DataError(f"{where}: unknown field(s) {sorted(unknown)}")
    log.warning("%s: ignoring unknown field(s) %s", where, sorted(unknown))


def _as_int(value: Any, where: str) -> int:
    if isinstance(value, bool) or not isinstance(value, int):
        raise DataError(f"{where}: expected int, got {value!r}")
    return value


def _as_str(value: Any, where: str) -> str:
    if not isinstance(value, str):
        raise DataError(f"{where}: expected string, got {value!r}")
    return value


def parse_sample(obj: Mapping[str, Any], where: str = "sample", strict: bool = True) -> Sample:
    """Build a Sample from one decoded JSONL object."""
    if not isinstance(obj, Mapping):
        raise DataError(f"{where}: expected a JSON object")
    _check_unknown(obj, _SAMPLE_KEYS, where, strict)
    sid = _as_str(_require(obj, "id", where), f"{where}.id")
    tokens_raw = _require(obj, "tokens", where)
    if not isinstance(tokens_raw, list) or not all(isinstance(t, str) for t in tokens_raw):
        raise DataError(f"{where}.tokens: expected a list of strings")
    image_raw = _require(obj, "image", where)
    if not isinstance(image_raw, Mapping):
        raise DataError(f"{where}.image: expected an object")
    _check_unknown(image_raw, _IMAGE_KEYS, f"{where}.image", strict)
    image = ImageInfo(
        path=_as_str(_require(image_raw, "path", f"{where}.image"), f"{where}.image.path"),
        width=_as_int(_require(image_raw, "width", f"{where}.image"), f"{where}.image.width"),
        height=_as_int(_require(image_raw, "height", f"{where}.image"), f"{where}.image.height"),
    )
    caption = obj.get("caption")
    if caption is not None:
        caption = _as_str(caption, f"{where}.caption")
    description = obj.get("description")
    if description is not None:
        description = _as_str(description, f"{where}.description")
    knowledge = obj.get("knowledge")
    if knowledge is not None:
        if not isinstance(knowledge, Mapping) or not all(
            isinstance(k, str) and isinstance(v, str) for k, v in knowledge.items()
        ):
            raise DataError(f"{where}.knowledge: expected an object of string->string")
        knowledge = dict(knowledge)

    entities: list[GoldEntity] = []
    entities_raw = obj.get("entities", [])
    if not isinstance(entities_raw, list):
        raise DataError(f"{where}.entities: expected a list")
    for i, ent_raw in enumerate(entities_raw):
        ent_where = f"{where}.entities[{i}]"
        if not isinstance(ent_raw, Mapping):
            raise DataError(f"{ent_where}: expected an object")
        _check_unknown(ent_raw, _ENTITY_KEYS, ent_where, strict)
        etype_raw = _as_str(_require(ent_raw, "type", ent_where), f"{ent_where}.type")
        try:
            etype = EntityType(etype_raw)
        except ValueError:
            raise DataError(
                f"{ent_where}.type: {etype_raw!r} is not one of "
                f"{[t.value for t in ENTITY_TYPES]}"
            ) from None
        boxes_raw = ent_raw.get("boxes", [])
        if not isinstance(boxes_raw, list):
            raise DataError(f"{ent_where}.boxes: expected a list")
        boxes = []
        for j, b in enumerate(boxes_raw):
            if not isinstance(b, list) or len(b) != 4:
                raise DataError(f"{ent_where}.boxes[{j}]: expected [x1,y1,x2,y2]")
            try:
                boxes.append(BBox(*[float(v) for v in b]))
            except (TypeError, ValueError) as exc:
                raise DataError(f"{ent_where}.boxes[{j}]: {exc}") from None
        masks_raw = ent_raw.get("masks", [])
        if not isinstance(masks_raw, list):
            raise DataError(f"{ent_where}.masks: expected a list")
        masks = []
        for j, m in enumerate(masks_raw):
            if not isinstance(m, Mapping):
                raise DataError(f"{ent_where}.masks[{j}]: expected an object")
            _check_unknown(m, _MASK_KEYS, f"{ent_where}.masks[{j}]", strict)
            try:
                masks.append(RleMask.from_obj(m))
            except (KeyError, TypeError, ValueError) as exc:
                raise DataError(f"{ent_where}.masks[{j}]: {exc}") from None
        entities.append(
            GoldEntity(
                surface=_as_str(_require(ent_raw, "surface", ent_where), f"{ent_where}.surface"),
                start=_as_int(_require(ent_raw, "start", ent_where), f"{ent_where}.start"),
                end=_as_int(_require(ent_raw, "end", ent_where), f"{ent_where}.end"),
                etype=etype,
                boxes=tuple(boxes),
                masks=tuple(masks),
            )
        )
    return Sample(
        id=sid,
        tokens=tuple(tokens_raw),
        image=image,
        entities=tuple(entities),
        caption=caption,
        description=description,
        knowledge=knowledge,
    )


def sample_to_obj(sample: Sample) -> dict[str, Any]:
    """Serialize one Sample to the gold JSONL object layout."""
    obj: dict[str, Any] = {
        "id": sample.id,
        "tokens": list(sample.tokens),
        "image": {
            "path": sample.image.path,
            "width": sample.image.width,
            "height": sample.image.height,
        },
    }
    if sample.caption is not None:
        obj["caption"] = sample.caption
    if sample.description is not None:
        obj["description"] = sample.description
    if sample.knowledge is not None:
        obj["knowledge"] = {k: sample.knowledge[k] for k in sorted(sample.knowledge)}
    obj["entities"] = [
        {
            "surface": e.surface,
            "start": e.start,
            "end": e.end,
            "type": e.etype.value,
            "boxes": [b.as_list() for b in e.boxes],
            "masks": [m.to_obj() for m in e.masks],
        }
        for e in sample.entities
    ]
    return obj


def iter_jsonl(path: str | Path) -> Iterator[tuple[int, Any]]:
    """Yield (line_number, decoded_object) for non-blank lines."""
    p = Path(path)
    try:
        text = p.read_text(encoding="utf-8")
    except OSError as exc:
        raise DataError(f"cannot read {p}: {exc}") from exc
    for line_no, line in enumerate(text.splitlines(), 1):
        if not line.strip():
            continue
        try:
            yield line_no, json.loads(line)
        except json.JSONDecodeError as exc:
            raise DataError(f"{p}:{line_no}: invalid JSON: {exc}") from None


def load_dataset(
    path: str | Path,
    split_name: str = "train",
    strict: bool = True,
    validate: bool = True,
) -> DatasetSplit:
    """Load a gold JSONL file into an immutable DatasetSplit.

    Order is preserved. With validate=True every sample must pass
    validate_sample; violations are reported with their line numbers.
    """
    samples: list[Sample] = []
    ids: dict[str, int] = {}
    for line_no, obj in iter_jsonl(path):
        where = f"{path}:{line_no}"
        sample = parse_sample(obj, where=where, strict=strict)
        if sample.id in ids:
            raise DataError(
                f"{where}: duplicate sample id {sample.id!r} "
                f"(first seen on line {ids[sample.id]})"
            )
        ids[sample.id] = line_no
        if validate:
            violations = validate_sample(sample)
            if violations:
                detail = "; ".join(str(v) for v in violations)
                raise DataError(f"{where}: invalid sample {sample.id!r}: {detail}")
        samples.append(sample)
    return DatasetSplit(name=split_name, samples=tuple(samples))


def save_dataset(split: DatasetSplit, path: str | Path) -> None:
    """Write a split back to gold JSONL; load_dataset inverts this exactly."""
    with open(path, "w", encoding="utf-8") as fh:
        for sample in split.samples:
            fh.write(json.dumps(sample_to_obj(sample), ensure_ascii=False) + "\n")


@dataclass(frozen=True)
class DatasetStats:
    n_samples: int
    n_entities: int
    n_groundable: int
    n_masks: int
    per_type: Mapping[str, Mapping[str, int]]
    masks_per_image: Mapping[int, int]

    def to_obj(self) -> dict[str, Any]:
        return {
            "n_samples": self.n_samples,
            "n_entities": self.n_entities,
            "n_groundable": self.n_groundable,
            "n_masks": self.n_masks,
            "per_type": {k: dict(v) for k, v in sorted(self.per_type.items())},
            "masks_per_image": {str(k): v for k, v in sorted(self.masks_per_image.items())},
        }


def dataset_stats(split: DatasetSplit) -> DatasetStats:
    """Direct enumeration of split-level counts."""
    n_entities = 0
    n_groundable = 0
    n_masks = 0
    per_type = {t.value: {"groundable": 0, "ungroundable": 0} for t in ENTITY_TYPES}
    masks_per_image: dict[int, int] = {}
    for sample in split.samples:
        in_image = 0
        for ent in sample.entities:
            n_entities += 1
            if ent.groundable:
                n_groundable += 1
                n_masks += len(ent.masks)
                in_image += len(ent.masks)
                per_type[ent.etype.value]["groundable"] += 1
            else:
                per_type[ent.etype.value]["ungroundable"] += 1
        masks_per_image[in_image] = masks_per_image.get(in_image, 0) + 1
    return DatasetStats(
        n_samples=len(split.samples),
        n_entities=n_entities,
        n_groundable=n_groundable,
        n_masks=n_masks,
        per_type=per_type,
        masks_per_image=masks_per_image,
    )
