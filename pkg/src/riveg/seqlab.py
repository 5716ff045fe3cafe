"""BIO tag codec and linear-chain CRF inference.

The CRF scores a sequence as
    start[y_0] + sum_i e[i, y_i] + sum_{i>=1} transition[y_{i-1}, y_i] + end[y_last]
and exposes Viterbi decoding, the forward log-partition, and the NLL with
its analytic gradient (forward-backward marginals minus gold counts).
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path
from typing import Any, Iterable, Sequence

import numpy as np

from .corpus import ENTITY_TYPES, EntityType, iter_jsonl
from .errors import DataError


class LabelScheme:
    """The fixed 9-label BIO alphabet: O plus B-T/I-T for each entity type."""

    def __init__(self) -> None:
        labels = ["O"]
        for t in ENTITY_TYPES:
            labels.append(f"B-{t.value}")
            labels.append(f"I-{t.value}")
        self.labels: tuple[str, ...] = tuple(labels)
        self._index = {lab: i for i, lab in enumerate(self.labels)}

    def __len__(self) -> int:
        return len(self.labels)

    @property
    def outside(self) -> int:
        return 0

    def index(self, label: str) -> int:
        try:
            return self._index[label]
        except KeyError:
            raise DataError(f"unknown label {label!r}") from None

    def label(self, index: int) -> str:
        if not 0 <= index < len(self.labels):
            raise DataError(f"label index {index} out of range 0..{len(self.labels) - 1}")
        return self.labels[index]

    def begin(self, etype: EntityType) -> int:
        return self.index(f"B-{etype.value}")

    def inside(self, etype: EntityType) -> int:
        return self.index(f"I-{etype.value}")

    def split(self, index: int) -> tuple[str, EntityType | None]:
        """Return (prefix, entity type); prefix is "O", "B" or "I"."""
        label = self.label(index)
        if label == "O":
            return "O", None
        prefix, _, tname = label.partition("-")
        return prefix, EntityType(tname)


SCHEME = LabelScheme()


@dataclass(frozen=True)
class EntitySpan:
    start: int
    end: int
    etype: EntityType

    def __post_init__(self) -> None:
        if not 0 <= self.start < self.end:
            raise ValueError(f"bad span offsets [{self.start},{self.end})")


@dataclass(frozen=True)
class BioViolation:
    position: int
    label: str
    message: str

    def __str__(self) -> str:
        return f"position {self.position}: {self.label}: {self.message}"


def _bio_violations(tags: Sequence[int], scheme: LabelScheme) -> list[BioViolation]:
    out = []
    prev: tuple[str, EntityType | None] = ("O", None)
    for pos, idx in enumerate(tags):
        prefix, etype = scheme.split(idx)
        if prefix == "I":
            prev_prefix, prev_type = prev
            if prev_prefix == "O" or prev_type != etype:
                out.append(
                    BioViolation(pos, scheme.label(idx), "I- tag without a matching B-/I- run")
                )
        prev = (prefix, etype)
    return out


def validate_bio(
    tags: Sequence[int],
    mode: str = "strict",
    scheme: LabelScheme = SCHEME,
) -> list[BioViolation] | list[int]:
    """Strict mode returns the violations; lenient returns a repaired copy.

    The lenient repair rewrites every orphan I-T to B-T.
    """
    if len(tags) < 1:
        raise DataError("tag sequence must be non-empty")
    for idx in tags:
        scheme.label(int(idx))
    if mode == "strict":
        return _bio_violations(tags, scheme)
    if mode != "lenient":
        raise DataError(f"unknown BIO validation mode {mode!r}")
    repaired = [int(t) for t in tags]
    prev: tuple[str, EntityType | None] = ("O", None)
    for pos, idx in enumerate(repaired):
        prefix, etype = scheme.split(idx)
        if prefix == "I":
            prev_prefix, prev_type = prev
            if prev_prefix == "O" or prev_type != etype:
                assert etype is not None
                repaired[pos] = scheme.begin(etype)
                prefix = "B"
        prev = (prefix, etype)
    return repaired


def spans_from_bio(tags: Sequence[int], scheme: LabelScheme = SCHEME) -> list[EntitySpan]:
    """Decode maximal B-T (I-T)* runs into spans ordered by start offset."""
    violations = validate_bio(tags, mode="strict", scheme=scheme)
    if violations:
        raise DataError("invalid BIO sequence: " + "; ".join(str(v) for v in violations))
    spans: list[EntitySpan] = []
    open_start: int | None = None
    open_type: EntityType | None = None
    for pos, idx in enumerate(tags):
        prefix, etype = scheme.split(int(idx))
        if prefix != "I" and open_start is not None:
            assert open_type is not None
            spans.append(EntitySpan(open_start, pos, open_type))
            open_start, open_type = None, None
        if prefix == "B":
            open_start, open_type = pos, etype
    if open_start is not None:
        assert open_type is not None
        spans.append(EntitySpan(open_start, len(tags), open_type))
    return spans


def bio_from_spans(
    spans: Iterable[EntitySpan],
    length: int,
    scheme: LabelScheme = SCHEME,
) -> list[int]:
    """Inverse of spans_from_bio; rejects overlapping or out-of-range spans."""
    if length < 1:
        raise DataError("length must be >= 1")
    tags = [scheme.outside] * length
    occupied = [False] * length
    for span in spans:
        if span.end > length:
            raise DataError(f"span [{span.start},{span.end}) exceeds length {length}")
        if any(occupied[span.start : span.end]):
            raise DataError(f"span [{span.start},{span.end}) overlaps another span")
        for pos in range(span.start, span.end):
            occupied[pos] = True
        tags[span.start] = scheme.begin(span.etype)
        for pos in range(span.start + 1, span.end):
            tags[pos] = scheme.inside(span.etype)
    return tags


@dataclass(frozen=True)
class CrfParams:
    """Transition matrix plus explicit start/end potentials (may be zero)."""

    transition: np.ndarray
    start: np.ndarray
    end: np.ndarray

    def __post_init__(self) -> None:
        transition = np.asarray(self.transition, dtype=np.float64)
        start = np.asarray(self.start, dtype=np.float64)
        end = np.asarray(self.end, dtype=np.float64)
        if transition.ndim != 2 or transition.shape[0] != transition.shape[1]:
            raise ValueError(f"transition must be square, got shape {transition.shape}")
        n = transition.shape[0]
        if start.shape != (n,) or end.shape != (n,):
            raise ValueError("start/end shapes must match the transition size")
        for name, arr in (("transition", transition), ("start", start), ("end", end)):
            if not np.all(np.isfinite(arr)):
                raise ValueError(f"{name} contains non-finite entries")
        object.__setattr__(self, "transition", transition)
        object.__setattr__(self, "start", start)
        object.__setattr__(self, "end", end)

    @property
    def n_labels(self) -> int:
        return self.transition.shape[0]

    @classmethod
    def zeros(cls, n_labels: int) -> "CrfParams":
        return cls(
            transition=np.zeros((n_labels, n_labels)),
            start=np.zeros(n_labels),
            end=np.zeros(n_labels),
        )

    def to_obj(self, scheme: LabelScheme = SCHEME) -> dict[str, Any]:
        return {
            "labels": list(scheme.labels)[: self.n_labels],
            "transition": self.transition.tolist(),
            "start": self.start.tolist(),
            "end": self.end.tolist(),
        }

    @classmethod
    def from_obj(cls, obj: Any, scheme: LabelScheme = SCHEME) -> "CrfParams":
        if not isinstance(obj, dict):
            raise DataError("CRF params must be a JSON object")
        for key in ("labels", "transition", "start", "end"):
            if key not in obj:
                raise DataError(f"CRF params missing field {key!r}")
        labels = obj["labels"]
        expected = list(scheme.labels)[: len(labels)]
        if labels != expected:
            raise DataError(f"CRF label ordering {labels} does not match scheme {expected}")
        try:
            return cls(
                transition=np.asarray(obj["transition"], dtype=np.float64),
                start=np.asarray(obj["start"], dtype=np.float64),
                end=np.asarray(obj["end"], dtype=np.float64),
            )
        except ValueError as exc:
            raise DataError(str(exc)) from None


def load_crf_params(path: str | Path, scheme: LabelScheme = SCHEME) -> CrfParams:
    try:
        obj = json.loads(Path(path).read_text(encoding="utf-8"))
    except OSError as exc:
        raise DataError(f"cannot read {path}: {exc}") from exc
    except json.JSONDecodeError as exc:
        raise DataError(f"{path}: invalid JSON: {exc}") from None
    return CrfParams.from_obj(obj, scheme)


def load_emissions(path: str | Path) -> dict[str, np.ndarray]:
    """Read per-sample emission matrices from JSONL {"id", "emissions"}."""
    out: dict[str, np.ndarray] = {}
    for line_no, obj in iter_jsonl(path):
        where = f"{path}:{line_no}"
        if not isinstance(obj, dict) or "id" not in obj or "emissions" not in obj:
            raise DataError(f"{where}: expected an object with id and emissions")
        arr = np.asarray(obj["emissions"], dtype=np.float64)
        if arr.ndim != 2:
            raise DataError(f"{where}: emissions must be a 2D matrix")
        if obj["id"] in out:
            raise DataError(f"{where}: duplicate emissions id {obj['id']!r}")
        out[obj["id"]] = arr
    return out


def _check_instance(emissions: np.ndarray, params: CrfParams) -> np.ndarray:
    e = np.asarray(emissions, dtype=np.float64)
    if e.ndim != 2 or e.shape[0] < 1:
        raise DataError(f"emissions must be (length, labels) with length >= 1, got {e.shape}")
    if e.shape[1] != params.n_labels:
        raise DataError(
            f"emissions have {e.shape[1]} labels but params have {params.n_labels}"
        )
    if not np.all(np.isfinite(e)):
        raise DataError("emissions contain non-finite entries")
    return e


def _logsumexp(arr: np.ndarray, axis: int | None = None) -> np.ndarray:
    m = np.max(arr, axis=axis, keepdims=True)
    out = m + np.log(np.sum(np.exp(arr - m), axis=axis, keepdims=True))
    return np.squeeze(out, axis=axis) if axis is not None else out.reshape(())


def sequence_score(
    emissions: np.ndarray, params: CrfParams, tags: Sequence[int]
) -> float:
    """Unnormalized path score of one tag sequence."""
    e = _check_instance(emissions, params)
    if len(tags) != e.shape[0]:
        raise DataError(f"tag length {len(tags)} != emission rows {e.shape[0]}")
    score = params.start[tags[0]] + e[0, tags[0]]
    for i in range(1, len(tags)):
        score += params.transition[tags[i - 1], tags[i]] + e[i, tags[i]]
    score += params.end[tags[-1]]
    return float(score)


def viterbi_decode(
    emissions: np.ndarray, params: CrfParams
) -> tuple[list[int], float]:
    """Best-scoring tag sequence and its score.

    Ties break toward the lower label index at every backtrack step,
    so decoding is reproducible across platforms.
    """
    e = _check_instance(emissions, params)
    n, L = e.shape
    delta = params.start + e[0]
    backptr = np.empty((n - 1, L), dtype=np.int64) if n > 1 else None
    for t in range(1, n):
        scores = delta[:, None] + params.transition
        best_prev = np.argmax(scores, axis=0)
        assert backptr is not None
        backptr[t - 1] = best_prev
        delta = scores[best_prev, np.arange(L)] + e[t]
    final = delta + params.end
    last = int(np.argmax(final))
    path = [last]
    for t in range(n - 2, -1, -1):
        assert backptr is not None
        path.append(int(backptr[t, path[-1]]))
    path.reverse()
    return path, float(final[last])


def log_partition(emissions: np.ndarray, params: CrfParams) -> float:
    """log sum over all tag sequences of exp(path score)."""
    e = _check_instance(emissions, params)
    n = e.shape[0]
    alpha = params.start + e[0]
    for t in range(1, n):
        alpha = _logsumexp(alpha[:, None] + params.transition, axis=0) + e[t]
    return float(_logsumexp(alpha + params.end))


@dataclass(frozen=True)
class CrfGradients:
    emissions: np.ndarray
    transition: np.ndarray
    start: np.ndarray
    end: np.ndarray


def crf_nll_and_grad(
    emissions: np.ndarray, params: CrfParams, gold: Sequence[int]
) -> tuple[float, CrfGradients]:
    """Negative log-likelihood of the gold sequence with analytic gradients.

    Gradients are expected feature counts under the model (forward-backward
    marginals) minus observed gold counts.
    """
    e = _check_instance(emissions, params)
    n, L = e.shape
    if len(gold) != n:
        raise DataError(f"gold length {len(gold)} != emission rows {n}")
    gold = [int(g) for g in gold]
    for g in gold:
        if not 0 <= g < L:
            raise DataError(f"gold label index {g} out of range 0..{L - 1}")

    alpha = np.empty((n, L))
    alpha[0] = params.start + e[0]
    for t in range(1, n):
        alpha[t] = _logsumexp(alpha[t - 1][:, None] + params.transition, axis=0) + e[t]
    log_z = float(_logsumexp(alpha[n - 1] + params.end))

    beta = np.empty((n, L))
    beta[n - 1] = params.end
    for t in range(n - 2, -1, -1):
        beta[t] = _logsumexp(params.transition + (e[t + 1] + beta[t + 1])[None, :], axis=1)

    unary = np.exp(alpha + beta - log_z)

    grad_e = unary.copy()
    grad_trans = np.zeros_like(params.transition)
    for t in range(n - 1):
        pair = np.exp(
            alpha[t][:, None] + params.transition + (e[t + 1] + beta[t + 1])[None, :] - log_z
        )
        grad_trans += pair
    grad_start = unary[0].copy()
    grad_end = unary[n - 1].copy()

    grad_e[np.arange(n), gold] -= 1.0
    for t in range(n - 1):
        grad_trans[gold[t], gold[t + 1]] -= 1.0
    grad_start[gold[0]] -= 1.0
    grad_end[gold[-1]] -= 1.0

    nll = log_z - sequence_score(e, params, gold)
    return nll, CrfGradients(
        emissions=grad_e, transition=grad_trans, start=grad_start, end=grad_end
    )
