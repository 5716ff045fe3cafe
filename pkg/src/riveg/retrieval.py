"""Similar-example awareness: exact top-N cosine retrieval over fusion features.

Annotated pools are small (a few hundred vectors), so an exhaustive scan
is exact and fast; unit-normalized copies are precomputed at build time.
"""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path
from typing import Sequence

import numpy as np

from .corpus import iter_jsonl
from .errors import DataError

DEFAULT_TOPN = 5


@dataclass(frozen=True)
class FeatureVector:
    id: str
    vec: np.ndarray

    def __post_init__(self) -> None:
        vec = np.asarray(self.vec, dtype=np.float64)
        if vec.ndim != 1 or vec.size < 1:
            raise ValueError(f"feature vector must be 1D and non-empty, got shape {vec.shape}")
        if not np.all(np.isfinite(vec)):
            raise ValueError("feature vector contains non-finite entries")
        if not np.any(vec):
            raise ValueError(f"feature vector {self.id!r} has zero norm")
        object.__setattr__(self, "vec", vec)


class ExampleIndex:
    """Immutable store of feature vectors with precomputed unit norms."""

    def __init__(self, ids: Sequence[str], matrix: np.ndarray, unit: np.ndarray) -> None:
        self.ids = tuple(ids)
        self.matrix = matrix
        self.unit = unit
        self.dim = matrix.shape[1]

    def __len__(self) -> int:
        return len(self.ids)


def build_index(vectors: Sequence[FeatureVector]) -> ExampleIndex:
    """Normalize once and stack; input order is preserved."""
    if not vectors:
        raise DataError("cannot build an index from zero vectors")
    dim = vectors[0].vec.size
    for v in vectors:
        if v.vec.size != dim:
            raise DataError(
                f"dimension mismatch: vector {v.id!r} has {v.vec.size}, expected {dim}"
            )
    matrix = np.stack([v.vec for v in vectors])
    norms = np.linalg.norm(matrix, axis=1)
    zero = np.flatnonzero(norms == 0)
    if zero.size:
        raise DataError(f"zero-norm vector(s): {[vectors[i].id for i in zero]}")
    unit = matrix / norms[:, None]
    return ExampleIndex([v.id for v in vectors], matrix, unit)


def topn_similar(
    index: ExampleIndex, query: FeatureVector, n: int = DEFAULT_TOPN
) -> list[tuple[str, float]]:
    """Top-n ids by cosine similarity, descending; ties keep index order."""
    if n < 1:
        raise DataError(f"n must be >= 1, got {n}")
    if query.vec.size != index.dim:
        raise DataError(f"query dimension {query.vec.size} != index dimension {index.dim}")
    norm = np.linalg.norm(query.vec)
    if norm == 0:
        raise DataError("query vector has zero norm")
    cosines = index.unit @ (query.vec / norm)
    order = np.argsort(-cosines, kind="stable")[: min(n, len(index))]
    return [(index.ids[i], float(cosines[i])) for i in order]


def load_features(path: str | Path) -> list[FeatureVector]:
    """Read feature vectors from JSONL {"id", "vec"} lines."""
    out: list[FeatureVector] = []
    for line_no, obj in iter_jsonl(path):
        where = f"{path}:{line_no}"
        if not isinstance(obj, dict) or "id" not in obj or "vec" not in obj:
            raise DataError(f"{where}: expected an object with id and vec")
        try:
            out.append(FeatureVector(id=str(obj["id"]), vec=np.asarray(obj["vec"], dtype=np.float64)))
        except (TypeError, ValueError) as exc:
            raise DataError(f"{where}: {exc}") from None
    return out
