"""The grounding cascade: referring expression -> VE verdict -> VG box ->
box-prompted segmentation, over HTTP or a deterministic in-process mock.

Requests may run concurrently up to a bound; results are re-sequenced to
input order so runs are byte-reproducible at any concurrency level.
"""

from __future__ import annotations

import threading
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from pathlib import Path
from typing import Any, Mapping, Sequence

import requests

from .corpus import BBox, DatasetSplit, EntityType, RleMask, iter_jsonl, rasterize_box
from .errors import BackendError, DataError, ProtocolError
from .prompts import ReferringExpression, compose_referring_expression, parse_referring_expression
from .protocol import validate_request, validate_response

MOCK_FALLBACK_SIZE = (100, 100)


@dataclass(frozen=True)
class BackendConfig:
    base_url: str = "mock"
    timeout_ms: int = 10_000
    max_inflight: int = 1
    retries: int = 2
    mock_lookup_path: str | None = None
    fail_fast: bool = False

    def __post_init__(self) -> None:
        if self.timeout_ms <= 0:
            raise ValueError(f"timeout must be > 0 ms, got {self.timeout_ms}")
        if self.max_inflight < 1:
            raise ValueError(f"max in-flight must be >= 1, got {self.max_inflight}")
        if self.retries < 0:
            raise ValueError(f"retries must be >= 0, got {self.retries}")


@dataclass(frozen=True)
class ImageRef:
    """Image reference plus the sample identity the mock keys on."""

    sample_id: str
    path: str
    width: int
    height: int


@dataclass(frozen=True)
class VeVerdict:
    label: str
    score: float

    def __post_init__(self) -> None:
        if self.label not in ("e", "c"):
            raise ValueError(f"VE label must be 'e' or 'c', got {self.label!r}")
        if not 0.0 <= self.score <= 1.0:
            raise ValueError(f"VE score must be in [0,1], got {self.score}")


@dataclass(frozen=True)
class GroundingResult:
    box: BBox
    score: float


@dataclass(frozen=True)
class PredictionTriple:
    surface: str
    start: int
    end: int
    etype: EntityType
    box: BBox | None = None
    mask: RleMask | None = None

    def __post_init__(self) -> None:
        if (self.box is None) != (self.mask is None):
            raise ValueError("a groundable prediction carries both box and mask, or neither")


@dataclass(frozen=True)
class PredictionRecord:
    sample_id: str
    triples: tuple[PredictionTriple, ...]


@dataclass(frozen=True)
class SampleFailure:
    sample_id: str
    message: str


@dataclass(frozen=True)
class PipelineResult:
    records: tuple[PredictionRecord, ...]
    failures: tuple[SampleFailure, ...]


def fnv1a64(text: str) -> int:
    """64-bit FNV-1a hash of the UTF-8 bytes."""
    h = 0xCBF29CE484222325
    for b in text.encode("utf-8"):
        h ^= b
        h = (h * 0x100000001B3) & 0xFFFFFFFFFFFFFFFF
    return h


def fallback_ve_label(sample_id: str, surface: str) -> str:
    """Deterministic verdict used when the mock lookup has no entry."""
    return "e" if fnv1a64(f"{sample_id}|{surface}") % 2 == 0 else "c"


def fallback_vg_box(width: int, height: int) -> BBox:
    """Centered box covering 25% of the image area."""
    return BBox(width / 4, height / 4, 3 * width / 4, 3 * height / 4)


@dataclass(frozen=True)
class MockEntry:
    label: str
    box: BBox | None = None


class MockLookup:
    """Keyed (sample id, entity surface) verdicts and boxes for mock runs."""

    def __init__(self, entries: Mapping[tuple[str, str], MockEntry] | None = None) -> None:
        self.entries = dict(entries or {})

    @classmethod
    def from_file(cls, path: str | Path) -> "MockLookup":
        entries: dict[tuple[str, str], MockEntry] = {}
        for line_no, obj in iter_jsonl(path):
            where = f"{path}:{line_no}"
            if not isinstance(obj, dict) or not {"id", "surface", "label"} <= set(obj):
                raise DataError(f"{where}: expected an object with id, surface and label")
            if obj["label"] not in ("e", "c"):
                raise DataError(f"{where}: label must be 'e' or 'c'")
            box = None
            if obj.get("box") is not None:
                raw = obj["box"]
                if not isinstance(raw, list) or len(raw) != 4:
                    raise DataError(f"{where}: box must be [x1,y1,x2,y2]")
                try:
                    box = BBox(*[float(v) for v in raw])
                except ValueError as exc:
                    raise DataError(f"{where}: {exc}") from None
            entries[(str(obj["id"]), str(obj["surface"]))] = MockEntry(obj["label"], box)
        return cls(entries)

    def get(self, sample_id: str, surface: str) -> MockEntry | None:
        return self.entries.get((sample_id, surface))


class Backend:
    """Model-backend interface used by the cascade."""

    def ve(self, image: ImageRef, expression: str) -> VeVerdict:
        raise NotImplementedError

    def vg(self, image: ImageRef, expression: str) -> GroundingResult:
        raise NotImplementedError

    def segment(self, image: ImageRef, box: BBox) -> RleMask:
        raise NotImplementedError

    def llm(self, prompt: str, max_tokens: int = 256) -> str:
        raise NotImplementedError

    def health(self) -> bool:
        raise NotImplementedError


def mock_llm_text(prompt: str) -> str:
    """"MOCK:" plus the first 32 bytes of the prompt."""
    return "MOCK:" + prompt.encode("utf-8")[:32].decode("utf-8", "ignore")


def surface_of_expression(expression: str) -> str:
    """Entity surface of a rendered referring expression; raw text otherwise."""
    try:
        return parse_referring_expression(expression).entity
    except DataError:
        return expression


class MockBackend(Backend):
    """Pure function of (lookup, request); no transport involved."""

    def __init__(self, lookup: MockLookup | None = None) -> None:
        self.lookup = lookup or MockLookup()

    def ve(self, image: ImageRef, expression: str) -> VeVerdict:
        surface = surface_of_expression(expression)
        entry = self.lookup.get(image.sample_id, surface)
        if entry is not None:
            return VeVerdict(entry.label, 1.0)
        return VeVerdict(fallback_ve_label(image.sample_id, surface), 0.5)

    def vg(self, image: ImageRef, expression: str) -> GroundingResult:
        surface = surface_of_expression(expression)
        entry = self.lookup.get(image.sample_id, surface)
        if entry is not None and entry.box is not None:
            return GroundingResult(entry.box, 1.0)
        return GroundingResult(fallback_vg_box(image.width, image.height), 0.5)

    def segment(self, image: ImageRef, box: BBox) -> RleMask:
        return rasterize_box(box, image.width, image.height)

    def llm(self, prompt: str, max_tokens: int = 256) -> str:
        return mock_llm_text(prompt)

    def health(self) -> bool:
        return True


class HttpBackend(Backend):
    """JSON-over-HTTP client with bounded retries and schema checking.

    Connections are per-thread so the pipeline runner can issue requests
    from its worker pool without sharing a session across threads.
    """

    def __init__(
        self,
        base_url: str,
        timeout_ms: int = 10_000,
        retries: int = 2,
        session: requests.Session | None = None,
    ) -> None:
        self.base_url = base_url.rstrip("/")
        self.timeout = timeout_ms / 1000.0
        self.retries = retries
        self._shared_session = session
        self._local = threading.local()

    @property
    def session(self) -> requests.Session:
        if self._shared_session is not None:
            return self._shared_session
        if not hasattr(self._local, "session"):
            self._local.session = requests.Session()
        return self._local.session

    def _post(self, endpoint: str, payload: dict[str, Any]) -> Mapping[str, Any]:
        validate_request(endpoint, payload)
        url = self.base_url + endpoint
        last_error: Exception | None = None
        for _ in range(self.retries + 1):
            try:
                resp = self.session.post(url, json=payload, timeout=self.timeout)
            except requests.RequestException as exc:
                last_error = exc
                continue
            if resp.status_code >= 500:
                last_error = BackendError(f"{endpoint}: server error {resp.status_code}")
                continue
            if resp.status_code != 200:
                raise BackendError(f"{endpoint}: HTTP {resp.status_code}: {resp.text[:200]}")
            try:
                body = resp.json()
            except ValueError:
                raise BackendError(f"{endpoint}: response is not JSON") from None
            return validate_response(endpoint, body)
        raise BackendError(f"{endpoint}: transport failed after {self.retries + 1} attempts: {last_error}")

    def ve(self, image: ImageRef, expression: str) -> VeVerdict:
        body = self._post("/v1/ve", {"image": image.path, "expression": expression})
        return VeVerdict(body["label"], float(body["score"]))

    def vg(self, image: ImageRef, expression: str) -> GroundingResult:
        body = self._post("/v1/vg", {"image": image.path, "expression": expression})
        try:
            box = BBox(*[float(v) for v in body["box"]])
        except ValueError as exc:
            raise BackendError(f"/v1/vg returned a degenerate box: {exc}") from None
        return GroundingResult(box, float(body["score"]))

    def segment(self, image: ImageRef, box: BBox) -> RleMask:
        body = self._post(
            "/v1/segment",
            {
                "image": image.path,
                "box": box.as_list(),
                "width": image.width,
                "height": image.height,
            },
        )
        try:
            return RleMask.from_obj(body["mask"])
        except ValueError as exc:
            raise BackendError(f"/v1/segment returned an invalid mask: {exc}") from None

    def llm(self, prompt: str, max_tokens: int = 256) -> str:
        body = self._post("/v1/llm", {"prompt": prompt, "max_tokens": max_tokens})
        return body["text"]

    def health(self) -> bool:
        try:
            resp = self.session.get(self.base_url + "/v1/health", timeout=self.timeout)
        except requests.RequestException:
            return False
        if resp.status_code != 200:
            return False
        try:
            return validate_response("/v1/health", resp.json())["status"] == "ok"
        except (ValueError, ProtocolError):
            return False


def make_backend(config: BackendConfig) -> Backend:
    if config.base_url == "mock":
        lookup = (
            MockLookup.from_file(config.mock_lookup_path)
            if config.mock_lookup_path
            else MockLookup()
        )
        return MockBackend(lookup)
    return HttpBackend(config.base_url, config.timeout_ms, config.retries)


def ve_classify(backend: Backend, image: ImageRef, expr: ReferringExpression) -> VeVerdict:
    """Groundability verdict for one referring expression."""
    if not expr.rendered:
        raise DataError("referring expression is empty")
    return backend.ve(image, expr.rendered)


def vg_ground(backend: Backend, image: ImageRef, expr: ReferringExpression) -> GroundingResult:
    """Grounding box for an expression already judged groundable; clamped to the image."""
    result = backend.vg(image, expr.rendered)
    try:
        box = result.box.clamped(image.width, image.height)
    except ValueError as exc:
        raise BackendError(f"grounding box unusable: {exc}") from None
    return GroundingResult(box, result.score)


def segment_from_box(backend: Backend, image: ImageRef, box: BBox) -> RleMask:
    """Box-prompted segmentation; the mask must cover the full image canvas."""
    mask = backend.segment(image, box)
    if mask.width != image.width or mask.height != image.height:
        raise BackendError(
            f"segmentation mask is {mask.width}x{mask.height}, image is "
            f"{image.width}x{image.height}"
        )
    return mask


@dataclass(frozen=True)
class _EntityJob:
    sample_index: int
    entity_index: int
    sample_id: str
    image: ImageRef
    surface: str
    start: int
    end: int
    etype: EntityType
    expansion: str


def _run_job(backend: Backend, job: _EntityJob) -> PredictionTriple:
    expr = compose_referring_expression(job.surface, job.etype, job.expansion)
    verdict = ve_classify(backend, job.image, expr)
    if verdict.label == "c":
        return PredictionTriple(job.surface, job.start, job.end, job.etype)
    grounding = vg_ground(backend, job.image, expr)
    mask = segment_from_box(backend, job.image, grounding.box)
    return PredictionTriple(job.surface, job.start, job.end, job.etype, grounding.box, mask)


def run_pipeline(
    split: DatasetSplit,
    backend: Backend,
    expansions: Mapping[str, Mapping[str, str]] | None = None,
    entity_source: str | Mapping[str, Sequence[tuple[str, int, int, EntityType]]] = "gold",
    max_inflight: int = 1,
    fail_fast: bool = False,
) -> PipelineResult:
    """Run the VE -> VG -> segmentation cascade over a split.

    entity_source is "gold" or a map sample id -> (surface, start, end, type)
    tuples from an upstream tagger. Output order always mirrors input order;
    a backend failure marks only the affected sample unless fail_fast is set.
    """
    if max_inflight < 1:
        raise DataError(f"max in-flight must be >= 1, got {max_inflight}")
    if isinstance(entity_source, str) and entity_source != "gold":
        raise DataError(f"entity source must be 'gold' or a span mapping, got {entity_source!r}")
    expansions = expansions or {}

    jobs: list[_EntityJob] = []
    for si, sample in enumerate(split.samples):
        image = ImageRef(sample.id, sample.image.path, sample.image.width, sample.image.height)
        if entity_source == "gold":
            entities = [(e.surface, e.start, e.end, e.etype) for e in sample.entities]
        else:
            entities = list(entity_source.get(sample.id, []))
        per_sample = expansions.get(sample.id, {})
        for ei, (surface, start, end, etype) in enumerate(entities):
            jobs.append(
                _EntityJob(
                    sample_index=si,
                    entity_index=ei,
                    sample_id=sample.id,
                    image=image,
                    surface=surface,
                    start=start,
                    end=end,
                    etype=etype,
                    expansion=per_sample.get(surface, ""),
                )
            )

    outcomes: dict[tuple[int, int], PredictionTriple | Exception] = {}
    if jobs:
        with ThreadPoolExecutor(max_workers=max_inflight) as pool:
            futures = {
                pool.submit(_run_job, backend, job): (job.sample_index, job.entity_index)
                for job in jobs
            }
            for future, key in futures.items():
                try:
                    outcomes[key] = future.result()
                except (BackendError, DataError, ValueError) as exc:
                    outcomes[key] = exc

    records: list[PredictionRecord] = []
    failures: list[SampleFailure] = []
    triples_by_sample: dict[int, list[PredictionTriple]] = {}
    failed: dict[int, str] = {}
    for (si, ei) in sorted(outcomes):
        outcome = outcomes[(si, ei)]
        if isinstance(outcome, Exception):
            if si not in failed:
                failed[si] = str(outcome)
        else:
            triples_by_sample.setdefault(si, []).append(outcome)
    for si, sample in enumerate(split.samples):
        if si in failed:
            if fail_fast:
                raise BackendError(f"sample {sample.id!r}: {failed[si]}")
            failures.append(SampleFailure(sample.id, failed[si]))
            continue
        records.append(PredictionRecord(sample.id, tuple(triples_by_sample.get(si, []))))
    return PipelineResult(tuple(records), tuple(failures))


def load_expansions(path: str | Path) -> dict[str, dict[str, str]]:
    """Read JSONL {"id","surface","expansion"} into id -> surface -> text."""
    out: dict[str, dict[str, str]] = {}
    for line_no, obj in iter_jsonl(path):
        where = f"{path}:{line_no}"
        if not isinstance(obj, dict) or not {"id", "surface", "expansion"} <= set(obj):
            raise DataError(f"{where}: expected an object with id, surface and expansion")
        out.setdefault(str(obj["id"]), {})[str(obj["surface"])] = str(obj["expansion"])
    return out


def mock_respond(
    lookup: MockLookup,
    endpoint: str,
    payload: Any,
    default_size: tuple[int, int] = MOCK_FALLBACK_SIZE,
) -> dict[str, Any]:
    """Wire-level mock: pure function of (lookup, request).

    The sample id is recovered from the image path stem and the entity
    surface from the rendered expression, so HTTP mock runs agree with
    in-process mock runs on fixtures that name images "<sample_id>.<ext>".
    /v1/vg falls back to a centered box on default_size when the lookup
    has no box (the wire request carries no image dimensions).
    """
    payload = validate_request(endpoint, payload)
    if endpoint == "/v1/health":
        return {"status": "ok"}
    if endpoint == "/v1/llm":
        return {"text": mock_llm_text(payload["prompt"])}
    if endpoint == "/v1/segment":
        try:
            box = BBox(*[float(v) for v in payload["box"]])
        except ValueError as exc:
            raise ProtocolError(f"/v1/segment: {exc}") from None
        mask = rasterize_box(box, payload["width"], payload["height"])
        return {"mask": mask.to_obj()}
    sample_id = Path(payload["image"]).stem
    surface = surface_of_expression(payload["expression"])
    entry = lookup.get(sample_id, surface)
    if endpoint == "/v1/ve":
        if entry is not None:
            return {"label": entry.label, "score": 1.0}
        return {"label": fallback_ve_label(sample_id, surface), "score": 0.5}
    if endpoint == "/v1/vg":
        if entry is not None and entry.box is not None:
            return {"box": entry.box.as_list(), "score": 1.0}
        return {"box": fallback_vg_box(*default_size).as_list(), "score": 0.5}
    raise ProtocolError(f"unknown endpoint {endpoint!r}")
