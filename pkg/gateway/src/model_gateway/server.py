"""FastAPI application implementing the grounding wire protocol.

Error mapping: schema problems are HTTP 400, model-domain problems 422,
internal faults 500. Inference is serialized per adapter so GPU-bound
models never see concurrent batches.
"""

from __future__ import annotations

import threading
from contextlib import asynccontextmanager
from typing import Literal

from fastapi import FastAPI, Request
from fastapi.exceptions import RequestValidationError
from fastapi.responses import JSONResponse
from pydantic import BaseModel, ConfigDict, Field

from .adapters import AdapterDomainError, load_adapter
from .config import GatewayConfig
from .rle import encode_mask


class StrictModel(BaseModel):
    model_config = ConfigDict(extra="forbid")


class GroundingRequest(StrictModel):
    image: str
    expression: str


class SegmentRequest(StrictModel):
    image: str
    box: list[float] = Field(min_length=4, max_length=4)
    width: int = Field(ge=1)
    height: int = Field(ge=1)


class LlmRequest(StrictModel):
    prompt: str
    max_tokens: int = Field(ge=1)


class VeResponse(StrictModel):
    label: Literal["e", "c"]
    score: float = Field(ge=0.0, le=1.0)


class VgResponse(StrictModel):
    box: list[float] = Field(min_length=4, max_length=4)
    score: float


class MaskObj(StrictModel):
    w: int = Field(ge=1)
    h: int = Field(ge=1)
    counts: list[int]


class SegmentResponse(StrictModel):
    mask: MaskObj


class LlmResponse(StrictModel):
    text: str


class HealthResponse(StrictModel):
    status: str


def create_app(config: GatewayConfig, adapters: dict | None = None) -> FastAPI:
    """Build the app; pass preloaded adapters to fail fast on load errors."""

    @asynccontextmanager
    async def lifespan(app: FastAPI):
        loaded = adapters
        if loaded is None:
            loaded = {
                endpoint: load_adapter(endpoint, identifier, config.device)
                for endpoint, identifier in config.models.items()
            }
        app.state.adapters = loaded
        app.state.locks = {endpoint: threading.Lock() for endpoint in loaded}
        app.state.ready = True
        yield

    app = FastAPI(title="model-gateway", lifespan=lifespan)
    app.state.ready = False

    @app.exception_handler(RequestValidationError)
    async def schema_error(_: Request, exc: RequestValidationError) -> JSONResponse:
        return JSONResponse(status_code=400, content={"error": str(exc.errors()[:3])})

    @app.exception_handler(AdapterDomainError)
    async def domain_error(_: Request, exc: AdapterDomainError) -> JSONResponse:
        return JSONResponse(status_code=422, content={"error": str(exc)})

    def adapter_for(endpoint: str):
        adapters = getattr(app.state, "adapters", {})
        if endpoint not in adapters:
            return None
        return adapters[endpoint]

    def run_serialized(endpoint: str, fn):
        with app.state.locks[endpoint]:
            return fn()

    @app.get("/v1/health", response_model=HealthResponse)
    async def health():
        if not app.state.ready:
            return JSONResponse(status_code=503, content={"status": "loading"})
        return HealthResponse(status="ok")

    @app.post("/v1/ve", response_model=VeResponse)
    def ve(request: GroundingRequest):
        adapter = adapter_for("ve")
        if adapter is None:
            return JSONResponse(status_code=404, content={"error": "ve endpoint disabled"})
        label, score = run_serialized("ve", lambda: adapter.classify(request.image, request.expression))
        return VeResponse(label=label, score=max(0.0, min(1.0, float(score))))

    @app.post("/v1/vg", response_model=VgResponse)
    def vg(request: GroundingRequest):
        adapter = adapter_for("vg")
        if adapter is None:
            return JSONResponse(status_code=404, content={"error": "vg endpoint disabled"})
        box, score = run_serialized("vg", lambda: adapter.ground(request.image, request.expression))
        x1, y1, x2, y2 = (float(v) for v in box)
        if not (x1 < x2 and y1 < y2):
            raise AdapterDomainError(f"model produced a degenerate box {box}")
        return VgResponse(box=[x1, y1, x2, y2], score=float(score))

    @app.post("/v1/segment", response_model=SegmentResponse)
    def segment(request: SegmentRequest):
        adapter = adapter_for("segment")
        if adapter is None:
            return JSONResponse(status_code=404, content={"error": "segment endpoint disabled"})
        if request.width * request.height > config.limits.max_pixels:
            raise AdapterDomainError(
                f"requested canvas {request.width}x{request.height} exceeds "
                f"the {config.limits.max_pixels}-pixel limit"
            )
        grid = run_serialized(
            "segment",
            lambda: adapter.segment(request.image, request.box, request.width, request.height),
        )
        if grid.shape != (request.height, request.width):
            raise AdapterDomainError(
                f"adapter produced a {grid.shape} mask for a "
                f"{request.height}x{request.width} request"
            )
        return SegmentResponse(mask=MaskObj(**encode_mask(grid)))

    @app.post("/v1/llm", response_model=LlmResponse)
    def llm(request: LlmRequest):
        adapter = adapter_for("llm")
        if adapter is None:
            return JSONResponse(status_code=404, content={"error": "llm endpoint disabled"})
        max_tokens = min(request.max_tokens, config.limits.max_tokens)
        text = run_serialized("llm", lambda: adapter.generate(request.prompt, max_tokens))
        return LlmResponse(text=text)

    return app
