"""Wire-protocol schemas for the model backend endpoints.

JSON over HTTP:
    POST /v1/ve      {"image","expression"}              -> {"label","score"}
    POST /v1/vg      {"image","expression"}              -> {"box","score"}
    POST /v1/segment {"image","box","width","height"}    -> {"mask"}
    POST /v1/llm     {"prompt","max_tokens"}             -> {"text"}
    GET  /v1/health                                      -> {"status"}
Validation is strict: unknown keys are rejected on both sides.
"""

from __future__ import annotations

from typing import Any, Mapping

from .errors import ProtocolError

ENDPOINTS = ("/v1/ve", "/v1/vg", "/v1/segment", "/v1/llm", "/v1/health")


def _require_obj(payload: Any, where: str) -> Mapping[str, Any]:
    if not isinstance(payload, Mapping):
        raise ProtocolError(f"{where}: expected a JSON object")
    return payload


def _check_keys(obj: Mapping[str, Any], required: dict[str, type | tuple], where: str) -> None:
    missing = set(required) - set(obj)
    if missing:
        raise ProtocolError(f"{where}: missing field(s) {sorted(missing)}")
    unknown = set(obj) - set(required)
    if unknown:
        raise ProtocolError(f"{where}: unknown field(s) {sorted(unknown)}")
    for key, typ in required.items():
        if isinstance(obj[key], bool) or not isinstance(obj[key], typ):
            raise ProtocolError(f"{where}.{key}: expected {typ}, got {type(obj[key]).__name__}")


def _check_box(value: Any, where: str) -> None:
    if (
        not isinstance(value, list)
        or len(value) != 4
        or any(isinstance(v, bool) or not isinstance(v, (int, float)) for v in value)
    ):
        raise ProtocolError(f"{where}: expected a [x1,y1,x2,y2] number list")


def _check_mask(value: Any, where: str) -> None:
    obj = _require_obj(value, where)
    _check_keys(obj, {"w": int, "h": int, "counts": list}, where)
    counts = obj["counts"]
    if any(isinstance(c, bool) or not isinstance(c, int) or c < 0 for c in counts):
        raise ProtocolError(f"{where}.counts: expected non-negative integers")
    if sum(counts) != obj["w"] * obj["h"]:
        raise ProtocolError(
            f"{where}.counts: sum {sum(counts)} != w*h {obj['w'] * obj['h']}"
        )


def validate_request(endpoint: str, payload: Any) -> Mapping[str, Any]:
    where = f"request {endpoint}"
    obj = _require_obj(payload, where) if endpoint != "/v1/health" else {}
    if endpoint == "/v1/ve" or endpoint == "/v1/vg":
        _check_keys(obj, {"image": str, "expression": str}, where)
    elif endpoint == "/v1/segment":
        _check_keys(obj, {"image": str, "box": list, "width": int, "height": int}, where)
        _check_box(obj["box"], f"{where}.box")
        if obj["width"] < 1 or obj["height"] < 1:
            raise ProtocolError(f"{where}: width/height must be >= 1")
    elif endpoint == "/v1/llm":
        _check_keys(obj, {"prompt": str, "max_tokens": int}, where)
        if obj["max_tokens"] < 1:
            raise ProtocolError(f"{where}.max_tokens: must be >= 1")
    elif endpoint == "/v1/health":
        pass
    else:
        raise ProtocolError(f"unknown endpoint {endpoint!r}")
    return payload if endpoint != "/v1/health" else {}


def validate_response(endpoint: str, payload: Any) -> Mapping[str, Any]:
    where = f"response {endpoint}"
    obj = _require_obj(payload, where)
    if endpoint == "/v1/ve":
        _check_keys(obj, {"label": str, "score": (int, float)}, where)
        if obj["label"] not in ("e", "c"):
            raise ProtocolError(f"{where}.label: expected 'e' or 'c', got {obj['label']!r}")
        if not 0 <= obj["score"] <= 1:
            raise ProtocolError(f"{where}.score: expected a value in [0,1]")
    elif endpoint == "/v1/vg":
        _check_keys(obj, {"box": list, "score": (int, float)}, where)
        _check_box(obj["box"], f"{where}.box")
    elif endpoint == "/v1/segment":
        _check_keys(obj, {"mask": dict}, where)
        _check_mask(obj["mask"], f"{where}.mask")
    elif endpoint == "/v1/llm":
        _check_keys(obj, {"text": str}, where)
    elif endpoint == "/v1/health":
        _check_keys(obj, {"status": str}, where)
    else:
        raise ProtocolError(f"unknown endpoint {endpoint!r}")
    return obj
