import json
from pathlib import Path

import pytest

from riveg.errors import ProtocolError
from riveg.protocol import ENDPOINTS, validate_request, validate_response

VECTORS = json.loads(
    (Path(__file__).parent / "data" / "protocol_vectors.json").read_text(encoding="utf-8")
)["vectors"]


def test_every_shared_vector_validates():
    assert len(VECTORS) >= len(ENDPOINTS) - 1
    for vector in VECTORS:
        endpoint = vector["endpoint"]
        validate_request(endpoint, vector["request"])
        validate_response(endpoint, vector["response"])


def test_vectors_cover_all_post_endpoints():
    covered = {v["endpoint"] for v in VECTORS}
    assert {"/v1/ve", "/v1/vg", "/v1/segment", "/v1/llm", "/v1/health"} <= covered


@pytest.mark.parametrize(
    "endpoint,payload,match",
    [
        ("/v1/ve", {"image": "x.jpg"}, "missing"),
        ("/v1/ve", {"image": "x.jpg", "expression": "e", "extra": 1}, "unknown"),
        ("/v1/segment", {"image": "x", "box": [0, 0, 1], "width": 2, "height": 2}, "box"),
        ("/v1/llm", {"prompt": "p", "max_tokens": 0}, "max_tokens"),
        ("/v1/llm", {"prompt": "p", "max_tokens": True}, "expected"),
    ],
)
def test_bad_requests_rejected(endpoint, payload, match):
    with pytest.raises(ProtocolError, match=match):
        validate_request(endpoint, payload)


@pytest.mark.parametrize(
    "endpoint,payload,match",
    [
        ("/v1/ve", {"label": "x", "score": 0.5}, "label"),
        ("/v1/ve", {"label": "e", "score": 1.5}, "score"),
        ("/v1/vg", {"box": [0, 0, 1, 1]}, "missing"),
        ("/v1/segment", {"mask": {"w": 2, "h": 2, "counts": [3]}}, "sum"),
        ("/v1/health", {"status": "ok", "extra": 1}, "unknown"),
    ],
)
def test_bad_responses_rejected(endpoint, payload, match):
    with pytest.raises(ProtocolError, match=match):
        validate_response(endpoint, payload)
