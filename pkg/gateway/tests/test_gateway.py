import json
import time
from pathlib import Path

import numpy as np
import pytest
from fastapi.testclient import TestClient
from PIL import Image

from model_gateway.adapters import AdapterLoadError, load_adapter
from model_gateway.config import ConfigError, GatewayConfig, Limits
from model_gateway.rle import encode_mask
from model_gateway.server import (
    GroundingRequest,
    HealthResponse,
    LlmRequest,
    LlmResponse,
    SegmentRequest,
    SegmentResponse,
    VeResponse,
    VgResponse,
    create_app,
)

VECTORS_PATH = Path(__file__).resolve().parents[2] / "tests" / "data" / "protocol_vectors.json"

REQUEST_MODELS = {
    "/v1/ve": GroundingRequest,
    "/v1/vg": GroundingRequest,
    "/v1/segment": SegmentRequest,
    "/v1/llm": LlmRequest,
    "/v1/health": None,
}
RESPONSE_MODELS = {
    "/v1/ve": VeResponse,
    "/v1/vg": VgResponse,
    "/v1/segment": SegmentResponse,
    "/v1/llm": LlmResponse,
    "/v1/health": HealthResponse,
}


@pytest.fixture(scope="module")
def image_path(tmp_path_factory):
    path = tmp_path_factory.mktemp("images") / "sample.png"
    rng = np.random.default_rng(0)
    pixels = rng.integers(0, 255, size=(48, 64, 3), dtype=np.uint8)
    pixels[10:38, 16:48] = [200, 40, 40]
    Image.fromarray(pixels).save(path)
    return str(path)


@pytest.fixture(scope="module")
def client():
    config = GatewayConfig(
        models={
            "ve": "builtin:hash",
            "vg": "builtin:center",
            "segment": "builtin:boxfill",
            "llm": "builtin:echo",
        },
        limits=Limits(max_tokens=32, max_pixels=1_000_000),
    )
    with TestClient(create_app(config)) as test_client:
        yield test_client


class TestSharedVectors:
    def vectors(self):
        return json.loads(VECTORS_PATH.read_text(encoding="utf-8"))["vectors"]

    def test_every_vector_validates(self):
        for vector in self.vectors():
            endpoint = vector["endpoint"]
            request_model = REQUEST_MODELS[endpoint]
            if request_model is not None:
                request_model.model_validate(vector["request"])
            RESPONSE_MODELS[endpoint].model_validate(vector["response"])

    def test_vector_masks_sum(self):
        for vector in self.vectors():
            if vector["endpoint"] != "/v1/segment":
                continue
            mask = vector["response"]["mask"]
            assert sum(mask["counts"]) == mask["w"] * mask["h"]

    def test_live_responses_validate(self, client, image_path):
        for vector in self.vectors():
            endpoint = vector["endpoint"]
            if endpoint == "/v1/health":
                response = client.get(endpoint)
            else:
                request = dict(vector["request"])
                if "image" in request:
                    request["image"] = image_path
                response = client.post(endpoint, json=request)
            assert response.status_code == 200, (endpoint, response.text)
            RESPONSE_MODELS[endpoint].model_validate(response.json())


class TestHealth:
    def test_ok_and_fast(self, client):
        started = time.monotonic()
        response = client.get("/v1/health")
        elapsed = time.monotonic() - started
        assert response.status_code == 200
        assert response.json() == {"status": "ok"}
        assert elapsed < 0.1

    def test_not_ready_before_startup(self):
        config = GatewayConfig(models={"llm": "builtin:echo"})
        app = create_app(config)
        # Without entering the client context the lifespan never runs,
        # so adapters are not loaded and health must report loading.
        bare = TestClient(app, raise_server_exceptions=False)
        response = bare.get("/v1/health")
        assert response.status_code == 503
        assert response.json() == {"status": "loading"}
        with TestClient(app) as started:
            assert started.get("/v1/health").json() == {"status": "ok"}


class TestVe:
    def test_label_contract(self, client, image_path):
        response = client.post(
            "/v1/ve", json={"image": image_path, "expression": "Alice (PER)"}
        )
        assert response.status_code == 200
        body = response.json()
        assert body["label"] in ("e", "c")
        assert 0.0 <= body["score"] <= 1.0

    def test_deterministic(self, client, image_path):
        request = {"image": image_path, "expression": "Bob (PER) - someone"}
        first = client.post("/v1/ve", json=request).json()
        second = client.post("/v1/ve", json=request).json()
        assert first == second


class TestVg:
    def test_quarter_area_box(self, client, image_path):
        response = client.post(
            "/v1/vg", json={"image": image_path, "expression": "Alice (PER)"}
        )
        assert response.status_code == 200
        x1, y1, x2, y2 = response.json()["box"]
        assert (x2 - x1) * (y2 - y1) == pytest.approx(64 * 48 / 4)

    def test_malformed_body_is_400(self, client):
        response = client.post("/v1/vg", json={"image": "x.jpg"})
        assert response.status_code == 400
        response = client.post(
            "/v1/vg", json={"image": "x.jpg", "expression": "e", "extra": 1}
        )
        assert response.status_code == 400

    def test_missing_image_is_422(self, client):
        response = client.post(
            "/v1/vg", json={"image": "/nonexistent/void.jpg", "expression": "Alice (PER)"}
        )
        assert response.status_code == 422


class TestSegment:
    def test_mask_dimensions_and_sum(self, client, image_path):
        response = client.post(
            "/v1/segment",
            json={"image": image_path, "box": [0, 0, 8, 8], "width": 32, "height": 16},
        )
        assert response.status_code == 200
        mask = response.json()["mask"]
        assert (mask["w"], mask["h"]) == (32, 16)
        assert sum(mask["counts"]) == 32 * 16
        assert sum(mask["counts"][1::2]) == 64

    def test_box_outside_canvas_is_422(self, client, image_path):
        response = client.post(
            "/v1/segment",
            json={"image": image_path, "box": [50, 50, 60, 60], "width": 16, "height": 16},
        )
        assert response.status_code == 422

    def test_pixel_limit_is_422(self, client, image_path):
        response = client.post(
            "/v1/segment",
            json={"image": image_path, "box": [0, 0, 4, 4], "width": 4096, "height": 4096},
        )
        assert response.status_code == 422


class TestLlm:
    def test_respects_max_tokens(self, client):
        prompt = " ".join(f"tok{i}" for i in range(100))
        response = client.post("/v1/llm", json={"prompt": prompt, "max_tokens": 7})
        assert response.status_code == 200
        assert len(response.json()["text"].split()) <= 7

    def test_server_limit_caps_request(self, client):
        prompt = " ".join(f"tok{i}" for i in range(100))
        response = client.post("/v1/llm", json={"prompt": prompt, "max_tokens": 99})
        assert len(response.json()["text"].split()) <= 32


class TestDisabledEndpoints:
    def test_disabled_endpoint_is_404(self):
        config = GatewayConfig(models={"llm": "builtin:echo"})
        with TestClient(create_app(config)) as client:
            response = client.post(
                "/v1/ve", json={"image": "x.jpg", "expression": "Alice (PER)"}
            )
            assert response.status_code == 404


class TestConfigAndAdapters:
    def test_unknown_endpoint_rejected(self):
        with pytest.raises(ConfigError, match="unknown endpoint"):
            GatewayConfig(models={"bogus": "builtin:echo"})

    def test_empty_identifier_rejected(self):
        with pytest.raises(ConfigError, match="non-empty"):
            GatewayConfig(models={"llm": ""})

    def test_config_file_roundtrip(self, tmp_path):
        path = tmp_path / "gateway.json"
        path.write_text(
            json.dumps(
                {
                    "host": "0.0.0.0",
                    "port": 9001,
                    "models": {"segment": "builtin:boxfill"},
                    "limits": {"max_tokens": 16},
                }
            ),
            encoding="utf-8",
        )
        config = GatewayConfig.from_file(path)
        assert config.port == 9001
        assert config.enabled("segment")
        assert not config.enabled("ve")
        assert config.limits.max_tokens == 16

    def test_unknown_builtin_rejected(self):
        with pytest.raises(AdapterLoadError, match="no builtin"):
            load_adapter("ve", "builtin:nope", "cpu")

    def test_unknown_scheme_rejected(self):
        with pytest.raises(AdapterLoadError, match="scheme"):
            load_adapter("ve", "magic:thing", "cpu")

    def test_grabcut_adapter_when_opencv_present(self, image_path):
        cv2 = pytest.importorskip("cv2")
        adapter = load_adapter("segment", "builtin:grabcut", "cpu")
        grid = adapter.segment(image_path, [16, 10, 48, 38], 64, 48)
        assert grid.shape == (48, 64)
        assert grid.any()
        mask = encode_mask(grid)
        assert sum(mask["counts"]) == 64 * 48


class TestMain:
    def test_bad_config_exits_nonzero(self, tmp_path, capsys):
        from model_gateway.__main__ import main

        path = tmp_path / "gw.json"
        path.write_text('{"models": {"bogus": "builtin:echo"}}', encoding="utf-8")
        assert main(["--config", str(path)]) == 1
        assert "fatal" in capsys.readouterr().err

    def test_unloadable_model_exits_nonzero(self, tmp_path, capsys):
        from model_gateway.__main__ import main

        path = tmp_path / "gw.json"
        path.write_text('{"models": {"ve": "builtin:nope"}}', encoding="utf-8")
        assert main(["--config", str(path)]) == 1
        assert "fatal" in capsys.readouterr().err


class TestRle:
    def test_leading_zero_convention(self):
        grid = np.zeros((2, 2), dtype=bool)
        assert encode_mask(grid)["counts"] == [4]
        grid[0, 0] = True
        assert encode_mask(grid)["counts"] == [0, 1, 3]

    def test_counts_always_sum(self):
        rng = np.random.default_rng(1)
        for _ in range(200):
            h, w = int(rng.integers(1, 20)), int(rng.integers(1, 20))
            mask = encode_mask(rng.random((h, w)) < 0.5)
            assert sum(mask["counts"]) == w * h
            assert all(c >= 0 for c in mask["counts"])
            assert all(c > 0 for c in mask["counts"][1:])
