"""Threaded HTTP wrapper around mock_respond, for exercising the HTTP
client and the CLI against a live URL without any model deployment."""

from __future__ import annotations

import json
import threading
from http.server import BaseHTTPRequestHandler, ThreadingHTTPServer

from .errors import ProtocolError
from .pipeline import MockLookup, mock_respond
from .protocol import ENDPOINTS


def _make_handler(lookup: MockLookup):
    class Handler(BaseHTTPRequestHandler):
        def log_message(self, format: str, *args) -> None:  # noqa: A002 - base signature
            pass

        def _send(self, status: int, body: dict) -> None:
            data = json.dumps(body).encode("utf-8")
            self.send_response(status)
            self.send_header("Content-Type", "application/json")
            self.send_header("Content-Length", str(len(data)))
            self.end_headers()
            self.wfile.write(data)

        def do_GET(self) -> None:
            if self.path == "/v1/health":
                self._send(200, mock_respond(lookup, "/v1/health", {}))
            else:
                self._send(404, {"error": f"unknown path {self.path}"})

        def do_POST(self) -> None:
            if self.path not in ENDPOINTS:
                self._send(404, {"error": f"unknown path {self.path}"})
                return
            length = int(self.headers.get("Content-Length", "0"))
            raw = self.rfile.read(length)
            try:
                payload = json.loads(raw) if raw else {}
            except json.JSONDecodeError:
                self._send(400, {"error": "request body is not JSON"})
                return
            try:
                self._send(200, mock_respond(lookup, self.path, payload))
            except ProtocolError as exc:
                self._send(400, {"error": str(exc)})

    return Handler


class MockServer:
    """In-process mock backend server; use as a context manager in tests."""

    def __init__(self, lookup: MockLookup | None = None, host: str = "127.0.0.1", port: int = 0):
        self._server = ThreadingHTTPServer((host, port), _make_handler(lookup or MockLookup()))
        self._thread = threading.Thread(target=self._server.serve_forever, daemon=True)

    @property
    def base_url(self) -> str:
        host, port = self._server.server_address[:2]
        return f"http://{host}:{port}"

    def __enter__(self) -> "MockServer":
        self._thread.start()
        return self

    def __exit__(self, *exc_info) -> None:
        self._server.shutdown()
        self._server.server_close()
        self._thread.join(timeout=5)
