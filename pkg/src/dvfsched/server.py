"""Minimal HTTP/JSON serving of fitted energy/time models.

Endpoints (all under /v1, JSON bodies, UTF-8):

  POST /v1/predict  {"target": "energy"|"time", "features": [...],
                     "config": {"mem_clock": int, "core_clock": int}}
                    -> {"prediction": float, "fingerprint": str, "model_kind": str}
  GET  /v1/health   -> {"status": "ok", "models": {target: {fingerprint, kind}}}
  GET  /v1/schema   -> feature and config column names plus the fingerprint

Feature vectors are expected in model-input space (the z-scored profile); the
server appends the candidate clocks and queries the model, so a served
prediction is bit-identical to an in-process one. Malformed bodies get 400,
unknown targets 404, dimension mismatches 422, oversized bodies 413.

The model map is immutable after startup; request handling is threaded and
never mutates shared state.
"""

from __future__ import annotations

import json
import math
import threading
from http.server import BaseHTTPRequestHandler, ThreadingHTTPServer
from typing import Mapping

import numpy as np

MAX_BODY_BYTES = 1 << 20  # 1 MiB request cap


class _ModelHTTPServer(ThreadingHTTPServer):
    daemon_threads = False
    block_on_close = True
    allow_reuse_address = True

    def __init__(self, address, handler, models: Mapping[str, object]):
        super().__init__(address, handler)
        self.models = dict(models)


class _Handler(BaseHTTPRequestHandler):
    server_version = "dvfsched/0.1"
    protocol_version = "HTTP/1.1"

    def log_message(self, fmt, *args):  # keep test output quiet
        pass

    # -- helpers ----------------------------------------------------------

    def _send_json(self, status: int, payload: dict) -> None:
        body = json.dumps(payload).encode("utf-8")
        self.send_response(status)
        self.send_header("Content-Type", "application/json; charset=utf-8")
        self.send_header("Content-Length", str(len(body)))
        self.end_headers()
        self.wfile.write(body)

    def _error(self, status: int, message: str) -> None:
        self._send_json(status, {"error": message})

    @property
    def _models(self) -> Mapping[str, object]:
        return self.server.models

    # -- routes -----------------------------------------------------------

    def do_GET(self) -> None:
        if self.path == "/v1/health":
            self._send_json(200, {
                "status": "ok",
                "models": {target: {"fingerprint": m.fingerprint,
                                    "kind": m.kind_name}
                           for target, m in sorted(self._models.items())},
            })
        elif self.path == "/v1/schema":
            any_model = next(iter(self._models.values()))
            labels = list(any_model.input_labels)
            self._send_json(200, {
                "feature_names": labels[:-2],
                "config_labels": labels[-2:],
                "fingerprint": any_model.fingerprint,
            })
        else:
            self._error(404, f"unknown path {self.path!r}")

    def do_POST(self) -> None:
        if self.path != "/v1/predict":
            self._error(404, f"unknown path {self.path!r}")
            return
        try:
            length = int(self.headers.get("Content-Length", "0"))
        except ValueError:
            self._error(400, "bad Content-Length header")
            return
        if length > MAX_BODY_BYTES:
            self._error(413, f"request body exceeds {MAX_BODY_BYTES} bytes")
            return
        raw = self.rfile.read(length)
        try:
            body = json.loads(raw)
        except (json.JSONDecodeError, UnicodeDecodeError):
            self._error(400, "request body is not valid JSON")
            return
        if not isinstance(body, dict):
            self._error(400, "request body must be a JSON object")
            return

        target = body.get("target")
        if not isinstance(target, str):
            self._error(400, "missing or non-string 'target'")
            return
        features = body.get("features")
        if (not isinstance(features, list) or not features
                or not all(isinstance(v, (int, float)) and not isinstance(v, bool)
                           and math.isfinite(v) for v in features)):
            self._error(400, "'features' must be a non-empty list of finite numbers")
            return
        config = body.get("config")
        if (not isinstance(config, dict)
                or not all(isinstance(config.get(key), int) and config[key] > 0
                           for key in ("mem_clock", "core_clock"))):
            self._error(400, "'config' must carry positive integer mem_clock/core_clock")
            return

        model = self._models.get(target)
        if model is None:
            self._error(404, f"no model serves target {target!r}")
            return
        if len(features) + 2 != model.n_inputs:
            self._error(422, f"expected {model.n_inputs - 2} features, "
                             f"got {len(features)}")
            return

        x = np.array(list(features) + [float(config["core_clock"]),
                                       float(config["mem_clock"])])
        prediction = float(model.predict(x))
        if not math.isfinite(prediction):
            self._error(500, "model produced a non-finite prediction")
            return
        self._send_json(200, {
            "prediction": prediction,
            "fingerprint": model.fingerprint,
            "model_kind": model.kind_name,
        })


class ModelServer:
    """A running prediction service; start() returns once the socket listens."""

    def __init__(self, models: Mapping[str, object], host: str = "127.0.0.1",
                 port: int = 0):
        if not models:
            raise ValueError("need at least one model to serve")
        fingerprints = {m.fingerprint for m in models.values()}
        if len(fingerprints) != 1:
            raise ValueError("all served models must share one input schema")
        self._httpd = _ModelHTTPServer((host, port), _Handler, models)
        self._thread: threading.Thread | None = None

    @property
    def host(self) -> str:
        return self._httpd.server_address[0]

    @property
    def port(self) -> int:
        return self._httpd.server_address[1]

    @property
    def url(self) -> str:
        return f"http://{self.host}:{self.port}"

    def start(self) -> "ModelServer":
        self._thread = threading.Thread(target=self._httpd.serve_forever,
                                        name="dvfsched-server", daemon=True)
        self._thread.start()
        return self

    def serve_forever(self) -> None:
        self._httpd.serve_forever()

    def shutdown(self) -> None:
        self._httpd.shutdown()
        self._httpd.server_close()
        if self._thread is not None:
            self._thread.join()
            self._thread = None

    def __enter__(self) -> "ModelServer":
        return self.start()

    def __exit__(self, *exc) -> None:
        self.shutdown()


def serve(models: Mapping[str, object], host: str = "127.0.0.1",
          port: int = 0) -> ModelServer:
    """Start serving ``models`` (a target -> model map); returns the running
    service."""
    return ModelServer(models, host=host, port=port).start()
