"""HTTP inference service.

The weight bundle and SVM model are loaded and validated before the
port opens; after startup all shared state is immutable, so requests
are handled concurrently with per-request scratch only.

Endpoints:
    GET  /health   -> {"status", "backbone_dim", "model_version"}
    POST /predict  -> {"label", "decision_value", "elapsed_ms"}
    POST /features -> {"rows", "cols", "grid"}
    GET  /...      -> static UI assets when a static directory is configured

Uploads arrive either as multipart/form-data (field "file") or as a raw
body with an image/* content type.  Images are never written to disk.
"""

from __future__ import annotations

import json
import logging
import mimetypes
import os
import threading
import time
from dataclasses import dataclass
from email.parser import BytesParser
from email.policy import default as _email_policy
from http.server import BaseHTTPRequestHandler, ThreadingHTTPServer

import numpy as np

from ctcad import backbone, imaging, svm

log = logging.getLogger("ctcad.service")

DEFAULT_MAX_UPLOAD = 10 * 1024 * 1024

_RAW_CONTENT_TYPES = ("image/", "application/octet-stream")


class StartupError(RuntimeError):
    """The service cannot start because its inputs fail to load."""


@dataclass
class ServiceConfig:
    port: int
    bundle_path: str
    model_path: str
    static_dir: str | None = None
    max_upload: int = DEFAULT_MAX_UPLOAD
    host: str = "127.0.0.1"
    verbose: bool = False

    def __post_init__(self):
        if not 0 <= self.port <= 65535:
            raise ValueError(f"port {self.port} out of range")
        if self.max_upload < 1:
            raise ValueError("max_upload must be positive")


def run_pipeline(graph: backbone.NetworkGraph, model: svm.NuSvmModel, data: bytes) -> dict:
    """decode -> preprocess -> forward -> decision, timed end to end.

    The same function backs the one-shot CLI prediction and the HTTP
    handler, so online and offline scores agree bit for bit.
    """
    t0 = time.perf_counter()
    raw = imaging.decode_image(data)
    tensor = imaging.preprocess(raw)
    t1 = time.perf_counter()
    features = backbone.forward(graph, tensor)
    score = svm.decision_value(model, features)
    t2 = time.perf_counter()
    label = model.label_map[1 if score > 0.0 else -1]
    return {
        "label": label,
        "decision_value": score,
        "elapsed_ms": (t2 - t0) * 1000.0,
        "decode_ms": (t1 - t0) * 1000.0,
        "infer_ms": (t2 - t1) * 1000.0,
        "features": features,
    }


def prediction_response(result: dict) -> dict:
    """The exact three-key wire object for POST /predict."""
    return {
        "label": result["label"],
        "decision_value": result["decision_value"],
        "elapsed_ms": result["elapsed_ms"],
    }


class _RequestError(Exception):
    def __init__(self, status: int, code: str, message: str):
        super().__init__(message)
        self.status = status
        self.code = code


class InferenceService:
    """Owns the loaded graph/model and the HTTP server."""

    def __init__(self, cfg: ServiceConfig):
        self.cfg = cfg
        try:
            self.graph = backbone.load_bundle(cfg.bundle_path)
        except (backbone.BundleError, OSError) as exc:
            raise StartupError(f"weight bundle failed to load: {exc}") from exc
        try:
            self.model = svm.load_model(cfg.model_path)
        except (ValueError, OSError) as exc:
            raise StartupError(f"SVM model failed to load: {exc}") from exc
        if self.model.d != self.graph.feature_dim:
            raise StartupError(
                f"model expects {self.model.d}-dimensional features but the "
                f"bundle produces {self.graph.feature_dim}"
            )
        if cfg.static_dir is not None and not os.path.isdir(cfg.static_dir):
            raise StartupError(f"static directory {cfg.static_dir!r} does not exist")

        handler = _make_handler(self)
        # the port opens only here, after everything above has validated
        self._server = ThreadingHTTPServer((cfg.host, cfg.port), handler)
        self._server.daemon_threads = True
        self._thread: threading.Thread | None = None

    @property
    def port(self) -> int:
        return self._server.server_address[1]

    def serve_forever(self):
        log.info("serving on %s:%d", self.cfg.host, self.port)
        self._server.serve_forever()

    def start_background(self) -> threading.Thread:
        self._thread = threading.Thread(target=self._server.serve_forever, daemon=True)
        self._thread.start()
        return self._thread

    def shutdown(self):
        self._server.shutdown()
        self._server.server_close()
        if self._thread is not None:
            self._thread.join(timeout=5)


def start_service(cfg: ServiceConfig) -> InferenceService:
    """Load everything, bind the port, return the ready-to-serve service."""
    return InferenceService(cfg)


def _make_handler(service: InferenceService):
    class Handler(BaseHTTPRequestHandler):
        protocol_version = "HTTP/1.1"
        server_version = "ctcad"

        def log_message(self, fmt, *args):
            log.debug("%s - %s", self.address_string(), fmt % args)

        # ------------------------------------------------------------------
        def _send(self, status: int, body: bytes, content_type: str):
            self.send_response(status)
            self.send_header("Content-Type", content_type)
            self.send_header("Content-Length", str(len(body)))
            self.end_headers()
            self.wfile.write(body)

        def _send_json(self, status: int, payload: dict):
            self._send(status, json.dumps(payload).encode("utf-8"), "application/json")

        def _send_error_json(self, status: int, code: str, message: str):
            self._send_json(status, {"code": code, "message": message})

        # ------------------------------------------------------------------
        def do_GET(self):
            path = self.path.split("?", 1)[0]
            if path == "/health":
                self._send_json(
                    200,
                    {
                        "status": "ok",
                        "backbone_dim": service.graph.feature_dim,
                        "model_version": svm.MODEL_VERSION,
                    },
                )
                return
            self._serve_static(path)

        def do_POST(self):
            path = self.path.split("?", 1)[0]
            if path not in ("/predict", "/features"):
                self._send_error_json(404, "not_found", f"no such endpoint {path}")
                return
            try:
                data = self._read_upload()
                result = run_pipeline(service.graph, service.model, data)
            except _RequestError as exc:
                self._send_error_json(exc.status, exc.code, str(exc))
                return
            except imaging.DecodeError as exc:
                self._send_error_json(400, "decode_error", str(exc))
                return
            except Exception:
                log.exception("unhandled error in %s", path)
                self._send_error_json(500, "internal_error", "internal error")
                return

            if service.cfg.verbose:
                log.info(
                    "%s: decode=%.1fms infer=%.1fms total=%.1fms",
                    path,
                    result["decode_ms"],
                    result["infer_ms"],
                    result["elapsed_ms"],
                )
            if path == "/predict":
                self._send_json(200, prediction_response(result))
                return
            try:
                grid = backbone.reshape_feature_grid(result["features"])
            except backbone.ReshapeError as exc:
                self._send_error_json(422, "not_reshapable", str(exc))
                return
            self._send_json(
                200,
                {
                    "rows": int(grid.shape[0]),
                    "cols": int(grid.shape[1]),
                    "grid": [[float(v) for v in row] for row in grid],
                },
            )

        # ------------------------------------------------------------------
        def _read_upload(self) -> bytes:
            length_header = self.headers.get("Content-Length")
            if length_header is None:
                raise _RequestError(400, "length_required", "Content-Length required")
            try:
                length = int(length_header)
            except ValueError:
                raise _RequestError(400, "length_required", "bad Content-Length")
            if length > service.cfg.max_upload:
                raise _RequestError(
                    400,
                    "too_large",
                    f"upload of {length} bytes exceeds limit {service.cfg.max_upload}",
                )
            if length <= 0:
                raise _RequestError(400, "empty_body", "empty request body")

            ctype = (self.headers.get("Content-Type") or "").strip()
            body = self.rfile.read(length)
            base = ctype.split(";", 1)[0].strip().lower()
            if base == "multipart/form-data":
                return self._multipart_file(ctype, body)
            if any(base.startswith(p) for p in _RAW_CONTENT_TYPES):
                return body
            raise _RequestError(
                415,
                "unsupported_media",
                f"content type {base or '(none)'} not accepted; use multipart/form-data or image/*",
            )

        def _multipart_file(self, ctype: str, body: bytes) -> bytes:
            head = f"Content-Type: {ctype}\r\nMIME-Version: 1.0\r\n\r\n".encode()
            try:
                msg = BytesParser(policy=_email_policy).parsebytes(head + body)
            except Exception as exc:
                raise _RequestError(400, "bad_multipart", f"unparseable multipart body: {exc}")
            if not msg.is_multipart():
                raise _RequestError(400, "bad_multipart", "body is not multipart")
            fallback = None
            for part in msg.iter_parts():
                name = part.get_param("name", header="content-disposition")
                payload = part.get_payload(decode=True)
                if payload is None:
                    continue
                if name == "file":
                    return payload
                if fallback is None:
                    fallback = payload
            if fallback is None:
                raise _RequestError(400, "bad_multipart", "no file part in upload")
            return fallback

        # ------------------------------------------------------------------
        def _serve_static(self, path: str):
            root = service.cfg.static_dir
            if root is None:
                self._send_error_json(
                    404, "not_found", "no static assets configured; API lives at /predict"
                )
                return
            rel = path.lstrip("/") or "index.html"
            full = os.path.realpath(os.path.join(root, rel))
            if not full.startswith(os.path.realpath(root) + os.sep) and full != os.path.realpath(
                os.path.join(root, "index.html")
            ):
                self._send_error_json(404, "not_found", "no such file")
                return
            if os.path.isdir(full):
                full = os.path.join(full, "index.html")
            if not os.path.isfile(full):
                self._send_error_json(404, "not_found", "no such file")
                return
            ctype = mimetypes.guess_type(full)[0] or "application/octet-stream"
            with open(full, "rb") as fh:
                self._send(200, fh.read(), ctype)

    return Handler


def extract_features_from_bytes(graph: backbone.NetworkGraph, data: bytes) -> np.ndarray:
    """Helper for callers that want only the feature vector."""
    raw = imaging.decode_image(data)
    return backbone.forward(graph, imaging.preprocess(raw))
