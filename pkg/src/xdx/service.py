"""HTTP inference service exposing the cascade.

Models are loaded once at startup and shared immutably across request
handler threads; each request is independently preprocessed, routed
through the cascade, and answered with the report JSON.

Endpoints:
  GET  /v1/health            liveness probe
  GET  /v1/models            per-stage metadata (spec, classes, checksum)
  POST /v1/predict[?explain=CONDITION|all]   raw PGM or PNG body
"""

from __future__ import annotations

import hashlib
import json
import logging
from http.server import BaseHTTPRequestHandler, ThreadingHTTPServer
from pathlib import Path
from urllib.parse import parse_qs, urlparse

from . import imaging
from .cascade import CascadeConfig, CascadeModels, run_cascade
from .config import ServiceConfig, STAGE_HEAD_KINDS, parse_spec
from .model import Head, build_network, load_weights

log = logging.getLogger("xdx.service")


def _load_stage(stage: int, entry, input_size: int):
    units = 1 if stage == 1 else len(entry.classes)
    head = Head(STAGE_HEAD_KINDS[stage], units)
    spec_obj = dict(entry.spec_obj)
    spec_obj.setdefault("input_size", input_size)
    spec = parse_spec(spec_obj, head)
    if spec.input_size != input_size:
        raise ValueError(
            f"stage {stage} spec input_size {spec.input_size} differs from service input_size {input_size}"
        )
    net = build_network(spec, 0)
    load_weights(net, entry.weights)
    checksum = hashlib.sha256(Path(entry.weights).read_bytes()).hexdigest()
    meta = {
        "stage": stage,
        "spec": spec_obj,
        "classes": list(entry.classes),
        "input_size": input_size,
        "weights_sha256": checksum,
    }
    return net, meta


class ServiceContext:
    """Everything a request handler needs, built once and never mutated."""

    def __init__(self, config: ServiceConfig):
        s1, m1 = _load_stage(1, config.stage1, config.input_size)
        s2, m2 = _load_stage(2, config.stage2, config.input_size)
        s3, m3 = _load_stage(3, config.stage3, config.input_size)
        self.models = CascadeModels(
            s1, s2, s3,
            stage2_classes=config.stage2.classes,
            stage3_classes=config.stage3.classes,
            input_size=config.input_size,
        )
        self.cascade_config = CascadeConfig(
            stage1_threshold=config.stage1_threshold,
            stage3_threshold=config.stage3_threshold,
            explain_classes=config.explain,
        )
        self.metadata = [m1, m2, m3]
        self.body_limit = config.body_limit


class _Handler(BaseHTTPRequestHandler):
    protocol_version = "HTTP/1.1"

    # -- plumbing ----------------------------------------------------------

    def log_message(self, fmt, *args):
        log.debug("%s %s", self.address_string(), fmt % args)

    def _send_json(self, code: int, payload: dict):
        body = json.dumps(payload).encode("utf-8")
        self.send_response(code)
        self.send_header("Content-Type", "application/json")
        self.send_header("Content-Length", str(len(body)))
        self.end_headers()
        self.wfile.write(body)

    def _send_error_json(self, code: int, message: str):
        log.info("request failed (%d): %s", code, message)
        self._send_json(code, {"error": message})

    # -- routes -------------------------------------------------------------

    def do_GET(self):
        path = urlparse(self.path).path
        if path == "/v1/health":
            self._send_json(200, {"status": "ok"})
        elif path == "/v1/models":
            self._send_json(200, {"models": self.server.ctx.metadata})
        else:
            self._send_error_json(404, f"unknown path {path!r}")

    def do_POST(self):
        parsed = urlparse(self.path)
        if parsed.path != "/v1/predict":
            self._send_error_json(404, f"unknown path {parsed.path!r}")
            return
        ctx: ServiceContext = self.server.ctx

        length_header = self.headers.get("Content-Length")
        if length_header is None:
            self._send_error_json(400, "missing Content-Length")
            return
        try:
            length = int(length_header)
        except ValueError:
            self._send_error_json(400, f"bad Content-Length {length_header!r}")
            return
        if length > ctx.body_limit:
            self._send_error_json(413, f"body of {length} bytes exceeds limit {ctx.body_limit}")
            return
        if length <= 0:
            self._send_error_json(400, "empty request body")
            return

        raw = self.rfile.read(length)
        media_type = (self.headers.get("Content-Type") or "").split(";")[0].strip() or None

        query = parse_qs(parsed.query)
        explain_request = query.get("explain", [None])[0]

        try:
            image = imaging.decode_image_bytes(raw, media_type)
        except ValueError as exc:
            self._send_error_json(400, f"cannot decode image: {exc}")
            return
        try:
            report = run_cascade(image, ctx.models, ctx.cascade_config, explain_request)
        except ValueError as exc:
            self._send_error_json(400, str(exc))
            return
        except Exception:
            log.exception("prediction failed")
            self._send_error_json(500, "internal error during prediction")
            return
        self._send_json(200, report.to_json_dict())


class CascadeServer(ThreadingHTTPServer):
    daemon_threads = True

    def __init__(self, address, ctx: ServiceContext):
        super().__init__(address, _Handler)
        self.ctx = ctx


def make_server(config: ServiceConfig, host: str = "127.0.0.1", port: int | None = None) -> CascadeServer:
    """Load the models and bind; pass port 0 for an ephemeral port."""
    ctx = ServiceContext(config)
    server = CascadeServer((host, config.port if port is None else port), ctx)
    log.info("listening on %s:%d", *server.server_address)
    return server


def serve(config: ServiceConfig, host: str = "0.0.0.0") -> None:
    server = make_server(config, host=host)
    try:
        server.serve_forever()
    finally:
        server.server_close()
