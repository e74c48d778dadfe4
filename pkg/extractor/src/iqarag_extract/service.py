"""HTTP embedding service.

POST any path with ``{"images": [<base64>...], "encoder": <tag>}`` and
get ``{"dim": D, "vectors": [[...], ...]}`` back, rows in request
order.  Failures return a JSON object with an ``"error"`` string and a
non-2xx status: 400 for malformed requests or an encoder-tag mismatch,
422 for bytes that do not decode as an image, 500 for anything else.

GET returns the service description (encoder name, dim, weights).
"""

from __future__ import annotations

import base64
import binascii
import hashlib
import json
import logging
from http.server import BaseHTTPRequestHandler, ThreadingHTTPServer

import torch

from .encoders import Encoder
from .errors import ValidationError

log = logging.getLogger("iqarag_extract")


class EmbeddingServer(ThreadingHTTPServer):
    daemon_threads = True

    def __init__(self, host: str, port: int, encoder: Encoder) -> None:
        self.encoder = encoder
        super().__init__((host, port), _Handler)

    @property
    def url(self) -> str:
        host, port = self.server_address[:2]
        return f"http://{host}:{port}/"


class _RequestError(Exception):
    def __init__(self, status: int, message: str) -> None:
        super().__init__(message)
        self.status = status


class _Handler(BaseHTTPRequestHandler):
    server: EmbeddingServer

    def log_message(self, format: str, *args) -> None:  # noqa: A002 - stdlib signature
        log.debug("%s %s", self.address_string(), format % args)

    def _reply(self, status: int, payload: dict) -> None:
        body = json.dumps(payload).encode("utf-8")
        self.send_response(status)
        self.send_header("Content-Type", "application/json")
        self.send_header("Content-Length", str(len(body)))
        self.end_headers()
        self.wfile.write(body)

    def do_GET(self) -> None:
        enc = self.server.encoder
        self._reply(200, {
            "encoder": enc.name,
            "dim": enc.dim,
            "pooling": enc.pooling,
            "weights": enc.weights_label,
        })

    def do_POST(self) -> None:
        try:
            self._reply(200, self._embed(self._read_body()))
        except _RequestError as exc:
            self._reply(exc.status, {"error": str(exc)})
        except Exception as exc:  # keep the server alive, report the failure
            log.exception("embedding request failed")
            self._reply(500, {"error": f"{type(exc).__name__}: {exc}"})

    def _read_body(self) -> dict:
        try:
            length = int(self.headers.get("Content-Length") or 0)
        except ValueError:
            raise _RequestError(400, "invalid Content-Length header")
        try:
            payload = json.loads(self.rfile.read(length))
        except ValueError:
            raise _RequestError(400, "request body is not valid JSON")
        if not isinstance(payload, dict):
            raise _RequestError(400, "request body must be a JSON object")
        return payload

    def _embed(self, payload: dict) -> dict:
        enc = self.server.encoder
        images = payload.get("images")
        if not isinstance(images, list):
            raise _RequestError(400, "'images' must be a list of base64 strings")
        tag = payload.get("encoder", "")
        if tag and tag != enc.name:
            raise _RequestError(
                400, f"this service embeds with '{enc.name}', request asked for '{tag}'"
            )

        raw: list[bytes] = []
        for i, item in enumerate(images):
            if not isinstance(item, str):
                raise _RequestError(400, f"images[{i}] must be a base64 string")
            try:
                raw.append(base64.b64decode(item, validate=True))
            except (binascii.Error, ValueError) as exc:
                raise _RequestError(400, f"images[{i}] is not valid base64: {exc}")

        # one forward per distinct image, rows fanned back out in order
        keys = [hashlib.sha256(data).hexdigest() for data in raw]
        unique: dict[str, torch.Tensor] = {}
        for i, (key, data) in enumerate(zip(keys, raw)):
            if key in unique:
                continue
            try:
                unique[key] = enc.preprocess(data)
            except ValidationError as exc:
                raise _RequestError(422, f"images[{i}]: {exc}")
        rows = enc.embed_tensors(list(unique.values()))
        row_by_key = dict(zip(unique, rows))
        return {"dim": enc.dim, "vectors": [row_by_key[key].tolist() for key in keys]}
