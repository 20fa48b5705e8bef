"""HTTP+JSON inference service over a frozen checkpoint.

The model is immutable for the process lifetime; requests are stateless and
may run concurrently. Responses use canonical JSON (sorted keys, no
whitespace, full float precision), so identical request bodies produce
byte-identical responses. Images cross the boundary as base64 of 8-bit
grayscale PNG; quantization happens only here.

Endpoints:
    GET  /model/info                 -> {latent_dim, layout, resolution}
    POST /encode  {image}            -> {mu, logvar}
    POST /decode  {latents}          -> {image}
    POST /sweep   {image? latents? index from to steps} -> {images}
"""

from __future__ import annotations

import base64
import binascii
import json
from http.server import BaseHTTPRequestHandler, ThreadingHTTPServer

import numpy as np

from .errors import DomainError
from .imaging import from_png_bytes, png_bytes
from .network import Network, encode_batch, decode

MAX_BODY_BYTES = 4 * 1024 * 1024


class RequestError(Exception):
    def __init__(self, status: int, message: str):
        super().__init__(message)
        self.status = status
        self.message = message


def canonical_body(obj) -> bytes:
    return json.dumps(obj, sort_keys=True, separators=(",", ":")).encode("utf-8")


class ModelService:
    """Request handlers, independent of the HTTP plumbing."""

    def __init__(self, net: Network):
        self.net = net

    def info(self) -> dict:
        layout = self.net.layout
        lo, hi = layout.intrinsic_range
        body = {name: idx for name, idx in layout.extrinsic}
        body["intrinsic"] = list(range(lo, hi))
        return {
            "latent_dim": layout.total_dim,
            "layout": body,
            "resolution": self.net.config.resolution,
        }

    def _image_from_field(self, payload: dict, field: str = "image") -> np.ndarray:
        raw = payload.get(field)
        if not isinstance(raw, str):
            raise RequestError(400, f"missing or non-string {field!r} field")
        try:
            data = base64.b64decode(raw, validate=True)
        except (binascii.Error, ValueError):
            raise RequestError(400, f"{field!r} is not valid base64")
        try:
            image = from_png_bytes(data)
        except DomainError as e:
            raise RequestError(422, str(e))
        r = self.net.config.resolution
        if image.shape != (1, r, r):
            raise RequestError(422, f"image is {image.shape[2]}x{image.shape[1]}, model wants {r}x{r}")
        return image

    def _latents_from_field(self, payload: dict, field: str = "latents") -> np.ndarray:
        raw = payload.get(field)
        if not isinstance(raw, list) or not all(isinstance(v, (int, float)) for v in raw):
            raise RequestError(400, f"missing or non-numeric {field!r} field")
        total = self.net.layout.total_dim
        if len(raw) != total:
            raise RequestError(422, f"latent vector has length {len(raw)}, model wants {total}")
        return np.asarray(raw, dtype=self.net.dtype)

    def encode(self, payload: dict) -> dict:
        image = self._image_from_field(payload)
        mu, logvar, _ = encode_batch(self.net, image[None])
        return {"mu": mu[0].tolist(), "logvar": logvar[0].tolist()}

    def decode(self, payload: dict) -> dict:
        z = self._latents_from_field(payload)
        x_hat, _ = decode(self.net, z)
        return {"image": base64.b64encode(png_bytes(x_hat)).decode("ascii")}

    def sweep(self, payload: dict) -> dict:
        if "image" in payload:
            image = self._image_from_field(payload)
            mu, _, _ = encode_batch(self.net, image[None])
            base = mu[0]
        elif "latents" in payload:
            base = self._latents_from_field(payload)
        else:
            raise RequestError(400, "provide either 'image' or 'latents'")
        index = payload.get("index")
        steps = payload.get("steps")
        if not isinstance(index, int) or isinstance(index, bool):
            raise RequestError(400, "missing or non-integer 'index' field")
        if not isinstance(steps, int) or isinstance(steps, bool):
            raise RequestError(400, "missing or non-integer 'steps' field")
        if not 0 <= index < self.net.layout.total_dim:
            raise RequestError(422, f"latent index {index} out of range")
        if steps < 1 or steps > 256:
            raise RequestError(422, "steps must lie in [1, 256]")
        if steps == 1:
            values = [float(base[index])]
        else:
            lo = payload.get("from")
            hi = payload.get("to")
            if not isinstance(lo, (int, float)) or not isinstance(hi, (int, float)):
                raise RequestError(400, "missing or non-numeric 'from'/'to' fields")
            values = np.linspace(float(lo), float(hi), steps).tolist()
        images = []
        for v in values:
            code = np.array(base, dtype=self.net.dtype, copy=True)
            code[index] = v
            x_hat, _ = decode(self.net, code)
            images.append(base64.b64encode(png_bytes(x_hat)).decode("ascii"))
        return {"images": images}


def make_handler(service: ModelService):
    class Handler(BaseHTTPRequestHandler):
        protocol_version = "HTTP/1.1"
        server_version = "scenecode"
        sys_version = ""

        def log_message(self, fmt, *args):  # quiet by default
            pass

        def _respond(self, status: int, obj) -> None:
            body = canonical_body(obj)
            self.send_response(status)
            self.send_header("Content-Type", "application/json")
            self.send_header("Content-Length", str(len(body)))
            self._cors()
            self.end_headers()
            self.wfile.write(body)

        def _cors(self) -> None:
            self.send_header("Access-Control-Allow-Origin", "*")
            self.send_header("Access-Control-Allow-Methods", "GET, POST, OPTIONS")
            self.send_header("Access-Control-Allow-Headers", "Content-Type")

        def do_OPTIONS(self):
            self.send_response(204)
            self._cors()
            self.send_header("Content-Length", "0")
            self.end_headers()

        def do_GET(self):
            if self.path == "/model/info":
                self._respond(200, service.info())
            else:
                self._respond(404, {"error": f"no such path {self.path}"})

        def do_POST(self):
            routes = {
                "/encode": service.encode,
                "/decode": service.decode,
                "/sweep": service.sweep,
            }
            handler = routes.get(self.path)
            if handler is None:
                self._respond(404, {"error": f"no such path {self.path}"})
                return
            length = int(self.headers.get("Content-Length") or 0)
            if length > MAX_BODY_BYTES:
                self._respond(413, {"error": f"payload exceeds {MAX_BODY_BYTES} bytes"})
                return
            raw = self.rfile.read(length)
            try:
                payload = json.loads(raw)
                if not isinstance(payload, dict):
                    raise RequestError(400, "request body must be a JSON object")
            except json.JSONDecodeError as e:
                self._respond(400, {"error": f"malformed JSON: {e.msg}"})
                return
            try:
                self._respond(200, handler(payload))
            except RequestError as e:
                self._respond(e.status, {"error": e.message})
    return Handler


def create_server(net: Network, port: int = 0, host: str = "127.0.0.1") -> ThreadingHTTPServer:
    """Bind a server (port 0 picks a free port); caller drives serve_forever."""
    return ThreadingHTTPServer((host, port), make_handler(ModelService(net)))


def serve(net: Network, port: int, host: str = "0.0.0.0") -> None:
    """Serve the model until interrupted."""
    server = ThreadingHTTPServer((host, port), make_handler(ModelService(net)))
    try:
        server.serve_forever()
    finally:
        server.server_close()
