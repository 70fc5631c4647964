"""HTTP face of the scorer protocol: codecs, mock server, and clients.

The wire contract, shared by the bundled mock server and any external
scorer service:

* ``POST /score`` with ``{image_b64, text, model, want_gradient}`` →
  ``{score, gradient_b64, shape}``. Images travel as base64 PNG;
  gradients as base64 little-endian float32 in ∂score/∂pixel units for
  pixels in [0, 1].
* ``GET /health`` → ``{status: "ok", models: [...]}``.
* ``POST /analyze`` with ``{prompt}`` → ``{maps, irrelevant}`` (the
  language-model hook used by negation-prompt construction).

Errors: unknown model or path → 404, malformed body → 400, more
concurrent requests than the server admits → 429; every error body is
``{"error": reason}``.
"""

from __future__ import annotations

import base64
import io
import json
import logging
import threading
import urllib.error
import urllib.request
from http.server import BaseHTTPRequestHandler, ThreadingHTTPServer

import numpy as np
from PIL import Image

from .errors import ContractError, ScorerError
from .negation import RuleLlmClient
from .preference import PreferenceSignal, default_mock_scorers

logger = logging.getLogger(__name__)

DEFAULT_TIMEOUT = 10.0


# ---------------------------------------------------------------------------
# Payload codecs


def encode_image_b64(image: np.ndarray) -> str:
    """Float image in [0, 1], (H,W,3) → base64 PNG text."""
    arr = np.asarray(image, dtype=np.float64)
    if arr.ndim != 3 or arr.shape[2] != 3:
        raise ContractError(f"image must be (H,W,3), got {arr.shape}")
    quantized = np.rint(np.clip(arr, 0.0, 1.0) * 255.0).astype(np.uint8)
    buf = io.BytesIO()
    Image.fromarray(quantized, mode="RGB").save(buf, format="PNG")
    return base64.b64encode(buf.getvalue()).decode("ascii")


def decode_image_b64(payload: str) -> np.ndarray:
    """Base64 PNG text → float image in [0, 1], (H,W,3)."""
    try:
        raw = base64.b64decode(payload, validate=True)
        with Image.open(io.BytesIO(raw)) as img:
            rgb = img.convert("RGB")
            arr = np.asarray(rgb, dtype=np.float64)
    except Exception as exc:
        raise ContractError(f"image_b64 does not decode as PNG: {exc}") \
            from exc
    return arr / 255.0

def encode_gradient_b64(gradient: np.ndarray) -> str:
    """Gradient array → base64 of little-endian float32 bytes."""
    return base64.b64encode(
        np.ascontiguousarray(gradient, dtype="<f4").tobytes()
    ).decode("ascii")


def decode_gradient_b64(payload: str, shape) -> np.ndarray:
    """Base64 little-endian float32 bytes → float64 array of ``shape``."""
    raw = base64.b64decode(payload)
    expected = int(np.prod(shape)) * 4
    if len(raw) != expected:
        raise ContractError(
            f"gradient payload holds {len(raw)} bytes, expected {expected} "
            f"for shape {tuple(shape)}"
        )
    flat = np.frombuffer(raw, dtype="<f4")
    return flat.reshape(tuple(shape)).astype(np.float64)


# ---------------------------------------------------------------------------
# Request handling, independent of any socket


class MockScorerApp:
    """Routes protocol requests onto in-process scorers.

    Pure request→response mapping so the protocol logic can be tested
    without sockets; the HTTP server below is a thin shell around it.
    """

    def __init__(self, scorers=None, analyzer=None,
                 max_concurrent: int = 8):
        if scorers is None:
            scorers = default_mock_scorers()
        self.scorers = {s.identifier: s for s in scorers}
        self.analyzer = analyzer if analyzer is not None else RuleLlmClient()
        self._slots = threading.Semaphore(max_concurrent)
        self._admits = max_concurrent > 0

    @property
    def model_ids(self) -> list:
        return list(self.scorers)

    def handle(self, method: str, path: str, body) -> tuple:
        """Dispatch one request; returns (status, payload dict)."""
        if method == "GET" and path == "/health":
            return 200, {"status": "ok", "models": self.model_ids}
        if method == "POST" and path == "/score":
            return self._guarded(self._score, body)
        if method == "POST" and path == "/analyze":
            return self._guarded(self._analyze, body)
        return 404, {"error": f"no route for {method} {path}"}

    def _guarded(self, handler, body) -> tuple:
        if not self._admits or not self._slots.acquire(blocking=False):
            return 429, {"error": "too many concurrent requests"}
        try:
            return handler(body)
        finally:
            self._slots.release()

    def _score(self, body) -> tuple:
        if not isinstance(body, dict):
            return 400, {"error": "request body must be a JSON object"}
        for name, kind in (("image_b64", str), ("text", str),
                           ("model", str)):
            if not isinstance(body.get(name), kind):
                return 400, {"error": f"field {name!r} missing or not "
                                      f"a {kind.__name__}"}
        want_gradient = body.get("want_gradient", False)
        if not isinstance(want_gradient, bool):
            return 400, {"error": "field 'want_gradient' must be a bool"}
        model = body["model"]
        scorer = self.scorers.get(model)
        if scorer is None:
            return 404, {"error": f"unknown model {model!r}"}
        try:
            image = decode_image_b64(body["image_b64"])
        except ContractError as exc:
            return 400, {"error": str(exc)}
        signal = scorer.score(image, body["text"])
        payload = {"score": float(signal.score), "model": model}
        if want_gradient:
            payload["gradient_b64"] = encode_gradient_b64(signal.gradient)
            payload["shape"] = list(signal.gradient.shape)
        return 200, payload

    def _analyze(self, body) -> tuple:
        if not isinstance(body, dict) or \
                not isinstance(body.get("prompt"), str):
            return 400, {"error": "field 'prompt' missing or not a string"}
        return 200, self.analyzer.analyze(body["prompt"])


class _Handler(BaseHTTPRequestHandler):
    app: MockScorerApp = None  # set by make_server

    def _reply(self, status: int, payload: dict) -> None:
        blob = json.dumps(payload).encode("utf-8")
        self.send_response(status)
        self.send_header("Content-Type", "application/json")
        self.send_header("Content-Length", str(len(blob)))
        self.end_headers()
        self.wfile.write(blob)

    def do_GET(self):  # noqa: N802 - http.server API
        status, payload = self.app.handle("GET", self.path, None)
        self._reply(status, payload)

    def do_POST(self):  # noqa: N802 - http.server API
        length = int(self.headers.get("Content-Length", 0))
        raw = self.rfile.read(length) if length else b""
        try:
            body = json.loads(raw.decode("utf-8")) if raw else None
        except (UnicodeDecodeError, json.JSONDecodeError):
            self._reply(400, {"error": "request body is not valid JSON"})
            return
        if body is None:
            self._reply(400, {"error": "request body is required"})
            return
        status, payload = self.app.handle("POST", self.path, body)
        self._reply(status, payload)

    def log_message(self, fmt, *args):  # quiet: route to logging
        logger.debug("%s - %s", self.address_string(), fmt % args)


def make_server(scorers=None, host: str = "127.0.0.1", port: int = 0,
                max_concurrent: int = 8) -> ThreadingHTTPServer:
    """Build (but do not start) the mock scorer HTTP server."""
    app = MockScorerApp(scorers, max_concurrent=max_concurrent)
    handler = type("BoundHandler", (_Handler,), {"app": app})
    server = ThreadingHTTPServer((host, port), handler)
    server.daemon_threads = True
    return server


def start_mock_server(scorers=None, host: str = "127.0.0.1",
                      port: int = 0) -> tuple:
    """Run the mock server on a background thread.

    Returns ``(server, base_url)``; call ``server.shutdown()`` when done.
    """
    server = make_server(scorers, host, port)
    thread = threading.Thread(target=server.serve_forever, daemon=True)
    thread.start()
    bound_host, bound_port = server.server_address[:2]
    return server, f"http://{bound_host}:{bound_port}"


# ---------------------------------------------------------------------------
# Clients


def _post_json(url: str, payload: dict, timeout: float) -> dict:
    request = urllib.request.Request(
        url,
        data=json.dumps(payload).encode("utf-8"),
        headers={"Content-Type": "application/json"},
        method="POST",
    )
    with urllib.request.urlopen(request, timeout=timeout) as response:
        return json.loads(response.read().decode("utf-8"))


def _get_json(url: str, timeout: float) -> dict:
    with urllib.request.urlopen(url, timeout=timeout) as response:
        return json.loads(response.read().decode("utf-8"))


class HttpScorer:
    """Preference scorer backed by a /score endpoint."""

    def __init__(self, base_url: str, model: str,
                 timeout: float = DEFAULT_TIMEOUT):
        self.base_url = base_url.rstrip("/")
        self.identifier = model
        self.timeout = timeout

    def score(self, image: np.ndarray, text: str) -> PreferenceSignal:
        payload = {
            "image_b64": encode_image_b64(image),
            "text": text,
            "model": self.identifier,
            "want_gradient": True,
        }
        try:
            reply = _post_json(f"{self.base_url}/score", payload,
                               self.timeout)
        except urllib.error.HTTPError as exc:
            detail = exc.read().decode("utf-8", "replace")
            raise ScorerError(
                f"scorer '{self.identifier}' endpoint returned "
                f"{exc.code}: {detail}"
            ) from exc
        except (urllib.error.URLError, OSError, ValueError) as exc:
            raise ScorerError(
                f"scorer '{self.identifier}' endpoint unreachable: {exc}"
            ) from exc
        if "score" not in reply or "gradient_b64" not in reply:
            raise ScorerError(
                f"scorer '{self.identifier}' reply missing score/gradient"
            )
        gradient = decode_gradient_b64(reply["gradient_b64"],
                                       reply["shape"])
        if tuple(gradient.shape) != np.asarray(image).shape:
            raise ScorerError(
                f"scorer '{self.identifier}' returned gradient shape "
                f"{gradient.shape} for image {np.asarray(image).shape}"
            )
        return PreferenceSignal(score=float(reply["score"]),
                                gradient=gradient,
                                scorer_id=self.identifier)


def scorers_from_url(base_url: str,
                     timeout: float = DEFAULT_TIMEOUT) -> list:
    """One HttpScorer per model advertised by the endpoint's /health."""
    base = base_url.rstrip("/")
    try:
        health = _get_json(f"{base}/health", timeout)
    except (urllib.error.URLError, OSError, ValueError) as exc:
        raise ScorerError(f"scorer endpoint {base} unreachable: {exc}") \
            from exc
    models = health.get("models", [])
    if health.get("status") != "ok" or not models:
        raise ScorerError(f"scorer endpoint {base} reported no models")
    return [HttpScorer(base, model, timeout) for model in models]


class RemoteLlmClient:
    """Language-model hook speaking the /analyze wire interface.

    Saliency and confusable lookups are answered by probing /analyze
    with minimal one-clause prompts, cached per term; transport errors
    propagate so callers fall back to the rule client.
    """

    # Several garments so a modifier that fuses with one into a compound
    # noun ("denim jacket") still parses as a modifier against another.
    _PROBE_GARMENTS = ("jacket", "socks", "scarf")

    def __init__(self, base_url: str, timeout: float = DEFAULT_TIMEOUT):
        self.base_url = base_url.rstrip("/")
        self.timeout = timeout
        self._saliency_cache = {}
        self._irrelevant_cache = {}

    def analyze(self, prompt: str) -> dict:
        return _post_json(f"{self.base_url}/analyze", {"prompt": prompt},
                          self.timeout)

    def saliency(self, modifier: str) -> float:
        if modifier not in self._saliency_cache:
            value = 0.0
            for garment in self._PROBE_GARMENTS:
                maps = self.analyze(f"{modifier} {garment}")["maps"]
                match = next(
                    (m for m in maps if m["modifier"] == modifier), None)
                if match is not None:
                    value = float(match["saliency"])
                    break
            self._saliency_cache[modifier] = value
        return self._saliency_cache[modifier]

    def irrelevant_for(self, attribute: str) -> list:
        if attribute not in self._irrelevant_cache:
            reply = self.analyze(attribute)
            self._irrelevant_cache[attribute] = list(reply["irrelevant"])
        return list(self._irrelevant_cache[attribute])
