"""The bridge HTTP service: /score and /health per the wire protocol.

Request handling is a pure (method, path, body) → (status, payload)
mapping on ``BridgeApp`` so the protocol logic tests without sockets;
FastAPI + uvicorn wrap it for serving. Errors: unknown model or path →
404, malformed body → 400, more concurrent requests than the registry
admits → 429 — always with an ``{"error": reason}`` body.

Configuration comes from flags or environment variables:
``BRIDGE_HOST``, ``BRIDGE_PORT``, ``BRIDGE_DEVICE``,
``BRIDGE_MODEL_CACHE``, ``BRIDGE_MODELS`` (auto|real|toy),
``BRIDGE_MAX_CONCURRENT``.
"""

from __future__ import annotations

import argparse
import json
import logging
import os
import sys
import threading
import time

from fastapi import FastAPI, Request
from fastapi.responses import JSONResponse

from .models import ModelRegistry, default_registry
from .wire import WireError, decode_image_b64, encode_gradient_b64

logger = logging.getLogger(__name__)


class BridgeApp:
    """Socket-free request router over a model registry."""

    def __init__(self, registry: ModelRegistry):
        self.registry = registry

    def handle(self, method: str, path: str, body) -> tuple:
        if method == "GET" and path == "/health":
            return 200, self.registry.health()
        if method == "POST" and path == "/score":
            if not self.registry.admit():
                return 429, {"error": "too many concurrent requests"}
            try:
                return self._score(body)
            finally:
                self.registry.release()
        return 404, {"error": f"no route for {method} {path}"}

    def _score(self, body) -> tuple:
        if not isinstance(body, dict):
            return 400, {"error": "request body must be a JSON object"}
        for name in ("image_b64", "text", "model"):
            if not isinstance(body.get(name), str):
                return 400, {"error": f"field {name!r} missing or not "
                                      "a string"}
        want_gradient = body.get("want_gradient", False)
        if not isinstance(want_gradient, bool):
            return 400, {"error": "field 'want_gradient' must be a bool"}
        model_id = body["model"]
        if not self.registry.has(model_id):
            return 404, {"error": f"unknown model {model_id!r}"}
        try:
            image = decode_image_b64(body["image_b64"])
        except WireError as exc:
            return 400, {"error": str(exc)}
        score, gradient = self.registry.score_array(
            model_id, image, body["text"], want_gradient)
        payload = {"score": score, "model": model_id}
        if want_gradient:
            payload["gradient_b64"] = encode_gradient_b64(gradient)
            payload["shape"] = list(gradient.shape)
        return 200, payload


def make_asgi_app(registry: ModelRegistry) -> FastAPI:
    """FastAPI application delegating to the pure router."""
    bridge = BridgeApp(registry)
    api = FastAPI(title="scorer bridge", docs_url=None, redoc_url=None)

    @api.get("/health")
    def health():
        status, payload = bridge.handle("GET", "/health", None)
        return JSONResponse(payload, status_code=status)

    @api.post("/score")
    async def score(request: Request):
        try:
            body = json.loads(await request.body())
        except (json.JSONDecodeError, UnicodeDecodeError):
            return JSONResponse({"error": "request body is not valid JSON"},
                                status_code=400)
        status, payload = bridge.handle("POST", "/score", body)
        return JSONResponse(payload, status_code=status)

    @api.api_route("/{path:path}",
                   methods=["GET", "POST", "PUT", "DELETE"])
    def fallback(path: str):
        return JSONResponse({"error": f"no route for /{path}"},
                            status_code=404)

    return api


def start_server(registry: ModelRegistry, host: str = "127.0.0.1",
                 port: int = 0, startup_timeout: float = 30.0):
    """Serve on a background thread; returns (server, thread, base_url).

    Stop with ``server.should_exit = True`` and join the thread.
    """
    import uvicorn

    config = uvicorn.Config(make_asgi_app(registry), host=host, port=port,
                            log_level="warning")
    server = uvicorn.Server(config)
    thread = threading.Thread(target=server.run, daemon=True)
    thread.start()
    deadline = time.time() + startup_timeout
    while not server.started:
        if time.time() > deadline or not thread.is_alive():
            raise RuntimeError("bridge server failed to start")
        time.sleep(0.01)
    bound_port = server.servers[0].sockets[0].getsockname()[1]
    return server, thread, f"http://{host}:{bound_port}"


def main(argv=None) -> int:
    logging.basicConfig(
        stream=sys.stderr,
        level=logging.INFO,
        format="%(levelname)s %(name)s: %(message)s",
    )
    env = os.environ
    parser = argparse.ArgumentParser(description=__doc__)
    parser.add_argument("--host", default=env.get("BRIDGE_HOST",
                                                  "127.0.0.1"))
    parser.add_argument("--port", type=int,
                        default=int(env.get("BRIDGE_PORT", "8798")))
    parser.add_argument("--device",
                        default=env.get("BRIDGE_DEVICE", "cpu"))
    parser.add_argument("--cache-dir",
                        default=env.get("BRIDGE_MODEL_CACHE"))
    parser.add_argument("--models",
                        default=env.get("BRIDGE_MODELS", "auto"),
                        choices=("auto", "real", "toy"))
    parser.add_argument("--max-concurrent", type=int,
                        default=int(env.get("BRIDGE_MAX_CONCURRENT", "4")))
    args = parser.parse_args(argv)

    import uvicorn

    registry = default_registry(mode=args.models,
                                cache_dir=args.cache_dir,
                                device=args.device,
                                max_concurrent=args.max_concurrent)
    json.dump(registry.health(), sys.stdout)
    sys.stdout.write("\n")
    sys.stdout.flush()
    uvicorn.run(make_asgi_app(registry), host=args.host, port=args.port,
                log_level="info")
    return 0


if __name__ == "__main__":
    raise SystemExit(main())
