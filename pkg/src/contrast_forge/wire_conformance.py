"""Black-box conformance checks for the scorer wire protocol.

Any /score service — the bundled mock server or an external bridge —
must pass ``run_protocol_conformance(base_url)``. Checks are plain
assertions over HTTP so the same suite runs against any implementation.
"""

from __future__ import annotations

import json
import urllib.error
import urllib.request

import numpy as np

from .scorer_http import (
    DEFAULT_TIMEOUT,
    decode_gradient_b64,
    encode_image_b64,
)


def _request(base_url: str, method: str, path: str, body=None,
             timeout: float = DEFAULT_TIMEOUT) -> tuple:
    """Issue one request; returns (status, decoded JSON payload)."""
    data = None
    headers = {}
    if body is not None:
        data = body if isinstance(body, bytes) else \
            json.dumps(body).encode("utf-8")
        headers["Content-Type"] = "application/json"
    request = urllib.request.Request(base_url.rstrip("/") + path,
                                     data=data, headers=headers,
                                     method=method)
    try:
        with urllib.request.urlopen(request, timeout=timeout) as response:
            return response.status, json.loads(response.read())
    except urllib.error.HTTPError as exc:
        raw = exc.read()
        try:
            payload = json.loads(raw)
        except json.JSONDecodeError:
            payload = {"error": raw.decode("utf-8", "replace")}
        return exc.code, payload


def _test_image(height: int = 24, width: int = 32) -> np.ndarray:
    gradient_x = np.linspace(0.0, 1.0, width)[None, :, None]
    gradient_y = np.linspace(1.0, 0.0, height)[:, None, None]
    image = np.concatenate(
        [
            np.broadcast_to(gradient_x, (height, width, 1)),
            np.broadcast_to(gradient_y, (height, width, 1)),
            np.full((height, width, 1), 0.25),
        ],
        axis=2,
    )
    return np.ascontiguousarray(image)


def check_health(base_url: str, expect_models=None) -> list:
    status, payload = _request(base_url, "GET", "/health")
    assert status == 200, f"/health returned {status}"
    assert payload.get("status") == "ok", f"/health status {payload!r}"
    models = payload.get("models")
    assert isinstance(models, list) and models, \
        f"/health must list at least one model, got {models!r}"
    assert all(isinstance(m, str) for m in models)
    if expect_models is not None:
        assert sorted(models) == sorted(expect_models), \
            f"advertised models {models} != expected {expect_models}"
    return models


def check_score_only(base_url: str, model: str) -> float:
    body = {
        "image_b64": encode_image_b64(_test_image()),
        "text": "red jacket",
        "model": model,
        "want_gradient": False,
    }
    status, payload = _request(base_url, "POST", "/score", body)
    assert status == 200, f"/score returned {status}: {payload!r}"
    assert isinstance(payload.get("score"), (int, float)), \
        f"score missing or non-numeric: {payload!r}"
    assert np.isfinite(payload["score"]), "score must be finite"
    assert "gradient_b64" not in payload, \
        "gradient must be omitted when want_gradient is false"
    return float(payload["score"])


def check_gradient(base_url: str, model: str) -> np.ndarray:
    image = _test_image()
    body = {
        "image_b64": encode_image_b64(image),
        "text": "red jacket",
        "model": model,
        "want_gradient": True,
    }
    status, payload = _request(base_url, "POST", "/score", body)
    assert status == 200, f"/score returned {status}: {payload!r}"
    assert payload.get("shape") == list(image.shape), \
        f"gradient shape {payload.get('shape')} != image {image.shape}"
    gradient = decode_gradient_b64(payload["gradient_b64"],
                                   payload["shape"])
    assert np.all(np.isfinite(gradient)), "gradient must be finite"
    return gradient


def check_determinism(base_url: str, model: str) -> None:
    body = {
        "image_b64": encode_image_b64(_test_image()),
        "text": "blue denim jacket",
        "model": model,
        "want_gradient": True,
    }
    first = _request(base_url, "POST", "/score", body)
    second = _request(base_url, "POST", "/score", body)
    assert first == second, "identical requests must produce identical replies"


def check_unknown_model(base_url: str) -> None:
    body = {
        "image_b64": encode_image_b64(_test_image()),
        "text": "red jacket",
        "model": "no-such-model",
        "want_gradient": False,
    }
    status, payload = _request(base_url, "POST", "/score", body)
    assert status == 404, f"unknown model must 404, got {status}"
    assert "error" in payload, "error body must carry an 'error' field"


def check_malformed(base_url: str) -> None:
    status, payload = _request(base_url, "POST", "/score",
                               b"this is not json")
    assert status == 400, f"non-JSON body must 400, got {status}"
    assert "error" in payload
    status, payload = _request(base_url, "POST", "/score",
                               {"text": "red jacket"})
    assert status == 400, f"missing fields must 400, got {status}"
    assert "error" in payload


def check_unknown_path(base_url: str) -> None:
    status, payload = _request(base_url, "GET", "/no-such-path")
    assert status == 404, f"unknown path must 404, got {status}"
    assert "error" in payload


def run_protocol_conformance(base_url: str, expect_models=None) -> list:
    """Run every protocol check; returns the names that passed.

    Raises AssertionError on the first violated check.
    """
    passed = []
    models = check_health(base_url, expect_models)
    passed.append("health")
    for model in models:
        check_score_only(base_url, model)
        check_gradient(base_url, model)
        check_determinism(base_url, model)
        passed.append(f"score:{model}")
    check_unknown_model(base_url)
    passed.append("unknown-model-404")
    check_malformed(base_url)
    passed.append("malformed-400")
    check_unknown_path(base_url)
    passed.append("unknown-path-404")
    return passed
