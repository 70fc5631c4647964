"""Wire payload codecs: base64 PNG images, base64 float32 gradients.

Kept dependency-light and local so the bridge shares nothing with its
clients beyond the protocol itself.
"""

from __future__ import annotations

import base64
import io

import numpy as np
from PIL import Image


class WireError(ValueError):
    """A payload that does not decode per the wire contract."""


def decode_image_b64(payload: str) -> np.ndarray:
    """Base64 PNG text → float image in [0, 1], (H,W,3)."""
    try:
        raw = base64.b64decode(payload, validate=True)
        with Image.open(io.BytesIO(raw)) as img:
            arr = np.asarray(img.convert("RGB"), dtype=np.float64)
    except Exception as exc:
        raise WireError(f"image_b64 does not decode as PNG: {exc}") from exc
    return arr / 255.0


def encode_image_b64(image: np.ndarray) -> str:
    """Float image in [0, 1], (H,W,3) → base64 PNG text."""
    arr = np.asarray(image, dtype=np.float64)
    if arr.ndim != 3 or arr.shape[2] != 3:
        raise WireError(f"image must be (H,W,3), got {arr.shape}")
    quantized = np.rint(np.clip(arr, 0.0, 1.0) * 255.0).astype(np.uint8)
    buf = io.BytesIO()
    Image.fromarray(quantized, mode="RGB").save(buf, format="PNG")
    return base64.b64encode(buf.getvalue()).decode("ascii")


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
        raise WireError(
            f"gradient payload holds {len(raw)} bytes, expected {expected} "
            f"for shape {tuple(shape)}"
        )
    return np.frombuffer(raw, dtype="<f4").reshape(tuple(shape)) \
        .astype(np.float64)
