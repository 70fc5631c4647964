"""Binary PLY and image I/O for splat clouds.

The PLY layout stores the raw optimization parameters (log-scales,
unnormalized quaternions, opacity logits) as little-endian float32 in
the property order ``x y z scale_0..2 rot_0..3 f_dc_0..2 opacity`` so a
save/load round trip is bit-exact for float32 clouds.
"""

from __future__ import annotations

import numpy as np
from PIL import Image

from .errors import ContractError
from .splat_render import GaussianCloud

PLY_PROPERTIES = (
    "x", "y", "z",
    "scale_0", "scale_1", "scale_2",
    "rot_0", "rot_1", "rot_2", "rot_3",
    "f_dc_0", "f_dc_1", "f_dc_2",
    "opacity",
)


def save_splat_ply(cloud: GaussianCloud, path: str) -> None:
    n = len(cloud)
    header = ["ply", "format binary_little_endian 1.0",
              f"element vertex {n}"]
    header += [f"property float {name}" for name in PLY_PROPERTIES]
    header.append("end_header")
    data = np.empty(n, dtype=[(name, "<f4") for name in PLY_PROPERTIES])
    pos = cloud.positions.astype("<f4")
    scl = cloud.log_scales.astype("<f4")
    rot = cloud.rotations.astype("<f4")
    col = cloud.colors.astype("<f4")
    for k, axis in enumerate("xyz"):
        data[axis] = pos[:, k]
    for k in range(3):
        data[f"scale_{k}"] = scl[:, k]
    for k in range(4):
        data[f"rot_{k}"] = rot[:, k]
    for k in range(3):
        data[f"f_dc_{k}"] = col[:, k]
    data["opacity"] = cloud.opacities.astype("<f4")
    with open(path, "wb") as fh:
        fh.write(("\n".join(header) + "\n").encode("ascii"))
        fh.write(data.tobytes())


def load_splat_ply(path: str) -> GaussianCloud:
    with open(path, "rb") as fh:
        blob = fh.read()
    end = blob.find(b"end_header\n")
    if end < 0:
        raise ContractError(f"{path}: missing PLY end_header")
    lines = blob[:end].decode("ascii").splitlines()
    if not lines or lines[0] != "ply":
        raise ContractError(f"{path}: not a PLY file")
    if "format binary_little_endian 1.0" not in lines:
        raise ContractError(f"{path}: expected binary little-endian PLY")
    count = None
    names = []
    for line in lines:
        parts = line.split()
        if parts[:2] == ["element", "vertex"]:
            count = int(parts[2])
        elif parts and parts[0] == "property":
            if parts[1] != "float":
                raise ContractError(f"{path}: non-float property {parts[2]}")
            names.append(parts[2])
    if count is None:
        raise ContractError(f"{path}: missing vertex element")
    missing = [p for p in PLY_PROPERTIES if p not in names]
    if missing:
        raise ContractError(f"{path}: missing properties {missing}")
    dtype = np.dtype([(name, "<f4") for name in names])
    body = blob[end + len(b"end_header\n"):]
    if len(body) < count * dtype.itemsize:
        raise ContractError(f"{path}: truncated payload")
    data = np.frombuffer(body[: count * dtype.itemsize], dtype=dtype)
    stack = lambda keys: np.stack([data[k] for k in keys], axis=1).copy()
    return GaussianCloud(
        positions=stack(["x", "y", "z"]),
        log_scales=stack([f"scale_{k}" for k in range(3)]),
        rotations=stack([f"rot_{k}" for k in range(4)]),
        colors=stack([f"f_dc_{k}" for k in range(3)]),
        opacities=data["opacity"].copy(),
    )


def save_png(path: str, image: np.ndarray) -> None:
    """Write an HxWx3 float image in [0,1] as 8-bit PNG."""
    arr = np.asarray(image)
    if arr.ndim != 3 or arr.shape[2] != 3:
        raise ContractError(f"expected HxWx3 image, got {arr.shape}")
    quantized = np.rint(np.clip(arr, 0.0, 1.0) * 255.0).astype(np.uint8)
    Image.fromarray(quantized, mode="RGB").save(path, format="PNG")


def load_png(path: str) -> np.ndarray:
    """Read a PNG back to HxWx3 float64 in [0,1]."""
    with Image.open(path) as img:
        arr = np.asarray(img.convert("RGB"), dtype=np.float64)
    return arr / 255.0
