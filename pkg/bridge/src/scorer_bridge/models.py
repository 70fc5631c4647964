"""Model registry: preference scorers with differentiable image paths.

Every model in the registry maps a request-resolution image tensor in
[0, 1] to a scalar score with the whole preprocessing chain — resize,
normalization, network — inside the autograd graph. The gradient the
service returns is therefore ``∂score/∂pixel`` at the *request*
resolution: backpropagating through the resize applies its transpose
automatically, which keeps the wire contract resolution-agnostic.

Real checkpoints (ImageReward, PickScore) are loaded when their
packages and weights are reachable; otherwise ``default_registry``
degrades to two built-in differentiable toy models behind the same
interface, and says so loudly. The toy ids are distinct from the real
ids — the service never claims a checkpoint it did not load.
"""

from __future__ import annotations

import hashlib
import logging
import threading
from dataclasses import dataclass

import numpy as np
import torch
import torch.nn.functional as F

logger = logging.getLogger(__name__)

REAL_MODEL_IDS = ("image_reward", "pick_score")
TOY_MODEL_IDS = ("toy:patchwise", "toy:prompt-color")


class ModelUnavailable(RuntimeError):
    """A checkpoint or its package cannot be loaded in this environment."""


def _hash_parameters(tensors) -> str:
    """Stable hex digest of a model's parameter/buffer bytes."""
    digest = hashlib.sha256()
    for tensor in tensors:
        arr = tensor.detach().cpu().to(torch.float64).numpy()
        digest.update(arr.tobytes())
    return digest.hexdigest()[:16]


def _to_batch(image: torch.Tensor, size: int) -> torch.Tensor:
    """HWC [0,1] tensor → resized NCHW batch, inside the graph."""
    chw = image.permute(2, 0, 1).unsqueeze(0)
    if chw.shape[-2:] != (size, size):
        chw = F.interpolate(chw, size=(size, size), mode="bilinear",
                            align_corners=False)
    return chw


# ---------------------------------------------------------------------------
# Built-in toy models (differentiable, deterministic, CPU float64)


class PatchwiseToyModel:
    """Fixed random conv features scored for local contrast.

    Text-independent; exists to exercise the full conv + resize
    gradient path with genuinely hashed parameters.
    """

    model_id = TOY_MODEL_IDS[0]
    input_size = 48

    def __init__(self, seed: int = 424242):
        rng = np.random.default_rng(seed)
        weight = rng.standard_normal((8, 3, 3, 3)) / 9.0
        self.weight = torch.tensor(weight, dtype=torch.float64)

    def score_tensor(self, image: torch.Tensor, text: str) -> torch.Tensor:
        batch = _to_batch(image, self.input_size)
        features = F.conv2d(batch, self.weight, padding=1)
        return torch.tanh(features).pow(2).mean()

    def checkpoint_hash(self) -> str:
        return _hash_parameters([self.weight])


class PromptColorToyModel:
    """Score = closeness of the mean image color to a text-keyed color.

    The target color is a deterministic hash of the text, so the model
    is text-conditioned and its optimum is known in closed form —
    convenient for optimization-loop tests.
    """

    model_id = TOY_MODEL_IDS[1]
    input_size = 32

    def __init__(self):
        self.scale = torch.tensor(4.0, dtype=torch.float64)

    @staticmethod
    def target_color(text: str) -> np.ndarray:
        digest = hashlib.sha256(text.encode("utf-8")).digest()
        raw = np.frombuffer(digest[:3], dtype=np.uint8) / 255.0
        return 0.15 + 0.7 * raw  # keep targets away from clipping

    def score_tensor(self, image: torch.Tensor, text: str) -> torch.Tensor:
        batch = _to_batch(image, self.input_size)
        mean_color = batch.mean(dim=(0, 2, 3))
        target = torch.tensor(self.target_color(text), dtype=torch.float64)
        return -self.scale * ((mean_color - target) ** 2).mean()

    def checkpoint_hash(self) -> str:
        return _hash_parameters([self.scale])


# ---------------------------------------------------------------------------
# Real checkpoint adapters (loaded only when reachable)


class ImageRewardAdapter:
    """ImageReward with its preprocessing rebuilt inside the graph."""

    model_id = REAL_MODEL_IDS[0]
    input_size = 224
    _MEAN = (0.48145466, 0.4578275, 0.40821073)
    _STD = (0.26862954, 0.26130258, 0.27577711)

    def __init__(self, model, device: str = "cpu"):
        self.model = model.to(device).eval()
        self.device = device

    def score_tensor(self, image: torch.Tensor, text: str) -> torch.Tensor:
        batch = _to_batch(image, self.input_size).to(torch.float32)
        mean = torch.tensor(self._MEAN).view(1, 3, 1, 1)
        std = torch.tensor(self._STD).view(1, 3, 1, 1)
        normalized = (batch - mean) / std
        return self.model.score_gard_input(normalized, text) \
            if hasattr(self.model, "score_gard_input") \
            else self._score_via_blip(normalized, text)

    def _score_via_blip(self, pixels: torch.Tensor, text: str):
        tokenizer = self.model.blip.tokenizer
        tokens = tokenizer(text, padding="max_length", truncation=True,
                           max_length=35, return_tensors="pt")
        image_embeds = self.model.blip.visual_encoder(pixels)
        attention = torch.ones(image_embeds.size()[:-1], dtype=torch.long)
        output = self.model.blip.text_encoder(
            tokens.input_ids,
            attention_mask=tokens.attention_mask,
            encoder_hidden_states=image_embeds,
            encoder_attention_mask=attention,
            return_dict=True,
        )
        return self.model.mlp(output.last_hidden_state[:, 0, :]).squeeze()

    def checkpoint_hash(self) -> str:
        return _hash_parameters(p for p in self.model.parameters())


class PickScoreAdapter:
    """CLIP-based PickScore with in-graph preprocessing."""

    model_id = REAL_MODEL_IDS[1]
    input_size = 224
    _MEAN = (0.48145466, 0.4578275, 0.40821073)
    _STD = (0.26862954, 0.26130258, 0.27577711)

    def __init__(self, model, processor, device: str = "cpu"):
        self.model = model.to(device).eval()
        self.processor = processor
        self.device = device

    def score_tensor(self, image: torch.Tensor, text: str) -> torch.Tensor:
        batch = _to_batch(image, self.input_size).to(torch.float32)
        mean = torch.tensor(self._MEAN).view(1, 3, 1, 1)
        std = torch.tensor(self._STD).view(1, 3, 1, 1)
        pixels = (batch - mean) / std
        tokens = self.processor(text=[text], padding=True, truncation=True,
                                return_tensors="pt")
        image_features = self.model.get_image_features(pixel_values=pixels)
        text_features = self.model.get_text_features(**tokens)
        image_features = image_features / image_features.norm(dim=-1,
                                                              keepdim=True)
        text_features = text_features / text_features.norm(dim=-1,
                                                           keepdim=True)
        logit = self.model.logit_scale.exp() * \
            (text_features @ image_features.T)
        return logit.squeeze()

    def checkpoint_hash(self) -> str:
        return _hash_parameters(p for p in self.model.parameters())


def load_image_reward(cache_dir=None, device: str = "cpu"):
    try:
        import ImageReward  # noqa: N811 - upstream package name
    except ImportError as exc:
        raise ModelUnavailable(
            "ImageReward package is not installed") from exc
    try:
        model = ImageReward.load("ImageReward-v1.0",
                                 download_root=cache_dir, device=device)
    except Exception as exc:  # noqa: BLE001 - network/cache failures
        raise ModelUnavailable(
            f"ImageReward checkpoint unavailable: {exc}") from exc
    return ImageRewardAdapter(model, device=device)


def load_pick_score(cache_dir=None, device: str = "cpu"):
    try:
        from transformers import AutoModel, AutoProcessor
    except ImportError as exc:
        raise ModelUnavailable(
            "transformers package is not installed") from exc
    try:
        name = "yuvalkirstain/PickScore_v1"
        processor = AutoProcessor.from_pretrained(
            "laion/CLIP-ViT-H-14-laion2B-s32B-b79K", cache_dir=cache_dir)
        model = AutoModel.from_pretrained(name, cache_dir=cache_dir)
    except Exception as exc:  # noqa: BLE001 - network/cache failures
        raise ModelUnavailable(
            f"PickScore checkpoint unavailable: {exc}") from exc
    return PickScoreAdapter(model, processor, device=device)


# ---------------------------------------------------------------------------
# Registry


@dataclass(frozen=True)
class RegistryEntry:
    model_id: str
    model: object
    checkpoint_hash: str


class ModelRegistry:
    """Loaded models plus the service-side concurrency discipline.

    Requests are admitted up to ``max_concurrent`` (the rest get a 429
    upstream); admitted forward/backward passes are serialized per
    device through one lock so autograd state never interleaves.
    """

    def __init__(self, models, max_concurrent: int = 4):
        entries = [
            RegistryEntry(m.model_id, m, m.checkpoint_hash())
            for m in models
        ]
        if not entries:
            raise ValueError("registry needs at least one model")
        self._entries = {e.model_id: e for e in entries}
        self._slots = threading.BoundedSemaphore(max(max_concurrent, 1))
        self._admits = max_concurrent > 0
        self._device_lock = threading.Lock()

    @property
    def model_ids(self) -> list:
        return list(self._entries)

    def admit(self) -> bool:
        return self._admits and self._slots.acquire(blocking=False)

    def release(self) -> None:
        self._slots.release()

    def health(self) -> dict:
        return {
            "status": "ok",
            "models": self.model_ids,
            "checkpoints": {
                e.model_id: e.checkpoint_hash
                for e in self._entries.values()
            },
        }

    def has(self, model_id: str) -> bool:
        return model_id in self._entries

    def score_array(self, model_id: str, image: np.ndarray, text: str,
                    want_gradient: bool):
        """Score a decoded image; returns (score, gradient-or-None)."""
        entry = self._entries[model_id]
        tensor = torch.tensor(image, dtype=torch.float64,
                              requires_grad=want_gradient)
        with self._device_lock:
            score = entry.model.score_tensor(tensor, text)
            gradient = None
            if want_gradient:
                (gradient,) = torch.autograd.grad(score, tensor)
                gradient = gradient.detach().cpu().numpy()
        return float(score.item()), gradient


def toy_registry(max_concurrent: int = 4) -> ModelRegistry:
    return ModelRegistry([PatchwiseToyModel(), PromptColorToyModel()],
                         max_concurrent=max_concurrent)


def default_registry(mode: str = "auto", cache_dir=None,
                     device: str = "cpu",
                     max_concurrent: int = 4) -> ModelRegistry:
    """Build the serving registry.

    mode: "real" (fail if checkpoints are unreachable), "toy" (always
    the built-ins), or "auto" (real when loadable, toys otherwise).
    """
    if mode not in ("auto", "real", "toy"):
        raise ValueError(f"unknown registry mode {mode!r}")
    if mode == "toy":
        return toy_registry(max_concurrent)
    loaded, failures = [], []
    for loader in (load_image_reward, load_pick_score):
        try:
            loaded.append(loader(cache_dir=cache_dir, device=device))
        except ModelUnavailable as exc:
            failures.append(str(exc))
    if loaded:
        for failure in failures:
            logger.warning("skipping model: %s", failure)
        return ModelRegistry(loaded, max_concurrent=max_concurrent)
    if mode == "real":
        raise ModelUnavailable("; ".join(failures))
    logger.warning(
        "no real checkpoints reachable (%s); serving built-in toy models",
        "; ".join(failures),
    )
    return toy_registry(max_concurrent)
