"""Preference-scorer ensemble with inverse-score gradient fusion.

Each scorer maps (image, text) to a scalar preference plus the image
gradient of that preference. Scores are quantized to integers in
[1, 100], turned into weights

    w_i = LCM(all scores) / s_i,    lambda_i = w_i / sum_j w_j,

so lower-scoring models speak louder, and the weighted gradients are
averaged into a single image-space ascent direction.
"""

from __future__ import annotations

import math
import re
from dataclasses import dataclass

import numpy as np

from .errors import ContractError, ScorerError
from .guidance import target_image_for_prompt

DEFAULT_RETRIES = 2


@dataclass(frozen=True)
class PreferenceSignal:
    """One scorer's verdict: scalar score and its image gradient."""

    score: float
    gradient: np.ndarray  # (H,W,3), direction of steepest score increase
    scorer_id: str

    def validate(self) -> None:
        if not math.isfinite(self.score):
            raise ContractError(f"{self.scorer_id}: non-finite score")
        if self.gradient.ndim != 3 or self.gradient.shape[2] != 3:
            raise ContractError(
                f"{self.scorer_id}: gradient shape {self.gradient.shape} "
                "is not HxWx3"
            )
        if not np.all(np.isfinite(self.gradient)):
            raise ContractError(f"{self.scorer_id}: non-finite gradient")


@dataclass(frozen=True)
class FusedPreferenceGradient:
    gradient: np.ndarray          # fused ascent direction, HxWx3
    weights: np.ndarray           # lambda, sums to 1
    quantized_scores: tuple       # integers fed to the LCM


def quantize_score(score: float) -> int:
    """Map a real score to an integer in [1, 100] via a logistic squash."""
    if not math.isfinite(score):
        raise ContractError("score must be finite")
    if score >= 0:
        logistic = 1.0 / (1.0 + math.exp(-score))
    else:
        e = math.exp(score)
        logistic = e / (1.0 + e)
    return max(1, round(100.0 * logistic))


def lcm_weights(quantized: list) -> np.ndarray:
    """Normalized inverse weights; lower score means strictly more weight."""
    if len(quantized) == 0:
        raise ContractError("need at least one quantized score")
    values = [int(q) for q in quantized]
    if any(q < 1 for q in values):
        raise ContractError("quantized scores must be >= 1")
    common = math.lcm(*values)
    raw = [common // q for q in values]
    total = sum(raw)
    return np.array([r / total for r in raw], dtype=np.float64)


def score_all(scorers, image: np.ndarray, text: str,
              retries: int = DEFAULT_RETRIES) -> list:
    """One signal per scorer, order preserved; retries then a hard error.

    Silent dropout is not an option: the weighting downstream needs the
    full ensemble, so a scorer that keeps failing stops the run.
    """
    if len(scorers) == 0:
        raise ContractError("need at least one scorer")
    image = np.asarray(image)
    if not np.all(np.isfinite(image)):
        raise ContractError("image contains non-finite values")
    signals = []
    for scorer in scorers:
        failure = None
        for _ in range(retries + 1):
            try:
                signal = scorer.score(image, text)
                signal.validate()
                if signal.gradient.shape != image.shape:
                    raise ContractError(
                        f"{scorer.identifier}: gradient shape "
                        f"{signal.gradient.shape} != image {image.shape}"
                    )
                failure = None
                break
            except Exception as exc:  # noqa: BLE001 - isolate per scorer
                failure = exc
        if failure is not None:
            raise ScorerError(
                f"scorer '{scorer.identifier}' failed after "
                f"{retries + 1} attempts: {failure}"
            ) from failure
        signals.append(signal)
    return signals


def positive_preference_grad(signals, weights,
                             divide_by_n: bool = True
                             ) -> FusedPreferenceGradient:
    """Weighted mean of scorer gradients: the attraction term."""
    weights = np.asarray(weights, dtype=np.float64)
    if len(signals) != weights.shape[0]:
        raise ContractError(
            f"{len(signals)} signals vs {weights.shape[0]} weights"
        )
    if abs(float(weights.sum()) - 1.0) > 1e-9:
        raise ContractError("weights must sum to 1")
    shape = signals[0].gradient.shape
    fused = np.zeros(shape, dtype=np.float64)
    for signal, lam in zip(signals, weights):
        if signal.gradient.shape != shape:
            raise ContractError(
                f"{signal.scorer_id}: gradient shape {signal.gradient.shape} "
                f"!= {shape}"
            )
        fused += lam * signal.gradient
    if divide_by_n:
        fused /= len(signals)
    return FusedPreferenceGradient(
        gradient=fused,
        weights=weights,
        quantized_scores=tuple(quantize_score(s.score) for s in signals),
    )


def fuse_positive(signals, divide_by_n: bool = True) -> FusedPreferenceGradient:
    """quantize -> LCM weights -> weighted fusion, in one call."""
    weights = lcm_weights([quantize_score(s.score) for s in signals])
    return positive_preference_grad(signals, weights, divide_by_n)


# ---------------------------------------------------------------------------
# Deterministic mock scorers with closed-form gradients.
# ---------------------------------------------------------------------------


class BrightnessScorer:
    """score = mean pixel value; gradient is the constant 1/(3HW) field."""

    identifier = "mock:brightness"

    def score(self, image: np.ndarray, text: str) -> PreferenceSignal:
        image = np.asarray(image, dtype=np.float64)
        grad = np.full(image.shape, 1.0 / image.size)
        return PreferenceSignal(
            score=float(image.mean()), gradient=grad,
            scorer_id=self.identifier,
        )


class TargetPatchScorer:
    """score = -MSE against a deterministic text-keyed target image."""

    identifier = "mock:target-patch"

    def score(self, image: np.ndarray, text: str) -> PreferenceSignal:
        image = np.asarray(image, dtype=np.float64)
        target = target_image_for_prompt(text, image.shape[0], image.shape[1])
        diff = image - target
        return PreferenceSignal(
            score=float(-np.mean(diff ** 2)),
            gradient=-2.0 * diff / image.size,
            scorer_id=self.identifier,
        )


class KeywordColorScorer:
    """score = mean of the channel named in the text, zero otherwise."""

    identifier = "mock:keyword-color"
    channels = {"red": 0, "green": 1, "blue": 2}

    def __init__(self, region=None):
        self.region = region  # (y0, y1, x0, x1) or None for the full image

    def score(self, image: np.ndarray, text: str) -> PreferenceSignal:
        image = np.asarray(image, dtype=np.float64)
        grad = np.zeros(image.shape, dtype=np.float64)
        words = re.findall(r"[a-z]+", text.lower())
        channel = next(
            (c for word, c in self.channels.items() if word in words), None
        )
        if channel is None:
            return PreferenceSignal(0.0, grad, self.identifier)
        y0, y1, x0, x1 = self.region or (0, image.shape[0], 0, image.shape[1])
        patch = image[y0:y1, x0:x1, channel]
        grad[y0:y1, x0:x1, channel] = 1.0 / patch.size
        return PreferenceSignal(
            score=float(patch.mean()), gradient=grad,
            scorer_id=self.identifier,
        )


def default_mock_scorers() -> list:
    return [BrightnessScorer(), TargetPatchScorer()]
