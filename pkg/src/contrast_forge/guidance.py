"""Score-distillation guidance on rendered images.

A diffusion noise schedule, the forward noising process, and the
distillation gradient

    g = w(t) * (eps_hat - eps),    w(t) = 1 - alpha_bar_t,

where ``eps_hat`` is a (classifier-free guided) noise prediction at the
noised render and ``eps`` is the noise actually added. Any object with a
``predict(noisy, t, prompt)`` method can serve as the predictor; the
analytic toy denoiser included here makes the gradient's pull toward a
known target exact, which the tests exploit.
"""

from __future__ import annotations

import hashlib

import numpy as np

from .errors import ContractError

DEFAULT_CFG_SCALE = 7.5
TIMESTEP_RANGE = (0.02, 0.50)


class DiffusionSchedule:
    """Linear-beta schedule with cached cumulative products."""

    def __init__(self, num_steps: int = 1000, beta_start: float = 1e-4,
                 beta_end: float = 2e-2):
        if num_steps < 2:
            raise ContractError("schedule needs at least two steps")
        self.num_steps = num_steps
        self.betas = np.linspace(beta_start, beta_end, num_steps)
        self.alphas = 1.0 - self.betas
        self.alpha_bars = np.cumprod(self.alphas)

    def _check_t(self, t: int) -> int:
        t = int(t)
        if not 0 <= t < self.num_steps:
            raise ContractError(
                f"timestep {t} outside [0, {self.num_steps})"
            )
        return t

    def sqrt_alpha_bar(self, t: int) -> float:
        return float(np.sqrt(self.alpha_bars[self._check_t(t)]))

    def sqrt_one_minus_alpha_bar(self, t: int) -> float:
        return float(np.sqrt(1.0 - self.alpha_bars[self._check_t(t)]))

    def weight(self, t: int) -> float:
        """Per-timestep gradient weight w(t) = 1 - alpha_bar_t."""
        return float(1.0 - self.alpha_bars[self._check_t(t)])


def add_noise(schedule: DiffusionSchedule, image: np.ndarray, t: int,
              noise: np.ndarray) -> np.ndarray:
    """Forward noising: sqrt(ab_t) x + sqrt(1 - ab_t) eps."""
    image = np.asarray(image, dtype=np.float64)
    noise = np.asarray(noise, dtype=np.float64)
    if noise.shape != image.shape:
        raise ContractError(
            f"noise shape {noise.shape} != image shape {image.shape}"
        )
    return (schedule.sqrt_alpha_bar(t) * image
            + schedule.sqrt_one_minus_alpha_bar(t) * noise)


def sample_timestep(schedule: DiffusionSchedule, rng: np.random.Generator,
                    frac_range: tuple = TIMESTEP_RANGE) -> int:
    """Uniform fractional position in [0.02, 0.50], nearest schedule index."""
    lo, hi = frac_range
    if not 0.0 <= lo <= hi <= 1.0:
        raise ContractError("timestep fraction range must be within [0, 1]")
    frac = rng.uniform(lo, hi)
    return int(round(frac * (schedule.num_steps - 1)))


def target_image_for_prompt(prompt: str, height: int, width: int) -> np.ndarray:
    """Deterministic flat color keyed by the prompt text.

    Stands in for a text-to-image prior in toy pipelines: different
    prompts map to different (stable) colors across runs and platforms.
    """
    digest = hashlib.sha256(prompt.encode("utf-8")).digest()
    color = np.array([digest[0], digest[1], digest[2]]) / 255.0
    color = 0.15 + 0.7 * color  # stay away from pure black/white
    return np.tile(color, (height, width, 1))


class ToyDenoiser:
    """Analytic noise predictor that believes each prompt's clean image.

    predict() returns the exact noise that would reconstruct the prompt's
    target:  (x_t - sqrt(ab_t) target) / sqrt(1 - ab_t).  With the true
    target this inverts add_noise exactly; ``prediction_noise`` adds a
    zero-mean perturbation to imitate an imperfect network.
    """

    def __init__(self, schedule: DiffusionSchedule, targets: dict,
                 uncond_target: np.ndarray, prediction_noise: float = 0.0,
                 rng: np.random.Generator | None = None):
        self.schedule = schedule
        self.targets = dict(targets)
        self.uncond_target = np.asarray(uncond_target, dtype=np.float64)
        self.prediction_noise = float(prediction_noise)
        self.rng = rng

    def _target_for(self, prompt) -> np.ndarray:
        if prompt is None:
            return self.uncond_target
        return self.targets.get(prompt, self.uncond_target)

    def predict(self, noisy: np.ndarray, t: int, prompt) -> np.ndarray:
        target = self._target_for(prompt)
        if target.shape != noisy.shape:
            raise ContractError(
                f"target shape {target.shape} != image shape {noisy.shape}"
            )
        eps = (
            noisy - self.schedule.sqrt_alpha_bar(t) * target
        ) / self.schedule.sqrt_one_minus_alpha_bar(t)
        if self.prediction_noise > 0.0:
            if self.rng is None:
                raise ContractError("prediction_noise requires an rng")
            eps = eps + self.prediction_noise * self.rng.standard_normal(
                eps.shape
            )
        return eps


def guided_noise(predictor, noisy: np.ndarray, t: int, prompt: str,
                 cfg_scale: float = DEFAULT_CFG_SCALE) -> np.ndarray:
    """Classifier-free guidance: e_u + s (e_c - e_u)."""
    cond = predictor.predict(noisy, t, prompt)
    if cfg_scale == 1.0:
        return cond
    uncond = predictor.predict(noisy, t, None)
    return uncond + cfg_scale * (cond - uncond)


def sds_image_gradient(
    schedule: DiffusionSchedule,
    predictor,
    image: np.ndarray,
    prompt: str,
    t: int,
    noise: np.ndarray,
    cfg_scale: float = DEFAULT_CFG_SCALE,
) -> np.ndarray:
    """Distillation gradient w(t)(eps_hat - eps), image-shaped."""
    noisy = add_noise(schedule, image, t, noise)
    eps_hat = guided_noise(predictor, noisy, t, prompt, cfg_scale)
    return schedule.weight(t) * (eps_hat - np.asarray(noise, dtype=np.float64))
