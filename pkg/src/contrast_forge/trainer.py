"""Optimization loop: preference-steered score distillation over a splat cloud.

Each iteration renders the cloud from a sampled camera, forms an
image-space gradient from the distillation term plus the fused positive
and negation preference terms, backpropagates it through the renderer,
and applies per-attribute Adam updates. Splats are periodically split,
cloned, and pruned on a fixed tick schedule driven by accumulated 2D
positional gradient statistics.

Sign convention: scorers report gradients pointing uphill in their own
score, and the negation term is already repulsive, so the descended
image-space gradient is ``sds - w_p * (positive + negation)`` — descent
then raises positive preference while lowering preference for the
negation text.
"""

from __future__ import annotations

import dataclasses
import json
import logging
import math
import os
from dataclasses import dataclass, replace

import numpy as np
from scipy.spatial import cKDTree

from .body_model import BodyParams, builtin_template, pose_mesh, sample_surface
from .errors import ContractError, InvalidParameterError, TrainingAbort
from .guidance import (
    DiffusionSchedule,
    ToyDenoiser,
    sample_timestep,
    sds_image_gradient,
    target_image_for_prompt,
)
from .negation import build_negation_set, negative_preference_grad
from .ply_io import save_png, save_splat_ply
from .preference import default_mock_scorers, fuse_positive, score_all
from .splat_render import (
    CameraPose,
    GaussianCloud,
    RenderSettings,
    render,
    render_backward,
)

logger = logging.getLogger(__name__)

REPORT_SCHEMA = "contrast-forge/run-report/1"
TURNTABLE_VIEWS = 8
_SEED_ROOT = 424200
_ATTRIBUTES = ("positions", "log_scales", "rotations", "colors", "opacities")
_MAX_CONSECUTIVE_SKIPS = 10


# ---------------------------------------------------------------------------
# Configuration


@dataclass(frozen=True)
class TrainConfig:
    """Full hyperparameter set; defaults are the desk-scale profile.

    ``resolution`` and ``batch_size`` default to the small-budget values
    (the reference profile is 1024 / 4); everything else defaults to the
    reference training recipe.
    """

    iterations: int = 3600
    resolution: int = 64
    batch_size: int = 1
    lr_position: float = 5e-5
    lr_scale: float = 1e-3
    lr_rotation: float = 1e-2
    lr_color: float = 1.25e-2
    lr_opacity: float = 1e-2
    adam_beta1: float = 0.9
    adam_beta2: float = 0.99
    adam_eps: float = 1e-8
    camera_distance: tuple = (1.5, 2.0)
    camera_fovy: tuple = (40.0, 70.0)
    camera_elevation: tuple = (-30.0, 30.0)
    camera_azimuth: tuple = (-180.0, 180.0)
    timestep_range: tuple = (0.02, 0.50)
    sds_weight: float = 1.0
    guidance_scale: float = 7.5
    preference_weight: float = 1.0
    divide_by_n: bool = True
    literal_eq10: bool = False
    densify_start: int = 300
    densify_end: int = 2100
    densify_interval: int = 300
    prune_start: int = 2400
    prune_end: int = 3300
    prune_interval: int = 300
    prune_opacity_threshold: float = 0.008
    prune_scale_threshold: float = math.inf
    densify_percentile: float = 90.0
    split_scale_threshold: float = 0.02
    init_count: int = 100_000
    init_opacity: float = 0.1
    background: str = "white"
    seed: int = 0

    def validate(self) -> None:
        for name in ("lr_position", "lr_scale", "lr_rotation",
                     "lr_color", "lr_opacity"):
            if getattr(self, name) <= 0.0:
                raise InvalidParameterError(f"{name} must be positive")
        for name in ("camera_distance", "camera_fovy",
                     "camera_elevation", "camera_azimuth",
                     "timestep_range"):
            lo, hi = getattr(self, name)
            if not lo <= hi:
                raise InvalidParameterError(f"{name} range {lo}..{hi} "
                                            "is not well ordered")
        if self.iterations < 0:
            raise InvalidParameterError("iterations must be >= 0")
        if self.resolution < 1 or self.batch_size < 1:
            raise InvalidParameterError("resolution and batch_size "
                                        "must be >= 1")
        if not 0.0 <= self.densify_percentile <= 100.0:
            raise InvalidParameterError("densify_percentile must be "
                                        "in [0, 100]")
        if self.densify_interval < 1 or self.prune_interval < 1:
            raise InvalidParameterError("tick intervals must be >= 1")
        if self.init_count < 1:
            raise InvalidParameterError("init_count must be >= 1")
        if not 0.0 < self.init_opacity < 1.0:
            raise InvalidParameterError("init_opacity must be in (0, 1)")
        if not 0.0 <= self.adam_beta1 < 1.0 or not 0.0 <= self.adam_beta2 < 1.0:
            raise InvalidParameterError("Adam betas must be in [0, 1)")


def parse_config_text(text: str) -> dict:
    """Parse a flat ``key = value`` config file into raw values.

    Supported values: booleans, integers, floats, ``[a, b]`` pairs, and
    quoted or bare strings. ``#`` starts a comment.
    """
    raw = {}
    for lineno, line in enumerate(text.splitlines(), start=1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise InvalidParameterError(
                f"config line {lineno}: expected 'key = value', got {line!r}"
            )
        key, value = (part.strip() for part in line.split("=", 1))
        if not key:
            raise InvalidParameterError(f"config line {lineno}: empty key")
        raw[key] = _parse_scalar_or_list(value, lineno)
    return raw


def _parse_scalar_or_list(value: str, lineno: int):
    if value.startswith("[") and value.endswith("]"):
        inner = value[1:-1].strip()
        if not inner:
            return ()
        return tuple(_parse_scalar(item.strip(), lineno)
                     for item in inner.split(","))
    return _parse_scalar(value, lineno)


def _parse_scalar(value: str, lineno: int):
    if not value:
        raise InvalidParameterError(f"config line {lineno}: empty value")
    if value.lower() in ("true", "false"):
        return value.lower() == "true"
    if len(value) >= 2 and value[0] == value[-1] and value[0] in "\"'":
        return value[1:-1]
    try:
        return int(value)
    except ValueError:
        pass
    try:
        return float(value)
    except ValueError:
        pass
    return value


def _coerce_field(name: str, value, default):
    """Cast a parsed or CLI-supplied value to a TrainConfig field's type."""
    if isinstance(default, bool):
        if isinstance(value, bool):
            return value
        if isinstance(value, str) and value.lower() in ("true", "false"):
            return value.lower() == "true"
        raise InvalidParameterError(f"{name} expects true/false, "
                                    f"got {value!r}")
    if isinstance(default, int):
        if isinstance(value, bool) or not isinstance(value, (int, str)):
            raise InvalidParameterError(f"{name} expects an integer, "
                                        f"got {value!r}")
        return int(value)
    if isinstance(default, float):
        try:
            return float(value)
        except (TypeError, ValueError):
            raise InvalidParameterError(f"{name} expects a number, "
                                        f"got {value!r}") from None
    if isinstance(default, tuple):
        if isinstance(value, str):
            value = _parse_scalar_or_list(value.strip(), 0)
        if not isinstance(value, (tuple, list)) or len(value) != len(default):
            raise InvalidParameterError(
                f"{name} expects {len(default)} values, got {value!r}"
            )
        return tuple(float(v) for v in value)
    return str(value)


def apply_overrides(config: TrainConfig, overrides: dict) -> TrainConfig:
    """Return a copy with the named fields replaced (values may be strings)."""
    defaults = TrainConfig()
    known = {f.name for f in dataclasses.fields(TrainConfig)}
    patch = {}
    for name, value in overrides.items():
        if name not in known:
            raise InvalidParameterError(f"unknown config key {name!r}")
        patch[name] = _coerce_field(name, value, getattr(defaults, name))
    return replace(config, **patch)


def load_config(path, overrides: dict | None = None) -> TrainConfig:
    """Build a TrainConfig from a key-value file plus optional overrides."""
    with open(path) as fh:
        raw = parse_config_text(fh.read())
    config = apply_overrides(TrainConfig(), raw)
    if overrides:
        config = apply_overrides(config, overrides)
    config.validate()
    return config


def format_config(config: TrainConfig) -> str:
    """Render a TrainConfig as the key-value file format load_config reads."""
    lines = []
    for f in dataclasses.fields(TrainConfig):
        value = getattr(config, f.name)
        if isinstance(value, bool):
            text = "true" if value else "false"
        elif isinstance(value, tuple):
            text = "[" + ", ".join(repr(v) for v in value) + "]"
        elif isinstance(value, str):
            text = f'"{value}"'
        else:
            text = repr(value)
        lines.append(f"{f.name} = {text}")
    return "\n".join(lines) + "\n"


# ---------------------------------------------------------------------------
# Optimizer and mutable loop state


@dataclass
class AdamSlots:
    m: np.ndarray
    v: np.ndarray
    step: int = 0


def adam_update(param: np.ndarray, grad: np.ndarray, slots: AdamSlots,
                lr: float, beta1: float, beta2: float, eps: float) -> None:
    """One bias-corrected Adam step, applied to ``param`` in place."""
    slots.step += 1
    slots.m = beta1 * slots.m + (1.0 - beta1) * grad
    slots.v = beta2 * slots.v + (1.0 - beta2) * grad * grad
    m_hat = slots.m / (1.0 - beta1 ** slots.step)
    v_hat = slots.v / (1.0 - beta2 ** slots.step)
    param -= lr * (m_hat / (np.sqrt(v_hat) + eps))


_LR_BY_ATTRIBUTE = {
    "positions": "lr_position",
    "log_scales": "lr_scale",
    "rotations": "lr_rotation",
    "colors": "lr_color",
    "opacities": "lr_opacity",
}


@dataclass
class TrainState:
    iteration: int
    cloud: GaussianCloud
    adam: dict
    pos_grad_accum: np.ndarray
    pos_grad_count: np.ndarray
    rngs: dict
    consecutive_skips: int = 0
    total_skips: int = 0

    def check_lengths(self) -> None:
        n = len(self.cloud)
        for name, slots in self.adam.items():
            if slots.m.shape[0] != n or slots.v.shape[0] != n:
                raise ContractError(f"Adam moments for {name} do not "
                                    f"track the cloud length {n}")
        if self.pos_grad_accum.shape[0] != n or \
                self.pos_grad_count.shape[0] != n:
            raise ContractError("positional-gradient accumulators do not "
                                f"track the cloud length {n}")


def _spawn_rngs(seed: int) -> dict:
    children = np.random.SeedSequence([_SEED_ROOT, seed]).spawn(5)
    names = ("camera", "noise", "timestep", "densify", "background")
    return {name: np.random.default_rng(child)
            for name, child in zip(names, children)}


def _logit(p: float) -> float:
    return math.log(p / (1.0 - p))


def initial_cloud(config: TrainConfig) -> GaussianCloud:
    """Seed splats on the body surface: gray, isotropic, low opacity.

    Scales start at the mean distance to each point's three nearest
    neighbors so the initial surface is closed but not blobby.
    """
    template = builtin_template()
    mesh = pose_mesh(template, BodyParams.rest(template))
    samples = sample_surface(mesh, config.init_count, seed=config.seed)
    positions = np.asarray(samples.points, dtype=np.float64)
    n = positions.shape[0]
    if n >= 4:
        dist, _ = cKDTree(positions).query(positions, k=4)
        nn = np.clip(dist[:, 1:].mean(axis=1), 1e-4, None)
    else:
        nn = np.full(n, 0.05)
    rotations = np.zeros((n, 4))
    rotations[:, 0] = 1.0
    return GaussianCloud(
        positions=positions,
        log_scales=np.repeat(np.log(nn)[:, None], 3, axis=1),
        rotations=rotations,
        colors=np.full((n, 3), 0.5),
        opacities=np.full(n, _logit(config.init_opacity)),
    )


def new_state(config: TrainConfig, cloud: GaussianCloud | None = None
              ) -> TrainState:
    if cloud is None:
        cloud = initial_cloud(config)
    n = len(cloud)
    adam = {
        name: AdamSlots(m=np.zeros_like(getattr(cloud, name)),
                        v=np.zeros_like(getattr(cloud, name)))
        for name in _ATTRIBUTES
    }
    return TrainState(
        iteration=0,
        cloud=cloud,
        adam=adam,
        pos_grad_accum=np.zeros(n),
        pos_grad_count=np.zeros(n, dtype=np.int64),
        rngs=_spawn_rngs(config.seed),
    )


# ---------------------------------------------------------------------------
# Per-iteration work


def sample_camera(config: TrainConfig, rng: np.random.Generator,
                  target=(0.0, 0.0, 0.0)) -> CameraPose:
    """Uniform pose draw; each coordinate independent within its range."""
    return CameraPose(
        distance=float(rng.uniform(*config.camera_distance)),
        fovy_deg=float(rng.uniform(*config.camera_fovy)),
        elevation_deg=float(rng.uniform(*config.camera_elevation)),
        azimuth_deg=float(rng.uniform(*config.camera_azimuth)),
        target=tuple(float(c) for c in target),
        width=config.resolution,
        height=config.resolution,
    )


def _draw_background(config: TrainConfig, rng: np.random.Generator) -> float:
    mode = config.background
    if mode == "white":
        return 1.0
    if mode == "black":
        return 0.0
    if mode == "random":
        return float(rng.uniform())
    try:
        value = float(mode)
    except ValueError:
        raise InvalidParameterError(
            f"background must be white, black, random, or a gray level; "
            f"got {mode!r}"
        ) from None
    if not 0.0 <= value <= 1.0:
        raise InvalidParameterError("gray background must be in [0, 1]")
    return value


_TRAIN_SETTINGS = RenderSettings(dtype=np.float64)


def train_step(state: TrainState, config: TrainConfig,
               schedule: DiffusionSchedule, predictor, prompt: str,
               scorers, negation_set, *, camera_target=(0.0, 0.0, 0.0)
               ) -> dict:
    """One optimization step; returns a trace record for the run report.

    The image-space gradient per batch item is
    ``sds_weight * sds - preference_weight * (positive + negation)``;
    passing ``negation_set=None`` (or zero weight / no scorers) drops the
    corresponding terms entirely.
    """
    state.iteration += 1
    state.check_lengths()
    n = len(state.cloud)
    sums = {name: np.zeros_like(getattr(state.cloud, name))
            for name in _ATTRIBUTES}
    pos_accum = np.zeros(n)
    pos_count = np.zeros(n, dtype=np.int64)
    record = {
        "iteration": state.iteration,
        "skipped": False,
        "sds_grad_norm": 0.0,
        "image_grad_norm": 0.0,
        "scores": {},
    }
    use_preference = config.preference_weight != 0.0 and scorers

    for _ in range(config.batch_size):
        camera = sample_camera(config, state.rngs["camera"],
                               target=camera_target)
        bg = _draw_background(config, state.rngs["background"])
        out = render(state.cloud, camera, bg, _TRAIN_SETTINGS)
        image = out.image
        g_img = np.zeros_like(image)

        if config.sds_weight != 0.0:
            t = sample_timestep(schedule, state.rngs["timestep"],
                                config.timestep_range)
            noise = state.rngs["noise"].standard_normal(image.shape)
            sds = sds_image_gradient(schedule, predictor, image, prompt,
                                     t, noise, config.guidance_scale)
            g_img += config.sds_weight * sds
            record["sds_grad_norm"] += float(np.linalg.norm(sds))

        if use_preference:
            fused = fuse_positive(score_all(scorers, image, prompt),
                                  divide_by_n=config.divide_by_n)
            steer = fused.gradient
            for scorer, score in zip(scorers, fused.quantized_scores):
                record["scores"][scorer.identifier] = float(score)
            if negation_set is not None:
                steer = steer + negative_preference_grad(
                    scorers, image, negation_set.y_neg,
                    literal_eq10=config.literal_eq10,
                )
            g_img -= config.preference_weight * steer

        record["image_grad_norm"] += float(np.linalg.norm(g_img))
        grads = render_backward(state.cloud, camera, out, g_img)
        for name in _ATTRIBUTES:
            sums[name] += getattr(grads, name)
        pos_accum += grads.mean2d_norm
        pos_count += (~out.proj.culled) & (out.proj.radii > 0)

    finite = all(np.all(np.isfinite(sums[name])) for name in _ATTRIBUTES)
    if not finite:
        state.consecutive_skips += 1
        state.total_skips += 1
        record["skipped"] = True
        logger.warning("iteration %d: non-finite gradient, step skipped "
                       "(%d consecutive)", state.iteration,
                       state.consecutive_skips)
        if state.consecutive_skips > _MAX_CONSECUTIVE_SKIPS:
            raise TrainingAbort(
                f"aborting after {state.consecutive_skips} consecutive "
                "non-finite gradient steps"
            )
        return record

    state.consecutive_skips = 0
    inv_batch = 1.0 / config.batch_size
    for name in _ATTRIBUTES:
        adam_update(
            getattr(state.cloud, name), sums[name] * inv_batch,
            state.adam[name], getattr(config, _LR_BY_ATTRIBUTE[name]),
            config.adam_beta1, config.adam_beta2, config.adam_eps,
        )
    state.pos_grad_accum += pos_accum
    state.pos_grad_count += pos_count
    return record


# ---------------------------------------------------------------------------
# Densify / prune schedule


def schedule_ticks(config: TrainConfig) -> tuple:
    """The iteration numbers on which densify and prune-only ticks fire."""
    densify = tuple(range(config.densify_start, config.densify_end + 1,
                          config.densify_interval))
    prune = tuple(range(config.prune_start, config.prune_end + 1,
                        config.prune_interval))
    return densify, prune


def _index_rows(state: TrainState, order: np.ndarray,
                fresh: int) -> TrainState:
    """Reindex cloud-aligned arrays by ``order``, appending ``fresh`` zero
    rows for newly created splats."""

    def take(arr):
        kept = arr[order]
        if fresh == 0:
            return kept
        pad = np.zeros((fresh,) + arr.shape[1:], dtype=arr.dtype)
        return np.concatenate([kept, pad], axis=0)

    for name, slots in state.adam.items():
        slots.m = take(slots.m)
        slots.v = take(slots.v)
    state.pos_grad_accum = take(state.pos_grad_accum)
    state.pos_grad_count = take(state.pos_grad_count)
    return state


def densify_and_prune(state: TrainState, config: TrainConfig) -> dict | None:
    """Split/clone high-gradient splats and drop faint ones on tick
    iterations; a no-op everywhere else. Returns the event record."""
    densify_ticks, prune_ticks = schedule_ticks(config)
    it = state.iteration
    is_densify = it in densify_ticks
    is_prune_only = it in prune_ticks
    if not is_densify and not is_prune_only:
        return None

    cloud = state.cloud
    n_split = n_cloned = 0
    if is_densify and len(cloud) > 0:
        mean_grad = state.pos_grad_accum / np.maximum(state.pos_grad_count, 1)
        cutoff = np.percentile(mean_grad, config.densify_percentile)
        selected = mean_grad > cutoff
        max_scale = cloud.activated_scales().max(axis=1)
        split = selected & (max_scale > config.split_scale_threshold)
        clone = selected & ~split
        n_split = int(split.sum())
        n_cloned = int(clone.sum())

        keep_order = np.flatnonzero(~split)
        parts = {name: [getattr(cloud, name)[keep_order]]
                 for name in _ATTRIBUTES}
        if n_split:
            parent_idx = np.flatnonzero(split)
            children = _split_splats(cloud, parent_idx,
                                     state.rngs["densify"])
            for name in _ATTRIBUTES:
                parts[name].append(getattr(children, name))
        if n_cloned:
            clone_idx = np.flatnonzero(clone)
            for name in _ATTRIBUTES:
                parts[name].append(getattr(cloud, name)[clone_idx].copy())
        cloud = GaussianCloud(**{
            name: np.concatenate(parts[name], axis=0)
            for name in _ATTRIBUTES
        })
        state.cloud = cloud
        fresh = 2 * n_split + n_cloned
        _index_rows(state, keep_order, fresh)

    alphas = cloud.activated_alphas()
    keep = alphas >= config.prune_opacity_threshold
    if np.isfinite(config.prune_scale_threshold) and len(cloud) > 0:
        keep &= cloud.activated_scales().max(axis=1) \
            <= config.prune_scale_threshold
    n_pruned = int((~keep).sum())
    if n_pruned:
        order = np.flatnonzero(keep)
        state.cloud = GaussianCloud(**{
            name: getattr(cloud, name)[order]
            for name in _ATTRIBUTES
        })
        _index_rows(state, order, 0)
    if len(state.cloud) == 0:
        raise TrainingAbort(
            f"densify/prune tick at iteration {it} emptied the cloud"
        )

    state.pos_grad_accum = np.zeros(len(state.cloud))
    state.pos_grad_count = np.zeros(len(state.cloud), dtype=np.int64)
    state.check_lengths()
    return {
        "iteration": it,
        "kind": "densify" if is_densify else "prune",
        "split": n_split,
        "cloned": n_cloned,
        "pruned": n_pruned,
        "count": len(state.cloud),
    }


def _split_splats(cloud: GaussianCloud, parent_idx: np.ndarray,
                  rng: np.random.Generator) -> GaussianCloud:
    """Two half-scale children per parent, positions drawn inside the
    parent's footprint."""
    from .splat_render import quat_to_rotmat

    parents = parent_idx.repeat(2)
    scales = cloud.activated_scales()[parents]
    rots = quat_to_rotmat(cloud.rotations[parents])
    offsets = rng.standard_normal((parents.shape[0], 3)) * scales
    positions = cloud.positions[parents] + np.einsum(
        "nij,nj->ni", rots, offsets
    )
    return GaussianCloud(
        positions=positions,
        log_scales=cloud.log_scales[parents] - math.log(2.0),
        rotations=cloud.rotations[parents].copy(),
        colors=cloud.colors[parents].copy(),
        opacities=cloud.opacities[parents].copy(),
    )


# ---------------------------------------------------------------------------
# Full runs


def _json_clean(value):
    if isinstance(value, dict):
        return {str(k): _json_clean(v) for k, v in value.items()}
    if isinstance(value, (list, tuple)):
        return [_json_clean(v) for v in value]
    if isinstance(value, (bool, np.bool_)):
        return bool(value)
    if isinstance(value, (np.floating, float)):
        value = float(value)
        return value if math.isfinite(value) else repr(value)
    if isinstance(value, (np.integer, int)):
        return int(value)
    if isinstance(value, np.ndarray):
        return _json_clean(value.tolist())
    return value


def _write_report(report: dict, path: str) -> None:
    with open(path, "w") as fh:
        json.dump(_json_clean(report), fh, indent=2, sort_keys=True)
        fh.write("\n")


def turntable_cameras(config: TrainConfig, target,
                      views: int = TURNTABLE_VIEWS) -> list:
    """Evenly spaced azimuth ring at the middle of the camera ranges."""

    def mid(pair):
        return 0.5 * (pair[0] + pair[1])

    return [
        CameraPose(
            distance=mid(config.camera_distance),
            fovy_deg=mid(config.camera_fovy),
            elevation_deg=mid(config.camera_elevation),
            azimuth_deg=i * (360.0 / views),
            target=tuple(float(c) for c in target),
            width=config.resolution,
            height=config.resolution,
        )
        for i in range(views)
    ]


def _write_artifacts(state: TrainState, config: TrainConfig, report: dict,
                     out_dir: str, camera_target) -> dict:
    os.makedirs(out_dir, exist_ok=True)
    ply_path = os.path.join(out_dir, "model.ply")
    save_splat_ply(state.cloud.astype(np.float32), ply_path)
    png_paths = []
    for i, camera in enumerate(turntable_cameras(config, camera_target)):
        out = render(state.cloud, camera, 1.0, _TRAIN_SETTINGS)
        png_path = os.path.join(out_dir, f"turntable_{i}.png")
        save_png(png_path, out.image)
        png_paths.append(png_path)
    report["artifacts"] = {
        "ply": os.path.basename(ply_path),
        "turntable": [os.path.basename(p) for p in png_paths],
        "report": "report.json",
    }
    report_path = os.path.join(out_dir, "report.json")
    _write_report(report, report_path)
    return {"ply": ply_path, "turntable": png_paths, "report": report_path}


def run(config: TrainConfig, prompt: str, *, predictor=None, scorers=None,
        llm_client=None, out_dir: str = "run_output",
        negation_statics=None):
    """Optimize a cloud for ``prompt`` and write PLY, turntable, report.

    ``predictor`` defaults to the analytic denoiser aimed at the prompt's
    deterministic color card; ``scorers`` defaults to the bundled mocks.
    With ``preference_weight == 0`` the scorer and negation machinery is
    never touched and the loop is plain score distillation.
    """
    config.validate()
    if not prompt:
        raise InvalidParameterError("prompt must be non-empty")
    schedule = DiffusionSchedule()
    if predictor is None and config.sds_weight != 0.0:
        target = target_image_for_prompt(prompt, config.resolution,
                                         config.resolution)
        predictor = ToyDenoiser(schedule, {prompt: target}, target)
    use_preference = config.preference_weight != 0.0
    if use_preference and scorers is None:
        scorers = default_mock_scorers()
    if not use_preference:
        scorers = None

    negation_set = None
    if use_preference and scorers:
        kwargs = {"client": llm_client}
        if negation_statics is not None:
            kwargs["static_phrases"] = negation_statics
        negation_set = build_negation_set(prompt, **kwargs)

    state = new_state(config)
    camera_target = tuple(state.cloud.positions.mean(axis=0))
    report = {
        "schema": REPORT_SCHEMA,
        "prompt": prompt,
        "config": dataclasses.asdict(config),
        "negation_text": negation_set.y_neg if negation_set else None,
        "scorers": [s.identifier for s in scorers] if scorers else [],
        "initial_count": len(state.cloud),
        "steps": [],
        "densify_events": [],
        "splat_counts": [{"iteration": 0, "count": len(state.cloud)}],
        "aborted": False,
    }
    try:
        for _ in range(config.iterations):
            record = train_step(
                state, config, schedule, predictor, prompt, scorers,
                negation_set, camera_target=camera_target,
            )
            report["steps"].append(record)
            event = densify_and_prune(state, config)
            if event is not None:
                report["densify_events"].append(event)
                report["splat_counts"].append(
                    {"iteration": state.iteration,
                     "count": len(state.cloud)}
                )
    except TrainingAbort as abort:
        report["aborted"] = True
        report["abort_reason"] = str(abort)
        report["final_count"] = len(state.cloud)
        report["total_skips"] = state.total_skips
        _write_artifacts(state, config, report, out_dir, camera_target)
        raise
    report["final_count"] = len(state.cloud)
    report["total_skips"] = state.total_skips
    paths = _write_artifacts(state, config, report, out_dir, camera_target)
    report["paths"] = paths
    return state.cloud, report


def dry_run(config: TrainConfig, camera_draws: int = 10_000) -> dict:
    """Echo the schedule a run would execute without optimizing.

    Initializes the cloud, derives the densify/prune tick sets, and
    samples the camera distribution so the configured ranges can be
    audited cheaply.
    """
    config.validate()
    cloud = initial_cloud(config)
    densify_ticks, prune_ticks = schedule_ticks(config)
    rng = np.random.default_rng(
        np.random.SeedSequence([_SEED_ROOT, config.seed])
    )
    coords = {"distance": [], "fovy": [], "elevation": [], "azimuth": []}
    for _ in range(camera_draws):
        camera = sample_camera(config, rng)
        coords["distance"].append(camera.distance)
        coords["fovy"].append(camera.fovy_deg)
        coords["elevation"].append(camera.elevation_deg)
        coords["azimuth"].append(camera.azimuth_deg)
    camera_stats = {
        name: {"min": float(min(values)), "max": float(max(values))}
        for name, values in coords.items()
    }
    return {
        "schema": REPORT_SCHEMA,
        "initial_count": len(cloud),
        "init_opacity": float(cloud.activated_alphas().mean()),
        "densify_ticks": [t for t in densify_ticks
                          if t <= config.iterations],
        "prune_ticks": [t for t in prune_ticks if t <= config.iterations],
        "camera": camera_stats,
        "camera_draws": camera_draws,
    }
