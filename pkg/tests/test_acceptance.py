"""Acceptance gate: every headline guarantee, one pass/fail line each.

Run with ``pytest -v tests/test_acceptance.py`` (add ``-s`` to see the
measured numbers on passing criteria). Each test is one criterion at
its pinned tolerance; the module is intentionally self-contained so it
can be read as the contract of record.
"""

import importlib.util
import json
import os
import time
from collections import Counter
from contextlib import contextmanager

import numpy as np
import pytest
from numpy.testing import assert_allclose

from contrast_forge.gradcheck import run_gradcheck
from contrast_forge.guidance import (
    DiffusionSchedule,
    ToyDenoiser,
    sample_timestep,
    sds_image_gradient,
    target_image_for_prompt,
)
from contrast_forge.negation import (
    STATIC_NEGATION_PHRASES,
    build_negation_set,
    extract_maps,
    recombine_maps,
    reverse_spatial,
)
from contrast_forge.preference import lcm_weights
from contrast_forge.prompts import default_template, generate_corpus
from contrast_forge.scorer_http import start_mock_server
from contrast_forge.splat_render import (
    CameraPose,
    GaussianCloud,
    RenderSettings,
    psnr,
    render,
)
from contrast_forge.trainer import TrainConfig, run
from contrast_forge.wire_conformance import run_protocol_conformance

DOUBLE = RenderSettings(dtype=np.float64)
STATIC_PREFIX = ", ".join(STATIC_NEGATION_PHRASES)


@contextmanager
def criterion(name):
    """Print one [PASS]/[FAIL] line per acceptance criterion."""
    info = {}
    try:
        yield info
    except BaseException:
        print(f"[FAIL] {name}")
        raise
    detail = info.get("detail", "")
    suffix = f" — {detail}" if detail else ""
    print(f"[PASS] {name}{suffix}")


def _load_calibration_module():
    root = os.path.dirname(os.path.dirname(os.path.abspath(__file__)))
    path = os.path.join(root, "scripts", "calibrate_convergence.py")
    spec = importlib.util.spec_from_file_location("calibrate_convergence",
                                                  path)
    module = importlib.util.module_from_spec(spec)
    spec.loader.exec_module(module)
    return module


# ---------------------------------------------------------------------------
# 1. Renderer gradient suite


def test_primary_renderer_gradient_suite():
    """100 seeded scenes, all five parameter groups, rel err <= 1e-3."""
    with criterion("renderer gradient suite (100 scenes, tol 1e-3)") as info:
        start = time.perf_counter()
        report = run_gradcheck(num_scenes=100, tolerance=1e-3)
        elapsed = time.perf_counter() - start
        assert report.passed, report.summary()
        assert report.max_rel_err <= 1e-3
        assert elapsed < 120.0, f"gradient suite took {elapsed:.1f}s"
        info["detail"] = (f"max rel err {report.max_rel_err:.3e} over "
                          f"{report.params_checked} params in {elapsed:.1f}s")


# ---------------------------------------------------------------------------
# 2. Compositing oracle


def test_primary_compositing_weights():
    """Weights + background remainder sum to 1; exact two-splat case."""
    with criterion("compositing weight sums (1000 px, tol 1e-6)") as info:
        # All-ones colors over black background expose the weight total
        # in the red channel; the remainder is (1 - alpha).
        worst = 0.0
        checked = 0
        rng = np.random.default_rng(2024)
        for scene in range(4):
            n = 200 + 50 * scene
            cloud = GaussianCloud(
                positions=rng.uniform(-0.5, 0.5, (n, 3)),
                log_scales=rng.uniform(np.log(0.02), np.log(0.2), (n, 3)),
                rotations=rng.standard_normal((n, 4)),
                colors=np.ones((n, 3)),
                opacities=rng.uniform(-3.0, 3.0, n),
            )
            camera = CameraPose(
                distance=float(rng.uniform(1.5, 2.0)),
                fovy_deg=float(rng.uniform(40.0, 70.0)),
                elevation_deg=float(rng.uniform(-30.0, 30.0)),
                azimuth_deg=float(rng.uniform(-180.0, 180.0)),
                width=64, height=64,
            )
            out = render(cloud, camera, background=0.0, settings=DOUBLE)
            weight_sum = out.image[..., 0] + (1.0 - out.alpha)
            ys = rng.integers(0, 64, size=250)
            xs = rng.integers(0, 64, size=250)
            errors = np.abs(weight_sum[ys, xs] - 1.0)
            worst = max(worst, float(errors.max()))
            checked += len(ys)
        assert checked == 1000
        assert worst < 1e-6, f"weight sum off by {worst:.3e}"

        # Two half-opacity splats stacked on one pixel: front takes 0.5,
        # back takes 0.25, background keeps the remaining 0.25.
        camera = CameraPose(distance=2.0, fovy_deg=60.0, elevation_deg=0.0,
                            azimuth_deg=0.0, width=16, height=16)
        fy, fx = camera.focals()
        positions = []
        for tz in (2.0, 2.5):
            tx = (7.5 - 8.0) * tz / fx
            ty = (7.5 - 8.0) * tz / fy
            positions.append([tx, -ty, 2.0 - tz])
        pair_cloud = GaussianCloud(
            positions=np.array(positions),
            log_scales=np.full((2, 3), np.log(0.05)),
            rotations=np.array([[1.0, 0, 0, 0], [1.0, 0, 0, 0]]),
            colors=np.array([[1.0, 0, 0], [0, 1.0, 0]]),
            opacities=np.zeros(2),  # sigmoid(0) = 0.5 per splat
        )
        out = render(pair_cloud, camera, background=(0.0, 0.0, 1.0),
                     settings=DOUBLE)
        assert_allclose(out.image[7, 7], [0.5, 0.25, 0.25], atol=1e-6)
        info["detail"] = (f"1000 pixels, worst |sum-1| {worst:.2e}; "
                          "two-splat case exact to 1e-6")


# ---------------------------------------------------------------------------
# 3. SDS sanity


def test_primary_sds_sanity():
    """Exact zero for a perfect predictor; descent; mean direction."""
    with criterion("SDS sanity (zero / descent < 1e-2 / cosine > 0.99)") \
            as info:
        schedule = DiffusionSchedule()

        # (a) a predictor that echoes the injected noise: bitwise zero.
        class NoiseEcho:
            def __init__(self, eps):
                self.eps = eps

            def predict(self, noisy, t, prompt):
                return self.eps

        rng = np.random.default_rng(5)
        image = rng.uniform(0, 1, (8, 8, 3))
        noise = rng.standard_normal(image.shape)
        grad = sds_image_gradient(schedule, NoiseEcho(noise), image, "p",
                                  250, noise)
        assert np.abs(grad).max() == 0.0

        # (b) 200 plain descent steps recover the believed target.
        rng = np.random.default_rng(7)
        target = target_image_for_prompt("a red jacket", 8, 8)
        denoiser = ToyDenoiser(schedule, {"a red jacket": target}, target)
        image = np.full((8, 8, 3), 0.5)
        for _ in range(200):
            t = sample_timestep(schedule, rng)
            noise = rng.standard_normal(image.shape)
            image = image - 0.1 * sds_image_gradient(
                schedule, denoiser, image, "a red jacket", t, noise,
                cfg_scale=1.0)
        max_err = float(np.abs(image - target).max())
        assert max_err < 1e-2, f"descent stalled at {max_err:.3e}"

        # (c) over 1000 independently seeded draws, the mean gradient
        # points from the image toward the target.
        base = np.random.default_rng(8)
        image = base.uniform(0, 1, (8, 8, 3))
        target = base.uniform(0, 1, (8, 8, 3))
        total = np.zeros_like(image)
        for seed in range(1000):
            seeded = np.random.default_rng(seed)
            noisy_denoiser = ToyDenoiser(schedule, {"p": target}, target,
                                         prediction_noise=0.5, rng=seeded)
            t = sample_timestep(schedule, seeded)
            noise = seeded.standard_normal(image.shape)
            total += sds_image_gradient(schedule, noisy_denoiser, image,
                                        "p", t, noise, cfg_scale=1.0)
        mean_grad = (total / 1000).ravel()
        clean = (image - target).ravel()
        cosine = float(mean_grad @ clean /
                       (np.linalg.norm(mean_grad) * np.linalg.norm(clean)))
        assert cosine > 0.99, f"cosine only {cosine:.4f}"
        info["detail"] = (f"zero exact; descent max err {max_err:.1e}; "
                          f"cosine {cosine:.4f} over 1000 seeds")


# ---------------------------------------------------------------------------
# 4. End-to-end toy convergence

# Calibrated once by scripts/calibrate_convergence.py (measured gain
# 44.35 dB) and frozen here with margin; the contract floor is 10 dB.
FROZEN_GAIN_DB = 40.0


def test_primary_toy_convergence(tmp_path):
    """500 splats, 64x64, 300 iterations: PSNR gain over init >= 10 dB."""
    with criterion(f"toy convergence (gain >= {FROZEN_GAIN_DB} dB frozen, "
                   ">= 10 dB floor, < 10 min)") as info:
        calibration = _load_calibration_module()
        config, camera, first_image, target = calibration.convergence_setup()
        schedule = DiffusionSchedule()
        predictor = ToyDenoiser(schedule, {"calib": target}, target)
        before = psnr(first_image, target)
        start = time.perf_counter()
        cloud, report = run(config, "calib", predictor=predictor,
                            out_dir=str(tmp_path / "convergence"))
        elapsed = time.perf_counter() - start
        from contrast_forge.trainer import _TRAIN_SETTINGS
        after_image = render(cloud, camera, 1.0, _TRAIN_SETTINGS).image
        after = psnr(after_image, target)
        gain = after - before
        assert not report["aborted"]
        assert gain >= 10.0, f"gain {gain:.2f} dB below the 10 dB floor"
        assert gain >= FROZEN_GAIN_DB, \
            f"gain {gain:.2f} dB below frozen {FROZEN_GAIN_DB} dB"
        assert elapsed < 600.0, f"run took {elapsed:.0f}s"
        info["detail"] = (f"{before:.2f} -> {after:.2f} dB "
                          f"(gain {gain:.2f} dB) in {elapsed:.0f}s")


# ---------------------------------------------------------------------------
# 5. LCM weighting


def test_primary_lcm_weighting():
    """Exhaustive ordering on [1,100]^2; scale invariance; examples."""
    with criterion("LCM weighting (exhaustive [1,100]^2, 1e-12 scale "
                   "invariance)") as info:
        checked = 0
        for a in range(1, 101):
            for b in range(1, 101):
                wa, wb = lcm_weights([a, b])
                if a < b:
                    assert wa > wb, f"ordering violated at ({a},{b})"
                elif a > b:
                    assert wa < wb, f"ordering violated at ({a},{b})"
                else:
                    assert wa == wb == 0.5
                checked += 1
        assert checked == 10_000

        worst = 0.0
        for a in range(1, 101, 3):
            for b in range(2, 101, 7):
                base = lcm_weights([a, b])
                for k in (2, 3, 7):
                    scaled = lcm_weights([k * a, k * b])
                    worst = max(worst, float(np.abs(scaled - base).max()))
        assert worst <= 1e-12, f"scale invariance off by {worst:.2e}"

        assert_allclose(lcm_weights([4, 6]), [0.6, 0.4], atol=1e-12)
        assert_allclose(lcm_weights([2, 3]), [0.6, 0.4], atol=1e-12)
        info["detail"] = (f"10000 ordered pairs; scale drift {worst:.1e}; "
                          "[4,6] and [2,3] -> [0.6,0.4]")


# ---------------------------------------------------------------------------
# 6. Negation pipeline


def test_primary_negation_pipeline():
    """Three byte-exact goldens; corpus bijection; involution."""
    with criterion("negation pipeline (3 goldens byte-exact, 1000-prompt "
                   "bijection, involution)") as info:
        goldens = {
            "white canvas shoes, red jacket":
                STATIC_PREFIX + ", white jacket, red canvas shoes",
            "black glove on the left hand":
                STATIC_PREFIX + ", black glove, "
                                "black glove on the right hand",
            "baseball cap":
                STATIC_PREFIX + ", baseball cap, baseball glove",
        }
        for prompt, expected in goldens.items():
            got = build_negation_set(prompt).y_neg
            assert got == expected, f"golden mismatch for {prompt!r}"

        corpus = generate_corpus(default_template(), 1000, seed=123)
        spatial_maps = 0
        for record in corpus:
            maps = extract_maps(record.text)
            assert maps, f"no maps extracted from {record.text!r}"
            out = recombine_maps(maps)
            assert len(out) == len(maps)
            assert Counter(m.modifier for m in out) == \
                Counter(m.modifier for m in maps)
            assert [m.attribute for m in out] == \
                [m.attribute for m in maps]
            for pair in maps:
                if pair.spatial != "none":
                    spatial_maps += 1
                    flipped = reverse_spatial(pair)
                    assert flipped.spatial != pair.spatial
                    assert reverse_spatial(flipped) == pair
        assert spatial_maps > 0
        info["detail"] = (f"goldens exact; 1000 prompts recombined as "
                          f"bijections; involution on {spatial_maps} "
                          "spatial maps")


# ---------------------------------------------------------------------------
# 7. Schedule echo


def test_primary_schedule_echo():
    """Full-config dry run reports the published training schedule."""
    with criterion("schedule echo (ticks, 100000 splats, opacity 0.1, "
                   "camera ranges)") as info:
        from contrast_forge.trainer import dry_run
        config = TrainConfig()
        echo = dry_run(config, camera_draws=10_000)
        assert echo["densify_ticks"] == list(range(300, 2101, 300))
        assert echo["prune_ticks"] == list(range(2400, 3301, 300))
        assert echo["initial_count"] == 100_000
        assert abs(echo["init_opacity"] - 0.1) < 1e-9
        expected_ranges = {
            "distance": (1.5, 2.0),
            "fovy": (40.0, 70.0),
            "elevation": (-30.0, 30.0),
            "azimuth": (-180.0, 180.0),
        }
        for name, (lo, hi) in expected_ranges.items():
            stats = echo["camera"][name]
            assert lo <= stats["min"] <= stats["max"] <= hi, \
                f"{name} samples escape [{lo}, {hi}]: {stats}"
            coverage = (stats["max"] - stats["min"]) / (hi - lo)
            assert coverage > 0.99, \
                f"{name} covers only {coverage:.3f} of its range"
        info["detail"] = ("ticks {300..2100/300} + {2400..3300/300}; "
                          "100000 splats at opacity 0.1; 10k camera draws "
                          "inside all ranges")


# ---------------------------------------------------------------------------
# 8. Determinism


def test_primary_determinism(tmp_path):
    """Equal seeds give bitwise-equal run reports and PLY files."""
    with criterion("determinism (bitwise-equal report.json and model.ply)") \
            as info:
        config = TrainConfig(
            iterations=6,
            resolution=24,
            init_count=50,
            background="random",
            densify_start=3, densify_end=4, densify_interval=3,
            prune_start=5, prune_end=5, prune_interval=5,
            seed=11,
        )
        blobs = []
        for tag in ("a", "b"):
            out_dir = tmp_path / tag
            run(config, "red jacket", out_dir=str(out_dir))
            report_bytes = (out_dir / "report.json").read_bytes()
            ply_bytes = (out_dir / "model.ply").read_bytes()
            blobs.append((report_bytes, ply_bytes))
        assert blobs[0][0] == blobs[1][0], "run reports differ"
        assert blobs[0][1] == blobs[1][1], "PLY files differ"
        payload = json.loads(blobs[0][0])
        assert payload["config"]["seed"] == 11
        info["detail"] = (f"report.json ({len(blobs[0][0])} B) and "
                          f"model.ply ({len(blobs[0][1])} B) identical "
                          "across two seeded runs")


# ---------------------------------------------------------------------------
# 9. Scorer protocol conformance


def test_primary_scorer_protocol_conformance():
    """The in-process mock server satisfies the scorer wire protocol."""
    with criterion("scorer protocol conformance (mock server)") as info:
        server, url = start_mock_server()
        try:
            passed = run_protocol_conformance(
                url,
                expect_models=["mock:brightness", "mock:target-patch"])
        finally:
            server.shutdown()
        assert "health" in passed
        assert "unknown-model-404" in passed
        assert "malformed-400" in passed
        info["detail"] = f"checks passed: {', '.join(passed)}"


if __name__ == "__main__":
    raise SystemExit(pytest.main([__file__, "-v", "-s"]))
