"""Score quantization, LCM inverse weighting, and gradient fusion."""

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from contrast_forge.errors import ContractError, ScorerError
from contrast_forge.guidance import target_image_for_prompt
from contrast_forge.preference import (
    BrightnessScorer,
    FusedPreferenceGradient,
    KeywordColorScorer,
    PreferenceSignal,
    TargetPatchScorer,
    fuse_positive,
    lcm_weights,
    positive_preference_grad,
    quantize_score,
    score_all,
)


def constant_signal(value, shape=(4, 4, 3), score=0.0, scorer_id="mock:test"):
    return PreferenceSignal(
        score=score, gradient=np.full(shape, float(value)),
        scorer_id=scorer_id,
    )


class TestQuantizeScore:
    def test_zero_maps_to_fifty(self):
        assert quantize_score(0.0) == 50

    def test_logistic_point_eight_maps_to_eighty(self):
        assert quantize_score(1.3863) == 80

    def test_saturation(self):
        assert quantize_score(1e6) == 100
        assert quantize_score(-1e6) == 1
        assert quantize_score(-1e300) == 1

    def test_non_finite_rejected(self):
        with pytest.raises(ContractError):
            quantize_score(float("nan"))

    @settings(max_examples=50, deadline=None)
    @given(a=st.floats(-50, 50), b=st.floats(-50, 50))
    def test_monotone(self, a, b):
        lo, hi = sorted((a, b))
        assert quantize_score(lo) <= quantize_score(hi)
        assert 1 <= quantize_score(a) <= 100


class TestLcmWeights:
    def test_four_six(self):
        np.testing.assert_allclose(lcm_weights([4, 6]), [0.6, 0.4],
                                   atol=1e-12)

    def test_two_three(self):
        np.testing.assert_allclose(lcm_weights([2, 3]), [0.6, 0.4],
                                   atol=1e-12)

    def test_equal_scores_split_evenly(self):
        np.testing.assert_allclose(lcm_weights([5, 5]), [0.5, 0.5],
                                   atol=1e-15)

    def test_empty_rejected(self):
        with pytest.raises(ContractError):
            lcm_weights([])

    def test_nonpositive_rejected(self):
        with pytest.raises(ContractError):
            lcm_weights([3, 0])

    def test_ordering_exhaustive_over_all_pairs(self):
        """Lower quantized score always gets the strictly larger weight."""
        for a in range(1, 101):
            for b in range(a + 1, 101):
                lam = lcm_weights([a, b])
                assert lam[0] > lam[1], (a, b)
                assert abs(lam.sum() - 1.0) < 1e-12

    def test_scale_invariance(self):
        rng = np.random.default_rng(0)
        for _ in range(200):
            pair = rng.integers(1, 101, size=2)
            m = int(rng.integers(2, 11))
            base = lcm_weights(pair.tolist())
            scaled = lcm_weights((m * pair).tolist())
            np.testing.assert_allclose(base, scaled, atol=1e-12)

    @settings(max_examples=50, deadline=None)
    @given(st.lists(st.integers(1, 100), min_size=2, max_size=4))
    def test_ordering_property_longer_vectors(self, scores):
        lam = lcm_weights(scores)
        assert lam.min() > 0
        assert abs(lam.sum() - 1.0) < 1e-12
        for i in range(len(scores)):
            for j in range(len(scores)):
                if scores[i] < scores[j]:
                    assert lam[i] > lam[j]


class TestScoreAll:
    def test_two_mocks_give_two_matching_signals(self):
        img = np.full((6, 5, 3), 0.25)
        signals = score_all([BrightnessScorer(), TargetPatchScorer()],
                            img, "a red jacket")
        assert [s.scorer_id for s in signals] == [
            "mock:brightness", "mock:target-patch"
        ]
        for s in signals:
            assert s.gradient.shape == img.shape

    def test_brightness_gradient_is_constant_field(self):
        img = np.random.default_rng(0).uniform(0, 1, (8, 4, 3))
        signal = BrightnessScorer().score(img, "")
        assert signal.score == pytest.approx(img.mean())
        np.testing.assert_allclose(
            signal.gradient, np.full(img.shape, 1.0 / img.size), atol=0
        )

    def test_target_patch_gradient_closed_form(self):
        img = np.random.default_rng(1).uniform(0, 1, (5, 5, 3))
        signal = TargetPatchScorer().score(img, "a red jacket")
        target = target_image_for_prompt("a red jacket", 5, 5)
        np.testing.assert_allclose(
            signal.gradient, -2.0 * (img - target) / img.size, atol=1e-12
        )
        assert signal.score == pytest.approx(-np.mean((img - target) ** 2))

    def test_keyword_color_scorer(self):
        img = np.random.default_rng(2).uniform(0, 1, (4, 4, 3))
        signal = KeywordColorScorer().score(img, "a red jacket")
        assert signal.score == pytest.approx(img[..., 0].mean())
        assert signal.gradient[..., 0].sum() == pytest.approx(1.0)
        assert np.abs(signal.gradient[..., 1:]).max() == 0.0
        silent = KeywordColorScorer().score(img, "a linen shirt")
        assert silent.score == 0.0
        assert np.abs(silent.gradient).max() == 0.0

    def test_repeat_calls_are_bitwise_identical(self):
        img = np.random.default_rng(3).uniform(0, 1, (4, 4, 3))
        a = score_all([TargetPatchScorer()], img, "x")[0]
        b = score_all([TargetPatchScorer()], img, "x")[0]
        assert a.score == b.score
        np.testing.assert_array_equal(a.gradient, b.gradient)

    def test_flaky_scorer_retried_then_named_in_error(self):
        class Flaky:
            identifier = "mock:flaky"

            def __init__(self, failures):
                self.failures = failures

            def score(self, image, text):
                if self.failures > 0:
                    self.failures -= 1
                    raise IOError("connection reset")
                return constant_signal(1.0, image.shape,
                                       scorer_id=self.identifier)

        img = np.zeros((4, 4, 3))
        # Two failures are absorbed by the default retry budget.
        ok = score_all([Flaky(2)], img, "p")
        assert ok[0].scorer_id == "mock:flaky"
        with pytest.raises(ScorerError, match="mock:flaky"):
            score_all([Flaky(5)], img, "p")

    def test_empty_scorer_list_rejected(self):
        with pytest.raises(ContractError):
            score_all([], np.zeros((2, 2, 3)), "p")

    def test_non_finite_image_rejected(self):
        img = np.zeros((2, 2, 3))
        img[0, 0, 0] = np.nan
        with pytest.raises(ContractError):
            score_all([BrightnessScorer()], img, "p")


class TestPositiveFusion:
    def test_single_signal_passthrough(self):
        sig = constant_signal(3.0)
        fused = positive_preference_grad([sig], [1.0])
        np.testing.assert_allclose(fused.gradient, sig.gradient, atol=0)

    def test_opposite_gradients_cancel(self):
        a = constant_signal(1.0)
        b = constant_signal(-1.0)
        fused = positive_preference_grad([a, b], [0.5, 0.5])
        assert np.abs(fused.gradient).max() == 0.0

    def test_hand_weighted_average(self):
        a = constant_signal(1.0)
        b = constant_signal(2.0)
        fused = positive_preference_grad([a, b], [0.6, 0.4])
        np.testing.assert_allclose(fused.gradient, 0.7, atol=1e-12)

    def test_divide_by_n_off_doubles_two_scorer_output(self):
        a = constant_signal(1.0)
        b = constant_signal(2.0)
        on = positive_preference_grad([a, b], [0.6, 0.4], divide_by_n=True)
        off = positive_preference_grad([a, b], [0.6, 0.4], divide_by_n=False)
        np.testing.assert_allclose(off.gradient, 2.0 * on.gradient,
                                   atol=1e-12)

    def test_weights_must_sum_to_one(self):
        with pytest.raises(ContractError):
            positive_preference_grad([constant_signal(1.0)], [0.9])

    def test_shape_mismatch_rejected(self):
        a = constant_signal(1.0, shape=(4, 4, 3))
        b = constant_signal(1.0, shape=(5, 5, 3))
        with pytest.raises(ContractError):
            positive_preference_grad([a, b], [0.5, 0.5])

    def test_linearity_in_each_gradient(self):
        rng = np.random.default_rng(4)
        g1, g2 = rng.standard_normal((2, 3, 3, 3))
        sig = lambda g: PreferenceSignal(0.0, g, "mock:t")
        lam = [0.3, 0.7]
        base = positive_preference_grad([sig(g1), sig(g2)], lam).gradient
        scaled = positive_preference_grad([sig(2 * g1), sig(g2)],
                                          lam).gradient
        np.testing.assert_allclose(
            scaled - base, positive_preference_grad(
                [sig(g1), sig(np.zeros_like(g2))], lam
            ).gradient,
            atol=1e-12,
        )

    def test_fuse_positive_wires_quantize_and_lcm(self):
        # Scores 0.0 and 1.3863 quantize to 50 and 80 -> weights
        # [8/13, 5/13].
        a = constant_signal(1.0, score=0.0)
        b = constant_signal(1.0, score=1.3863)
        fused = fuse_positive([a, b])
        assert isinstance(fused, FusedPreferenceGradient)
        assert fused.quantized_scores == (50, 80)
        np.testing.assert_allclose(fused.weights, [8 / 13, 5 / 13],
                                   atol=1e-12)
        assert fused.weights.sum() == pytest.approx(1.0, abs=1e-9)
        assert fused.weights.min() >= 0.0
