"""Multi-view prediction tests: transforms, aggregation, change rate."""

import numpy as np
import pytest

from mvrml.domains import DomainSpec, generate_synthetic_suite
from mvrml.errors import ShapeError
from mvrml.mvp import (
    MvpConfig,
    TransformSpec,
    apply_weak_transform,
    multiview_accuracy,
    predict_multiview,
    prediction_change_rate,
)
from mvrml.nn_core import ArchSpec, Batch, forward, init_model, softmax
from mvrml.rng import RngStream

IDENTITY = TransformSpec(jitter_sigma=0.0, scale_range=(1.0, 1.0))


def trained_ish_model(seed=0):
    arch = ArchSpec(2, (8,), 3, use_batchnorm_after=(0,))
    return init_model(arch, RngStream(seed))


def small_dataset(n=60, seed=0):
    spec = DomainSpec(
        "d", ((-1.5, 0.0), (0.0, 0.0), (1.5, 0.0)),
        ((0.4, 0.4),) * 3, samples_per_class=n // 3, seed=seed,
    )
    return generate_synthetic_suite([spec]).datasets[0]


class TestTransform:
    def test_identity_spec_is_identity(self):
        x = np.array([0.3, -1.2, 2.0, 0.0])
        out = apply_weak_transform(x, TransformSpec(0.0, (1.0, 1.0)), RngStream(5))
        assert np.array_equal(out, x)

    def test_fixed_rng_deterministic(self):
        x = np.array([1.0, 2.0])
        spec = TransformSpec(jitter_sigma=0.3, scale_range=(0.8, 1.0), flip_axis=1)
        a = apply_weak_transform(x, spec, RngStream(7, 3))
        b = apply_weak_transform(x, spec, RngStream(7, 3))
        assert np.array_equal(a, b)

    def test_scale_draw_mean(self):
        # 1e5 draws from U[0.8, 1.0] have mean 0.9 within 0.002
        x = np.ones(1)
        spec = TransformSpec(jitter_sigma=0.0, scale_range=(0.8, 1.0))
        base = RngStream(11, 0)
        draws = np.array([
            apply_weak_transform(x, spec, base.child(i))[0] for i in range(100_000)
        ])
        assert abs(draws.mean() - 0.9) < 0.002

    def test_flip_negates_half_the_time(self):
        x = np.array([1.0, 1.0])
        spec = TransformSpec(jitter_sigma=0.0, scale_range=(1.0, 1.0), flip_axis=1)
        base = RngStream(13, 0)
        flipped = sum(
            apply_weak_transform(x, spec, base.child(i))[1] < 0 for i in range(2000)
        )
        assert 850 < flipped < 1150

    def test_strong_tier_widens(self):
        weak = TransformSpec(jitter_sigma=0.1, scale_range=(0.8, 1.0))
        strong = TransformSpec(jitter_sigma=0.1, scale_range=(0.8, 1.0), strength="strong")
        assert strong.effective_jitter() == pytest.approx(0.4)
        lo, hi = strong.effective_scale_range()
        wlo, whi = weak.effective_scale_range()
        assert lo < wlo and hi > whi

    def test_flip_axis_validated(self):
        with pytest.raises(ShapeError):
            apply_weak_transform(np.ones(2), TransformSpec(flip_axis=5), RngStream(0))

    def test_bad_scale_range(self):
        with pytest.raises(ShapeError):
            TransformSpec(scale_range=(0.0, 1.0))


class TestPredictMultiview:
    def test_single_identity_view_reduces_to_forward(self):
        model = trained_ish_model()
        x = np.array([0.7, -0.4])
        cfg = MvpConfig(num_views_m=1, transform=IDENTITY, seed=3)
        p = predict_multiview(model, x, cfg)
        logits, _ = forward(model, Batch(x[None, :], np.array([0])), "eval")
        assert np.array_equal(p, softmax(logits[0]))

    def test_constant_model_uniform_probabilities(self):
        model = trained_ish_model()
        model.weights(1)[...] = 0.0
        model.biases(1)[...] = 0.0
        cfg = MvpConfig(num_views_m=8, transform=TransformSpec(0.2, (0.8, 1.0)), seed=1)
        p = predict_multiview(model, np.array([1.0, 2.0]), cfg)
        np.testing.assert_allclose(p, np.full(3, 1.0 / 3.0), atol=1e-12)

    def test_probabilities_normalized(self):
        model = trained_ish_model(4)
        cfg = MvpConfig(num_views_m=5, transform=TransformSpec(0.3, (0.8, 1.0)), seed=2)
        p = predict_multiview(model, np.array([0.2, 0.9]), cfg)
        assert abs(p.sum() - 1.0) <= 1e-12
        assert np.all(p >= 0.0)

    def test_logit_averaging_not_probability_averaging(self):
        # softmax(mean(logits)) differs from mean(softmax(logits)) on a
        # crafted two-view example; the implementation must do the former
        l1 = np.array([4.0, 0.0, 0.0])
        l2 = np.array([-4.0, 1.0, 0.0])
        avg_logit = softmax((l1 + l2) / 2)
        avg_prob = (softmax(l1) + softmax(l2)) / 2
        assert not np.allclose(avg_logit, avg_prob, atol=1e-3)

    def test_variance_shrinks_with_views(self):
        model = trained_ish_model(5)
        ds = small_dataset(n=30, seed=3)
        spec = TransformSpec(jitter_sigma=0.4, scale_range=(0.8, 1.0))
        seeds = range(6)
        spreads = []
        for m in (1, 4, 16, 64):
            preds = np.array([
                [predict_multiview(model, x, MvpConfig(m, spec, seed=s)) for x in ds.features[:25]]
                for s in seeds
            ])
            spreads.append(preds.var(axis=0).mean())
        assert spreads[0] > spreads[-1]
        for a, b in zip(spreads, spreads[1:]):
            assert b <= a * 1.15  # non-increasing up to sampling slack

    def test_m32_tighter_than_m2_across_seeds(self):
        model = trained_ish_model(6)
        ds = small_dataset(n=120, seed=4)
        spec = TransformSpec(jitter_sigma=0.4, scale_range=(0.8, 1.0))

        def tv_gap(m):
            pa = np.array([
                predict_multiview(model, x, MvpConfig(m, spec, seed=101)) for x in ds.features[:100]
            ])
            pb = np.array([
                predict_multiview(model, x, MvpConfig(m, spec, seed=202)) for x in ds.features[:100]
            ])
            return 0.5 * np.abs(pa - pb).sum(axis=1).mean()

        assert tv_gap(32) < tv_gap(2)


class TestPredictionChangeRate:
    def test_identity_transform_gives_zero(self):
        model = trained_ish_model(7)
        ds = small_dataset()
        pcr = prediction_change_rate(model, ds, IDENTITY, 3, RngStream(1))
        assert pcr == 0.0

    def test_constant_model_gives_zero(self):
        model = trained_ish_model(8)
        model.weights(1)[...] = 0.0
        model.biases(1)[...] = 0.0
        spec = TransformSpec(jitter_sigma=0.5, scale_range=(0.5, 1.5))
        pcr = prediction_change_rate(model, small_dataset(), spec, 4, RngStream(2))
        assert pcr == 0.0

    def test_rate_in_unit_interval_and_deterministic(self):
        model = trained_ish_model(9)
        spec = TransformSpec(jitter_sigma=0.6, scale_range=(0.7, 1.0))
        a = prediction_change_rate(model, small_dataset(), spec, 2, RngStream(3))
        b = prediction_change_rate(model, small_dataset(), spec, 2, RngStream(3))
        assert 0.0 <= a <= 1.0
        assert a == b
        assert a > 0.0  # jitter of this size must flip something at init


class TestMultiviewAccuracy:
    def test_matches_per_sample_predictions(self):
        model = trained_ish_model(10)
        ds = small_dataset(n=30, seed=5)
        cfg = MvpConfig(num_views_m=4, transform=TransformSpec(0.2, (0.8, 1.0)), seed=9)
        acc = multiview_accuracy(model, ds, cfg, chunk=7)
        base = RngStream(cfg.seed, 0)
        manual = np.mean([
            np.argmax(predict_multiview(model, ds.features[i], cfg, base.child(i)))
            == ds.labels[i]
            for i in range(ds.n)
        ])
        assert acc == pytest.approx(manual, abs=1e-12)
