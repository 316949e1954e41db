import json

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from lkaunet import tensor_core as tc
from lkaunet.augment import (
    AugmentConfig,
    AugPlan,
    MethodConfig,
    apply_intensity,
    apply_spatial,
    augment,
    elastic_displacement,
    gaussian_blur,
    rotation_matrix,
    sample_plan,
)
from lkaunet.eval_metrics import dice_score


def _vol(shape=(12, 10, 8), seed=0, dtype="float32"):
    return np.random.default_rng(seed).standard_normal(shape).astype(dtype)


def _labels(shape=(12, 10, 8), seed=0):
    return np.random.default_rng(seed).choice(np.array([0, 1, 4], dtype=np.uint8), size=shape)


class TestConfig:
    def test_defaults(self):
        c = AugmentConfig()
        assert (c.brightness.probability, c.brightness.low, c.brightness.high) == (0.30, 0.7, 1.3)
        assert (c.scaling.low, c.scaling.high) == (0.65, 1.6)
        assert (c.rotation.low, c.rotation.high) == (-30.0, 30.0)
        assert c.flipping.probability == 0.5

    def test_validation(self):
        with pytest.raises(ValueError):
            MethodConfig(1.5, 0, 1)
        with pytest.raises(ValueError):
            MethodConfig(0.5, 2, 1)

    def test_json_roundtrip(self):
        c = AugmentConfig().with_probability(0.8)
        text = json.dumps(c.to_dict())
        assert AugmentConfig.from_json(text) == c
        assert json.loads(text)["schema_version"] == 1

    def test_partial_and_unknown(self):
        c = AugmentConfig.from_dict({"gamma": {"probability": 1.0}})
        assert c.gamma == MethodConfig(1.0, 0.7, 1.5)
        with pytest.raises(ValueError):
            AugmentConfig.from_dict({"mixup": {"probability": 1.0}})


class TestSampling:
    def test_deterministic(self):
        a, r1 = sample_plan(AugmentConfig(), tc.Rng(3))
        b, r2 = sample_plan(AugmentConfig(), tc.Rng(3))
        assert a == b and r1 == r2

    def test_all_off(self):
        plan, _ = sample_plan(AugmentConfig().with_probability(0.0), tc.Rng(0))
        assert plan.empty

    def test_all_on_in_range(self):
        cfg = AugmentConfig().with_probability(1.0)
        rng = tc.Rng(1)
        for _ in range(20):
            plan, rng = sample_plan(cfg, rng)
            assert 0.7 <= plan.brightness < 1.3
            assert 0.65 <= plan.scale < 1.6
            assert all(-30 <= a < 30 for a in plan.rotation)
            assert 5 <= plan.elastic_alpha < 10
            assert plan.flips == (True, True, True)

    def test_firing_rates(self):
        rng = tc.Rng(2)
        hits = 0
        for _ in range(400):
            plan, rng = sample_plan(AugmentConfig(), rng)
            hits += plan.brightness is not None
        assert abs(hits / 400 - 0.30) < 0.07


class TestIntensity:
    def test_identity_plan(self):
        x = _vol()
        np.testing.assert_array_equal(apply_intensity(x, AugPlan()), x)

    def test_gamma_and_brightness_one(self):
        x = _vol(dtype="float64")
        np.testing.assert_allclose(apply_intensity(x, AugPlan(gamma=1.0, brightness=1.0)), x, atol=1e-12)

    def test_brightness(self):
        x = _vol(dtype="float64")
        np.testing.assert_allclose(apply_intensity(x, AugPlan(brightness=1.2)), 1.2 * x)

    def test_contrast_clipped(self):
        x = _vol(dtype="float64")
        y = apply_intensity(x, AugPlan(contrast=1.4))
        assert y.min() >= x.min() and y.max() <= x.max()
        assert y.std() > x.std()

    def test_gamma_keeps_range(self):
        x = _vol(dtype="float64")
        y = apply_intensity(x, AugPlan(gamma=1.5))
        assert y.min() == pytest.approx(x.min()) and y.max() == pytest.approx(x.max())

    def test_noise_seeded(self):
        x = np.zeros((20, 20, 20))
        a = apply_intensity(x, AugPlan(noise_variance=0.25, noise_seed=5))
        b = apply_intensity(x, AugPlan(noise_variance=0.25, noise_seed=5))
        assert np.array_equal(a, b)
        assert a.std() == pytest.approx(0.5, rel=0.05)

    def test_blur_preserves_impulse_mass(self):
        x = np.zeros((15, 15, 15))
        x[7, 7, 7] = 1.0
        assert abs(gaussian_blur(x, 1.0).sum() - 1.0) <= 1e-4

    def test_dtype_and_type(self):
        assert apply_intensity(_vol(), AugPlan(gamma=0.8)).dtype == np.float32
        with pytest.raises(TypeError):
            apply_intensity(np.zeros((3, 3, 3), np.int16), AugPlan())

    def test_multichannel(self):
        x = _vol((2, 6, 6, 6), dtype="float64")
        y = apply_intensity(x, AugPlan(contrast=0.5))
        for c in range(2):
            assert y[c].min() >= x[c].min() and y[c].max() <= x[c].max()


class TestSpatial:
    def test_rotation_matrix_orthonormal(self):
        r = rotation_matrix((10.0, -20.0, 33.0))
        np.testing.assert_allclose(r @ r.T, np.eye(3), atol=1e-12)
        assert np.linalg.det(r) == pytest.approx(1.0)

    def test_flip_twice_is_identity(self):
        x, lab = _vol(), _labels()
        plan = AugPlan(flips=(True, False, True))
        once = apply_spatial(x, lab, plan)
        twice = apply_spatial(*once, plan)
        assert np.array_equal(twice[0], x) and np.array_equal(twice[1], lab)
        np.testing.assert_array_equal(once[0], x[::-1, :, ::-1])

    def test_near_identity_transform(self):
        x = _vol(dtype="float64")
        y, _ = apply_spatial(x, None, AugPlan(scale=1.0, rotation=(0.0, 0.0, 0.0), elastic_alpha=1e-9))
        np.testing.assert_allclose(y, x, atol=1e-5)

    def test_rotate_bar_90(self):
        n = 21
        lab = np.zeros((n, n, n), np.uint8)
        lab[8:13, 8:13, 2:19] = 1  # bar along axis 2
        x = lab.astype(np.float32)
        y, out = apply_spatial(x, lab, AugPlan(rotation=(90.0, 0.0, 0.0)))
        expected = np.zeros_like(lab)
        expected[8:13, 2:19, 8:13] = 1  # now along axis 1
        assert dice_score(out == 1, expected == 1) >= 0.9
        assert dice_score(y > 0.5, expected == 1) >= 0.9

    def test_scaling_grows_object(self):
        lab = np.zeros((20, 20, 20), np.uint8)
        lab[7:13, 7:13, 7:13] = 1
        _, big = apply_spatial(lab.astype(np.float32), lab, AugPlan(scale=1.5))
        assert big.sum() > lab.sum()

    def test_labels_keep_values(self):
        x, lab = _vol(), _labels()
        cfg = AugmentConfig().with_probability(1.0)
        rng = tc.Rng(4)
        for _ in range(3):
            _, out, _, rng = augment(x, lab, cfg, rng)
            assert set(np.unique(out)) <= {0, 1, 4}
            assert out.dtype == lab.dtype

    def test_label_shape_mismatch(self):
        with pytest.raises(ValueError):
            apply_spatial(_vol(), np.zeros((3, 3, 3), np.uint8), AugPlan())

    def test_elastic_field(self):
        f = elastic_displacement((10, 10, 10), 5.0, 7)
        assert f.shape == (3, 10, 10, 10)
        assert np.abs(f).max() == pytest.approx(5.0)
        assert np.array_equal(f, elastic_displacement((10, 10, 10), 5.0, 7))


def test_augment_determinism():
    x, lab = _vol(), _labels()
    cfg = AugmentConfig().with_probability(0.7)
    a = augment(x, lab, cfg, tc.Rng(9))
    b = augment(x, lab, cfg, tc.Rng(9))
    assert np.array_equal(a[0], b[0]) and np.array_equal(a[1], b[1])
    assert a[2] == b[2] and a[3] == b[3]


@settings(max_examples=15, deadline=None)
@given(st.integers(0, 2**63 - 1))
def test_augment_shapes_property(seed):
    x, lab = _vol((8, 8, 8)), _labels((8, 8, 8))
    y, out, _, _ = augment(x, lab, AugmentConfig(), tc.Rng(seed))
    assert y.shape == x.shape and out.shape == lab.shape
    assert np.all(np.isfinite(y))
