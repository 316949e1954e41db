import math
import subprocess
import sys

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra import numpy as hnp

from lkaunet import tensor_core as tc

floats = st.floats(-50, 50, allow_nan=False, width=64)
arrays = hnp.arrays(np.float64, hnp.array_shapes(min_dims=1, max_dims=4, max_side=5), elements=floats)


class TestMakeTensor:
    def test_fill(self):
        t = tc.make_tensor([2, 3], "float32", fill=0)
        assert t.shape == (2, 3) and t.dtype == np.float32
        assert np.all(t == 0)

    def test_data(self):
        t = tc.make_tensor([1], "float64", data=[7.0])
        assert t[0] == 7.0

    def test_length_mismatch(self):
        with pytest.raises(ValueError):
            tc.make_tensor([2, 2], "float32", data=[1, 2, 3])

    def test_zero_dim(self):
        with pytest.raises(ValueError):
            tc.make_tensor([2, 0], "float32", fill=1)

    def test_unknown_dtype(self):
        with pytest.raises((ValueError, TypeError)):
            tc.make_tensor([2], "int16", fill=1)


class TestActivations:
    def test_leaky_relu_examples(self):
        y = tc.leaky_relu(np.array([-1.0, 3.5, 0.0]), 0.01)
        np.testing.assert_array_equal(y, [-0.01, 3.5, 0.0])

    def test_leaky_relu_rejects_int(self):
        with pytest.raises(TypeError):
            tc.leaky_relu(np.array([1, 2]), 0.01)

    def test_sigmoid_examples(self):
        assert tc.sigmoid(np.array([0.0]))[0] == 0.5
        assert abs(tc.sigmoid(np.array([100.0]))[0] - 1.0) <= np.finfo(np.float64).eps
        assert tc.sigmoid(np.array([-math.log(3)]))[0] == pytest.approx(0.25, abs=1e-15)

    def test_sigmoid_no_overflow(self):
        with np.errstate(over="raise", invalid="raise"):
            y = tc.sigmoid(np.array([-1000.0, 1000.0]))
        assert np.all(np.isfinite(y))

    @given(arrays)
    def test_sigmoid_symmetry(self, x):
        np.testing.assert_allclose(tc.sigmoid(x) + tc.sigmoid(-x), 1.0, atol=1e-6)

    @given(hnp.arrays(np.float64, hnp.array_shapes(max_dims=3, max_side=5), elements=st.floats(-30, 30)))
    def test_sigmoid_open_interval(self, x):
        # float64 saturates to exactly 1.0 beyond x ~ 36.7
        y = tc.sigmoid(x)
        assert np.all(y > 0) and np.all(y < 1)

    def test_softmax_examples(self):
        np.testing.assert_allclose(tc.softmax(np.array([0.0, 0.0]), axis=0), [0.5, 0.5])
        np.testing.assert_allclose(tc.softmax(np.array([0.0, math.log(3)]), axis=0), [0.25, 0.75])
        np.testing.assert_allclose(tc.softmax(np.array([1000.0, 1000.0]), axis=0), [0.5, 0.5])

    def test_softmax_bad_axis(self):
        with pytest.raises((ValueError, np.exceptions.AxisError)):
            tc.softmax(np.zeros((2, 3)), axis=5)

    @given(hnp.arrays(np.float64, (2, 3, 4), elements=floats))
    def test_softmax_sums_to_one(self, x):
        np.testing.assert_allclose(tc.softmax(x, axis=1).sum(axis=1), 1.0, atol=1e-6)

    @given(arrays)
    def test_shape_preserved(self, x):
        for f in (tc.sigmoid, tc.softplus, lambda v: tc.leaky_relu(v, 0.01)):
            assert f(x).shape == x.shape

    def test_softplus_large(self):
        y = tc.softplus(np.array([800.0, -800.0]))
        assert y[0] == 800.0 and y[1] >= 0


class TestGroupNorm:
    def test_constant_input(self):
        x = np.full((1, 4, 2, 2, 2), 3.0)
        np.testing.assert_allclose(tc.group_norm(x, 2, gamma=np.ones(4), beta=np.zeros(4)), 0.0)

    def test_gamma_zero(self):
        x = np.random.default_rng(0).standard_normal((2, 4, 2, 2, 2))
        np.testing.assert_allclose(tc.group_norm(x, 2, gamma=np.zeros(4), beta=np.full(4, 5.0)), 5.0)

    def test_group_statistics(self):
        x = np.random.default_rng(1).normal(3.0, 2.0, (2, 6, 3, 3, 3))
        y = tc.group_norm(x, 2).reshape(2, 2, -1)
        np.testing.assert_allclose(y.mean(-1), 0.0, atol=1e-4)
        np.testing.assert_allclose(y.var(-1), 1.0, atol=1e-4)

    def test_groups_equal_channels_is_instance_norm(self):
        x = np.random.default_rng(2).standard_normal((2, 3, 4, 4, 4))
        mu = x.mean(axis=(2, 3, 4), keepdims=True)
        var = x.var(axis=(2, 3, 4), keepdims=True)
        np.testing.assert_allclose(tc.group_norm(x, 3, eps=1e-5), (x - mu) / np.sqrt(var + 1e-5), atol=1e-12)

    def test_indivisible(self):
        with pytest.raises(ValueError):
            tc.group_norm(np.zeros((1, 6, 2, 2, 2)), 4)

    @pytest.mark.parametrize("c,g", [(1, 1), (4, 4), (8, 8), (12, 6), (32, 8), (6, 6), (10, 5)])
    def test_default_groups(self, c, g):
        assert tc.default_groups(c) == g


class TestRng:
    def test_determinism(self):
        a, _ = tc.uniform(tc.Rng(5), 0, 1, 100)
        b, _ = tc.uniform(tc.Rng(5), 0, 1, 100)
        np.testing.assert_array_equal(a, b)

    def test_stream_advances(self):
        a, r = tc.uniform(tc.Rng(5), 0, 1, 10)
        b, _ = tc.uniform(r, 0, 1, 10)
        assert not np.array_equal(a, b)

    def test_mean(self):
        u, _ = tc.uniform(tc.Rng(0), 0, 1, 100_000)
        assert abs(u.mean() - 0.5) < 0.01
        assert u.min() >= 0 and u.max() < 1

    def test_lo_equals_hi(self):
        with pytest.raises(ValueError):
            tc.uniform(tc.Rng(0), 1.0, 1.0, 3)

    @settings(max_examples=50)
    @given(st.floats(-1e3, 1e3), st.floats(1e-3, 1e3), st.integers(0, 2**63))
    def test_half_open_range_float32(self, lo, width, seed):
        u, _ = tc.uniform(tc.Rng(seed), lo, lo + width, 64, dtype="float32")
        assert np.all(u >= np.float32(lo) - abs(np.float32(lo)) * 1e-6)
        assert np.all(u < np.float32(lo + width)) or np.float32(lo) == np.float32(lo + width)

    def test_seed_range(self):
        with pytest.raises(ValueError):
            tc.Rng(-1)
        with pytest.raises(ValueError):
            tc.Rng(2**64)

    def test_split_independent(self):
        kids = tc.Rng(3).split(3)
        draws = [tc.uniform(k, 0, 1, 8)[0] for k in kids]
        assert not np.array_equal(draws[0], draws[1])
        assert [k.seed for k in tc.Rng(3).split(3)] == [k.seed for k in kids]

    def test_cross_process_bitwise(self):
        code = ("from lkaunet import tensor_core as tc;"
                "import sys; sys.stdout.write(tc.normal(tc.Rng(11), 0, 1, 16)[0].tobytes().hex())")
        outs = {subprocess.run([sys.executable, "-c", code], capture_output=True, text=True, check=True).stdout
                for _ in range(2)}
        assert len(outs) == 1
        assert next(iter(outs)) == tc.normal(tc.Rng(11), 0, 1, 16)[0].tobytes().hex()

    def test_bernoulli_and_permutation(self):
        b, _ = tc.bernoulli(tc.Rng(0), 0.3, 10_000)
        assert abs(b.mean() - 0.3) < 0.02
        p, _ = tc.permutation(tc.Rng(0), 10)
        assert sorted(p) == list(range(10))


def test_check_finite():
    with pytest.raises(tc.NonFiniteError):
        tc.check_finite(np.array([1.0, np.nan]))
