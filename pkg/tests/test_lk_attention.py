import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from lkaunet import tensor_core as tc
from lkaunet.complexity import nprm_decomposed
from lkaunet.conv3d import ConvWeights, conv3d
from lkaunet.lk_attention import (
    FULL_PLANS,
    LKAModule,
    LKAPlan,
    effective_receptive_field,
    lka_forward,
    lka_parameter_count,
    plan_decomposition,
)

# (K, d) -> (dw kernel, dw padding, dwd kernel, dwd dilation, dwd padding)
PLAN_ROWS = {
    (21, 3): (5, 2, 7, 3, 9),
    (15, 3): (5, 2, 5, 3, 6),
    (10, 2): (3, 1, 5, 2, 4),
    (6, 2): (3, 1, 3, 2, 2),
}


@pytest.mark.parametrize("Kd", list(PLAN_ROWS))
def test_plan_rows(Kd):
    p = plan_decomposition(*Kd)
    assert (p.dw_kernel, p.dw_padding, p.dwd_kernel, p.dwd_dilation, p.dwd_padding) == PLAN_ROWS[Kd]


def test_full_plans_order():
    assert [(p.K, p.d) for p in FULL_PLANS] == [(21, 3), (15, 3), (10, 2), (6, 2), (6, 2)]


def test_plan_dict():
    d = LKAPlan(21, 3).as_dict()
    assert d["dwd"] == {"kernel": [7, 7, 7], "dilation": [3, 3, 3], "padding": [9, 9, 9]}
    assert d["dw"] == {"kernel": [5, 5, 5], "padding": [2, 2, 2]}
    assert d["effective_receptive_field"] == 23


@pytest.mark.parametrize("K,d", [(21, 4), (6, 1), (0, 1), (4, 0)])
def test_invalid_plans(K, d):
    with pytest.raises(ValueError):
        LKAPlan(K, d)


@pytest.mark.parametrize("K,d,side", [(1, 1, 1), (6, 2, 7), (21, 3, 23), (15, 3, 17), (10, 2, 11), (3, 3, 5)])
def test_effective_receptive_field(K, d, side):
    assert effective_receptive_field(LKAPlan(K, d)) == side


@pytest.mark.parametrize("plan", FULL_PLANS[:4])
def test_impulse_support_matches_receptive_field(plan):
    m = LKAModule(plan, 1, tc.Rng(0), dtype="float64")
    n = effective_receptive_field(plan) + 6
    x = np.zeros((1, 1, n, n, n))
    x[0, 0, n // 2, n // 2, n // 2] = 1.0
    h = conv3d(x, m.dwd_spec, ConvWeights(np.ones(m.dwd_spec.weight_shape), np.zeros(1)))
    h = conv3d(h, m.dw_spec, ConvWeights(np.ones(m.dw_spec.weight_shape), np.zeros(1)))
    mag = np.abs(h[0, 0])
    for axis in range(3):
        nz = np.flatnonzero(mag.sum(axis=tuple(a for a in range(3) if a != axis)) > 0)
        assert nz[-1] - nz[0] + 1 == plan.K + plan.d - 1


def _module(plan=LKAPlan(6, 2), C=4, seed=0, dtype="float64"):
    return LKAModule(plan, C, tc.Rng(seed), dtype=dtype)


def _x(shape, seed=1, dtype="float64"):
    return np.random.default_rng(seed).standard_normal(shape).astype(dtype)


@pytest.mark.parametrize("plan", FULL_PLANS)
def test_shape_invariance(plan):
    m = _module(plan, C=2, dtype="float32")
    x = _x((1, 2, 9, 8, 7), dtype="float32")
    out, attn = lka_forward(m, x)
    assert out.shape == x.shape and attn.shape == x.shape
    assert out.dtype == np.float32
    assert np.all((attn > 0) & (attn < 1))


def test_channel_mismatch():
    with pytest.raises(ValueError):
        lka_forward(_module(C=4), _x((1, 3, 6, 6, 6)))


def _xprime(m, x):
    return tc.leaky_relu(tc.group_norm(x, m.gn_groups, gamma=m.gamma.value, beta=m.beta.value), m.lrelu_slope)


@pytest.mark.parametrize("bias,factor", [(-40.0, 1.0), (40.0, 2.0)])
def test_attention_saturation_limits(bias, factor):
    m = _module()
    m.pw_w.value[...] = 0
    m.pw_b.value[...] = bias
    x = _x((1, 4, 6, 6, 6))
    out, _ = lka_forward(m, x)
    np.testing.assert_allclose(out, factor * _xprime(m, x), atol=1e-12)


def test_output_ratio_in_open_interval():
    m = _module()
    x = _x((2, 4, 6, 6, 6), seed=5)
    out, _ = lka_forward(m, x)
    xp = _xprime(m, x)
    pos = xp > 1e-6
    r = out[pos] / xp[pos]
    assert np.all((r > 1) & (r < 2))


def test_residual_form():
    m = _module()
    x = _x((1, 4, 5, 6, 7), seed=2)
    out, attn = lka_forward(m, x)
    xp = _xprime(m, x)
    np.testing.assert_allclose(out, attn * xp + xp, atol=1e-12)


def test_deterministic_init():
    a, b = _module(seed=3), _module(seed=3)
    for p, q in zip(a.parameters(), b.parameters()):
        assert np.array_equal(p.value, q.value)
    c = _module(seed=4)
    assert not np.array_equal(a.dwd_w.value, c.dwd_w.value)


@pytest.mark.parametrize("plan", FULL_PLANS)
@pytest.mark.parametrize("C", [1, 8, 32, 64])
def test_parameter_count_matches_formula(plan, C):
    m = _module(plan, C, dtype="float32")
    assert m.parameter_count() == nprm_decomposed(C, plan.K, plan.d) == lka_parameter_count(plan, C)
    assert m.parameter_count(include_norm=True) == m.parameter_count() + 2 * C


@settings(max_examples=15, deadline=None)
@given(st.integers(1, 3), st.integers(1, 3), st.integers(3, 8), st.integers(3, 8), st.integers(3, 8))
def test_shape_invariance_property(n, c, h, w, d):
    m = _module(LKAPlan(6, 2), C=c)
    out, attn = lka_forward(m, _x((n, c, h, w, d)))
    assert out.shape == attn.shape == (n, c, h, w, d)
    assert np.all(np.isfinite(out))
