import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy import stats

from lkaunet.eval_metrics import (
    BRATS_PENALTY,
    boundary,
    dice_score,
    evaluate_case,
    hd95,
    paired_t_test,
    regularized_incomplete_beta,
    student_t_two_sided_p,
)


def brute_hd95(p, g, spacing=(1.0, 1.0, 1.0), q=95):
    """All-pairs oracle: pooled nearest distances in both directions."""
    sp = np.asarray(spacing)
    a = np.argwhere(p) * sp
    b = np.argwhere(g) * sp
    dist = np.sqrt(((a[:, None, :] - b[None, :, :]) ** 2).sum(axis=-1))
    pooled = np.concatenate([dist.min(axis=1), dist.min(axis=0)])
    return float(np.percentile(pooled, q, method="linear"))


def brute_dice(p, g):
    P = {tuple(i) for i in np.argwhere(p)}
    G = {tuple(i) for i in np.argwhere(g)}
    if not P and not G:
        return 1.0
    return 2 * len(P & G) / (len(P) + len(G))


def random_pair(gen, max_side=16):
    shape = tuple(int(s) for s in gen.integers(2, max_side + 1, size=3))
    density = gen.uniform(0.02, 0.5)
    p = gen.random(shape) < density
    g = gen.random(shape) < gen.uniform(0.02, 0.5)
    p.flat[gen.integers(p.size)] = True
    g.flat[gen.integers(g.size)] = True
    return p, g


@pytest.mark.parametrize("i", range(100))
def test_hd95_and_dice_match_brute_force(i):
    gen = np.random.default_rng(1000 + i)
    p, g = random_pair(gen)
    spacing = (1.0, 1.0, 1.0) if i % 2 == 0 else tuple(gen.uniform(0.5, 2.0, size=3))
    assert abs(hd95(p, g, spacing) - brute_hd95(p, g, spacing)) <= 1e-9
    assert dice_score(p, g) == brute_dice(p, g)


class TestHD95:
    def test_two_voxels(self):
        p = np.zeros((8, 8, 8), bool)
        g = np.zeros((8, 8, 8), bool)
        p[1, 1, 1] = True
        g[1, 1, 6] = True
        assert hd95(p, g) == 5.0

    def test_identical(self):
        m = np.zeros((6, 6, 6), bool)
        m[1:4, 2:5, 0:3] = True
        assert hd95(m, m) == 0.0

    def test_symmetric(self):
        p, g = random_pair(np.random.default_rng(7), 10)
        assert hd95(p, g) == hd95(g, p)

    def test_scale_covariant(self):
        p, g = random_pair(np.random.default_rng(8), 10)
        assert hd95(p, g, (2.5, 2.5, 2.5)) == pytest.approx(2.5 * hd95(p, g), abs=1e-9)

    def test_anisotropic_spacing(self):
        p = np.zeros((4, 4, 4), bool)
        g = np.zeros((4, 4, 4), bool)
        p[0, 0, 0] = g[0, 0, 3] = True
        assert hd95(p, g, (1.0, 1.0, 0.5)) == 1.5

    def test_empty_raises(self):
        m = np.ones((3, 3, 3), bool)
        with pytest.raises(ValueError):
            hd95(np.zeros_like(m), m)

    def test_bad_spacing(self):
        m = np.ones((3, 3, 3), bool)
        with pytest.raises(ValueError):
            hd95(m, m, (1.0, 0.0, 1.0))
        with pytest.raises(ValueError):
            hd95(m, m, (1.0, 1.0))

    def test_shape_mismatch(self):
        with pytest.raises(ValueError):
            hd95(np.ones((3, 3, 3)), np.ones((3, 3, 4)))

    @pytest.mark.parametrize("seed", range(5))
    def test_surface_matches_full_at_max(self, seed):
        p, g = random_pair(np.random.default_rng(seed), 12)
        full = brute_hd95(p, g, q=100)
        surf = brute_hd95(boundary(p), boundary(g), q=100)
        assert surf == pytest.approx(full, abs=1e-12)

    def test_boundary_of_solid_cube(self):
        m = np.zeros((5, 5, 5), bool)
        m[1:4, 1:4, 1:4] = True
        b = boundary(m)
        assert b.sum() == 26 and not b[2, 2, 2]


class TestDice:
    def test_values(self):
        a = np.array([1, 1, 0, 0], bool)
        b = np.array([1, 0, 1, 0], bool)
        assert dice_score(a, b) == 0.5
        assert dice_score(a, a) == 1.0
        assert dice_score(np.zeros(4), np.zeros(4)) == 1.0
        assert dice_score(a, ~a) == 0.0


class TestEvaluateCase:
    def test_penalty_path(self):
        gt = np.zeros((4, 4, 4), int)
        pred = gt.copy()
        pred[1, 1, 1] = 2
        rep = evaluate_case(pred, gt, [2], penalty=BRATS_PENALTY)[2]
        assert (rep.dice, rep.hd95) == (0.0, 373.13)
        assert rep.penalty_applied and rep.empty_gt and not rep.empty_pred

    def test_no_penalty_gives_missing_hd95(self):
        gt = np.zeros((4, 4, 4), int)
        pred = gt.copy()
        pred[0, 0, 0] = 1
        rep = evaluate_case(pred, gt, [1])[1]
        assert rep.dice == 0.0 and rep.hd95 is None and not rep.penalty_applied

    def test_missed_gt(self):
        gt = np.zeros((4, 4, 4), int)
        gt[2, 2, 2] = 1
        rep = evaluate_case(np.zeros_like(gt), gt, [1], penalty=BRATS_PENALTY)[1]
        assert rep.dice == 0.0 and rep.hd95 == 373.13 and rep.empty_pred

    def test_both_empty(self):
        z = np.zeros((3, 3, 3), int)
        rep = evaluate_case(z, z, [1])[1]
        assert (rep.dice, rep.hd95) == (1.0, 0.0)

    def test_normal_case_and_dict(self):
        gen = np.random.default_rng(3)
        gt = gen.integers(0, 3, (6, 6, 6))
        pred = gen.integers(0, 3, (6, 6, 6))
        rep = evaluate_case(pred, gt, [1, 2])
        assert rep[1].dice == dice_score(pred == 1, gt == 1)
        assert rep[2].hd95 == hd95(pred == 2, gt == 2)
        d = rep.as_dict()
        assert set(d) == {"1", "2"} and "flags" in d["1"]
        with pytest.raises(KeyError):
            rep[5]

    def test_unknown_class(self):
        z = np.zeros((3, 3, 3), int)
        with pytest.raises(ValueError):
            evaluate_case(z, z, [7], known_labels={0, 1, 2})

    def test_shape_mismatch(self):
        with pytest.raises(ValueError):
            evaluate_case(np.zeros((3, 3, 3)), np.zeros((3, 3, 2)), [1])


class TestTTest:
    def test_reference_values(self):
        r = paired_t_test([1, 2, 3, 4, 5], [0, 0, 0, 0, 0])
        assert abs(r.t - 4.243) <= 1e-3
        assert abs(r.p - 0.0132) <= 2e-3
        assert r.n == 5 and not r.zero_variance

    def test_symmetric_pattern(self):
        r = paired_t_test([1, -1, 1, -1], [0, 0, 0, 0])
        assert r.t == 0.0 and r.p == pytest.approx(1.0, abs=1e-12)

    def test_zero_variance(self):
        r = paired_t_test([0.8, 0.9, 0.7], [0.8, 0.9, 0.7])
        assert r.zero_variance and r.t is None and r.p is None
        assert paired_t_test([2, 3, 4], [1, 2, 3]).zero_variance

    def test_errors(self):
        with pytest.raises(ValueError):
            paired_t_test([1], [2])
        with pytest.raises(ValueError):
            paired_t_test([1, 2], [1, 2, 3])

    @pytest.mark.parametrize("seed", range(10))
    def test_matches_reference_library(self, seed):
        gen = np.random.default_rng(seed)
        n = int(gen.integers(2, 40))
        a, b = gen.standard_normal((2, n))
        ours = paired_t_test(a, b)
        ref = stats.ttest_rel(a, b)
        assert ours.t == pytest.approx(ref.statistic, rel=1e-10)
        assert ours.p == pytest.approx(ref.pvalue, rel=1e-8, abs=1e-14)

    def test_incomplete_beta_edges(self):
        assert regularized_incomplete_beta(2.0, 3.0, 0.0) == 0.0
        assert regularized_incomplete_beta(2.0, 3.0, 1.0) == 1.0
        # I_x(1, 1) = x
        assert regularized_incomplete_beta(1.0, 1.0, 0.3) == pytest.approx(0.3, abs=1e-14)
        with pytest.raises(ValueError):
            regularized_incomplete_beta(1.0, 1.0, 1.5)

    def test_t_cdf_one_dof(self):
        # Cauchy: P(|T| >= 1) = 1/2
        assert student_t_two_sided_p(1.0, 1) == pytest.approx(0.5, abs=1e-12)
        assert student_t_two_sided_p(0.0, 7) == 1.0


@settings(max_examples=40, deadline=None)
@given(st.integers(0, 2**32 - 1))
def test_hd95_properties(seed):
    gen = np.random.default_rng(seed)
    p, g = random_pair(gen, 8)
    h = hd95(p, g)
    assert h == hd95(g, p)
    assert 0.0 <= h <= math.sqrt(sum((s - 1) ** 2 for s in p.shape)) + 1e-12
    if np.array_equal(p, g):
        assert h == 0.0
