import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

import oracles
from rankup.errors import ConfigError, ShapeError
from rankup.losses import (
    ArcLossConfig,
    arc_labeled_loss,
    arc_pair_softmax,
    arc_unlabeled_fixmatch_loss,
    fixmatch_pair_mask,
    pairwise_targets,
    ranknet_loss,
    ranknet_pair_prob,
    rankup_total_loss,
    regression_loss,
    warmup_factor,
)

LN2 = math.log(2.0)
scores = st.lists(st.floats(-20, 20), min_size=1, max_size=6)


def numeric_grad(f, x, eps=1e-5):
    g = np.zeros_like(x)
    for i in range(x.size):
        e = np.zeros_like(x)
        e[i] = eps
        g[i] = (f(x + e) - f(x - e)) / (2 * eps)
    return g


class TestRegression:
    def test_zero_at_targets(self):
        loss, g = regression_loss(np.array([1.0, 2.0]), np.array([1.0, 2.0]))
        assert loss == 0.0
        np.testing.assert_array_equal(g, 0.0)

    def test_mae_arithmetic(self):
        assert regression_loss(np.array([1.0, 3.0]), np.zeros(2), "mae")[0] == 2.0

    def test_mse_arithmetic(self):
        loss, g = regression_loss(np.array([1.0, 3.0]), np.zeros(2), "mse")
        assert loss == 5.0
        np.testing.assert_array_equal(g, [1.0, 3.0])

    def test_matches_oracle(self):
        rng = np.random.default_rng(0)
        p, t = rng.normal(size=5), rng.normal(size=5)
        assert regression_loss(p, t)[0] == pytest.approx(oracles.mae(p, t), abs=1e-12)

    def test_length_mismatch(self):
        with pytest.raises(ShapeError):
            regression_loss(np.zeros(2), np.zeros(3))

    def test_unknown_kind(self):
        with pytest.raises(ConfigError, match="criterion"):
            regression_loss(np.zeros(2), np.zeros(2), "huber")


class TestRankNet:
    def test_pair_prob(self):
        assert ranknet_pair_prob(0.3, 0.3) == 0.5
        assert ranknet_pair_prob(50.0, 0.0) == pytest.approx(1.0, abs=1e-12)
        assert ranknet_pair_prob(1.2, -0.7) + ranknet_pair_prob(-0.7, 1.2) == pytest.approx(1.0, abs=1e-12)

    def test_single_item(self):
        loss, g = ranknet_loss(np.array([3.0]), np.array([[0.5]]))
        assert loss == pytest.approx(LN2, abs=1e-15)
        np.testing.assert_array_equal(g, 0.0)

    def test_stationary_symmetric_point(self):
        loss, g = ranknet_loss(np.full(4, 1.5), np.full((4, 4), 0.5))
        assert loss == pytest.approx(LN2, abs=1e-15)
        np.testing.assert_array_equal(g, 0.0)

    def test_callable_targets(self):
        y = np.array([0.1, 0.5, 0.2, 0.9])
        s = np.array([0.3, -0.2, 1.1, 0.0])
        T = pairwise_targets(y)
        a = ranknet_loss(s, T)[0]
        b = ranknet_loss(s, lambda i, j: T[i, j])[0]
        assert a == b
        assert a == pytest.approx(oracles.ranknet_loss(s, lambda i, j: T[i, j]), abs=1e-10)

    def test_saturated_pairs_clamped(self):
        loss, g = ranknet_loss(np.array([0.0, 100.0]), np.array([[0.5, 1.0], [0.0, 0.5]]))
        # both off-diagonal terms hit the 1e-12 floor
        assert loss == pytest.approx((2 * LN2 - 2 * math.log(1e-12)) / 4, rel=1e-12)
        np.testing.assert_array_equal(g, 0.0)
        assert np.all(np.isfinite(g))

    @given(s=scores)
    @settings(max_examples=60, deadline=None)
    def test_gradient(self, s):
        s = np.array(s)
        T = pairwise_targets(np.random.default_rng(len(s)).integers(0, 3, len(s)))
        _, g = ranknet_loss(s, T)
        num = numeric_grad(lambda x: ranknet_loss(x, T)[0], s)
        np.testing.assert_allclose(g, num, atol=1e-6)


class TestArcSoftmax:
    def test_equal(self):
        np.testing.assert_array_equal(arc_pair_softmax(0.4, 0.4), [0.5, 0.5])

    def test_shift_invariance(self):
        np.testing.assert_allclose(arc_pair_softmax(0.3, -1.0), arc_pair_softmax(10.3, 9.0), atol=1e-12)

    def test_matches_direct_softmax(self):
        rng = np.random.default_rng(2)
        for ri, rj in rng.normal(scale=3, size=(20, 2)):
            np.testing.assert_allclose(arc_pair_softmax(ri, rj), oracles.arc_probs(ri, rj), atol=1e-12)

    @given(ri=st.floats(-30, 30), rj=st.floats(-30, 30))
    def test_antisymmetry(self, ri, rj):
        p = arc_pair_softmax(ri, rj)
        q = arc_pair_softmax(rj, ri)
        assert p[1] + q[1] == pytest.approx(1.0, abs=1e-12)
        assert p.sum() == pytest.approx(1.0, abs=1e-12)


class TestArcLabeled:
    def test_two_equal_scores(self):
        assert arc_labeled_loss(np.zeros(2), np.array([1.0, 2.0]))[0] == pytest.approx(LN2, abs=1e-15)

    def test_diagonal_only(self):
        loss, g = arc_labeled_loss(np.array([7.0]), np.array([3.0]))
        assert loss == pytest.approx(LN2, abs=1e-15)
        assert g[0] == 0.0

    def test_matches_oracle(self):
        rng = np.random.default_rng(5)
        r, y = rng.normal(size=5), rng.normal(size=5)
        assert arc_labeled_loss(r, y)[0] == pytest.approx(oracles.arc_labeled_loss(r, y), abs=1e-10)

    def test_ties_pull_scores_together(self):
        # tied labels put class 0 on both orders; the gradient closes the gap
        _, g = arc_labeled_loss(np.array([1.0, -1.0]), np.array([2.0, 2.0]))
        assert g[0] > 0 > g[1]

    @given(r=scores, seed=st.integers(0, 99))
    @settings(max_examples=60, deadline=None)
    def test_gradient(self, r, seed):
        r = np.array(r)
        y = np.random.default_rng(seed).integers(0, 3, len(r)).astype(float)
        _, g = arc_labeled_loss(r, y)
        np.testing.assert_allclose(g, numeric_grad(lambda x: arc_labeled_loss(x, y)[0], r), atol=1e-6)

    @given(r=scores, c=st.floats(-50, 50))
    @settings(max_examples=40)
    def test_shift_invariance(self, r, c):
        r = np.array(r)
        y = np.arange(len(r), dtype=float)[::-1]
        assert arc_labeled_loss(r + c, y)[0] == pytest.approx(arc_labeled_loss(r, y)[0], abs=1e-10)


class TestFixMatch:
    def test_tau_one_masks_everything(self):
        w = np.array([-30.0, 0.0, 30.0])
        loss, g, rate = arc_unlabeled_fixmatch_loss(w, w, ArcLossConfig(tau=1.0))
        assert (loss, rate) == (0.0, 0.0)
        np.testing.assert_array_equal(g, 0.0)

    def test_threshold_boundary(self):
        # sigmoid(2d) = 0.96 and 0.90 for a pair at gap d
        d96, d90 = 0.5 * math.log(0.96 / 0.04), 0.5 * math.log(0.9 / 0.1)
        cfg = ArcLossConfig(tau=0.95)
        assert fixmatch_pair_mask(np.array([d96, 0.0]), cfg.tau)[0][0, 1]
        assert not fixmatch_pair_mask(np.array([d90, 0.0]), cfg.tau)[0][0, 1]

    def test_diagonal_never_confident(self):
        mask, _ = fixmatch_pair_mask(np.array([1.0, 5.0, -3.0]), 0.6)
        assert not mask.diagonal().any()

    def test_matches_oracle(self):
        rng = np.random.default_rng(8)
        w, s = rng.normal(scale=2, size=4), rng.normal(size=4)
        loss, _, rate = arc_unlabeled_fixmatch_loss(w, s, ArcLossConfig(tau=0.7))
        ref_loss, ref_rate = oracles.arc_fixmatch_loss(w, s, 0.7)
        assert loss == pytest.approx(ref_loss, abs=1e-10)
        assert rate == pytest.approx(ref_rate, abs=1e-15)

    def test_empty_batch(self):
        loss, g, rate = arc_unlabeled_fixmatch_loss(np.zeros(0), np.zeros(0), ArcLossConfig())
        assert (loss, rate, g.shape) == (0.0, 0.0, (0,))

    def test_no_gradient_from_weak_view(self):
        rng = np.random.default_rng(1)
        w, s = rng.normal(scale=3, size=5), rng.normal(size=5)
        cfg = ArcLossConfig(tau=0.8)
        base = arc_unlabeled_fixmatch_loss(w, s, cfg)[0]
        # tiny weak-view perturbations change no mask or pseudo-label here
        assert arc_unlabeled_fixmatch_loss(w + 1e-9, s, cfg)[0] == base

    @given(w=scores, seed=st.integers(0, 99), tau=st.sampled_from([0.6, 0.8, 0.95]))
    @settings(max_examples=60, deadline=None)
    def test_gradient(self, w, seed, tau):
        w = np.array(w)
        s = np.random.default_rng(seed).normal(size=len(w))
        cfg = ArcLossConfig(tau=tau)
        _, g, _ = arc_unlabeled_fixmatch_loss(w, s, cfg)
        num = numeric_grad(lambda x: arc_unlabeled_fixmatch_loss(w, x, cfg)[0], s)
        np.testing.assert_allclose(g, num, atol=1e-6)

    @given(w=scores)
    @settings(max_examples=60)
    def test_mask_rate_monotone_in_tau(self, w):
        w = np.array(w)
        rates = [arc_unlabeled_fixmatch_loss(w, w, ArcLossConfig(tau=t))[2] for t in (0.55, 0.6, 0.8, 0.95, 1.0)]
        assert all(a >= b for a, b in zip(rates, rates[1:]))
        assert rates[-1] == 0.0

    def test_config_validation(self):
        with pytest.raises(ConfigError, match="tau"):
            ArcLossConfig(tau=0.5)
        with pytest.raises(ConfigError, match="omega_ulb"):
            ArcLossConfig(omega_ulb=-1)


class TestWarmupAndTotal:
    def test_warmup(self):
        assert warmup_factor(10, 10) == 1.0
        assert warmup_factor(5, 10) == 0.5
        assert warmup_factor(100, 10) == 1.0
        assert warmup_factor(0, 10) == 0.0

    def test_warmup_zero_alpha(self):
        with pytest.raises(ConfigError):
            warmup_factor(1, 0)

    def test_total(self):
        assert rankup_total_loss(1.0, 2.0, 3.0, 1.0, 0.2, 10, 10) == pytest.approx(3.6)
        assert rankup_total_loss(1.0, 2.0, 3.0, 0.0, 0.0, 10, 10) == 1.0
        assert rankup_total_loss(1.0, 2.0, 0.0, 1.0, 0.0, 0, 10) == 1.0
