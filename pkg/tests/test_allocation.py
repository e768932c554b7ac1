"""Allocation distributions and the coupled (bid, allocation) solve."""

import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from rtb_alloc.allocation import (
    MODE_HARD_ARGMAX,
    MODE_REGULARIZED,
    RegularizationConfig,
    hard_allocation,
    regularized_allocation,
    sample_campaign,
    solve_auction,
)
from rtb_alloc.auction import ObservedFirstPrice, solve_optimal_bid

from test_auction import uniform_product_landscape

REG = RegularizationConfig(temperature=0.5, mode=MODE_REGULARIZED)
HARD = RegularizationConfig(temperature=0.5, mode=MODE_HARD_ARGMAX)


class TestRegularizedAllocation:
    def test_symmetric_scores_split_evenly(self):
        q = regularized_allocation([1.0, 1.0], 0.7, 2.0)
        assert q.tolist() == [0.5, 0.5]

    def test_two_to_zero_at_half_temperature(self):
        # e^4 / (e^4 + 1) evaluated independently: 0.9820137900...
        q = regularized_allocation([2.0, 0.0], 1.0, 0.5)
        expected = math.exp(4.0) / (math.exp(4.0) + 1.0)
        assert q[0] == pytest.approx(expected, abs=1e-12)
        assert q[0] == pytest.approx(0.98201, abs=1e-5)
        assert q[1] == pytest.approx(0.01799, abs=1e-5)

    def test_huge_temperature_is_uniform(self):
        q = regularized_allocation([2.0, 0.0], 1.0, 1e6)
        assert q[0] == pytest.approx(0.5, abs=1e-5)
        assert q[1] == pytest.approx(0.5, abs=1e-5)

    def test_empty_campaign_list_rejected(self):
        with pytest.raises(ValueError):
            regularized_allocation([], 1.0, 0.5)

    def test_overflow_safe(self):
        q = regularized_allocation([4000.0, 0.0], 1.0, 0.5)
        assert np.isfinite(q).all()
        assert q[0] == pytest.approx(1.0)

    @given(
        st.lists(st.floats(min_value=0.0, max_value=20.0), min_size=1, max_size=8),
        st.floats(min_value=0.0, max_value=1.0),
        st.floats(min_value=0.5, max_value=50.0),
    )
    @settings(max_examples=300, deadline=None)
    def test_normalized_and_positive(self, scores, win_prob, rho):
        q = regularized_allocation(scores, win_prob, rho)
        assert abs(q.sum() - 1.0) <= 1e-12
        assert (q > 0.0).all()

    def test_argmax_invariance_and_low_temperature_limit(self):
        rng = np.random.default_rng(5)
        for _ in range(50):
            scores = rng.uniform(0.0, 10.0, size=4)
            scores[rng.integers(4)] += 0.1  # enforce a clear unique argmax
            best = int(np.argmax(scores))
            for rho in (1e-3, 0.5, 10.0, 1e5):
                q = regularized_allocation(scores, 1.0, rho)
                assert int(np.argmax(q)) == best
            q_cold = regularized_allocation(scores, 1.0, 1e-3)
            assert q_cold[best] >= 0.99

    @given(
        st.lists(st.floats(min_value=0.0, max_value=10.0), min_size=2, max_size=6),
        st.floats(min_value=0.05, max_value=20.0),
    )
    @settings(max_examples=200, deadline=None)
    def test_duplicate_campaigns_get_equal_mass(self, scores, rho):
        doubled = list(scores) + [scores[0]]
        q = regularized_allocation(doubled, 1.0, rho)
        assert q[0] == pytest.approx(q[-1], rel=1e-12, abs=1e-15)


class TestHardAllocation:
    def test_unique_argmax(self):
        assert hard_allocation([3.0, 1.0, 2.0]).tolist() == [1.0, 0.0, 0.0]

    def test_tie_splits_uniformly(self):
        assert hard_allocation([5.0, 5.0]).tolist() == [0.5, 0.5]

    def test_single_campaign(self):
        assert hard_allocation([0.0]).tolist() == [1.0]


class TestSampleCampaign:
    def test_degenerate(self):
        rng = np.random.default_rng(0)
        assert all(sample_campaign([1.0, 0.0, 0.0], rng) == 0 for _ in range(100))

    def test_even_split_frequency(self):
        rng = np.random.default_rng(7)
        draws = np.array([sample_campaign([0.5, 0.5], rng) for _ in range(100_000)])
        assert abs((draws == 0).mean() - 0.5) <= 0.01

    def test_skewed_frequency_matching_allocation(self):
        q = regularized_allocation([2.0, 0.0], 1.0, 0.5)
        rng = np.random.default_rng(11)
        draws = np.array([sample_campaign(q, rng) for _ in range(100_000)])
        assert abs((draws == 0).mean() - 0.982) <= 0.005


class TestSolveAuction:
    def test_worthless_campaigns_sell_in_rtb(self):
        decision, q = solve_auction([0.0, 0.0], ObservedFirstPrice(10.0), HARD)
        assert decision.bid == 0.0
        assert decision.bid < 10.0  # impression stays in RTB
        assert q.tolist() == [0.5, 0.5]

    def test_regularized_equal_scores(self):
        decision, q = solve_auction([3.0, 3.0], ObservedFirstPrice(10.0), REG)
        assert decision.bid == 3.0
        assert q.tolist() == [0.5, 0.5]

    def test_hard_mode_bids_max_score(self):
        decision, q = solve_auction([20.0, 5.0], ObservedFirstPrice(10.0), HARD)
        assert decision.bid == 20.0
        assert q.tolist() == [1.0, 0.0]

    def test_hard_mode_matches_solve_optimal_bid_bitwise(self):
        land = uniform_product_landscape()
        for scores in ([0.3, 0.1], [0.9, 0.9, 0.2], [0.0]):
            decision, _ = solve_auction(scores, land, HARD)
            direct = solve_optimal_bid(land, max(scores))
            assert decision.bid == direct.bid
            assert decision.win_probability == direct.win_probability

    def test_scores_must_be_nonnegative(self):
        with pytest.raises(ValueError):
            solve_auction([-0.1, 0.5], ObservedFirstPrice(10.0), REG)

    def test_parametric_regularized_fixed_point(self):
        land = uniform_product_landscape()
        scores = [0.4, 0.1]
        decision, q = solve_auction(scores, land, REG)
        # the returned pair satisfies both optimality conditions
        fb = land.pdf_b(decision.bid)
        effective = float(q @ np.asarray(scores))
        residual = (
            -decision.bid * fb
            + (land.cdf_c(decision.bid) - land.cdf_b(decision.bid))
            + fb * effective
        )
        assert abs(residual) <= 1e-5
        expected_q = regularized_allocation(
            scores, land.cdf_b(decision.bid), REG.temperature
        )
        assert np.allclose(q, expected_q, atol=1e-9)

    @given(
        st.lists(st.floats(min_value=0.0, max_value=10.0), min_size=2, max_size=5),
        st.floats(min_value=0.0, max_value=5.0),
    )
    @settings(max_examples=100, deadline=None)
    def test_first_price_shift_covariance(self, scores, shift):
        # adding a constant to every score shifts the regularized bid by it
        # and leaves the allocation unchanged (observed replay, F pinned to 1)
        base_decision, base_q = solve_auction(scores, ObservedFirstPrice(1.0), REG)
        shifted = [s + shift for s in scores]
        decision, q = solve_auction(shifted, ObservedFirstPrice(1.0), REG)
        assert decision.bid == pytest.approx(base_decision.bid + shift, rel=1e-9, abs=1e-9)
        assert np.allclose(q, base_q, atol=1e-12)


class TestRegularizationConfig:
    def test_requires_positive_temperature(self):
        with pytest.raises(ValueError):
            RegularizationConfig(temperature=0.0, mode=MODE_REGULARIZED)

    def test_rejects_unknown_mode(self):
        with pytest.raises(ValueError):
            RegularizationConfig(temperature=1.0, mode="softish")
