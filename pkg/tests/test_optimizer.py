"""Batch estimation: updates, invariants, determinism."""

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from rtb_alloc.campaigns import Campaign, Goal, TargetingSpec
from rtb_alloc.data_io import (
    PAPER_TABLE_PROFILE,
    AuctionRecord,
    generate_campaign_portfolio,
    generate_synthetic,
)
from rtb_alloc.engine import AuctionLog, PortfolioIndex, batch_stream
from rtb_alloc.optimizer import (
    MODE_DIFFERENTIABLE,
    MODE_RELU,
    BatchStats,
    OptimizerState,
    RunConfig,
    apply_strategy_to_batch,
    learning_rate,
    load_strategy,
    run,
    save_strategy,
    update_kappas,
    update_volumes,
    validate_strategy,
)


def stats(delivered, batch_size=100, revenue=0.0, won=0):
    return BatchStats(
        delivered=np.asarray(delivered, dtype=float),
        rtb_revenue_cpm=revenue,
        auctions_won=won,
        batch_size=batch_size,
    )


def relu_state(values, ratio=0.01):
    return OptimizerState(
        mode=MODE_RELU, values=np.asarray(values, dtype=float), batch_ratio=ratio
    )


def diff_state(values, ratio=0.01):
    return OptimizerState(
        mode=MODE_DIFFERENTIABLE,
        values=np.asarray(values, dtype=float),
        batch_ratio=ratio,
    )


class TestLearningRate:
    def test_first_batch(self):
        assert learning_rate(1, 1.0) == 1.0

    def test_fourth_batch(self):
        assert learning_rate(4, 1.0) == 0.25

    def test_scaled(self):
        assert learning_rate(10, 0.5) == 0.05

    def test_rejects_zero(self):
        with pytest.raises(ValueError):
            learning_rate(0, 1.0)


class TestUpdateVolumes:
    def test_fixed_point(self):
        state = update_volumes(diff_state([100.0]), stats([1.0]), alpha=0.5)
        assert state.values.tolist() == [100.0]

    def test_from_zero(self):
        state = update_volumes(diff_state([0.0]), stats([2.0]), alpha=1.0)
        assert state.values.tolist() == [2.0]

    def test_decay_when_nothing_delivered(self):
        state = update_volumes(diff_state([200.0]), stats([0.0]), alpha=1.0)
        assert state.values.tolist() == [198.0]

    def test_clamped_at_zero(self):
        state = update_volumes(diff_state([1.0], ratio=1.0), stats([0.0]), alpha=2.0)
        assert state.values.tolist() == [0.0]

    def test_wrong_mode_rejected(self):
        with pytest.raises(ValueError):
            update_volumes(relu_state([1.0]), stats([0.0]), alpha=1.0)

    def test_mean_preserving_at_fixed_point(self):
        # stub batches delivering ratio * v in expectation leave E[v] unchanged
        rng = np.random.default_rng(3)
        v0 = 150.0
        ratio = 0.02
        finals = []
        for _ in range(400):
            state = diff_state([v0], ratio=ratio)
            delivered = rng.poisson(ratio * v0)
            state = update_volumes(state, stats([delivered]), alpha=0.7)
            finals.append(state.values[0])
        drift = np.mean(finals) - v0
        # E[update] = alpha*(E[delivered] - ratio*v) = 0; tolerance ~3 SE
        se = np.std(finals) / np.sqrt(len(finals))
        assert abs(drift) <= 3.5 * se + 1e-9


class TestUpdateKappas:
    def test_underdelivery_pulls_to_weight(self):
        goals = [(20.0, 1000.0)]
        state = update_kappas(relu_state([0.0]), stats([3.0]), 1.0, goals)
        assert state.values.tolist() == [20.0]

    def test_overdelivery_decays(self):
        goals = [(20.0, 1000.0)]
        state = update_kappas(relu_state([20.0]), stats([50.0]), 0.5, goals)
        assert state.values.tolist() == [10.0]

    def test_exact_threshold_counts_as_delivered(self):
        # strict inequality: a batch exactly at ratio * goal estimates zero
        goals = [(20.0, 1000.0)]
        state = update_kappas(relu_state([20.0]), stats([10.0]), 1.0, goals)
        assert state.values.tolist() == [0.0]

    def test_wrong_mode_rejected(self):
        with pytest.raises(ValueError):
            update_kappas(diff_state([0.0]), stats([0.0]), 1.0, [(20.0, 10.0)])

    @given(
        st.lists(
            st.tuples(
                st.floats(min_value=0.0, max_value=1.0),  # alpha
                st.floats(min_value=0.0, max_value=100.0),  # delivered
            ),
            min_size=1,
            max_size=60,
        )
    )
    @settings(max_examples=200, deadline=None)
    def test_kappas_stay_in_bounds(self, steps):
        goals = [(7.0, 500.0), (31.0, 2000.0)]
        state = relu_state([0.0, 0.0])
        for alpha, delivered in steps:
            state = update_kappas(
                state, stats([delivered, delivered * 2]), alpha, goals
            )
            weights = np.array([w for w, _ in goals])
            assert (state.values >= 0.0).all()
            assert (state.values <= weights).all()

    def test_inverse_decay_equals_running_mean(self):
        # with alpha_j = 1/j the state is the mean of the batch estimates
        rng = np.random.default_rng(11)
        goals = [(13.0, 50.0)]
        state = relu_state([0.0], ratio=0.1)
        hats = []
        for j in range(1, 200):
            delivered = float(rng.integers(0, 12))
            hats.append(13.0 if delivered < 0.1 * 50.0 else 0.0)
            state = update_kappas(
                state, stats([delivered]), learning_rate(j, 1.0), goals
            )
            assert state.values[0] == pytest.approx(np.mean(hats), rel=1e-12)


def tiny_campaign(volume=5, weight=30.0, metric="impressions"):
    return Campaign(
        campaign_id="only",
        contractual_revenue=0.0,
        goals=(
            Goal("g", metric, TargetingSpec(), volume, weight),
        ),
    )


class TestApplyStrategyToBatch:
    def test_state_not_mutated(self):
        records = generate_synthetic(PAPER_TABLE_PROFILE, 50, seed=2)
        campaigns = [tiny_campaign()]
        state = relu_state([25.0])
        before = state.values.copy()
        apply_strategy_to_batch(
            state, records, campaigns, batch_stream(0, 1),
            predictors=PAPER_TABLE_PROFILE,
        )
        assert (state.values == before).all()

    def test_dominant_score_wins_and_delivers(self):
        record = AuctionRecord("000000001", "P1", 10.0)
        state = relu_state([25.0])
        result = apply_strategy_to_batch(
            state, [record], [tiny_campaign(weight=30.0)], batch_stream(0, 1),
            predictors=PAPER_TABLE_PROFILE,
        )
        assert result.auctions_won == 1
        assert result.delivered.tolist() == [1.0]
        assert result.rtb_revenue_cpm == 0.0

    def test_zero_kappas_sell_everything(self):
        records = generate_synthetic(PAPER_TABLE_PROFILE, 80, seed=4)
        state = relu_state([0.0])
        result = apply_strategy_to_batch(
            state, records, [tiny_campaign()], batch_stream(0, 1),
            predictors=PAPER_TABLE_PROFILE,
        )
        assert result.auctions_won == 0
        assert result.delivered.tolist() == [0.0]
        total = sum(r.highest_bid_cpm for r in records)
        assert result.rtb_revenue_cpm == pytest.approx(total)

    def test_untargeted_batch_delivers_nothing(self):
        records = generate_synthetic(PAPER_TABLE_PROFILE, 40, seed=5)
        campaign = Campaign(
            campaign_id="narrow",
            contractual_revenue=0.0,
            goals=(
                Goal("g", "impressions",
                     TargetingSpec(placements=frozenset({"nowhere"})), 5, 30.0),
            ),
        )
        result = apply_strategy_to_batch(
            relu_state([30.0]), records, [campaign], batch_stream(0, 1),
        )
        assert result.delivered.tolist() == [0.0]
        assert result.auctions_won == 0

    def test_state_portfolio_mismatch(self):
        records = generate_synthetic(PAPER_TABLE_PROFILE, 10, seed=6)
        with pytest.raises(ValueError):
            apply_strategy_to_batch(
                relu_state([1.0, 2.0]), records, [tiny_campaign()],
                batch_stream(0, 1),
            )


class TestRun:
    def test_deterministic_bit_for_bit(self, small_dataset):
        log, campaigns = small_dataset
        config = RunConfig(batch_size=200, seed=9, checkpoint_every=3)
        s1, c1 = run(log, campaigns, config)
        s2, c2 = run(log, campaigns, config)
        assert (s1.values == s2.values).all()
        assert len(c1) == len(c2)
        for a, b in zip(c1, c2):
            assert a.batches == b.batches
            assert (a.values == b.values).all()

    def test_zero_campaigns_pure_rtb(self, small_dataset):
        log, _ = small_dataset
        strategy, checkpoints = run(log, [], RunConfig(batch_size=100, seed=1))
        assert strategy.campaign_ids == []
        assert strategy.values.size == 0

    def test_zero_weight_stays_zero(self, small_dataset):
        log, _ = small_dataset
        campaigns = [tiny_campaign(volume=50, weight=0.0)]
        strategy, _ = run(log, campaigns, RunConfig(batch_size=100, seed=1))
        assert strategy.values.tolist() == [0.0]

    def test_batch_size_larger_than_dataset_rejected(self, small_dataset):
        log, campaigns = small_dataset
        with pytest.raises(ValueError):
            run(log, campaigns, RunConfig(batch_size=10_000, seed=1))

    def test_epochs_keep_global_batch_index(self, small_dataset):
        log, campaigns = small_dataset
        config = RunConfig(batch_size=500, seed=3, epochs=2, checkpoint_every=1)
        _, checkpoints = run(log, campaigns, config)
        # 2000 auctions / 500 per batch * 2 epochs = 8 batches, plus j=0
        assert [c.batches for c in checkpoints] == list(range(0, 9))

    def test_max_batches_caps_run(self, small_dataset):
        log, campaigns = small_dataset
        config = RunConfig(batch_size=100, seed=3, max_batches=5, checkpoint_every=2)
        _, checkpoints = run(log, campaigns, config)
        assert checkpoints[-1].batches == 5

    def test_kappas_bounded_after_run(self, small_dataset):
        log, campaigns = small_dataset
        portfolio = PortfolioIndex(campaigns)
        strategy, _ = run(log, campaigns, RunConfig(batch_size=100, seed=7))
        assert (strategy.values >= 0.0).all()
        assert (strategy.values <= portfolio.penalty_weights).all()

    def test_differentiable_mode_runs(self, small_dataset):
        log, _ = small_dataset
        campaign = Campaign(
            campaign_id="smooth",
            contractual_revenue=0.0,
            goals=(Goal("g", "impressions", TargetingSpec(), 200, 12.0),),
            penalty_kind="softplus",
            softplus_beta=1.0,
        )
        strategy, _ = run(
            log, [campaign], RunConfig(batch_size=200, seed=2, init="goals")
        )
        assert strategy.penalty_mode == "softplus"
        assert (strategy.values >= 0.0).all()


@pytest.fixture(scope="module")
def small_dataset():
    records = generate_synthetic(PAPER_TABLE_PROFILE, 2000, seed=13)
    log = AuctionLog.from_records(records)
    campaigns = generate_campaign_portfolio(8, log, seed=13)
    return log, campaigns


class TestStrategyIO:
    def test_round_trip(self, small_dataset, tmp_path):
        log, campaigns = small_dataset
        strategy, _ = run(log, campaigns, RunConfig(batch_size=100, seed=5))
        path = tmp_path / "strategy.json"
        save_strategy(strategy, path)
        loaded = load_strategy(path)
        assert loaded.campaign_ids == strategy.campaign_ids
        assert loaded.goal_ids == strategy.goal_ids
        assert np.allclose(loaded.values, strategy.values)
        assert loaded.temperature == strategy.temperature
        assert loaded.auction_type == strategy.auction_type

    def test_validation_catches_mismatch(self, small_dataset):
        log, campaigns = small_dataset
        strategy, _ = run(log, campaigns, RunConfig(batch_size=100, seed=5))
        other = PortfolioIndex(campaigns[:-1])
        with pytest.raises(ValueError):
            validate_strategy(strategy, other)
