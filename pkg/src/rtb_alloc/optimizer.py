"""Batch estimation of the allocation strategy.

The dataset is shuffled, cut into batches, and each batch is processed in
two phases: apply the strategy frozen at the previous state, then move the
per-goal state toward the batch's estimate with a decaying learning rate.
Under ReLU penalties the state is the per-goal shadow price (kappa, clamped
to [0, penalty weight]); under differentiable penalties it is the expected
delivered volume per goal.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field, replace
from typing import Sequence

import numpy as np

from .campaigns import PENALTY_RELU, PENALTY_SOFTPLUS, Campaign
from .data_io import PlacementStats
from .engine import (
    AUCTION_FIRST_PRICE,
    AUCTION_SECOND_PRICE,
    AuctionLog,
    PortfolioIndex,
    ReplayEngine,
    as_log,
    batch_stream,
    shuffle_stream,
)

MODE_RELU = PENALTY_RELU
MODE_DIFFERENTIABLE = "differentiable"

INIT_ZERO = "zero"
INIT_WEIGHTS = "weights"
INIT_GOALS = "goals"


@dataclass
class BatchStats:
    """Realized outcome of applying a frozen strategy to one batch."""

    delivered: np.ndarray  # per goal, campaign-contiguous
    rtb_revenue_cpm: float
    auctions_won: int
    batch_size: int

    def __post_init__(self):
        if np.any(self.delivered < 0):
            raise ValueError("delivered volumes must be >= 0")
        if self.auctions_won > self.batch_size:
            raise ValueError("cannot win more auctions than the batch holds")


@dataclass
class OptimizerState:
    """Learned per-goal state plus bookkeeping for the batch recursion."""

    mode: str  # MODE_RELU or MODE_DIFFERENTIABLE
    values: np.ndarray  # kappas (relu) or volumes (differentiable), per goal
    batch_index: int = 0
    batch_ratio: float = 1.0  # current batch size / dataset size
    learning_rate_scale: float = 1.0
    checkpoints: list = field(default_factory=list)  # (batches, values copy)


@dataclass(frozen=True)
class RunConfig:
    """Configuration of one optimization run (defaults follow the
    benchmark setup: batches of 1000, alpha 1/j, temperature 0.5, zero
    initialization, first price)."""

    auction_type: str = AUCTION_FIRST_PRICE
    batch_size: int = 1000
    temperature: float = 0.5
    learning_rate_scale: float = 1.0
    epochs: int = 1
    seed: int = 0
    checkpoint_every: int = 10
    init: str = INIT_ZERO
    max_batches: int | None = None
    accumulation: str = "realized"
    allocation_mode: str = "regularized"

    def __post_init__(self):
        if self.auction_type not in (AUCTION_FIRST_PRICE, AUCTION_SECOND_PRICE):
            raise ValueError(f"unknown auction type {self.auction_type!r}")
        if self.batch_size < 1:
            raise ValueError("batch_size must be >= 1")
        if self.epochs < 1:
            raise ValueError("epochs must be >= 1")
        if self.seed < 0:
            raise ValueError("seed must be a nonnegative integer")
        if self.checkpoint_every < 1:
            raise ValueError("checkpoint_every must be >= 1")
        if self.init not in (INIT_ZERO, INIT_WEIGHTS, INIT_GOALS):
            raise ValueError(f"unknown init {self.init!r}")
        if self.temperature <= 0 and self.allocation_mode == "regularized":
            raise ValueError("temperature must be positive")


@dataclass
class StrategyState:
    """A frozen, applicable strategy: learned values plus the allocation
    configuration they were estimated under."""

    auction_type: str
    temperature: float
    penalty_mode: str  # "relu" | "softplus"
    campaign_ids: list[str]
    goal_ids: list[list[str]]
    values: np.ndarray  # per goal, campaign-contiguous
    allocation_mode: str = "regularized"
    checkpoint_meta: list = field(default_factory=list)  # dicts per checkpoint


def learning_rate(batch_index: int, scale: float) -> float:
    """Decaying learning rate ``scale / batch_index`` (1-based index)."""
    if batch_index < 1:
        raise ValueError("batch index starts at 1")
    return scale / batch_index


def initial_values(portfolio: PortfolioIndex, init: str) -> np.ndarray:
    mode = state_mode(portfolio)
    if init == INIT_ZERO:
        return np.zeros(portfolio.G)
    if init == INIT_WEIGHTS:
        if mode != MODE_RELU:
            raise ValueError("init 'weights' applies to ReLU portfolios only")
        return portfolio.penalty_weights.copy()
    if mode != MODE_DIFFERENTIABLE:
        raise ValueError("init 'goals' applies to differentiable portfolios only")
    return portfolio.goal_volumes.copy()


def state_mode(portfolio: PortfolioIndex) -> str:
    return MODE_RELU if portfolio.penalty_mode == PENALTY_RELU else MODE_DIFFERENTIABLE


def apply_strategy_to_batch(
    state: OptimizerState,
    batch,
    campaigns: Sequence[Campaign],
    rng: np.random.Generator,
    predictors: PlacementStats | None = None,
    temperature: float = 0.5,
    auction_type: str = AUCTION_FIRST_PRICE,
    accumulation: str = "realized",
) -> BatchStats:
    """Apply the frozen state to a batch of auctions.

    Scores come from the state (kappas or the penalty gradient at the
    current volumes); each auction is solved, the winning campaign sampled,
    and realized deliveries accumulated. The state itself is not mutated.
    """
    log = as_log(batch)
    portfolio = PortfolioIndex(campaigns)
    if state.values.shape != (portfolio.G,):
        raise ValueError(
            f"state has {state.values.shape[0]} goal entries, "
            f"portfolio has {portfolio.G}"
        )
    if state_mode(portfolio) != state.mode:
        raise ValueError(
            f"state mode {state.mode!r} does not match portfolio penalty "
            f"family {portfolio.penalty_mode!r}"
        )
    engine = ReplayEngine(
        log,
        portfolio,
        predictors=predictors,
        auction_type=auction_type,
        temperature=temperature,
        accumulation=accumulation,
    )
    weights = portfolio.score_weights(portfolio.penalty_mode, state.values)
    res = engine.run_batch(weights, np.arange(len(log)), rng)
    return BatchStats(
        delivered=res.delivered,
        rtb_revenue_cpm=res.rtb_revenue_cpm,
        auctions_won=res.auctions_won,
        batch_size=res.batch_size,
    )


def update_volumes(
    state: OptimizerState, stats: BatchStats, alpha: float
) -> OptimizerState:
    """Volume recursion ``v <- v + alpha * (delivered - ratio * v)``,
    clamped at zero. Differentiable mode only."""
    if state.mode != MODE_DIFFERENTIABLE:
        raise ValueError("volume updates apply to differentiable mode only")
    new = state.values + alpha * (stats.delivered - state.batch_ratio * state.values)
    return replace(state, values=np.maximum(new, 0.0))


def update_kappas(
    state: OptimizerState,
    stats: BatchStats,
    alpha: float,
    goals: Sequence[tuple[float, float]] | PortfolioIndex,
) -> OptimizerState:
    """Kappa recursion: the batch estimate is the full penalty weight when
    the batch under-delivered its share of the goal (strictly), else zero,
    and the state moves toward it by ``alpha``. ReLU mode only."""
    if state.mode != MODE_RELU:
        raise ValueError("kappa updates apply to ReLU mode only")
    if isinstance(goals, PortfolioIndex):
        weights, volumes = goals.penalty_weights, goals.goal_volumes
    else:
        weights = np.array([w for w, _ in goals], dtype=float)
        volumes = np.array([g for _, g in goals], dtype=float)
    kappa_hat = np.where(
        stats.delivered < state.batch_ratio * volumes, weights, 0.0
    )
    new = state.values + alpha * (kappa_hat - state.values)
    return replace(state, values=new)


@dataclass
class Checkpoint:
    batches: int
    values: np.ndarray


def run(
    dataset,
    campaigns: Sequence[Campaign],
    config: RunConfig,
    predictors: PlacementStats | None = None,
) -> tuple[StrategyState, list[Checkpoint]]:
    """Estimate a strategy on a dataset.

    Shuffles with the run seed, walks batches across epochs (the batch
    index never resets, so the learning rate keeps decaying), applies the
    frozen state then updates it, and snapshots the state every
    ``checkpoint_every`` batches (plus the initial and final states).
    Returns the final strategy and the checkpoint list.
    """
    log = as_log(dataset)
    n = len(log)
    if n == 0:
        raise ValueError("dataset must be nonempty")
    if config.batch_size > n:
        raise ValueError(
            f"batch_size {config.batch_size} exceeds dataset size {n}"
        )
    portfolio = PortfolioIndex(campaigns) if campaigns else None
    if portfolio is None:
        empty = StrategyState(
            auction_type=config.auction_type,
            temperature=config.temperature,
            penalty_mode=PENALTY_RELU,
            campaign_ids=[],
            goal_ids=[],
            values=np.zeros(0),
            allocation_mode=config.allocation_mode,
        )
        return empty, [Checkpoint(0, np.zeros(0))]

    engine = ReplayEngine(
        log,
        portfolio,
        predictors=predictors,
        auction_type=config.auction_type,
        temperature=config.temperature,
        mode=config.allocation_mode,
        accumulation=config.accumulation,
    )
    mode = state_mode(portfolio)
    state = OptimizerState(
        mode=mode,
        values=initial_values(portfolio, config.init),
        learning_rate_scale=config.learning_rate_scale,
    )
    checkpoints = [Checkpoint(0, state.values.copy())]

    j = 0
    done = False
    for epoch in range(config.epochs):
        perm = shuffle_stream(config.seed, epoch).permutation(n)
        for lo in range(0, n, config.batch_size):
            rows = perm[lo : lo + config.batch_size]
            if rows.size == 0:
                continue
            j += 1
            weights = portfolio.score_weights(portfolio.penalty_mode, state.values)
            res = engine.run_batch(weights, rows, batch_stream(config.seed, j))
            stats = BatchStats(
                delivered=res.delivered,
                rtb_revenue_cpm=res.rtb_revenue_cpm,
                auctions_won=res.auctions_won,
                batch_size=res.batch_size,
            )
            state.batch_index = j
            state.batch_ratio = rows.size / n
            alpha = learning_rate(j, config.learning_rate_scale)
            if mode == MODE_RELU:
                state = update_kappas(state, stats, alpha, portfolio)
            else:
                state = update_volumes(state, stats, alpha)
            if j % config.checkpoint_every == 0:
                checkpoints.append(Checkpoint(j, state.values.copy()))
            if config.max_batches is not None and j >= config.max_batches:
                done = True
                break
        if done:
            break
    if checkpoints[-1].batches != j:
        checkpoints.append(Checkpoint(j, state.values.copy()))

    strategy = StrategyState(
        auction_type=config.auction_type,
        temperature=config.temperature,
        penalty_mode=portfolio.penalty_mode,
        campaign_ids=list(portfolio.campaign_ids),
        goal_ids=[list(g) for g in portfolio.goal_ids],
        values=state.values.copy(),
        allocation_mode=config.allocation_mode,
        checkpoint_meta=[
            {"batches": c.batches, "adjusted_revenue_usd": None} for c in checkpoints
        ],
    )
    return strategy, checkpoints


def validate_strategy(strategy: StrategyState, portfolio: PortfolioIndex) -> None:
    """Check that a strategy aligns with a portfolio, goal for goal."""
    if strategy.campaign_ids != portfolio.campaign_ids:
        raise ValueError("strategy and portfolio campaign ids differ")
    if strategy.goal_ids != portfolio.goal_ids:
        raise ValueError("strategy and portfolio goal ids differ")
    if strategy.values.shape != (portfolio.G,):
        raise ValueError("strategy has a wrong number of goal values")
    expected_mode = portfolio.penalty_mode
    if strategy.penalty_mode != expected_mode:
        raise ValueError(
            f"strategy penalty mode {strategy.penalty_mode!r} does not match "
            f"portfolio {expected_mode!r}"
        )


def save_strategy(strategy: StrategyState, path) -> None:
    value_key = "kappa" if strategy.penalty_mode == PENALTY_RELU else "volume"
    payload = {
        "config": {
            "auction_type": strategy.auction_type,
            "temperature": strategy.temperature,
            "penalty_mode": strategy.penalty_mode,
            "allocation_mode": strategy.allocation_mode,
        },
        "campaigns": [],
        "checkpoints": strategy.checkpoint_meta,
    }
    pos = 0
    for cid, gids in zip(strategy.campaign_ids, strategy.goal_ids):
        goals = []
        for gid in gids:
            goals.append({"goal_id": gid, value_key: float(strategy.values[pos])})
            pos += 1
        payload["campaigns"].append({"campaign_id": cid, "goals": goals})
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(payload, fh, indent=2)
        fh.write("\n")


def load_strategy(path) -> StrategyState:
    with open(path, encoding="utf-8") as fh:
        payload = json.load(fh)
    config = payload["config"]
    penalty_mode = config["penalty_mode"]
    value_key = "kappa" if penalty_mode == PENALTY_RELU else "volume"
    campaign_ids, goal_ids, values = [], [], []
    for c in payload["campaigns"]:
        campaign_ids.append(str(c["campaign_id"]))
        gids = []
        for g in c["goals"]:
            gids.append(str(g["goal_id"]))
            values.append(float(g[value_key]))
        goal_ids.append(gids)
    return StrategyState(
        auction_type=config["auction_type"],
        temperature=float(config["temperature"]),
        penalty_mode=penalty_mode,
        campaign_ids=campaign_ids,
        goal_ids=goal_ids,
        values=np.array(values, dtype=float),
        allocation_mode=config.get("allocation_mode", "regularized"),
        checkpoint_meta=payload.get("checkpoints", []),
    )
