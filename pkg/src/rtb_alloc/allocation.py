"""Per-auction decisions: campaign allocation distributions and the coupled
(bid, allocation) solve.

Allocation distributions are plain numpy probability vectors over the
campaigns (entries in [0, 1], summing to 1 within 1e-12).
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .auction import (
    BidDecision,
    BidLandscape,
    NonConvergenceError,
    ObservedFirstPrice,
    ObservedSecondPrice,
    solve_optimal_bid,
    win_probability,
)

MODE_REGULARIZED = "regularized"
MODE_HARD_ARGMAX = "hard_argmax"

FIXED_POINT_DAMPING = 0.5
FIXED_POINT_MAX_ITER = 100
FIXED_POINT_REL_TOL = 1e-6


@dataclass(frozen=True)
class RegularizationConfig:
    """Entropy-regularization settings for the allocation."""

    temperature: float = 0.5
    mode: str = MODE_REGULARIZED

    def __post_init__(self):
        if self.mode not in (MODE_REGULARIZED, MODE_HARD_ARGMAX):
            raise ValueError(f"unknown allocation mode {self.mode!r}")
        if self.mode == MODE_REGULARIZED and self.temperature <= 0:
            raise ValueError("temperature must be positive in regularized mode")


def regularized_allocation(
    scores: Sequence[float], win_prob: float, temperature: float
) -> np.ndarray:
    """Boltzmann allocation: softmax of ``scores * win_prob / temperature``.

    Computed with max-subtraction so large score/temperature ratios cannot
    overflow.
    """
    scores = np.asarray(scores, dtype=float)
    if scores.size == 0:
        raise ValueError("at least one campaign is required")
    if temperature <= 0:
        raise ValueError("temperature must be positive")
    if not 0.0 <= win_prob <= 1.0:
        raise ValueError("win probability must lie in [0, 1]")
    logits = scores * (win_prob / temperature)
    logits -= logits.max()
    weights = np.exp(logits)
    return weights / weights.sum()


def hard_allocation(scores: Sequence[float]) -> np.ndarray:
    """Uniform distribution over the campaigns with the maximum score.

    Ties are kept in the distribution; they resolve at sampling time.
    """
    scores = np.asarray(scores, dtype=float)
    if scores.size == 0:
        raise ValueError("at least one campaign is required")
    best = scores == scores.max()
    return best / best.sum()


def sample_campaign(q: Sequence[float], rng: np.random.Generator) -> int:
    """Draw a campaign index from the allocation distribution.

    Consumes exactly one uniform and inverts the CDF in index order, so a
    fixed seed reproduces the draw.
    """
    q = np.asarray(q, dtype=float)
    cum = np.cumsum(q)
    u = rng.random() * cum[-1]
    return int(min(np.searchsorted(cum, u, side="right"), q.size - 1))


def solve_auction(
    scores: Sequence[float],
    landscape: BidLandscape,
    config: RegularizationConfig,
) -> tuple[BidDecision, np.ndarray]:
    """Solve the coupled (bid, allocation) system for one auction.

    Hard mode bids for the maximum score and allocates to its argmax set.
    Regularized mode solves the softmax/stationarity fixed point by damped
    iteration from the hard-mode bid. For observed (replay) landscapes the
    win probability inside the softmax is pinned to 1, which decouples the
    system and makes the solve exact in one step.
    """
    scores = np.asarray(scores, dtype=float)
    if scores.size == 0:
        raise ValueError("at least one campaign is required")
    if np.any(scores < 0):
        raise ValueError("scores must be nonnegative")

    if config.mode == MODE_HARD_ARGMAX:
        decision = solve_optimal_bid(landscape, float(scores.max()))
        return decision, hard_allocation(scores)

    rho = config.temperature
    if isinstance(landscape, (ObservedFirstPrice, ObservedSecondPrice)):
        q = regularized_allocation(scores, 1.0, rho)
        decision = solve_optimal_bid(landscape, float(q @ scores))
        return decision, q

    bid = solve_optimal_bid(landscape, float(scores.max())).bid
    q = regularized_allocation(scores, win_probability(landscape, bid), rho)
    for _ in range(FIXED_POINT_MAX_ITER):
        q = regularized_allocation(scores, win_probability(landscape, bid), rho)
        target = solve_optimal_bid(landscape, float(q @ scores)).bid
        new_bid = bid + FIXED_POINT_DAMPING * (target - bid)
        delta, bid = abs(new_bid - bid), new_bid
        if delta <= FIXED_POINT_REL_TOL * (1.0 + bid):
            decision = solve_optimal_bid(landscape, float(q @ scores))
            return decision, regularized_allocation(
                scores, win_probability(landscape, decision.bid), rho
            )
    raise NonConvergenceError(
        f"bid/allocation fixed point did not converge in "
        f"{FIXED_POINT_MAX_ITER} iterations",
        last_iterate=bid,
    )
