"""Exhaustive ground truth on tiny first-price instances.

In a first-price auction the per-auction decision space collapses to "sell
in RTB" versus "take for campaign k", so the optimum over a handful of
auctions is exact enumeration of all (K+1)^N assignments. Used as the
optimality oracle in acceptance tests.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .campaigns import PENALTY_RELU, Campaign
from .data_io import AuctionRecord

MAX_AUCTIONS = 14
MAX_CAMPAIGNS = 3
MAX_ASSIGNMENTS = 5_000_000
_CHUNK = 1 << 18


@dataclass(frozen=True)
class TinyInstance:
    """A first-price instance small enough to enumerate exactly.

    ``theta`` holds the deterministic 0/1 targeting signal per (auction,
    goal), goals flattened campaign-contiguously.
    """

    auctions: tuple[AuctionRecord, ...]
    campaigns: tuple[Campaign, ...]
    theta: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "auctions", tuple(self.auctions))
        object.__setattr__(self, "campaigns", tuple(self.campaigns))
        theta = np.asarray(self.theta, dtype=float)
        object.__setattr__(self, "theta", theta)
        n, k = len(self.auctions), len(self.campaigns)
        if n == 0 or n > MAX_AUCTIONS:
            raise ValueError(f"instance must have 1..{MAX_AUCTIONS} auctions")
        if k == 0 or k > MAX_CAMPAIGNS:
            raise ValueError(f"instance must have 1..{MAX_CAMPAIGNS} campaigns")
        if (k + 1) ** n > MAX_ASSIGNMENTS:
            raise ValueError("instance too large to enumerate")
        goals = sum(len(c.goals) for c in self.campaigns)
        if theta.shape != (n, goals):
            raise ValueError(
                f"theta must be ({n}, {goals}), got {theta.shape}"
            )
        if not np.isin(theta, (0.0, 1.0)).all():
            raise ValueError("theta must be deterministic (0 or 1)")
        for c in self.campaigns:
            if c.penalty_kind != PENALTY_RELU:
                raise ValueError("oracle instances use ReLU penalties only")


def brute_force_optimal(instance: TinyInstance) -> tuple[float, np.ndarray]:
    """Maximum adjusted revenue (dollars) over every assignment.

    Assignments map each auction to -1 (sell in RTB, collecting its highest
    bid) or a campaign index. Returns the maximum and the first argmax in
    lexicographic enumeration order (sell before campaign 0 before 1, ...).
    """
    n = len(instance.auctions)
    k = len(instance.campaigns)
    bids = np.array([a.highest_bid_cpm for a in instance.auctions])
    weights, volumes, goal_campaign = [], [], []
    for ki, c in enumerate(instance.campaigns):
        for g in c.goals:
            weights.append(g.penalty_weight)
            volumes.append(g.volume)
            goal_campaign.append(ki)
    weights = np.array(weights)
    volumes = np.array(volumes)
    goal_campaign = np.array(goal_campaign)

    base = k + 1
    total = base**n
    place = base ** np.arange(n, dtype=np.int64)
    best_value = -np.inf
    best_code = 0
    for lo in range(0, total, _CHUNK):
        codes = np.arange(lo, min(lo + _CHUNK, total), dtype=np.int64)
        digits = (codes[:, None] // place[None, :]) % base  # 0 = sell
        revenue_cpm = (digits == 0).astype(float) @ bids
        penalty_cpm = np.zeros(codes.size)
        for gi in range(weights.size):
            targeted = np.flatnonzero(instance.theta[:, gi])
            if targeted.size:
                delivered = (
                    digits[:, targeted] == goal_campaign[gi] + 1
                ).sum(axis=1)
            else:
                delivered = np.zeros(codes.size)
            penalty_cpm += weights[gi] * np.maximum(volumes[gi] - delivered, 0.0)
        value = (revenue_cpm - penalty_cpm) / 1000.0
        top = int(np.argmax(value))
        if value[top] > best_value:
            best_value = float(value[top])
            best_code = int(codes[top])

    digits = (best_code // place) % base
    assignment = digits.astype(np.int64) - 1  # -1 = sell
    return best_value, assignment
