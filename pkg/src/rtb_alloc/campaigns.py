"""Direct campaigns: goals, targetings, penalty functions and campaign scores.

A campaign carries an ordered list of goals. Each goal counts deliveries of
one metric (impressions, views or clicks) inside a targeting, and has a
volume to reach plus a penalty weight per undelivered unit ($CPM). Penalties
are either rectified-linear or a smooth softplus surrogate.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from typing import TYPE_CHECKING, Sequence

import numpy as np

if TYPE_CHECKING:
    from .data_io import AuctionRecord, PlacementStats

METRIC_IMPRESSIONS = "impressions"
METRIC_VIEWS = "views"
METRIC_CLICKS = "clicks"
METRICS = (METRIC_IMPRESSIONS, METRIC_VIEWS, METRIC_CLICKS)

PENALTY_RELU = "relu"
PENALTY_SOFTPLUS = "softplus"

_FNV_OFFSET = 0xCBF29CE484222325
_FNV_PRIME = 0x100000001B3
_U64 = 0xFFFFFFFFFFFFFFFF


class KinkError(ValueError):
    """A ReLU penalty gradient was requested exactly at a kink.

    The gradient is set-valued there; the caller must choose a subgradient.
    ``goal_index`` names the first offending goal.
    """

    def __init__(self, goal_index: int):
        super().__init__(
            f"penalty gradient is set-valued at goal index {goal_index} "
            f"(delivered volume equals the goal)"
        )
        self.goal_index = goal_index


def fnv1a64(text: str) -> int:
    """FNV-1a 64-bit hash of the UTF-8 encoding of ``text``."""
    h = _FNV_OFFSET
    for byte in text.encode("utf-8"):
        h = ((h ^ byte) * _FNV_PRIME) & _U64
    return h


@dataclass(frozen=True)
class TargetingSpec:
    """Deterministic targeting predicate.

    ``placements`` restricts to an allow-list; ``hash_mod`` keeps an
    impression iff ``fnv1a64(impression_id) % hash_mod == 1``. Both None
    means every impression matches.
    """

    placements: frozenset[str] | None = None
    hash_mod: int | None = None

    def __post_init__(self):
        if self.hash_mod is not None and self.hash_mod < 1:
            raise ValueError("hash_mod must be a positive integer")
        if self.placements is not None and not isinstance(self.placements, frozenset):
            object.__setattr__(self, "placements", frozenset(self.placements))

    def matches(self, impression_id: str, placement_id: str) -> bool:
        if self.placements is not None and placement_id not in self.placements:
            return False
        if self.hash_mod is not None and fnv1a64(impression_id) % self.hash_mod != 1:
            return False
        return True


@dataclass(frozen=True)
class Goal:
    goal_id: str
    metric: str
    targeting: TargetingSpec
    volume: int
    penalty_weight: float

    def __post_init__(self):
        if self.metric not in METRICS:
            raise ValueError(f"unknown metric {self.metric!r}")
        if self.volume < 0:
            raise ValueError("goal volume must be >= 0")
        if self.penalty_weight < 0:
            raise ValueError("penalty weight must be >= 0")


@dataclass(frozen=True)
class Campaign:
    campaign_id: str
    contractual_revenue: float
    goals: tuple[Goal, ...]
    penalty_kind: str = PENALTY_RELU
    softplus_beta: float | None = None

    def __post_init__(self):
        if not self.goals:
            raise ValueError("a campaign needs at least one goal")
        object.__setattr__(self, "goals", tuple(self.goals))
        ids = [g.goal_id for g in self.goals]
        if len(set(ids)) != len(ids):
            raise ValueError(f"duplicate goal ids in campaign {self.campaign_id}")
        if self.penalty_kind not in (PENALTY_RELU, PENALTY_SOFTPLUS):
            raise ValueError(f"unknown penalty kind {self.penalty_kind!r}")
        if self.penalty_kind == PENALTY_SOFTPLUS:
            if self.softplus_beta is None or self.softplus_beta <= 0:
                raise ValueError("softplus penalty needs a sharpness beta > 0")
        elif self.softplus_beta is not None:
            raise ValueError("softplus_beta only applies to softplus penalties")


def targeting_probability(
    goal: Goal, auction: "AuctionRecord", predictors: "PlacementStats"
) -> float:
    """Probability that the auction's impression counts toward the goal.

    Deterministic targeting predicates contribute 0 or 1; stochastic
    metrics multiply in the placement-average view or click rate supplied
    by ``predictors``.
    """
    if not predictors.has_placement(auction.placement_id):
        raise ValueError(f"unknown placement {auction.placement_id!r}")
    if not goal.targeting.matches(auction.impression_id, auction.placement_id):
        return 0.0
    if goal.metric == METRIC_IMPRESSIONS:
        return 1.0
    if goal.metric == METRIC_VIEWS:
        return predictors.view_rate(auction.placement_id)
    return predictors.click_rate(auction.placement_id)


def _deltas(campaign: Campaign, delivered: Sequence[float]) -> np.ndarray:
    if len(delivered) != len(campaign.goals):
        raise ValueError(
            f"expected {len(campaign.goals)} delivered volumes, got {len(delivered)}"
        )
    delivered = np.asarray(delivered, dtype=float)
    goals = np.array([g.volume for g in campaign.goals], dtype=float)
    return goals - delivered


def penalty(campaign: Campaign, delivered: Sequence[float]) -> float:
    """Under-delivery penalty in $CPM units (divide by 1000 for dollars)."""
    deltas = _deltas(campaign, delivered)
    weights = np.array([g.penalty_weight for g in campaign.goals], dtype=float)
    if campaign.penalty_kind == PENALTY_RELU:
        return float(weights @ np.maximum(deltas, 0.0))
    beta = campaign.softplus_beta
    return float(weights @ (np.logaddexp(0.0, beta * deltas) / beta))


def penalty_gradient(campaign: Campaign, delivered: Sequence[float]) -> np.ndarray:
    """Partial derivatives of the penalty w.r.t. each delivered volume.

    ReLU penalties return ``-penalty_weight`` below the goal and 0 above it,
    and raise :class:`KinkError` exactly at it.
    """
    deltas = _deltas(campaign, delivered)
    weights = np.array([g.penalty_weight for g in campaign.goals], dtype=float)
    if campaign.penalty_kind == PENALTY_RELU:
        at_kink = np.flatnonzero(deltas == 0.0)
        if at_kink.size:
            raise KinkError(int(at_kink[0]))
        return np.where(deltas > 0, -weights, 0.0)
    beta = campaign.softplus_beta
    # d/dv of w/beta * softplus(beta*(g - v)) = -w * sigmoid(beta*(g - v))
    return -weights * _sigmoid(beta * deltas)


def _sigmoid(x: np.ndarray) -> np.ndarray:
    out = np.empty_like(x, dtype=float)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)
    return out


def score(
    campaign: Campaign, state: Sequence[float], signals: Sequence[float]
) -> float:
    """Campaign score for one auction, in $CPM.

    ``state`` holds the per-goal kappas under ReLU penalties (each in
    ``[0, penalty_weight]``) or the current expected delivered volumes under
    a differentiable penalty. ``signals`` are the per-goal targeting
    probabilities for this auction.
    """
    if len(state) != len(campaign.goals) or len(signals) != len(campaign.goals):
        raise ValueError("state and signals must have one entry per goal")
    signals = np.asarray(signals, dtype=float)
    if campaign.penalty_kind == PENALTY_RELU:
        kappas = np.asarray(state, dtype=float)
        for kappa, goal in zip(kappas, campaign.goals):
            if not 0.0 <= kappa <= goal.penalty_weight:
                raise ValueError(
                    f"kappa {kappa} outside [0, {goal.penalty_weight}] "
                    f"for goal {goal.goal_id}"
                )
        return float(signals @ kappas)
    grad = penalty_gradient(campaign, state)
    return float(-(signals @ grad))


# -- portfolio (de)serialization ------------------------------------------

def campaign_to_dict(campaign: Campaign) -> dict:
    if campaign.penalty_kind == PENALTY_SOFTPLUS:
        kind = {"softplus": {"beta": campaign.softplus_beta}}
    else:
        kind = "relu"
    return {
        "campaign_id": campaign.campaign_id,
        "contractual_revenue": campaign.contractual_revenue,
        "penalty_kind": kind,
        "goals": [
            {
                "goal_id": g.goal_id,
                "metric": g.metric,
                "targeting": _targeting_to_dict(g.targeting),
                "volume": g.volume,
                "penalty_weight": g.penalty_weight,
            }
            for g in campaign.goals
        ],
    }


def _targeting_to_dict(t: TargetingSpec) -> dict:
    out: dict = {}
    if t.placements is not None:
        out["placements"] = sorted(t.placements)
    if t.hash_mod is not None:
        out["hash_mod"] = t.hash_mod
    return out


def campaign_from_dict(data: dict) -> Campaign:
    kind = data.get("penalty_kind", "relu")
    if kind == "relu":
        penalty_kind, beta = PENALTY_RELU, None
    elif isinstance(kind, dict) and "softplus" in kind:
        penalty_kind, beta = PENALTY_SOFTPLUS, float(kind["softplus"]["beta"])
    else:
        raise ValueError(f"unknown penalty kind {kind!r}")
    goals = []
    for g in data["goals"]:
        t = g.get("targeting", {})
        goals.append(
            Goal(
                goal_id=str(g["goal_id"]),
                metric=str(g["metric"]),
                targeting=TargetingSpec(
                    placements=(
                        frozenset(t["placements"]) if "placements" in t else None
                    ),
                    hash_mod=t.get("hash_mod"),
                ),
                volume=int(g["volume"]),
                penalty_weight=float(g["penalty_weight"]),
            )
        )
    return Campaign(
        campaign_id=str(data["campaign_id"]),
        contractual_revenue=float(data.get("contractual_revenue", 0.0)),
        goals=tuple(goals),
        penalty_kind=penalty_kind,
        softplus_beta=beta,
    )


def save_campaigns(campaigns: Sequence[Campaign], path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        json.dump([campaign_to_dict(c) for c in campaigns], fh, indent=2)
        fh.write("\n")


def load_campaigns(path) -> list[Campaign]:
    with open(path, encoding="utf-8") as fh:
        data = json.load(fh)
    if not isinstance(data, list):
        raise ValueError("campaign portfolio must be a JSON array")
    campaigns = [campaign_from_dict(item) for item in data]
    ids = [c.campaign_id for c in campaigns]
    if len(set(ids)) != len(ids):
        raise ValueError("duplicate campaign ids in portfolio")
    return campaigns
