"""Apply a frozen strategy to a dataset and report revenue and delivery.

Adjusted revenue is the realized RTB revenue minus the under-delivery
penalties, in dollars (summed $CPM divided by 1000). Replays use the
recorded viewed/clicked outcomes, so reported deliveries are an achievable
realization rather than an expectation.
"""

from __future__ import annotations

import csv
import json
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .campaigns import Campaign
from .data_io import PlacementStats
from .engine import (
    AuctionLog,
    PortfolioIndex,
    ReplayEngine,
    as_log,
)
from .optimizer import Checkpoint, StrategyState, validate_strategy

CPM_PER_DOLLAR = 1000.0


@dataclass
class EvaluationOutcomes:
    """Columnar per-auction outcomes of one strategy application."""

    bids: np.ndarray
    won: np.ndarray
    sampled_campaign: np.ndarray  # -1 where the publisher lost
    rtb_revenue_cpm: np.ndarray


@dataclass
class EvaluationReport:
    rtb_revenue_usd: float
    penalty_usd: float
    adjusted_revenue_usd: float
    auctions_won: int
    auctions_total: int
    delivered: np.ndarray  # per goal, campaign-contiguous
    delivered_by_placement: np.ndarray  # (goals, placements)
    placement_ids: list[str]
    campaign_ids: list[str]
    goal_ids: list[list[str]]
    goal_volumes: np.ndarray


@dataclass(frozen=True)
class CurvePoint:
    batches: int
    adjusted_revenue_usd: float


def apply_strategy(
    records,
    campaigns: Sequence[Campaign],
    strategy: StrategyState,
    seed: int,
    predictors: PlacementStats | None = None,
    threads: int = 1,
) -> tuple[EvaluationOutcomes, EvaluationReport]:
    """Replay the whole dataset under a frozen strategy.

    Every auction is solved with the strategy's scores and temperature, the
    winning campaign is sampled on publisher wins, and deliveries replay the
    recorded outcomes. Penalties are assessed once, on the final delivered
    volumes.
    """
    log = as_log(records)
    n = len(log)
    if not campaigns:
        if strategy.campaign_ids:
            raise ValueError("strategy names campaigns but the portfolio is empty")
        revenue = _pure_rtb_revenue_cpm(log, strategy.auction_type)
        outcomes = EvaluationOutcomes(
            bids=np.zeros(n),
            won=np.zeros(n, dtype=bool),
            sampled_campaign=np.full(n, -1, dtype=np.int64),
            rtb_revenue_cpm=revenue,
        )
        total = float(revenue.sum()) / CPM_PER_DOLLAR
        report = EvaluationReport(
            rtb_revenue_usd=total,
            penalty_usd=0.0,
            adjusted_revenue_usd=total,
            auctions_won=0,
            auctions_total=n,
            delivered=np.zeros(0),
            delivered_by_placement=np.zeros((0, len(log.placement_ids))),
            placement_ids=list(log.placement_ids),
            campaign_ids=[],
            goal_ids=[],
            goal_volumes=np.zeros(0),
        )
        return outcomes, report

    portfolio = PortfolioIndex(campaigns)
    validate_strategy(strategy, portfolio)
    engine = ReplayEngine(
        log,
        portfolio,
        predictors=predictors,
        auction_type=strategy.auction_type,
        temperature=strategy.temperature,
        mode=strategy.allocation_mode,
    )
    weights = portfolio.score_weights(portfolio.penalty_mode, strategy.values)
    result = engine.evaluate(weights, seed, threads=threads, collect_outcomes=True)
    return _assemble(log, portfolio, result)


def _pure_rtb_revenue_cpm(log: AuctionLog, auction_type: str) -> np.ndarray:
    """Realized revenue when the publisher never bids."""
    if auction_type == "first":
        return log.highest.copy()
    if np.isnan(log.second).any():
        raise ValueError("second-price replay needs second_bid_cpm on every auction")
    return log.second.copy()


def _assemble(log, portfolio, result) -> tuple[EvaluationOutcomes, EvaluationReport]:
    rtb_usd = result["rtb_revenue_cpm"] / CPM_PER_DOLLAR
    penalty_usd = portfolio.total_penalty_cpm(result["delivered"]) / CPM_PER_DOLLAR
    outcomes = EvaluationOutcomes(
        bids=result["bids"],
        won=result["won_mask"],
        sampled_campaign=result["sampled"],
        rtb_revenue_cpm=result["revenue_cpm"],
    )
    report = EvaluationReport(
        rtb_revenue_usd=rtb_usd,
        penalty_usd=penalty_usd,
        adjusted_revenue_usd=rtb_usd - penalty_usd,
        auctions_won=int(result["auctions_won"]),
        auctions_total=int(result["auctions_total"]),
        delivered=result["delivered"],
        delivered_by_placement=result["delivered_by_placement"],
        placement_ids=list(log.placement_ids),
        campaign_ids=list(portfolio.campaign_ids),
        goal_ids=[list(g) for g in portfolio.goal_ids],
        goal_volumes=portfolio.goal_volumes.copy(),
    )
    return outcomes, report


def delivery_report(report: EvaluationReport) -> list[dict]:
    """Per-goal delivery rows: each placement as a percentage of the goal,
    plus the undelivered percentage and the raw delivered count.

    When a goal was overdelivered the placement percentages are scaled so
    the row still sums to 100 (the raw count keeps the full information).
    """
    rows = []
    pos = 0
    for cid, gids in zip(report.campaign_ids, report.goal_ids):
        for gid in gids:
            goal = report.goal_volumes[pos]
            by_placement = report.delivered_by_placement[pos]
            total = float(by_placement.sum())
            row: dict = {"campaign_id": cid, "goal_id": gid}
            if goal > 0:
                scale = 100.0 / goal
                if total > goal:
                    scale *= goal / total
                for pid, count in zip(report.placement_ids, by_placement):
                    row[pid] = float(count) * scale
                row["undelivered_pct"] = max(0.0, 100.0 * (goal - total) / goal)
            else:
                for pid in report.placement_ids:
                    row[pid] = 0.0
                row["undelivered_pct"] = 0.0
            row["delivered_total"] = total
            rows.append(row)
            pos += 1
    return rows


def write_delivery_csv(report: EvaluationReport, path) -> None:
    rows = delivery_report(report)
    header = (
        ["campaign_id", "goal_id"]
        + list(report.placement_ids)
        + ["undelivered_pct", "delivered_total"]
    )
    with open(path, "w", newline="\n", encoding="utf-8") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(header)
        for row in rows:
            writer.writerow(
                [row["campaign_id"], row["goal_id"]]
                + [f"{row[pid]:.4f}" for pid in report.placement_ids]
                + [f"{row['undelivered_pct']:.4f}", f"{row['delivered_total']:.1f}"]
            )


def write_report_json(report: EvaluationReport, path) -> None:
    payload = {
        "rtb_revenue_usd": report.rtb_revenue_usd,
        "penalty_usd": report.penalty_usd,
        "adjusted_revenue_usd": report.adjusted_revenue_usd,
        "auctions_won": report.auctions_won,
        "auctions_total": report.auctions_total,
    }
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(payload, fh, indent=2)
        fh.write("\n")


def convergence_curve(
    dataset,
    campaigns: Sequence[Campaign],
    checkpoints: Sequence[Checkpoint],
    seed: int,
    strategy: StrategyState,
    predictors: PlacementStats | None = None,
    threads: int = 1,
) -> list[CurvePoint]:
    """Adjusted revenue on the full dataset at each optimizer checkpoint.

    The replay configuration (auction type, temperature, allocation mode)
    is taken from the strategy the checkpoints belong to. Every checkpoint
    uses the same evaluation seed, so curve differences reflect the state,
    not resampling noise.
    """
    log = as_log(dataset)
    if not campaigns:
        total = (
            float(_pure_rtb_revenue_cpm(log, strategy.auction_type).sum())
            / CPM_PER_DOLLAR
        )
        return [CurvePoint(c.batches, total) for c in checkpoints]
    portfolio = PortfolioIndex(campaigns)
    validate_strategy(strategy, portfolio)
    engine = ReplayEngine(
        log,
        portfolio,
        predictors=predictors,
        auction_type=strategy.auction_type,
        temperature=strategy.temperature,
        mode=strategy.allocation_mode,
    )
    curve = []
    for checkpoint in checkpoints:
        weights = portfolio.score_weights(
            portfolio.penalty_mode, np.asarray(checkpoint.values, dtype=float)
        )
        result = engine.evaluate(weights, seed, threads=threads)
        adjusted = (
            result["rtb_revenue_cpm"]
            - portfolio.total_penalty_cpm(result["delivered"])
        ) / CPM_PER_DOLLAR
        curve.append(CurvePoint(int(checkpoint.batches), float(adjusted)))
    for prev, cur in zip(curve, curve[1:]):
        if cur.batches <= prev.batches:
            raise ValueError("checkpoint batch indices must strictly increase")
    return curve


def write_curve_csv(curve: Sequence[CurvePoint], path) -> None:
    with open(path, "w", newline="\n", encoding="utf-8") as fh:
        fh.write("batches,adjusted_revenue_usd\n")
        for point in curve:
            fh.write(f"{point.batches},{point.adjusted_revenue_usd!r}\n")


def plateau_batches(curve: Sequence[CurvePoint], band: float = 0.01) -> int:
    """Earliest checkpoint from which the curve stays within a relative
    band around its final value."""
    if not curve:
        raise ValueError("empty curve")
    final = curve[-1].adjusted_revenue_usd
    tol = band * abs(final)
    start = len(curve) - 1
    for i in range(len(curve) - 1, -1, -1):
        if abs(curve[i].adjusted_revenue_usd - final) <= tol:
            start = i
        else:
            break
    return curve[start].batches


def window_within_band(
    curve: Sequence[CurvePoint], window: int, band: float = 0.01
) -> bool:
    """True when the last ``window`` points span at most ``band`` of the
    final value."""
    if len(curve) < window:
        return False
    tail = [p.adjusted_revenue_usd for p in curve[-window:]]
    spread = max(tail) - min(tail)
    return spread <= band * abs(curve[-1].adjusted_revenue_usd)
