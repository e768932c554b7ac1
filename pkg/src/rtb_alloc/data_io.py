"""Auction-log I/O, deterministic shuffling and calibrated synthetic data.

The log format is CSV with header
``impression_id,placement_id,highest_bid_cpm,second_bid_cpm,viewed,clicked``
(UTF-8, LF line endings, '.' decimal separator). ``second_bid_cpm`` may be
empty for first-price-only datasets. Booleans are written as ``1``/``0``.
"""

from __future__ import annotations

import csv
import json
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .campaigns import (
    METRIC_CLICKS,
    METRIC_IMPRESSIONS,
    METRIC_VIEWS,
    Campaign,
    Goal,
    TargetingSpec,
)

LOG_HEADER = [
    "impression_id",
    "placement_id",
    "highest_bid_cpm",
    "second_bid_cpm",
    "viewed",
    "clicked",
]

BID_SHAPE_SIGMA = 0.5  # lognormal log-scale of synthetic bids
IMPRESSION_ID_WIDTH = 9


class LogFormatError(ValueError):
    """A malformed auction log; ``line`` is the offending 1-based line."""

    def __init__(self, message: str, line: int | None = None):
        if line is not None:
            message = f"line {line}: {message}"
        super().__init__(message)
        self.line = line


@dataclass(frozen=True, slots=True)
class AuctionRecord:
    """One auction that was won by a buyer (highest bid strictly positive)."""

    impression_id: str
    placement_id: str
    highest_bid_cpm: float
    second_bid_cpm: float | None = None
    viewed: bool = False
    clicked: bool = False


@dataclass(frozen=True)
class PlacementProfile:
    placement_id: str
    share: float
    mean_bid_cpm: float
    view_rate: float
    click_rate: float

    def __post_init__(self):
        if not 0.0 <= self.share <= 1.0:
            raise ValueError("share must lie in [0, 1]")
        if self.mean_bid_cpm <= 0:
            raise ValueError("mean bid must be positive")
        for rate in (self.view_rate, self.click_rate):
            if not 0.0 <= rate <= 1.0:
                raise ValueError("rates must lie in [0, 1]")


@dataclass(frozen=True)
class PlacementStats:
    """Per-placement supply shares, mean bids and view/click rates."""

    placements: tuple[PlacementProfile, ...]

    def __post_init__(self):
        object.__setattr__(self, "placements", tuple(self.placements))
        total = sum(p.share for p in self.placements)
        if abs(total - 1.0) > 1e-6:
            raise ValueError(f"placement shares must sum to 1, got {total}")
        object.__setattr__(
            self, "_by_id", {p.placement_id: p for p in self.placements}
        )

    def has_placement(self, placement_id: str) -> bool:
        return placement_id in self._by_id

    def _get(self, placement_id: str) -> PlacementProfile:
        try:
            return self._by_id[placement_id]
        except KeyError:
            raise ValueError(f"unknown placement {placement_id!r}") from None

    def share(self, placement_id: str) -> float:
        return self._get(placement_id).share

    def mean_bid(self, placement_id: str) -> float:
        return self._get(placement_id).mean_bid_cpm

    def view_rate(self, placement_id: str) -> float:
        return self._get(placement_id).view_rate

    def click_rate(self, placement_id: str) -> float:
        return self._get(placement_id).click_rate

    def placement_ids(self) -> list[str]:
        return [p.placement_id for p in self.placements]


_VIDEO_WEEK_COUNTS_MLN = (15.46, 5.56, 2.43, 0.14)
_VIDEO_WEEK_TOTAL_MLN = 23.59

#: Built-in profile mirroring a week of video inventory over four placements
#: (named ``paper-table`` on the CLI).
PAPER_TABLE_PROFILE = PlacementStats(
    placements=(
        PlacementProfile("P1", 15.46 / _VIDEO_WEEK_TOTAL_MLN, 13.15, 0.770, 0.0013),
        PlacementProfile("P2", 5.56 / _VIDEO_WEEK_TOTAL_MLN, 15.36, 0.779, 0.0023),
        PlacementProfile("P3", 2.43 / _VIDEO_WEEK_TOTAL_MLN, 15.55, 0.597, 0.0203),
        PlacementProfile("P4", 0.14 / _VIDEO_WEEK_TOTAL_MLN, 25.37, 0.427, 0.0),
    )
)

#: Impression count (in auctions) of the dataset the built-in profile mirrors;
#: used to rescale the benchmark campaign goals to a synthetic supply size.
PAPER_TABLE_SUPPLY = int(_VIDEO_WEEK_TOTAL_MLN * 1e6)


def _parse_bool(raw: str, line: int, column: str) -> bool:
    low = raw.strip().lower()
    if low in ("1", "true"):
        return True
    if low in ("0", "false"):
        return False
    raise LogFormatError(f"invalid boolean {raw!r} in column {column}", line)


def load_log(path) -> list[AuctionRecord]:
    """Parse an auction log CSV, validating every row.

    Raises :class:`LogFormatError` with the 1-based line number on the first
    malformed row (missing columns, non-positive highest bid, or a second
    bid exceeding the highest bid).
    """
    records: list[AuctionRecord] = []
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise LogFormatError("empty file, expected header", 1) from None
        if header != LOG_HEADER:
            raise LogFormatError(
                f"bad header {header!r}, expected {LOG_HEADER!r}", 1
            )
        for line, row in enumerate(reader, start=2):
            if not row:
                continue
            if len(row) != len(LOG_HEADER):
                raise LogFormatError(
                    f"expected {len(LOG_HEADER)} columns, got {len(row)}", line
                )
            imp_id, placement, highest_raw, second_raw, viewed_raw, clicked_raw = row
            try:
                highest = float(highest_raw)
            except ValueError:
                raise LogFormatError(
                    f"invalid highest bid {highest_raw!r}", line
                ) from None
            if not highest > 0:
                raise LogFormatError(
                    f"highest bid must be strictly positive, got {highest}", line
                )
            second: float | None = None
            if second_raw.strip():
                try:
                    second = float(second_raw)
                except ValueError:
                    raise LogFormatError(
                        f"invalid second bid {second_raw!r}", line
                    ) from None
                if second < 0:
                    raise LogFormatError(
                        f"second bid must be >= 0, got {second}", line
                    )
                if second > highest:
                    raise LogFormatError(
                        f"second bid {second} exceeds highest bid {highest}", line
                    )
            records.append(
                AuctionRecord(
                    impression_id=imp_id,
                    placement_id=placement,
                    highest_bid_cpm=highest,
                    second_bid_cpm=second,
                    viewed=_parse_bool(viewed_raw, line, "viewed"),
                    clicked=_parse_bool(clicked_raw, line, "clicked"),
                )
            )
    return records


def _format_money(x: float) -> str:
    return repr(float(x))


def write_log(records: Sequence[AuctionRecord], path) -> None:
    """Write records in the canonical CSV form (LF endings, 1/0 booleans)."""
    with open(path, "w", newline="\n", encoding="utf-8") as fh:
        fh.write(",".join(LOG_HEADER) + "\n")
        for r in records:
            second = "" if r.second_bid_cpm is None else _format_money(r.second_bid_cpm)
            fh.write(
                f"{r.impression_id},{r.placement_id},"
                f"{_format_money(r.highest_bid_cpm)},{second},"
                f"{int(r.viewed)},{int(r.clicked)}\n"
            )


def shuffle(records: Sequence[AuctionRecord], seed: int) -> list[AuctionRecord]:
    """Deterministic Fisher-Yates permutation of the records."""
    perm = np.random.default_rng(seed).permutation(len(records))
    return [records[i] for i in perm]


def generate_synthetic(
    profile: PlacementStats, n: int, seed: int
) -> list[AuctionRecord]:
    """Sample a synthetic auction log calibrated to a placement profile.

    Placements follow the supply shares; highest bids are lognormal with the
    placement's mean and log-scale ``BID_SHAPE_SIGMA``; the second bid is
    ``highest * U(0, 1)``; viewed/clicked are independent Bernoulli draws at
    the placement rates. Impression ids are zero-padded ordinals.
    """
    if n < 1:
        raise ValueError("n must be >= 1")
    rng = np.random.default_rng(seed)
    shares = np.array([p.share for p in profile.placements], dtype=float)
    shares = shares / shares.sum()
    placement_ids = profile.placement_ids()
    codes = rng.choice(len(placement_ids), size=n, p=shares)

    # mean of lognormal(mu, sigma) is exp(mu + sigma^2/2); solve mu per placement
    mus = np.array(
        [np.log(p.mean_bid_cpm) - BID_SHAPE_SIGMA**2 / 2.0 for p in profile.placements]
    )
    highest = rng.lognormal(mean=mus[codes], sigma=BID_SHAPE_SIGMA)
    second = highest * rng.random(n)
    view_rates = np.array([p.view_rate for p in profile.placements])
    click_rates = np.array([p.click_rate for p in profile.placements])
    viewed = rng.random(n) < view_rates[codes]
    clicked = rng.random(n) < click_rates[codes]

    width = max(IMPRESSION_ID_WIDTH, len(str(n - 1)))
    return [
        AuctionRecord(
            impression_id=str(i).zfill(width),
            placement_id=placement_ids[codes[i]],
            highest_bid_cpm=float(highest[i]),
            second_bid_cpm=float(second[i]),
            viewed=bool(viewed[i]),
            clicked=bool(clicked[i]),
        )
        for i in range(n)
    ]


def generate_campaign_portfolio(
    k: int, supply: Sequence[AuctionRecord], seed: int
) -> list[Campaign]:
    """Generate ``k`` single-goal impressions campaigns over a supply.

    Each campaign targets the impressions whose id hash is 1 modulo a
    modulus drawn uniformly from [10, 100]; its volume is uniform on
    [0, 0.8 * |supply| / k] so the goals sum to 40% of the supply in
    expectation, and its penalty weight is uniform on [0, 50] $CPM.
    """
    if k < 1:
        raise ValueError("k must be >= 1")
    if not len(supply):
        raise ValueError("supply must be nonempty")
    rng = np.random.default_rng(seed)
    volume_cap = 0.8 * len(supply) / k
    mods = rng.integers(10, 101, size=k)
    volumes = rng.uniform(0.0, volume_cap, size=k)
    weights = rng.uniform(0.0, 50.0, size=k)
    return [
        Campaign(
            campaign_id=f"bulk-{i:05d}",
            contractual_revenue=0.0,
            goals=(
                Goal(
                    goal_id="imp",
                    metric=METRIC_IMPRESSIONS,
                    targeting=TargetingSpec(hash_mod=int(mods[i])),
                    volume=int(round(volumes[i])),
                    penalty_weight=float(weights[i]),
                ),
            ),
        )
        for i in range(k)
    ]


def benchmark_portfolio(supply_size: int) -> list[Campaign]:
    """Nine hand-defined campaigns in three metric tiers, scaled to a supply.

    Three impressions campaigns (weights 5/10/20 $CPM), three viewability
    campaigns (5/15/30) and three click campaigns (200/500/1000), all
    targeting every placement. Goals are scaled from the reference supply of
    ``PAPER_TABLE_SUPPLY`` impressions down to ``supply_size``.
    """
    scale = supply_size / PAPER_TABLE_SUPPLY
    tiers = [
        (METRIC_IMPRESSIONS, 3_000_000, (5.0, 10.0, 20.0)),
        (METRIC_VIEWS, 2_000_000, (5.0, 15.0, 30.0)),
        (METRIC_CLICKS, 2_000, (200.0, 500.0, 1000.0)),
    ]
    campaigns = []
    for metric, base_volume, weights in tiers:
        for weight in weights:
            campaigns.append(
                Campaign(
                    campaign_id=f"{metric}-{weight:g}",
                    contractual_revenue=0.0,
                    goals=(
                        Goal(
                            goal_id=metric,
                            metric=metric,
                            targeting=TargetingSpec(),
                            volume=int(round(base_volume * scale)),
                            penalty_weight=weight,
                        ),
                    ),
                )
            )
    return campaigns


def estimate_placement_stats(records) -> PlacementStats:
    """Empirical per-placement shares, mean bids and view/click rates."""
    from .engine import AuctionLog

    log = records if isinstance(records, AuctionLog) else AuctionLog.from_records(records)
    return log.placement_stats()


def save_profile(profile: PlacementStats, path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(
            [
                {
                    "placement_id": p.placement_id,
                    "share": p.share,
                    "mean_bid_cpm": p.mean_bid_cpm,
                    "view_rate": p.view_rate,
                    "click_rate": p.click_rate,
                }
                for p in profile.placements
            ],
            fh,
            indent=2,
        )
        fh.write("\n")


def load_profile(path) -> PlacementStats:
    with open(path, encoding="utf-8") as fh:
        data = json.load(fh)
    if not isinstance(data, list) or not data:
        raise ValueError("profile must be a nonempty JSON array")
    return PlacementStats(
        placements=tuple(
            PlacementProfile(
                placement_id=str(p["placement_id"]),
                share=float(p["share"]),
                mean_bid_cpm=float(p["mean_bid_cpm"]),
                view_rate=float(p["view_rate"]),
                click_rate=float(p["click_rate"]),
            )
            for p in data
        )
    )
