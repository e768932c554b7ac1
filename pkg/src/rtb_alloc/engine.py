"""Vectorized replay machinery shared by the optimizer and the evaluator.

The scalar operations in :mod:`rtb_alloc.allocation` and
:mod:`rtb_alloc.auction` define the per-auction contract; this module
implements the same math over numpy columns so that million-auction datasets
and thousand-campaign portfolios stay fast. Two internal paths exist:

* a dense path building an (auctions x goals) targeting-signal matrix,
  used for mixed portfolios and small campaign counts;
* a grouped path for portfolios made solely of single-goal impressions
  campaigns with hash-mod targetings, where campaigns sharing a modulus
  share their targeting mask, making the per-batch cost independent of the
  number of campaigns.

Both paths draw one uniform per auction and invert the allocation CDF in
campaign-index order (the grouped path orders campaigns by modulus first),
so runs are bit-reproducible for a fixed seed.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .auction import ParametricSecondPrice, fit_lognormal_landscape
from .campaigns import (
    METRIC_CLICKS,
    METRIC_IMPRESSIONS,
    METRIC_VIEWS,
    PENALTY_RELU,
    PENALTY_SOFTPLUS,
    Campaign,
    fnv1a64,
)
from .data_io import AuctionRecord, PlacementProfile, PlacementStats

AUCTION_FIRST_PRICE = "first"
AUCTION_SECOND_PRICE = "second"

_TAG_SHUFFLE = 0
_TAG_BATCH = 1
_TAG_EVAL = 2

_FNV_OFFSET = np.uint64(0xCBF29CE484222325)
_FNV_PRIME = np.uint64(0x100000001B3)

_METRIC_CODES = {METRIC_IMPRESSIONS: 0, METRIC_VIEWS: 1, METRIC_CLICKS: 2}

EVAL_CHUNK = 65536


def substream(seed: int, tag: int, index: int) -> np.random.Generator:
    """Deterministically derived random stream for one scope of a run."""
    return np.random.default_rng([int(seed), int(tag), int(index)])


def shuffle_stream(seed: int, epoch: int) -> np.random.Generator:
    return substream(seed, _TAG_SHUFFLE, epoch)


def batch_stream(seed: int, batch_index: int) -> np.random.Generator:
    return substream(seed, _TAG_BATCH, batch_index)


def eval_stream(seed: int, chunk_index: int) -> np.random.Generator:
    return substream(seed, _TAG_EVAL, chunk_index)


def _hash_ids(ids: Sequence[str]) -> np.ndarray:
    """FNV-1a 64 over UTF-8 ids, vectorized for equal-width ASCII ids."""
    n = len(ids)
    arr = np.asarray(ids)
    if arr.dtype.kind == "U" and arr.dtype.itemsize:
        w = arr.dtype.itemsize // 4
        if bool((np.char.str_len(arr) == w).all()):
            try:
                raw = arr.astype(f"S{w}")
            except UnicodeEncodeError:
                raw = None
            if raw is not None:
                bytes_mat = raw.view(np.uint8).reshape(n, w)
                h = np.full(n, _FNV_OFFSET, dtype=np.uint64)
                for col in range(w):
                    h = (h ^ bytes_mat[:, col].astype(np.uint64)) * _FNV_PRIME
                return h
    return np.array([fnv1a64(s) for s in ids], dtype=np.uint64)


class AuctionLog:
    """Columnar view of an auction log."""

    def __init__(self, ids, placement_ids, placement_codes, highest, second, viewed, clicked):
        self.ids = ids
        self.placement_ids = list(placement_ids)
        self.placement_codes = np.asarray(placement_codes, dtype=np.int32)
        self.highest = np.asarray(highest, dtype=np.float64)
        self.second = np.asarray(second, dtype=np.float64)
        self.viewed = np.asarray(viewed, dtype=bool)
        self.clicked = np.asarray(clicked, dtype=bool)
        self._hashes: np.ndarray | None = None

    def __len__(self) -> int:
        return len(self.highest)

    @classmethod
    def from_records(cls, records: Sequence[AuctionRecord]) -> "AuctionLog":
        n = len(records)
        code_of: dict[str, int] = {}
        codes = np.empty(n, dtype=np.int32)
        ids = []
        highest = np.empty(n)
        second = np.empty(n)
        viewed = np.empty(n, dtype=bool)
        clicked = np.empty(n, dtype=bool)
        for i, r in enumerate(records):
            code = code_of.setdefault(r.placement_id, len(code_of))
            codes[i] = code
            ids.append(r.impression_id)
            highest[i] = r.highest_bid_cpm
            second[i] = np.nan if r.second_bid_cpm is None else r.second_bid_cpm
            viewed[i] = r.viewed
            clicked[i] = r.clicked
        return cls(ids, list(code_of), codes, highest, second, viewed, clicked)

    def to_records(self) -> list[AuctionRecord]:
        return [
            AuctionRecord(
                impression_id=self.ids[i],
                placement_id=self.placement_ids[self.placement_codes[i]],
                highest_bid_cpm=float(self.highest[i]),
                second_bid_cpm=None if np.isnan(self.second[i]) else float(self.second[i]),
                viewed=bool(self.viewed[i]),
                clicked=bool(self.clicked[i]),
            )
            for i in range(len(self))
        ]

    def hashes(self) -> np.ndarray:
        if self._hashes is None:
            self._hashes = _hash_ids(self.ids)
        return self._hashes

    def placement_stats(self) -> PlacementStats:
        n = len(self)
        if n == 0:
            raise ValueError("empty log")
        counts = np.bincount(self.placement_codes, minlength=len(self.placement_ids))
        if np.any(counts == 0):
            raise ValueError("placement without impressions in log")
        mean_bid = np.bincount(self.placement_codes, weights=self.highest) / counts
        view = np.bincount(self.placement_codes, weights=self.viewed.astype(float)) / counts
        click = np.bincount(self.placement_codes, weights=self.clicked.astype(float)) / counts
        return PlacementStats(
            placements=tuple(
                PlacementProfile(
                    placement_id=pid,
                    share=float(counts[c] / n),
                    mean_bid_cpm=float(mean_bid[c]),
                    view_rate=float(view[c]),
                    click_rate=float(click[c]),
                )
                for c, pid in enumerate(self.placement_ids)
            )
        )


def as_log(records) -> AuctionLog:
    return records if isinstance(records, AuctionLog) else AuctionLog.from_records(records)


class PortfolioIndex:
    """Flattened goal arrays for a campaign portfolio.

    Goals are stored campaign-contiguously; ``offsets[k]`` is the first goal
    of campaign ``k``. All campaigns must share one penalty family (ReLU or
    softplus); the optimizer state is per-goal within that family.
    """

    def __init__(self, campaigns: Sequence[Campaign]):
        if not campaigns:
            raise ValueError("portfolio must contain at least one campaign")
        self.campaigns = list(campaigns)
        kinds = {c.penalty_kind for c in campaigns}
        if len(kinds) > 1:
            raise ValueError("portfolio mixes penalty families; split the run")
        self.penalty_mode = kinds.pop()
        self.campaign_ids = [c.campaign_id for c in campaigns]

        goal_campaign, weights, volumes, metrics, hash_mods, betas = [], [], [], [], [], []
        placements: list[frozenset | None] = []
        offsets = [0]
        goal_ids: list[list[str]] = []
        for k, c in enumerate(campaigns):
            goal_ids.append([g.goal_id for g in c.goals])
            for g in c.goals:
                goal_campaign.append(k)
                weights.append(g.penalty_weight)
                volumes.append(g.volume)
                metrics.append(_METRIC_CODES[g.metric])
                hash_mods.append(g.targeting.hash_mod or 0)
                placements.append(g.targeting.placements)
                betas.append(c.softplus_beta or 0.0)
            offsets.append(offsets[-1] + len(c.goals))
        self.K = len(campaigns)
        self.G = offsets[-1]
        self.goal_campaign = np.array(goal_campaign, dtype=np.int32)
        self.offsets = np.array(offsets, dtype=np.int64)
        self.penalty_weights = np.array(weights, dtype=float)
        self.goal_volumes = np.array(volumes, dtype=float)
        self.metric_codes = np.array(metrics, dtype=np.int8)
        self.hash_mods = np.array(hash_mods, dtype=np.int64)
        self.goal_placements = placements
        self.softplus_betas = np.array(betas, dtype=float)
        self.goal_ids = goal_ids
        self.single_goal = self.G == self.K
        self.pure_hash_impressions = (
            self.single_goal
            and self.penalty_mode == PENALTY_RELU
            and bool(np.all(self.metric_codes == 0))
            and bool(np.all(self.hash_mods >= 1))
            and all(p is None for p in placements)
        )

    def score_weights(self, mode: str, values: np.ndarray) -> np.ndarray:
        """Per-goal score weights from the optimizer state.

        ReLU state is the kappa vector itself; differentiable state maps the
        volume vector through the negated softplus penalty gradient.
        """
        if mode == PENALTY_RELU:
            return values
        z = self.softplus_betas * (self.goal_volumes - values)
        return self.penalty_weights * _sigmoid_array(z)

    def total_penalty_cpm(self, delivered: np.ndarray) -> float:
        deltas = self.goal_volumes - delivered
        if self.penalty_mode == PENALTY_RELU:
            return float(self.penalty_weights @ np.maximum(deltas, 0.0))
        scaled = np.logaddexp(0.0, self.softplus_betas * deltas) / self.softplus_betas
        return float(self.penalty_weights @ scaled)


def _sigmoid_array(x: np.ndarray) -> np.ndarray:
    out = np.empty_like(x, dtype=float)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)
    return out


@dataclass
class BatchResult:
    delivered: np.ndarray  # per goal
    rtb_revenue_cpm: float
    auctions_won: int
    batch_size: int
    bids: np.ndarray | None = None
    won: np.ndarray | None = None
    sampled: np.ndarray | None = None  # campaign index, -1 where not won
    revenue_cpm: np.ndarray | None = None
    delivered_by_placement: np.ndarray | None = None  # (G, P)


class ParametricBidTable:
    """Tabulated optimal-bid map for one parametric second-price landscape.

    Precomputes the expected-revenue curve on a fine bid grid and the
    resulting argmax bid as a function of the campaign score, which is
    nondecreasing, so batch solves reduce to interpolation.
    """

    def __init__(self, landscape: ParametricSecondPrice, score_max: float,
                 n_bid: int = 8192, n_score: int = 2048):
        smax = landscape.support_max
        bids = np.linspace(0.0, smax, n_bid + 1)
        fb = np.array([landscape.cdf_b(x) for x in bids])
        fc = np.array([landscape.cdf_c(x) for x in bids])
        tail = 1.0 - fc
        seg = 0.5 * (tail[:-1] + tail[1:]) * np.diff(bids)
        right_cum = np.concatenate([np.cumsum(seg[::-1])[::-1], [0.0]])
        revenue = right_cum + bids * (1.0 - fb)
        self.bids = bids
        self.win_cdf = fb
        scores = np.linspace(0.0, max(score_max, 1e-9), n_score + 1)
        best = np.empty_like(scores)
        chunk = max(1, 2**22 // (n_bid + 1))
        for lo in range(0, scores.size, chunk):
            block = scores[lo : lo + chunk, None]
            objective = revenue[None, :] + block * fb[None, :]
            best[lo : lo + chunk] = bids[np.argmax(objective, axis=1)]
        self.score_grid = scores
        self.bid_of_score = np.maximum.accumulate(best)  # enforce monotone map

    def optimal_bids(self, scores: np.ndarray) -> np.ndarray:
        return np.interp(scores, self.score_grid, self.bid_of_score)

    def win_probability(self, bids: np.ndarray) -> np.ndarray:
        return np.interp(bids, self.bids, self.win_cdf)


class ReplayEngine:
    """Applies a frozen strategy to batches or to the whole log."""

    def __init__(
        self,
        log: AuctionLog,
        portfolio: PortfolioIndex,
        predictors: PlacementStats | None = None,
        auction_type: str = AUCTION_FIRST_PRICE,
        temperature: float = 0.5,
        mode: str = "regularized",
        accumulation: str = "realized",
    ):
        if auction_type not in (AUCTION_FIRST_PRICE, AUCTION_SECOND_PRICE):
            raise ValueError(f"unknown auction type {auction_type!r}")
        if accumulation not in ("realized", "expected"):
            raise ValueError(f"unknown accumulation mode {accumulation!r}")
        self.log = log
        self.portfolio = portfolio
        self.auction_type = auction_type
        self.temperature = float(temperature)
        self.mode = mode
        self.accumulation = accumulation
        self.predictors = predictors if predictors is not None else log.placement_stats()
        self._n_placements = len(log.placement_ids)
        # the grouped path subtracts one global shift, which underflows once
        # the score range exceeds ~600 temperature units; fall back to the
        # row-shifted dense path in that regime
        score_span = float(portfolio.penalty_weights.max(initial=0.0))
        self._grouped = (
            portfolio.pure_hash_impressions
            and auction_type == AUCTION_FIRST_PRICE
            and mode == "regularized"
            and score_span / self.temperature <= 600.0
        )
        if self._grouped:
            self._init_grouped()
        else:
            self._init_dense()
        if auction_type == AUCTION_SECOND_PRICE:
            if np.isnan(log.second).any():
                raise ValueError(
                    "second-price replay needs second_bid_cpm on every auction"
                )
            self._init_bid_tables()

    # -- setup -------------------------------------------------------------

    def _init_dense(self):
        p = self.portfolio
        log = self.log
        n, G = len(log), p.G
        match = np.ones((n, G), dtype=bool)
        hashes = None
        for g in range(G):
            allow = p.goal_placements[g]
            if allow is not None:
                lut = np.array(
                    [pid in allow for pid in log.placement_ids], dtype=bool
                )
                match[:, g] &= lut[log.placement_codes]
            m = p.hash_mods[g]
            if m >= 1:
                if hashes is None:
                    hashes = log.hashes()
                match[:, g] &= (hashes % np.uint64(m)) == 1
        self._match = match
        # metric factor per (goal, placement): 1 / view rate / click rate
        stats = self.predictors
        for pid in log.placement_ids:
            if not stats.has_placement(pid):
                raise ValueError(f"unknown placement {pid!r} in predictors")
        view = np.array([stats.view_rate(pid) for pid in log.placement_ids])
        click = np.array([stats.click_rate(pid) for pid in log.placement_ids])
        factor = np.ones((G, self._n_placements))
        factor[p.metric_codes == 1, :] = view[None, :]
        factor[p.metric_codes == 2, :] = click[None, :]
        self._factor_lut = factor

    def _init_grouped(self):
        p = self.portfolio
        mods = p.hash_mods
        order = np.argsort(mods, kind="stable")
        self._order = order
        sorted_mods = mods[order]
        uniq, starts = np.unique(sorted_mods, return_index=True)
        self._mods_unique = uniq.astype(np.uint64)
        self._group_starts = starts
        self._group_counts = np.diff(np.append(starts, p.K))
        hashes = self.log.hashes()
        n_mods = uniq.size
        active = np.empty((len(self.log), n_mods), dtype=bool)
        for j in range(n_mods):
            active[:, j] = (hashes % self._mods_unique[j]) == np.uint64(1)
        self._active = active
        self._group_of_internal = np.repeat(np.arange(n_mods), self._group_counts)
        self._inverse_order = np.argsort(order, kind="stable")
        self._group_counts_f = self._group_counts.astype(float)

    def _init_bid_tables(self):
        log = self.log
        weights = self.portfolio.penalty_weights
        by_campaign = np.zeros(self.portfolio.K)
        np.add.at(by_campaign, self.portfolio.goal_campaign, weights)
        score_cap = float(by_campaign.max())
        self._bid_tables = []
        for code in range(self._n_placements):
            rows = log.placement_codes == code
            landscape = fit_lognormal_landscape(log.highest[rows], log.second[rows])
            self._bid_tables.append(ParametricBidTable(landscape, score_cap))

    # -- scoring -----------------------------------------------------------

    def _dense_scores(self, weights: np.ndarray, rows: np.ndarray):
        p = self.portfolio
        codes = self.log.placement_codes[rows]
        match = self._match[rows]
        theta = match * self._factor_lut[:, codes].T
        tw = theta * weights
        if p.single_goal:
            scores = tw
        else:
            scores = np.add.reduceat(tw, p.offsets[:-1], axis=1)
        return scores, theta, match, codes

    def _realized_outcomes(self, match: np.ndarray, rows: np.ndarray) -> np.ndarray:
        """Per-goal realized counting signals: match x replayed metric flag."""
        p = self.portfolio
        x = match.astype(float)
        views = p.metric_codes == 1
        if views.any():
            x[:, views] *= self.log.viewed[rows, None]
        clicks = p.metric_codes == 2
        if clicks.any():
            x[:, clicks] *= self.log.clicked[rows, None]
        return x

    # -- batch application ---------------------------------------------------

    def run_batch(
        self, weights: np.ndarray, rows: np.ndarray, rng: np.random.Generator,
        collect: bool = False, placements: bool = False,
    ) -> BatchResult:
        if self._grouped:
            return self._run_batch_grouped(weights, rows, rng, collect, placements)
        return self._run_batch_dense(weights, rows, rng, collect, placements)

    def _allocation_from_scores(self, scores: np.ndarray):
        """Row-wise allocation distribution and its expected score."""
        if self.mode == "hard_argmax":
            best = scores.max(axis=1, keepdims=True)
            q = (scores == best).astype(float)
            q /= q.sum(axis=1, keepdims=True)
            return q, best[:, 0]
        logits = scores / self.temperature
        logits -= logits.max(axis=1, keepdims=True)
        q = np.exp(logits)
        q /= q.sum(axis=1, keepdims=True)
        return q, np.einsum("ij,ij->i", q, scores)

    def _run_batch_dense(self, weights, rows, rng, collect, placements=False) -> BatchResult:
        p = self.portfolio
        m = rows.size
        scores, theta, match, codes = self._dense_scores(weights, rows)
        highest = self.log.highest[rows]

        if self.auction_type == AUCTION_FIRST_PRICE:
            q, effective = self._allocation_from_scores(scores)
            bids = effective
            won = bids >= highest
            revenue = np.where(won, 0.0, highest)
        else:
            q, bids = self._second_price_bids(scores, codes)
            won = bids >= highest
            second = self.log.second[rows]
            revenue = np.where(won, 0.0, np.maximum(second, bids))

        u = rng.random(m)
        win_rows = np.flatnonzero(won)
        sampled_full = np.full(m, -1, dtype=np.int64)
        delivered = np.zeros(p.G)
        delivered_gp = np.zeros((p.G, self._n_placements)) if placements else None

        if win_rows.size:
            qw = q[win_rows]
            cum = np.cumsum(qw, axis=1)
            target = u[win_rows] * cum[:, -1]
            sampled = np.minimum(
                (cum < target[:, None]).sum(axis=1), p.K - 1
            )
            sampled_full[win_rows] = sampled
            if self.accumulation == "expected":
                qg = qw[:, p.goal_campaign] * theta[win_rows]
                delivered += qg.sum(axis=0)
                if placements:
                    np.add.at(
                        delivered_gp.T, codes[win_rows], qg
                    )
            else:
                x = self._realized_outcomes(match[win_rows], rows[win_rows])
                if p.single_goal:
                    picks = x[np.arange(win_rows.size), sampled]
                    delivered += np.bincount(sampled, weights=picks, minlength=p.G)
                    if placements:
                        np.add.at(
                            delivered_gp, (sampled, codes[win_rows]), picks
                        )
                else:
                    for k in np.unique(sampled):
                        sel = sampled == k
                        lo, hi = p.offsets[k], p.offsets[k + 1]
                        block = x[sel, lo:hi]
                        delivered[lo:hi] += block.sum(axis=0)
                        if placements:
                            np.add.at(
                                delivered_gp[lo:hi].T, codes[win_rows][sel], block
                            )

        return BatchResult(
            delivered=delivered,
            rtb_revenue_cpm=float(revenue.sum()),
            auctions_won=int(win_rows.size),
            batch_size=m,
            bids=bids if collect else None,
            won=won if collect else None,
            sampled=sampled_full if collect else None,
            revenue_cpm=revenue if collect else None,
            delivered_by_placement=delivered_gp,
        )

    def _second_price_bids(self, scores, codes):
        """Coupled (bid, allocation) solve against the fitted bid tables."""
        m = scores.shape[0]
        bids = np.empty(m)
        if self.mode == "hard_argmax":
            q, effective = self._allocation_from_scores(scores)
            for code, table in enumerate(self._bid_tables):
                sel = codes == code
                if sel.any():
                    bids[sel] = table.optimal_bids(effective[sel])
            return q, bids
        rho = self.temperature
        win_prob = np.empty(m)
        for code, table in enumerate(self._bid_tables):
            sel = codes == code
            if sel.any():
                bids[sel] = table.optimal_bids(scores[sel].max(axis=1))
        for _ in range(100):
            for code, table in enumerate(self._bid_tables):
                sel = codes == code
                if sel.any():
                    win_prob[sel] = table.win_probability(bids[sel])
            logits = scores * (win_prob / rho)[:, None]
            logits -= logits.max(axis=1, keepdims=True)
            q = np.exp(logits)
            q /= q.sum(axis=1, keepdims=True)
            effective = np.einsum("ij,ij->i", q, scores)
            target = np.empty(m)
            for code, table in enumerate(self._bid_tables):
                sel = codes == code
                if sel.any():
                    target[sel] = table.optimal_bids(effective[sel])
            new_bids = bids + 0.5 * (target - bids)
            delta = np.abs(new_bids - bids)
            bids = new_bids
            if np.all(delta <= 1e-6 * (1.0 + bids)):
                return q, bids
        from .auction import NonConvergenceError

        raise NonConvergenceError(
            "batch bid/allocation fixed point did not converge",
            last_iterate=float(bids.mean()),
        )

    def _grouped_state(self, weights: np.ndarray):
        rho = self.temperature
        w_int = weights[self._order]
        shift = float(w_int.max())
        ew = np.exp((w_int - shift) / rho)
        e0 = np.exp(-shift / rho)
        s1 = np.add.reduceat(ew, self._group_starts)
        t = np.add.reduceat(w_int * ew, self._group_starts)
        # per-group cumulative weights; a global cumsum would absorb small
        # groups below the float resolution of the running total
        seg_by_group = [
            np.cumsum(ew[start : start + cnt])
            for start, cnt in zip(self._group_starts, self._group_counts)
        ]
        return w_int, ew, e0, s1, t, seg_by_group

    def _run_batch_grouped(self, weights, rows, rng, collect, placements=False) -> BatchResult:
        p = self.portfolio
        m = rows.size
        _, ew, e0, s1, t, seg_by_group = self._grouped_state(weights)
        counts = self._group_counts_f
        a = self._active[rows].astype(np.float64)
        denom = a @ s1 + (p.K - a @ counts) * e0
        numer = a @ t
        bids = numer / denom
        highest = self.log.highest[rows]
        won = bids >= highest
        revenue = np.where(won, 0.0, highest)

        u = rng.random(m)
        win_rows = np.flatnonzero(won)
        sampled_full = np.full(m, -1, dtype=np.int64)
        delivered = np.zeros(p.G)
        delivered_gp = np.zeros((p.G, self._n_placements)) if placements else None

        if win_rows.size:
            if self.accumulation == "expected":
                inv = a[win_rows] / denom[win_rows, None]
                per_group = inv.sum(axis=0)
                delivered_internal = ew * per_group[self._group_of_internal]
                delivered += delivered_internal[self._inverse_order]
                # placement attribution for expected mode
                if placements:
                    codes_w = self.log.placement_codes[rows[win_rows]]
                    for code in range(self._n_placements):
                        sel = codes_w == code
                        if sel.any():
                            pg = inv[sel].sum(axis=0)
                            di = ew * pg[self._group_of_internal]
                            delivered_gp[:, code] += di[self._inverse_order]
            else:
                active_w = self._active[rows[win_rows]]
                masses = np.where(active_w, s1[None, :], (counts * e0)[None, :])
                cum = np.cumsum(masses, axis=1)
                target = u[win_rows] * cum[:, -1]
                gidx = np.minimum(
                    (cum < target[:, None]).sum(axis=1), s1.size - 1
                )
                prev = np.where(gidx > 0, np.take_along_axis(
                    cum, np.maximum(gidx - 1, 0)[:, None], axis=1
                )[:, 0], 0.0)
                residual = target - prev
                internal = np.empty(win_rows.size, dtype=np.int64)
                was_active = active_w[np.arange(win_rows.size), gidx]
                for g in np.unique(gidx):
                    sel = gidx == g
                    start, cnt = self._group_starts[g], int(self._group_counts[g])
                    seg = seg_by_group[g]
                    act = sel & was_active
                    if act.any():
                        pos = np.minimum(
                            np.searchsorted(seg, residual[act], side="right"),
                            cnt - 1,
                        )
                        internal[act] = start + pos
                    inact = sel & ~was_active
                    if inact.any():
                        pos = np.minimum(
                            (residual[inact] / max(e0, 1e-300)).astype(np.int64),
                            cnt - 1,
                        )
                        internal[inact] = start + pos
                sampled = self._order[internal]
                sampled_full[win_rows] = sampled
                hits = sampled[was_active]
                delivered += np.bincount(hits, minlength=p.G).astype(float)
                if placements:
                    codes_hit = self.log.placement_codes[rows[win_rows][was_active]]
                    np.add.at(delivered_gp, (hits, codes_hit), 1.0)

        return BatchResult(
            delivered=delivered,
            rtb_revenue_cpm=float(revenue.sum()),
            auctions_won=int(win_rows.size),
            batch_size=m,
            bids=bids if collect else None,
            won=won if collect else None,
            sampled=sampled_full if collect else None,
            revenue_cpm=revenue if collect else None,
            delivered_by_placement=delivered_gp,
        )

    # -- full-log evaluation -------------------------------------------------

    def evaluate(
        self, weights: np.ndarray, seed: int, threads: int = 1,
        collect_outcomes: bool = False,
    ):
        n = len(self.log)
        chunks = [
            np.arange(lo, min(lo + EVAL_CHUNK, n))
            for lo in range(0, n, EVAL_CHUNK)
        ]

        def work(item):
            idx, rows = item
            return self.run_batch(
                weights, rows, eval_stream(seed, idx),
                collect=collect_outcomes, placements=True,
            )

        if threads > 1 and len(chunks) > 1:
            from concurrent.futures import ThreadPoolExecutor

            with ThreadPoolExecutor(max_workers=threads) as pool:
                results = list(pool.map(work, enumerate(chunks)))
        else:
            results = [work(item) for item in enumerate(chunks)]

        delivered = np.zeros(self.portfolio.G)
        revenue = 0.0
        won = 0
        delivered_gp = np.zeros((self.portfolio.G, self._n_placements))
        outcome_parts = []
        for res in results:
            delivered += res.delivered
            revenue += res.rtb_revenue_cpm
            won += res.auctions_won
            if res.delivered_by_placement is not None:
                delivered_gp += res.delivered_by_placement
            if collect_outcomes:
                outcome_parts.append(res)
        out = {
            "delivered": delivered,
            "rtb_revenue_cpm": revenue,
            "auctions_won": won,
            "auctions_total": n,
            "delivered_by_placement": delivered_gp,
        }
        if collect_outcomes:
            out["bids"] = np.concatenate([r.bids for r in outcome_parts])
            out["won_mask"] = np.concatenate([r.won for r in outcome_parts])
            out["sampled"] = np.concatenate([r.sampled for r in outcome_parts])
            out["revenue_cpm"] = np.concatenate([r.revenue_cpm for r in outcome_parts])
        return out
