"""Auction mechanics: win probabilities, RTB revenue and the optimal-bid solver.

All monetary quantities are $CPM. Three bid landscapes are supported:

* ``ObservedFirstPrice`` -- a realized first-price auction with known highest
  bid, used when replaying historical or synthetic logs.
* ``ObservedSecondPrice`` -- a realized second-price auction with known
  highest and second-highest bids.
* ``ParametricSecondPrice`` -- a distributional model (CDF of the highest
  bid, its density, CDF of the second bid) used to optimize bids when the
  realized outcome is unknown.

A tie (bid equal to the highest competing bid) counts as a win for the
internal bidder.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable, Union

GRID_POINTS = 512
BISECTION_MAX_ITER = 200
SIMPSON_ABS_TOL = 1e-8


class NonConvergenceError(RuntimeError):
    """A numerical solve failed to reach its tolerance.

    ``last_iterate`` holds the best available value so callers can inspect
    or report it.
    """

    def __init__(self, message: str, last_iterate: float | None = None):
        super().__init__(message)
        self.last_iterate = last_iterate


@dataclass(frozen=True)
class ObservedFirstPrice:
    """Realized first-price auction; the loser's revenue is the highest bid."""

    highest_bid: float


@dataclass(frozen=True)
class ObservedSecondPrice:
    """Realized second-price auction; our bid can act as a price floor."""

    highest_bid: float
    second_bid: float

    def __post_init__(self):
        if not 0.0 <= self.second_bid <= self.highest_bid:
            raise ValueError(
                f"second bid must lie in [0, highest bid], got "
                f"{self.second_bid} vs {self.highest_bid}"
            )


@dataclass(frozen=True)
class ParametricSecondPrice:
    """Distributional second-price model.

    ``cdf_b``/``pdf_b`` describe the highest competing bid, ``cdf_c`` the
    second-highest. ``support_max`` bounds the bid search; the CDFs should
    be ~1 there.
    """

    cdf_b: Callable[[float], float]
    pdf_b: Callable[[float], float]
    cdf_c: Callable[[float], float]
    support_max: float

    def __post_init__(self):
        if self.support_max <= 0:
            raise ValueError("support_max must be positive")
        for name, cdf in (("cdf_b", self.cdf_b), ("cdf_c", self.cdf_c)):
            if abs(cdf(0.0)) > 1e-9:
                raise ValueError(f"{name}(0) must be 0")
            if cdf(self.support_max) < 1.0 - 1e-9:
                raise ValueError(f"{name}(support_max) must be >= 1 - 1e-9")


BidLandscape = Union[ObservedFirstPrice, ObservedSecondPrice, ParametricSecondPrice]


@dataclass(frozen=True)
class BidDecision:
    """An internal bid together with its win probability."""

    bid: float
    win_probability: float

    def __post_init__(self):
        if self.bid < 0:
            raise ValueError("bid must be nonnegative")
        if not 0.0 <= self.win_probability <= 1.0:
            raise ValueError("win probability must lie in [0, 1]")


def win_probability(landscape: BidLandscape, bid: float) -> float:
    """Probability that ``bid`` wins the auction (ties win)."""
    if bid < 0:
        raise ValueError("bid must be nonnegative")
    if isinstance(landscape, (ObservedFirstPrice, ObservedSecondPrice)):
        return 1.0 if bid >= landscape.highest_bid else 0.0
    return min(max(landscape.cdf_b(bid), 0.0), 1.0)


def rtb_revenue(landscape: BidLandscape, bid: float) -> float:
    """RTB revenue for the given bid, in $CPM.

    Observed landscapes return the realized revenue: zero on a win (the
    impression leaves the RTB channel), the highest bid under first price,
    and ``max(second_bid, bid)`` under second price. The parametric
    landscape returns the expected revenue, integrating the second-bid tail
    numerically.
    """
    if bid < 0:
        raise ValueError("bid must be nonnegative")
    if isinstance(landscape, ObservedFirstPrice):
        return landscape.highest_bid if bid < landscape.highest_bid else 0.0
    if isinstance(landscape, ObservedSecondPrice):
        if bid >= landscape.highest_bid:
            return 0.0
        return max(landscape.second_bid, bid)
    return _expected_revenue(landscape, bid)


def _expected_revenue(landscape: ParametricSecondPrice, bid: float) -> float:
    # E[1_{bid<=B} max(bid, C)] = integral_bid^smax (1 - F_c) + bid * (1 - F_b(bid))
    smax = landscape.support_max
    if bid >= smax:
        return 0.0
    tail = _adaptive_simpson(
        lambda t: 1.0 - landscape.cdf_c(t), bid, smax, SIMPSON_ABS_TOL
    )
    return tail + bid * (1.0 - landscape.cdf_b(bid))


def revenue_ratio(landscape: BidLandscape, bid: float) -> float:
    """The marginal-revenue ratio r'(a) / f_b(a).

    Equals ``-a`` under first price and
    ``-a + (F_c(a) - F_b(a)) / f_b(a)`` under a parametric second-price
    model. Undefined for observed second-price outcomes (no distribution).
    """
    if isinstance(landscape, ObservedFirstPrice):
        return -bid
    if isinstance(landscape, ObservedSecondPrice):
        raise ValueError(
            "revenue ratio is undefined for an observed second-price outcome"
        )
    if not 0.0 < bid < landscape.support_max:
        raise ValueError("bid must lie inside (0, support_max)")
    fb = landscape.pdf_b(bid)
    if fb <= 0:
        raise ValueError(f"density of the highest bid is not positive at {bid}")
    return -bid + (landscape.cdf_c(bid) - landscape.cdf_b(bid)) / fb


def _stationarity_residual(landscape: ParametricSecondPrice, bid: float, score: float) -> float:
    # r'(a) + f_b(a) * c, using the closed form r'(a) = -a f_b(a) + (F_c - F_b)(a)
    fb = landscape.pdf_b(bid)
    return -bid * fb + (landscape.cdf_c(bid) - landscape.cdf_b(bid)) + fb * score


def _bid_objective(landscape: ParametricSecondPrice, bid: float, score: float) -> float:
    # expected auction revenue when winning is worth `score`: r(a) + F_b(a) c
    return _expected_revenue(landscape, bid) + landscape.cdf_b(bid) * score


def solve_optimal_bid(landscape: BidLandscape, score: float) -> BidDecision:
    """Bid maximizing expected revenue when winning is worth ``score`` $CPM.

    First price has the closed-form solution ``bid = score``. The parametric
    second-price case maximizes ``r(a) + F_b(a) * score`` over
    ``[0, support_max]``: a coarse grid scan locates the best bracket and
    bisection on the stationarity condition refines it. When several
    stationary points exist the one with the largest objective wins.
    """
    if score < 0:
        raise ValueError("score must be nonnegative")
    if isinstance(landscape, ObservedFirstPrice):
        return BidDecision(bid=score, win_probability=win_probability(landscape, score))
    if isinstance(landscape, ObservedSecondPrice):
        raise ValueError(
            "cannot optimize a bid against an observed second-price outcome; "
            "fit a parametric landscape instead"
        )
    bid = _solve_parametric_bid(landscape, score)
    return BidDecision(bid=bid, win_probability=win_probability(landscape, bid))


def _solve_parametric_bid(landscape: ParametricSecondPrice, score: float) -> float:
    smax = landscape.support_max
    n = GRID_POINTS
    grid = [smax * i / n for i in range(n + 1)]
    values = [_bid_objective(landscape, a, score) for a in grid]
    best = max(range(n + 1), key=lambda i: values[i])

    lo = grid[max(best - 1, 0)]
    hi = grid[min(best + 1, n)]
    tol = 1e-9 * (1.0 + score)

    g_lo = _stationarity_residual(landscape, max(lo, 1e-300), score)
    g_hi = _stationarity_residual(landscape, min(hi, smax), score)
    g_mid = _stationarity_residual(landscape, grid[best], score) if 0 < best < n else None

    # Pick the half-bracket carrying a sign change; fall back to the whole one.
    if g_mid is not None and g_lo * g_mid <= 0:
        hi, g_hi = grid[best], g_mid
    elif g_mid is not None and g_mid * g_hi <= 0:
        lo, g_lo = grid[best], g_mid
    if g_lo * g_hi > 0:
        # No sign change: the maximizer sits on the boundary of the scan.
        a_bound = grid[best]
        if abs(_stationarity_residual(landscape, max(a_bound, 1e-300), score)) <= tol:
            return a_bound
        if best in (0, n):
            return a_bound
        raise NonConvergenceError(
            f"no stationarity bracket around grid maximizer {a_bound:.6g}",
            last_iterate=a_bound,
        )

    a = 0.5 * (lo + hi)
    for _ in range(BISECTION_MAX_ITER):
        a = 0.5 * (lo + hi)
        g = _stationarity_residual(landscape, a, score)
        if abs(g) <= tol:
            return a
        if g_lo * g <= 0:
            hi = a
        else:
            lo, g_lo = a, g
        if hi - lo <= 1e-17 * smax:
            if abs(g) <= tol:
                return a
            break
    g = _stationarity_residual(landscape, a, score)
    if abs(g) <= tol:
        return a
    raise NonConvergenceError(
        f"bisection did not reach |residual| <= {tol:.3g} "
        f"(last residual {g:.3g} at bid {a:.6g})",
        last_iterate=a,
    )


def _adaptive_simpson(f: Callable[[float], float], a: float, b: float, tol: float) -> float:
    """Adaptive Simpson quadrature with absolute tolerance ``tol``."""
    if b <= a:
        return 0.0
    fa, fb = f(a), f(b)
    m = 0.5 * (a + b)
    fm = f(m)
    whole = (b - a) / 6.0 * (fa + 4.0 * fm + fb)
    return _simpson_recurse(f, a, b, fa, fb, m, fm, whole, tol, depth=50)


def _simpson_recurse(f, a, b, fa, fb, m, fm, whole, tol, depth):
    lm = 0.5 * (a + m)
    rm = 0.5 * (m + b)
    flm, frm = f(lm), f(rm)
    left = (m - a) / 6.0 * (fa + 4.0 * flm + fm)
    right = (b - m) / 6.0 * (fm + 4.0 * frm + fb)
    if depth <= 0 or abs(left + right - whole) <= 15.0 * tol:
        return left + right + (left + right - whole) / 15.0
    half = 0.5 * tol
    return _simpson_recurse(f, a, m, fa, fm, lm, flm, left, half, depth - 1) + _simpson_recurse(
        f, m, b, fm, fb, rm, frm, right, half, depth - 1
    )


def _norm_cdf(x: float) -> float:
    return 0.5 * (1.0 + math.erf(x / math.sqrt(2.0)))


def lognormal_cdf(x: float, mu: float, sigma: float) -> float:
    if x <= 0:
        return 0.0
    return _norm_cdf((math.log(x) - mu) / sigma)


def lognormal_pdf(x: float, mu: float, sigma: float) -> float:
    if x <= 0:
        return 0.0
    z = (math.log(x) - mu) / sigma
    return math.exp(-0.5 * z * z) / (x * sigma * math.sqrt(2.0 * math.pi))


def fit_lognormal_landscape(
    highest_bids, second_bids, support_max: float | None = None
) -> ParametricSecondPrice:
    """Fit a lognormal landscape by method of moments on log-bids.

    ``second_bids`` may contain zeros (single-buyer auctions); those are
    excluded from the second-bid fit. The default search bound is twice the
    99.99th bid percentile.
    """
    import numpy as np

    b = np.asarray(highest_bids, dtype=float)
    if b.size == 0 or np.any(b <= 0):
        raise ValueError("highest bids must be positive and nonempty")
    c = np.asarray(second_bids, dtype=float)
    c = c[c > 0]
    if c.size == 0:
        raise ValueError("need at least one positive second bid to fit")
    log_b = np.log(b)
    log_c = np.log(c)
    mu_b, sigma_b = float(log_b.mean()), float(log_b.std()) or 1e-6
    mu_c, sigma_c = float(log_c.mean()), float(log_c.std()) or 1e-6
    if support_max is None:
        support_max = 2.0 * float(np.percentile(b, 99.99))
    # Truncate-and-rescale so the CDFs actually reach 1 at support_max.
    top_b = lognormal_cdf(support_max, mu_b, sigma_b)
    top_c = lognormal_cdf(support_max, mu_c, sigma_c)
    if top_b <= 0.5 or top_c <= 0.5:
        raise ValueError("support_max too small for the fitted distributions")
    return ParametricSecondPrice(
        cdf_b=lambda x: min(lognormal_cdf(x, mu_b, sigma_b) / top_b, 1.0),
        pdf_b=lambda x: lognormal_pdf(x, mu_b, sigma_b) / top_b,
        cdf_c=lambda x: min(lognormal_cdf(x, mu_c, sigma_c) / top_c, 1.0),
        support_max=float(support_max),
    )
