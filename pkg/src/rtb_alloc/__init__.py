"""Revenue-optimal allocation of ad impressions between real-time-bidding
auctions and direct (guaranteed) campaigns.

The library estimates a delivery strategy on historical or synthetic
auction logs (per-goal shadow prices under ReLU penalties, or expected
volumes under differentiable ones), and applies it: bid in each auction,
and on a win pick the direct campaign via an entropy-regularized
allocation.
"""

__version__ = "0.1.0"

from .allocation import (
    MODE_HARD_ARGMAX,
    MODE_REGULARIZED,
    RegularizationConfig,
    hard_allocation,
    regularized_allocation,
    sample_campaign,
    solve_auction,
)
from .auction import (
    BidDecision,
    NonConvergenceError,
    ObservedFirstPrice,
    ObservedSecondPrice,
    ParametricSecondPrice,
    fit_lognormal_landscape,
    revenue_ratio,
    rtb_revenue,
    solve_optimal_bid,
    win_probability,
)
from .campaigns import (
    Campaign,
    Goal,
    KinkError,
    TargetingSpec,
    fnv1a64,
    load_campaigns,
    penalty,
    penalty_gradient,
    save_campaigns,
    score,
    targeting_probability,
)
from .data_io import (
    PAPER_TABLE_PROFILE,
    AuctionRecord,
    LogFormatError,
    PlacementProfile,
    PlacementStats,
    benchmark_portfolio,
    estimate_placement_stats,
    generate_campaign_portfolio,
    generate_synthetic,
    load_log,
    load_profile,
    save_profile,
    shuffle,
    write_log,
)
from .evaluation import (
    CurvePoint,
    EvaluationOutcomes,
    EvaluationReport,
    apply_strategy,
    convergence_curve,
    delivery_report,
    plateau_batches,
    window_within_band,
    write_curve_csv,
    write_delivery_csv,
    write_report_json,
)
from .optimizer import (
    BatchStats,
    Checkpoint,
    OptimizerState,
    RunConfig,
    StrategyState,
    apply_strategy_to_batch,
    learning_rate,
    load_strategy,
    run,
    save_strategy,
    update_kappas,
    update_volumes,
)
from .oracle import TinyInstance, brute_force_optimal
