"""Command-line entry point for reproducible generate/optimize/apply runs.

Exit codes: 0 success, 1 usage or configuration error, 2 data error,
3 numerical non-convergence.
"""

from __future__ import annotations

import argparse
import json
import sys

from . import __version__
from .auction import NonConvergenceError
from .campaigns import load_campaigns, save_campaigns
from .data_io import (
    PAPER_TABLE_PROFILE,
    LogFormatError,
    generate_campaign_portfolio,
    generate_synthetic,
    load_log,
    load_profile,
    write_log,
)
from .engine import as_log
from .evaluation import (
    apply_strategy,
    convergence_curve,
    write_curve_csv,
    write_delivery_csv,
    write_report_json,
)
from .optimizer import RunConfig, load_strategy, run, save_strategy

EXIT_OK = 0
EXIT_USAGE = 1
EXIT_DATA = 2
EXIT_NONCONVERGENCE = 3


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(message)


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="rtb-alloc", description=__doc__)
    parser.add_argument("--version", action="version", version=f"rtb-alloc {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    gen_a = sub.add_parser("generate-auctions", help="write a synthetic auction log")
    gen_a.add_argument("--profile", default="paper-table",
                       help="'paper-table' or a placement-profile JSON file")
    gen_a.add_argument("--n", type=int, required=True, help="number of auctions")
    gen_a.add_argument("--seed", type=int, default=0)
    gen_a.add_argument("--out", required=True)

    gen_c = sub.add_parser("generate-campaigns", help="write a random campaign portfolio")
    gen_c.add_argument("--k", type=int, required=True, help="number of campaigns")
    gen_c.add_argument("--auctions", required=True, help="auction log the goals scale to")
    gen_c.add_argument("--seed", type=int, default=0)
    gen_c.add_argument("--out", required=True)

    opt = sub.add_parser("optimize", help="estimate a strategy on an auction log")
    opt.add_argument("--auctions", required=True)
    opt.add_argument("--campaigns", required=True)
    opt.add_argument("--out", required=True, help="strategy JSON output")
    opt.add_argument("--curve", default=None, help="also write the convergence curve CSV")
    opt.add_argument("--config", default=None, help="JSON config file (flags win)")
    opt.add_argument("--auction-type", choices=["first", "second"], default=None)
    opt.add_argument("--batch-size", type=int, default=None)
    opt.add_argument("--temperature", type=float, default=None,
                     help="entropy-regularization temperature")
    opt.add_argument("--alpha0", type=float, default=None, help="learning-rate scale")
    opt.add_argument("--epochs", type=int, default=None)
    opt.add_argument("--seed", type=int, default=None)
    opt.add_argument("--checkpoint-every", type=int, default=None)
    opt.add_argument("--init", choices=["zero", "weights", "goals"], default=None)
    opt.add_argument("--max-batches", type=int, default=None)
    opt.add_argument("--threads", type=int, default=None,
                     help="worker threads for curve evaluation")

    app = sub.add_parser("apply", help="apply a strategy and write reports")
    app.add_argument("--auctions", required=True)
    app.add_argument("--campaigns", required=True)
    app.add_argument("--strategy", required=True)
    app.add_argument("--seed", type=int, default=0)
    app.add_argument("--report", required=True,
                     help="report base path; writes <base>.delivery.csv and <base>.summary.json")
    app.add_argument("--threads", type=int, default=None)
    return parser


def _load_profile_arg(name: str):
    if name == "paper-table":
        return PAPER_TABLE_PROFILE
    return load_profile(name)


def _cmd_generate_auctions(args) -> int:
    if args.n < 1:
        raise UsageError("--n must be >= 1")
    profile = _load_profile_arg(args.profile)
    records = generate_synthetic(profile, args.n, args.seed)
    write_log(records, args.out)
    stats = as_log(records).placement_stats()
    print(f"wrote {len(records)} auctions to {args.out}")
    for p in stats.placements:
        print(
            f"  {p.placement_id}: share {p.share:.4f}, "
            f"mean bid {p.mean_bid_cpm:.2f} $CPM, "
            f"view rate {p.view_rate:.3f}, click rate {p.click_rate:.4f}"
        )
    return EXIT_OK


def _cmd_generate_campaigns(args) -> int:
    if args.k < 1:
        raise UsageError("--k must be >= 1")
    records = load_log(args.auctions)
    campaigns = generate_campaign_portfolio(args.k, records, args.seed)
    save_campaigns(campaigns, args.out)
    total_goals = sum(c.goals[0].volume for c in campaigns)
    ratio = total_goals / len(records)
    print(
        f"wrote {len(campaigns)} campaigns to {args.out} "
        f"(sum of goals / supply = {ratio:.3f})"
    )
    return EXIT_OK


def _merged_run_config(args) -> tuple[RunConfig, int]:
    file_cfg = {}
    if args.config:
        with open(args.config, encoding="utf-8") as fh:
            file_cfg = json.load(fh)
        if not isinstance(file_cfg, dict):
            raise UsageError("--config must hold a JSON object")

    def pick(flag, key, default):
        if flag is not None:
            return flag
        return file_cfg.get(key, default)

    threads = int(pick(args.threads, "threads", 0)) or None
    try:
        config = RunConfig(
            auction_type=pick(args.auction_type, "auction_type", "first"),
            batch_size=int(pick(args.batch_size, "batch_size", 1000)),
            temperature=float(pick(args.temperature, "temperature", 0.5)),
            learning_rate_scale=float(pick(args.alpha0, "alpha0", 1.0)),
            epochs=int(pick(args.epochs, "epochs", 1)),
            seed=int(pick(args.seed, "seed", 0)),
            checkpoint_every=int(pick(args.checkpoint_every, "checkpoint_every", 10)),
            init=pick(args.init, "init", "zero"),
            max_batches=(
                int(pick(args.max_batches, "max_batches", 0)) or None
            ),
        )
    except ValueError as exc:
        raise UsageError(str(exc)) from exc
    import os

    return config, threads if threads else (os.cpu_count() or 1)


def _cmd_optimize(args) -> int:
    config, threads = _merged_run_config(args)
    records = load_log(args.auctions)
    campaigns = load_campaigns(args.campaigns)
    log = as_log(records)
    if config.batch_size > len(log):
        raise UsageError(
            f"--batch-size {config.batch_size} exceeds dataset size {len(log)}"
        )
    strategy, checkpoints = run(log, campaigns, config)
    if args.curve:
        curve = convergence_curve(
            log, campaigns, checkpoints, config.seed, strategy, threads=threads
        )
        write_curve_csv(curve, args.curve)
        strategy.checkpoint_meta = [
            {"batches": p.batches, "adjusted_revenue_usd": p.adjusted_revenue_usd}
            for p in curve
        ]
        print(
            f"processed {checkpoints[-1].batches} batches; "
            f"final adjusted revenue ${curve[-1].adjusted_revenue_usd:,.2f}"
        )
    else:
        print(f"processed {checkpoints[-1].batches} batches")
    save_strategy(strategy, args.out)
    print(f"wrote strategy to {args.out}")
    return EXIT_OK


def _cmd_apply(args) -> int:
    records = load_log(args.auctions)
    campaigns = load_campaigns(args.campaigns)
    strategy = load_strategy(args.strategy)
    import os

    threads = args.threads or (os.cpu_count() or 1)
    _, report = apply_strategy(
        records, campaigns, strategy, args.seed, threads=threads
    )
    csv_path = f"{args.report}.delivery.csv"
    json_path = f"{args.report}.summary.json"
    write_delivery_csv(report, csv_path)
    write_report_json(report, json_path)
    print(
        f"RTB revenue ${report.rtb_revenue_usd:,.2f}, "
        f"penalty ${report.penalty_usd:,.2f}, "
        f"adjusted ${report.adjusted_revenue_usd:,.2f} "
        f"({report.auctions_won}/{report.auctions_total} auctions won)"
    )
    print(f"wrote {csv_path} and {json_path}")
    return EXIT_OK


_COMMANDS = {
    "generate-auctions": _cmd_generate_auctions,
    "generate-campaigns": _cmd_generate_campaigns,
    "optimize": _cmd_optimize,
    "apply": _cmd_apply,
}


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        return _COMMANDS[args.command](args)
    except UsageError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except NonConvergenceError as exc:
        print(f"numerical non-convergence: {exc}", file=sys.stderr)
        return EXIT_NONCONVERGENCE
    except (LogFormatError, FileNotFoundError) as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except (ValueError, KeyError, json.JSONDecodeError) as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return EXIT_DATA


if __name__ == "__main__":
    sys.exit(main())
