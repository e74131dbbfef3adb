# main.py
"""
Command-line entry point for tdnas, differentiable architecture search over
factored time-delay networks.

Usage:

    python main.py gen-data --config run.cfg
    python main.py search   --config run.cfg [--method pipe-gumbel] [--eta 0.1] [--resume]
    python main.py extract  --config run.cfg [--top 3]
    python main.py retrain  --config run.cfg
    python main.py oracle   --config run.cfg
    python main.py baseline --config run.cfg
    python main.py report   --config run.cfg
    python main.py pipeline --config run.cfg

Every command also takes --seed <int> and --out <dir>.
"""
from __future__ import annotations

import argparse
import sys
from typing import List, Optional

from tdnas import config
from tdnas.errors import TdnasError
from tdnas.lattice import format_candidate
from tdnas.log import configure_logging
from tdnas.pipeline import (
    run_pipeline,
    step_baseline,
    step_extract,
    step_gen_data,
    step_oracle,
    step_report,
    step_retrain,
    step_search,
)
from tdnas.run_config import RunConfig, parse_config


def cmd_gen_data(cfg: RunConfig, args: argparse.Namespace) -> int:
    path = step_gen_data(cfg)
    print(f"Generated {cfg.data.num_sequences} {cfg.data.kind} sequences to: {path}")
    return 0


def cmd_search(cfg: RunConfig, args: argparse.Namespace) -> int:
    summary = step_search(cfg, resume=args.resume)
    print(f"{summary['method']} search finished after {summary['steps']} steps.")
    print(f"Saved super-network to: {summary['checkpoint']}")
    print(f"Saved lambda trajectory to: {summary['trajectory']}")
    print(f"Top-1 architecture (prob={summary['top1_prob']:.6f}):")
    print(summary["top1"])
    if "two_stage" in summary:
        print(f"Saved two-stage selection to: {summary['two_stage']}")
    return 0


def cmd_extract(cfg: RunConfig, args: argparse.Namespace) -> int:
    best = step_extract(cfg)
    print(f"Wrote {len(best)} candidates to: {cfg.paths.artifact(config.TOPN_FILE)}")
    for k, (cand, prob) in enumerate(best, start=1):
        print(f"#{k} prob={prob:.6f}  {format_candidate(cand, cfg.space).replace(chr(10), '; ')}")
    return 0


def cmd_retrain(cfg: RunConfig, args: argparse.Namespace) -> int:
    table = step_retrain(cfg)
    print(f"Retrained {len(table)} candidates from scratch.")
    print(table.to_string(index=False))
    return 0


def cmd_oracle(cfg: RunConfig, args: argparse.Namespace) -> int:
    report = step_oracle(cfg)
    print(f"Oracle retrained {len(report.candidates)} candidates.")
    print(f"Spearman: {report.spearman}  Kendall: {report.kendall}")
    print(f"NAS top-1 oracle rank: {report.nas_top1_oracle_rank}")
    return 0


def cmd_baseline(cfg: RunConfig, args: argparse.Namespace) -> int:
    result = step_baseline(cfg)
    print(f"Random-search baseline over {len(result.table)} samples selected:")
    print(format_candidate(result.best, cfg.space))
    return 0


def cmd_report(cfg: RunConfig, args: argparse.Namespace) -> int:
    print(step_report(cfg), end="")
    return 0


def cmd_pipeline(cfg: RunConfig, args: argparse.Namespace) -> int:
    print(run_pipeline(cfg), end="")
    return 0


COMMANDS = {
    "gen-data": cmd_gen_data,
    "search": cmd_search,
    "extract": cmd_extract,
    "retrain": cmd_retrain,
    "oracle": cmd_oracle,
    "baseline": cmd_baseline,
    "report": cmd_report,
    "pipeline": cmd_pipeline,
}


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="tdnas", description=__doc__.splitlines()[1])
    sub = parser.add_subparsers(dest="command", required=True)
    for name in COMMANDS:
        p = sub.add_parser(name)
        p.add_argument("--config", required=True, help="run configuration file")
        p.add_argument("--seed", type=int, help="override [train] seed and [data] seed")
        p.add_argument("--out", help="output directory")
        p.add_argument("--top", type=int, help="number of candidates to extract")
        p.add_argument("--method", help="softmax, gumbel, pipe-softmax or pipe-gumbel")
        p.add_argument("--eta", type=float, help="complexity penalty weight")
        p.add_argument("--log-level", default=None)
        if name == "search":
            p.add_argument("--resume", action="store_true", help="continue from the saved checkpoint")
    return parser


def main(argv: Optional[List[str]] = None) -> int:
    args = build_parser().parse_args(argv)
    configure_logging(args.log_level)
    try:
        cfg = parse_config(args.config).with_overrides(
            seed=args.seed, out=args.out, top=args.top, method=args.method, eta=args.eta
        )
        return COMMANDS[args.command](cfg, args)
    except (TdnasError, ValueError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
