"""Command-line front end.

Verbs: ``train`` (multi-seed experiment), ``ablate`` (the centralized-
information sweep), ``verify`` (property suites), ``saliency`` (export an
input-gradient map from a checkpoint), ``summarize`` (recompute summary
statistics from CSVs).  Exit codes: 0 success, 1 test/run failure, 2
configuration error.  ``FACTORMIX_OUT`` sets the default output root.
"""

from __future__ import annotations

import argparse
import os
import sys
from pathlib import Path

from .experiment import (
    ConfigError,
    ExperimentConfig,
    config_from_file,
    config_from_items,
    run_ablation,
    run_experiment,
    summarize_directory,
)
from .suite import export_saliency, run_property_suite

EXIT_OK = 0
EXIT_FAILURE = 1
EXIT_CONFIG = 2


def _parse_overrides(pairs: list[str]) -> dict[str, str]:
    items: dict[str, str] = {}
    for pair in pairs:
        if "=" not in pair:
            raise ConfigError(f"expected key=value, got {pair!r}")
        key, value = pair.split("=", 1)
        items[key.strip()] = value.strip()
    return items


def _load_config(args) -> ExperimentConfig:
    overrides = _parse_overrides(args.set or [])
    if args.out_dir:
        overrides["out_dir"] = args.out_dir
    elif "out_dir" not in overrides and os.environ.get("FACTORMIX_OUT"):
        overrides.setdefault("out_dir", os.environ["FACTORMIX_OUT"])
    if args.config:
        return config_from_file(args.config, overrides)
    return config_from_items(overrides)


def _add_config_args(parser: argparse.ArgumentParser) -> None:
    parser.add_argument("--config", help="flat key=value configuration file")
    parser.add_argument("--set", action="append", metavar="KEY=VALUE",
                        help="override a configuration key (repeatable)")
    parser.add_argument("--out-dir", help="output directory (overrides config)")


def cmd_train(args) -> int:
    config = _load_config(args)
    result = run_experiment(config)
    row = result.summary_row()
    print(f"train: {row['algorithm']} central_info={row['central_info']} "
          f"seeds={row['seeds']} final_return={row['mean_final_return']:.3f} "
          f"+- {row['stderr_final_return']:.3f}")
    for seed, err in sorted(result.failures.items()):
        print(f"seed {seed} FAILED:\n{err}", file=sys.stderr)
    return EXIT_FAILURE if result.failures else EXIT_OK


def cmd_ablate(args) -> int:
    config = _load_config(args)
    rows = run_ablation(config)
    print("algorithm central_info mean stderr")
    for row in rows:
        print(f"{row['algorithm']:8s} {row['central_info']:2s} "
              f"{row['mean_final_return']:8.3f} {row['stderr_final_return']:6.3f}")
    return EXIT_OK


def cmd_verify(args) -> int:
    report = run_property_suite(
        scope=args.scope,
        igm_samples=args.igm_samples,
        invariance_draws=args.invariance_draws,
        invariance_states=args.invariance_states,
        monotonicity_samples=args.monotonicity_samples,
        expressiveness_tables=args.expressiveness_tables,
        seed=args.seed,
        break_monotonicity=args.break_monotonicity,
        break_lambda=args.break_lambda,
    )
    for line in report.lines:
        print(line)
    print(f"verify: {report.checks} checks, {report.failures} failures")
    return EXIT_OK if report.passed else EXIT_FAILURE


def cmd_saliency(args) -> int:
    out = args.out or str(Path(args.checkpoint).with_suffix(".saliency.csv"))
    result = export_saliency(args.checkpoint, out, step_index=args.step,
                             agent_index=args.agent)
    flag = " (all-zero map)" if result["all_zero"] else ""
    print(f"saliency: wrote {out}{flag}")
    return EXIT_OK


def cmd_summarize(args) -> int:
    summary = summarize_directory(args.directory)
    print(f"summarize: {summary['seeds']} seeds "
          f"mean_final_return={summary['mean_final_return']:.3f} "
          f"+- {summary['stderr_final_return']:.3f}")
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="factormix",
        description="Value-factorization experiments and property suites.",
    )
    sub = parser.add_subparsers(dest="verb", required=True)

    p_train = sub.add_parser("train", help="run a multi-seed experiment")
    _add_config_args(p_train)
    p_train.set_defaults(fn=cmd_train)

    p_ablate = sub.add_parser("ablate", help="centralized-information sweep")
    _add_config_args(p_ablate)
    p_ablate.set_defaults(fn=cmd_ablate)

    p_verify = sub.add_parser("verify", help="run property suites")
    p_verify.add_argument("scope", nargs="?", default="all",
                          help="all | igm | advantage | invariance | "
                               "monotonicity | expressiveness (prefix match)")
    p_verify.add_argument("--igm-samples", type=int, default=200)
    p_verify.add_argument("--invariance-draws", type=int, default=50)
    p_verify.add_argument("--invariance-states", type=int, default=50)
    p_verify.add_argument("--monotonicity-samples", type=int, default=1000)
    p_verify.add_argument("--expressiveness-tables", type=int, default=3)
    p_verify.add_argument("--seed", type=int, default=0)
    p_verify.add_argument("--break-monotonicity", action="store_true",
                          help="mutation: drop the abs on mixing weights")
    p_verify.add_argument("--break-lambda", action="store_true",
                          help="mutation: drop the positivity of the "
                               "attention coefficients")
    p_verify.set_defaults(fn=cmd_verify)

    p_sal = sub.add_parser("saliency", help="export a saliency map")
    p_sal.add_argument("checkpoint", help="weight-map checkpoint (.npz)")
    p_sal.add_argument("--out", help="output CSV path")
    p_sal.add_argument("--step", type=int, default=0,
                       help="greedy-trajectory step to analyze")
    p_sal.add_argument("--agent", type=int, default=0)
    p_sal.set_defaults(fn=cmd_saliency)

    p_sum = sub.add_parser("summarize", help="recompute summary from CSVs")
    p_sum.add_argument("directory")
    p_sum.set_defaults(fn=cmd_summarize)

    return parser


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.fn(args)
    except ConfigError as exc:
        print(f"configuration error: {exc}", file=sys.stderr)
        return EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())
