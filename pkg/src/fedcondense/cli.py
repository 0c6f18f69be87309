"""Command-line harness: run, generate-data, theory-check, ablate-refresh,
faithfulness, report."""

from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

from .artifacts import write_summary
from .config import ExperimentConfig, load_config
from .errors import ConfigError, InvariantViolation
from .experiment import (
    run_experiment,
    run_faithfulness_experiment,
    run_refresh_ablation,
)
from .graph import save_tag
from .theory import run_theory_checks

log = logging.getLogger("fedcondense")


def _apply_overrides(cfg: ExperimentConfig, args: argparse.Namespace) -> ExperimentConfig:
    if getattr(args, "out", None):
        cfg.out_dir = args.out
    if getattr(args, "seed", None) is not None:
        cfg.seeds = [args.seed]
    cfg.validate()
    return cfg


def _cmd_run(args: argparse.Namespace) -> int:
    cfg = _apply_overrides(load_config(args.config), args)
    summary = run_experiment(cfg, quiet=args.quiet)
    if not args.quiet:
        print(json.dumps(summary["accuracy"], sort_keys=True))
    return 0


def _cmd_generate_data(args: argparse.Namespace) -> int:
    cfg = _apply_overrides(load_config(args.config), args)
    if cfg.dataset.source != "synthetic":
        raise ConfigError("generate-data needs a synthetic dataset section")
    from .experiment import make_dataset

    tag = make_dataset(cfg, cfg.seeds[0])
    node_file, edge_file = save_tag(tag, cfg.out_dir)
    if not args.quiet:
        print(f"wrote {node_file} and {edge_file}")
    return 0


def _cmd_theory_check(args: argparse.Namespace) -> int:
    seed = args.seed if args.seed is not None else 0
    results = run_theory_checks(seed=seed, fault=args.inject_fault)
    failed = [r for r in results if not r.passed]
    for result in results:
        print(result.line())
    if args.out:
        out = Path(args.out)
        out.mkdir(parents=True, exist_ok=True)
        payload = [
            {
                "name": r.name,
                "passed": r.passed,
                "cases": r.cases,
                "failures": r.failures,
                "worst_slack": r.worst_slack,
                "failing_instance": r.failing_instance,
            }
            for r in results
        ]
        write_summary({"seed": seed, "fault": args.inject_fault, "checks": payload}, out / "theory_checks.json")
    if failed:
        for r in failed:
            if r.failing_instance is not None:
                print(f"failing instance for {r.name}: {json.dumps(r.failing_instance)}", file=sys.stderr)
        return 1
    return 0


def _cmd_ablate_refresh(args: argparse.Namespace) -> int:
    cfg = _apply_overrides(load_config(args.config), args)
    result = run_refresh_ablation(cfg)
    if not args.quiet:
        for policy, stats in result["accuracy_by_policy"].items():
            print(f"{policy:12s} acc={stats['mean']:.4f} +/- {stats['std']:.4f}")
        for policy, stats in result["paired_diff_vs_full"].items():
            print(f"full - {policy:12s} = {stats['mean']:+.4f}")
    return 0


def _cmd_faithfulness(args: argparse.Namespace) -> int:
    cfg = _apply_overrides(load_config(args.config), args)
    report = run_faithfulness_experiment(cfg, run_dir=args.run_dir or cfg.out_dir)
    if not args.quiet:
        print(json.dumps(report.means(), sort_keys=True))
    return 0


def _cmd_report(args: argparse.Namespace) -> int:
    cfg = _apply_overrides(load_config(args.config), args)
    out = Path(cfg.out_dir)
    summary_path = out / "summary.json"
    if not summary_path.exists():
        raise ConfigError(f"no summary.json under {out}; run the experiment first")
    summary = json.loads(summary_path.read_text())
    print(json.dumps(summary, indent=1, sort_keys=True))
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="fedcondense",
        description="Federated condensation of text-attributed graphs with budgeted evidence",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    def add_common(p: argparse.ArgumentParser, config_required: bool = True) -> None:
        p.add_argument("--config", required=config_required, help="path to the run config file")
        p.add_argument("--out", default=None, help="output directory override")
        p.add_argument("--seed", type=int, default=None, help="single-seed override")
        p.add_argument("--quiet", action="store_true")

    p_run = sub.add_parser("run", help="execute the federated simulation")
    add_common(p_run)
    p_run.set_defaults(func=_cmd_run)

    p_gen = sub.add_parser("generate-data", help="write the synthetic dataset to disk")
    add_common(p_gen)
    p_gen.set_defaults(func=_cmd_generate_data)

    p_theory = sub.add_parser("theory-check", help="run the numerical guarantee suites")
    add_common(p_theory, config_required=False)
    p_theory.add_argument(
        "--inject-fault",
        choices=["none", "no_renorm"],
        default="none",
        help="deliberately break truncation renormalization (sensitivity demo)",
    )
    p_theory.set_defaults(func=_cmd_theory_check)

    p_ablate = sub.add_parser("ablate-refresh", help="compare refresh policies on shared seeds")
    add_common(p_ablate)
    p_ablate.set_defaults(func=_cmd_ablate_refresh)

    p_faith = sub.add_parser("faithfulness", help="sufficiency/comprehensiveness masking study")
    add_common(p_faith)
    p_faith.add_argument("--run-dir", default=None, help="directory holding checkpoint_seed* files")
    p_faith.set_defaults(func=_cmd_faithfulness)

    p_report = sub.add_parser("report", help="print the summary of a finished run")
    add_common(p_report)
    p_report.set_defaults(func=_cmd_report)
    return parser


def main(argv: list[str] | None = None) -> int:
    logging.basicConfig(level=logging.INFO, format="%(levelname)s %(name)s: %(message)s")
    parser = build_parser()
    args = parser.parse_args(argv)
    if args.quiet:
        logging.getLogger().setLevel(logging.WARNING)
    try:
        return args.func(args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2
    except InvariantViolation as exc:
        print(f"invariant violation: {exc}", file=sys.stderr)
        return 3


if __name__ == "__main__":
    sys.exit(main())
