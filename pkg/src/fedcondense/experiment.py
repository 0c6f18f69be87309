"""Experiment drivers shared by the CLI and the acceptance suite."""

from __future__ import annotations

import copy
import logging
from pathlib import Path

import numpy as np

from .artifacts import (
    load_checkpoint,
    save_checkpoint,
    write_round_reports,
    write_rounds_csv,
    write_summary,
)
from .config import ExperimentConfig
from .errors import ConfigError
from .faithfulness import FaithfulnessReport, evaluate_faithfulness
from .federation import Simulation
from .graph import TextAttributedGraph, generate_synthetic_tag, load_tag

log = logging.getLogger(__name__)

ABLATION_POLICIES = ("full", "static", "core_only", "text_only", "random_core")


def make_dataset(cfg: ExperimentConfig, seed: int) -> TextAttributedGraph:
    """Dataset for one seed: synthetic graphs are regenerated per seed so
    paired comparisons across variants stay on identical data."""
    ds = cfg.dataset
    if ds.source == "synthetic":
        return generate_synthetic_tag(
            classes=ds.classes,
            nodes_per_class=ds.nodes_per_class,
            p_in=ds.p_in,
            p_out=ds.p_out,
            seed=seed,
        )
    return load_tag(ds.path)


def _mean_std(values: list[float]) -> dict[str, float]:
    arr = np.asarray(values, dtype=np.float64)
    return {"mean": float(arr.mean()), "std": float(arr.std()), "per_seed": values}


def run_experiment(cfg: ExperimentConfig, write_outputs: bool = True, quiet: bool = False) -> dict:
    """Full multi-seed run: round reports, checkpoints, packs, summary."""
    cfg.validate()
    out = Path(cfg.out_dir)
    final_acc: list[float] = []
    final_f1: list[float] = []
    token_reduction: list[float] = []
    csv_rows: list[dict] = []

    for seed in cfg.seeds:
        tag = make_dataset(cfg, seed)
        pack_dir = str(out / f"seed{seed}" / "packs") if write_outputs else None
        sim = Simulation(tag, copy.deepcopy(cfg.settings), seed, pack_dir=pack_dir)
        reports = sim.run()
        last = reports[-1]
        final_acc.append(last.acc if last.acc is not None else float("nan"))
        final_f1.append(last.macro_f1 if last.macro_f1 is not None else float("nan"))
        if last.tokens_unbudgeted_per_core_node > 0:
            token_reduction.append(
                1.0 - last.tokens_per_core_node / last.tokens_unbudgeted_per_core_node
            )
        for rep in reports:
            row = {"seed": seed}
            row.update(rep.to_json_obj())
            csv_rows.append(row)
        if write_outputs:
            write_round_reports(reports, out / f"rounds_seed{seed}.jsonl")
            save_checkpoint(sim.model, out / f"checkpoint_seed{seed}")
        if not quiet:
            log.info(
                "seed %d: final acc=%s macro_f1=%s tokens/core=%.1f",
                seed, last.acc, last.macro_f1, last.tokens_per_core_node,
            )

    summary = {
        "config": cfg.resolved(),
        "accuracy": _mean_std(final_acc),
        "macro_f1": _mean_std(final_f1),
        "token_reduction": _mean_std(token_reduction) if token_reduction else None,
    }
    if write_outputs:
        write_summary(summary, out / "summary.json")
        write_rounds_csv(csv_rows, out / "rounds.csv")
    return summary


def run_refresh_ablation(cfg: ExperimentConfig, write_outputs: bool = True) -> dict:
    """Shared-seed comparison of the refresh policies.

    All variants of one seed run on the same dataset and initialization; the
    non-randomized variants must agree on their round-1 condensation digest.
    """
    cfg.validate()
    if len(cfg.seeds) < 3:
        raise ConfigError("refresh ablation needs at least 3 seeds")
    out = Path(cfg.out_dir)
    acc: dict[str, list[float]] = {p: [] for p in ABLATION_POLICIES}
    first_round_digests: dict[int, dict[str, str]] = {}

    for seed in cfg.seeds:
        tag = make_dataset(cfg, seed)
        for policy in ABLATION_POLICIES:
            settings = copy.deepcopy(cfg.settings)
            settings.refresh_policy = policy
            sim = Simulation(tag, settings, seed)
            reports = sim.run()
            acc[policy].append(reports[-1].acc if reports[-1].acc is not None else float("nan"))
            first_round_digests.setdefault(seed, {})[policy] = reports[0].condensation_digest

    for seed, digests in first_round_digests.items():
        aligned = {digests[p] for p in ("full", "static", "core_only", "text_only")}
        if len(aligned) != 1:
            raise AssertionError(
                f"seed {seed}: round-1 condensation artifacts differ across non-random policies"
            )

    full = np.asarray(acc["full"])
    table = {policy: _mean_std(acc[policy]) for policy in ABLATION_POLICIES}
    paired = {
        policy: _mean_std((full - np.asarray(acc[policy])).tolist())
        for policy in ABLATION_POLICIES
        if policy != "full"
    }
    result = {
        "config": cfg.resolved(),
        "accuracy_by_policy": table,
        "paired_diff_vs_full": paired,
    }
    if write_outputs:
        write_summary(result, out / "ablation.json")
    return result


def run_faithfulness_experiment(
    cfg: ExperimentConfig, run_dir: str | Path | None = None, write_outputs: bool = True
) -> FaithfulnessReport:
    """Masking evaluation against the checkpoints a previous run produced."""
    cfg.validate()
    run_dir = Path(run_dir) if run_dir is not None else Path(cfg.out_dir)
    report = FaithfulnessReport()
    for seed in cfg.seeds:
        prefix = run_dir / f"checkpoint_seed{seed}"
        if not prefix.with_suffix(".manifest.json").exists():
            raise ConfigError(f"no checkpoint for seed {seed} under {run_dir}")
        model = load_checkpoint(prefix)
        tag = make_dataset(cfg, seed)
        accs = evaluate_faithfulness(tag, copy.deepcopy(cfg.settings), model, seed)
        report.append(accs)
        log.info("seed %d faithfulness: %s", seed, accs)
    if write_outputs:
        write_summary(report.to_json_obj(), run_dir / "faithfulness.json")
    return report
