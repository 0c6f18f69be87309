"""Acceptance criteria, one test per criterion at its stated tolerance.

Run with `pytest tests/test_acceptance.py -s` to see the per-criterion
pass/fail lines. The expensive federated runs are shared session fixtures.
"""

from __future__ import annotations

import copy
import time

import numpy as np
import pytest

from fedcondense.config import DatasetConfig, ExperimentConfig, RunSettings
from fedcondense.errors import LedgerViolation
from fedcondense.experiment import run_refresh_ablation
from fedcondense.faithfulness import FaithfulnessReport, evaluate_faithfulness
from fedcondense.federation import Simulation
from fedcondense.graph import generate_synthetic_tag
from fedcondense.theory import (
    gradient_suite,
    ista_descent_suite,
    quota_suite,
    sparsemax_oracle_suite,
    stability_suite,
    truncation_suite,
)

SEEDS = [0, 1, 2, 3, 4]
ACCEPT_ROUNDS = 50


def emit(name: str, passed: bool, detail: str) -> None:
    print(f"\n[{'PASS' if passed else 'FAIL'}] {name}: {detail}")
    assert passed, f"{name}: {detail}"


def accept_settings(**kw) -> RunSettings:
    base = dict(rounds=ACCEPT_ROUNDS, clients=5, ratio=0.08, b1=3, b2=2, b_tok=4)
    base.update(kw)
    return RunSettings(**base)


@pytest.fixture(scope="session")
def budget_run():
    """50-round default synthetic run with per-round budget observations."""
    tag = generate_synthetic_tag(4, 100, 0.06, 0.02, seed=0)
    sim = Simulation(tag, accept_settings(), seed=0)
    start = time.monotonic()
    observations = []
    for _ in range(ACCEPT_ROUNDS):
        report = sim.run_round()
        per_round = {"hop_violations": 0, "tok_violations": 0, "agg_violations": 0}
        for client in sim.clients:
            k_core = len(client.states)
            total = 0
            for st in client.states:
                for gate in st.gates:
                    if gate.support.size > sim.budgets.hop_budget(gate.hop):
                        per_round["hop_violations"] += 1
                nnz = int(st.chunks.support.size)
                if nnz > sim.budgets.b_tok:
                    per_round["tok_violations"] += 1
                total += nnz
            if total > k_core * sim.budgets.b_tok:
                per_round["agg_violations"] += 1
        per_round["tokens"] = report.tokens_per_core_node
        per_round["tokens_unbudgeted"] = report.tokens_unbudgeted_per_core_node
        observations.append(per_round)
    elapsed = time.monotonic() - start
    return sim, observations, elapsed


def test_budget_guarantees(budget_run):
    sim, observations, elapsed = budget_run
    hop = sum(o["hop_violations"] for o in observations)
    tok = sum(o["tok_violations"] for o in observations)
    agg = sum(o["agg_violations"] for o in observations)
    ok = hop == 0 and tok == 0 and agg == 0 and elapsed < 120.0
    emit(
        "budget-guarantees",
        ok,
        f"{len(observations)} rounds, hop/tok/aggregate violations = {hop}/{tok}/{agg}, "
        f"runtime {elapsed:.1f}s < 120s",
    )


def test_truncation_bound_criterion():
    start = time.monotonic()
    result = truncation_suite(instances=1000, dim=16, seed=0)
    elapsed = time.monotonic() - start
    ok = result.passed and elapsed < 5.0
    emit(
        "truncation-bound",
        ok,
        f"{result.cases} instances, {result.failures} failures, "
        f"min slack {result.worst_slack:.2e} (tight witness included), {elapsed:.2f}s < 5s",
    )


def test_sparsemax_oracle_criterion():
    start = time.monotonic()
    result = sparsemax_oracle_suite(instances=500, max_n=6, seed=0)
    elapsed = time.monotonic() - start
    ok = result.passed and result.worst_slack <= 1e-9 and elapsed < 5.0
    emit(
        "sparsemax-oracle",
        ok,
        f"{result.cases} vectors vs support enumeration, max |diff| {result.worst_slack:.2e} <= 1e-9, "
        f"{elapsed:.2f}s < 5s",
    )


def test_stability_criterion():
    start = time.monotonic()
    result = stability_suite(instances=200, trials=50, min_margin=0.1, seed=0)
    elapsed = time.monotonic() - start
    ok = result.passed and elapsed < 5.0
    emit(
        "selection-stability",
        ok,
        f"{result.cases} score vectors x 50 perturbations invariant, sharpness witness flips, "
        f"{elapsed:.2f}s < 5s",
    )


def test_gradient_checks_criterion():
    start = time.monotonic()
    result = gradient_suite(seed=0, tol=1e-4)
    elapsed = time.monotonic() - start
    ok = result.passed and elapsed < 30.0
    emit(
        "gradient-checks",
        ok,
        f"max relative error {result.worst_slack:.2e} < 1e-4 {result.detail}, {elapsed:.1f}s < 30s",
    )


def test_ista_descent_criterion():
    start = time.monotonic()
    result = ista_descent_suite(instances=100, seed=0)
    elapsed = time.monotonic() - start
    ok = result.passed and elapsed < 30.0
    emit(
        "ista-descent",
        ok,
        f"{result.cases} instances monotone within 1e-9 (worst rise {result.worst_slack:.2e}), "
        f"{elapsed:.1f}s < 30s",
    )


def test_quota_apportionment_criterion():
    start = time.monotonic()
    result = quota_suite(max_classes=5, max_count=8)
    elapsed = time.monotonic() - start
    ok = result.passed and elapsed < 10.0
    emit(
        "quota-apportionment",
        ok,
        f"{result.cases} exhaustive cases match the seat-by-seat oracle, {elapsed:.1f}s < 10s",
    )


def test_privacy_contract(budget_run):
    sim, _, _ = budget_run
    kinds = sim.ledger.kinds()
    pure = kinds <= {"model_broadcast", "model_delta"}
    try:
        sim.ledger.record(1, "evidence_pack", 128, 0)
        mutation_failed = False
    except LedgerViolation:
        mutation_failed = True
    before = len([e for e in sim.ledger.entries if e.kind == "evidence_pack"])
    ok = pure and mutation_failed and before == 0
    emit(
        "privacy-contract",
        ok,
        f"ledger kinds {sorted(kinds)} only; shipping an evidence pack raises LedgerViolation",
    )


def test_token_budget_accounting(budget_run):
    sim, observations, _ = budget_run
    cap = sim.budgets.b_tok * sim.settings.window
    within = all(o["tokens"] <= cap + 1e-9 for o in observations)
    below_unbudgeted = all(o["tokens"] < o["tokens_unbudgeted"] for o in observations)
    mean_sel = float(np.mean([o["tokens"] for o in observations]))
    mean_unb = float(np.mean([o["tokens_unbudgeted"] for o in observations]))
    reduction = 1.0 - mean_sel / mean_unb
    ok = within and below_unbudgeted
    emit(
        "token-budget-accounting",
        ok,
        f"tokens/core {mean_sel:.1f} <= cap {cap} every round; "
        f"reduction vs unbudgeted pipeline {reduction:.1%}",
    )


@pytest.fixture(scope="session")
def ablation_results():
    cfg = ExperimentConfig(
        dataset=DatasetConfig(),
        settings=accept_settings(),
        seeds=list(SEEDS),
        out_dir="unused",
    )
    start = time.monotonic()
    result = run_refresh_ablation(cfg, write_outputs=False)
    return result, time.monotonic() - start


def test_refresh_ablation(ablation_results):
    result, elapsed = ablation_results
    table = result["accuracy_by_policy"]
    paired = result["paired_diff_vs_full"]
    full = table["full"]["mean"]
    static = table["static"]["mean"]
    rand = table["random_core"]["mean"]
    ok = (
        full >= static
        and full >= rand
        and paired["static"]["mean"] > 0
        and paired["random_core"]["mean"] > 0
        and elapsed < 600.0
    )
    emit(
        "refresh-ablation",
        ok,
        f"mean acc full={full:.3f} >= static={static:.3f} (gap {paired['static']['mean']:+.3f}), "
        f">= random-core={rand:.3f} (gap {paired['random_core']['mean']:+.3f}), "
        f"5 paired seeds, {elapsed:.0f}s < 600s",
    )


@pytest.fixture(scope="session")
def faithfulness_results():
    settings = accept_settings(rounds=30)
    report = FaithfulnessReport()
    start = time.monotonic()
    for seed in SEEDS:
        tag = generate_synthetic_tag(4, 100, 0.06, 0.02, seed=seed)
        sim = Simulation(tag, copy.deepcopy(settings), seed=seed)
        sim.run()
        report.append(evaluate_faithfulness(tag, copy.deepcopy(settings), sim.model, seed))
    return report, time.monotonic() - start


def test_faithfulness(faithfulness_results):
    report, elapsed = faithfulness_results
    means = report.means()
    ok = (
        means["sufficiency"] >= means["random_keep"]
        and means["comprehensiveness"] <= means["random_remove"]
        and elapsed < 300.0
    )
    emit(
        "faithfulness",
        ok,
        f"sufficiency {means['sufficiency']:.3f} >= random-keep {means['random_keep']:.3f}; "
        f"comprehensiveness {means['comprehensiveness']:.3f} <= random-remove "
        f"{means['random_remove']:.3f}; 5 paired seeds, {elapsed:.0f}s < 300s",
    )
