"""Acceptance criteria, one test per criterion, at full stated scale.

Each test prints a single PASS/FAIL line (run pytest with -s or check the
captured output). Heavy ensembles are shared across criteria through
module-scoped fixtures; every ensemble is seeded, so the whole suite is
deterministic.
"""

import itertools
import math
import os
import time
from pathlib import Path

import pytest

from reduction_sim.analysis import (
    FirstHitDistribution,
    audit_mask_obedience,
    compare_statistics,
    first_hit_oracle,
    run_ensemble,
    skip_rate,
)
from reduction_sim.cli import main
from reduction_sim.dynamics import RunConfig, TerminationReason, step
from reduction_sim.graph import (
    BrainStatus,
    Component,
    CouplingGraph,
    CurrentParams,
    Edge,
    rule4_allowed,
)
from reduction_sim.scenarios import hammer_chain, parallel_diamond, series_chain
from reduction_sim.testing import make_state

DATA_DIR = Path(__file__).resolve().parent / "data"

SEED = 42
DT = 1e-3
MAX_TIME = 50.0


def report(number: int, name: str, ok: bool, detail: str) -> None:
    print(f"ACCEPTANCE {number} ({name}): {'PASS' if ok else 'FAIL'} - {detail}")
    assert ok, f"criterion {number} ({name}): {detail}"


def config(rule4: bool, seed: int = SEED) -> RunConfig:
    return RunConfig(dt=DT, max_time=MAX_TIME, seed=seed, rule4_enabled=rule4)


def golden(name: str) -> FirstHitDistribution:
    return FirstHitDistribution.from_text((DATA_DIR / name).read_text())


def band(p: float, n: int) -> float:
    return 3.0 * math.sqrt(p * (1.0 - p) / n)


@pytest.fixture(scope="module")
def chain4_on_10k():
    saved = os.environ.pop("REDUCTION_SIM_THREADS", None)
    try:
        start = time.perf_counter()
        stats, trajectories = run_ensemble(
            series_chain(4), config(rule4=True), 10_000, return_trajectories=True
        )
        elapsed = time.perf_counter() - start
    finally:
        if saved is not None:
            os.environ["REDUCTION_SIM_THREADS"] = saved
    return stats, trajectories, elapsed


@pytest.fixture(scope="module")
def series3_off_100k():
    return run_ensemble(series_chain(3), config(rule4=False), 100_000)


@pytest.fixture(scope="module")
def diamond_on_10k():
    return run_ensemble(
        parallel_diamond(), config(rule4=True), 10_000, return_trajectories=True
    )


@pytest.fixture(scope="module")
def diamond_off_10k():
    return run_ensemble(parallel_diamond(), config(rule4=False), 10_000)


@pytest.fixture(scope="module")
def diamond_on_100k():
    return run_ensemble(parallel_diamond(), config(rule4=True), 100_000)


@pytest.fixture(scope="module")
def diamond_off_100k():
    return run_ensemble(parallel_diamond(), config(rule4=False), 100_000)


@pytest.fixture(scope="module")
def hammer_on_10k():
    return run_ensemble(
        hammer_chain(8), config(rule4=True), 10_000, return_trajectories=True
    )


@pytest.fixture(scope="module")
def hammer_off_10k():
    return run_ensemble(hammer_chain(8), config(rule4=False), 10_000)


def test_criterion_1_no_skip_series(chain4_on_10k):
    stats, trajectories, elapsed = chain4_on_10k
    in_order = sum(t.visit_sequence == (0, 1, 2, 3) for t in trajectories)
    ok = (
        in_order == 10_000
        and stats.skip_count == 0
        and skip_rate(stats) == 0.0
        and elapsed <= 60.0
    )
    report(
        1,
        "no-skip series",
        ok,
        f"{in_order}/10000 trajectories visited 0>1>2>3, skip_rate="
        f"{skip_rate(stats)}, runtime {elapsed:.1f}s (limit 60s single-threaded)",
    )


def test_criterion_2_first_hit_certainty(chain4_on_10k):
    stats, _trajectories, _elapsed = chain4_on_10k
    absorbed_fraction = stats.absorption_count / stats.n_trajectories
    pair = golden("first_hit_series2_rule4_on.txt")
    live = first_hit_oracle(series_chain(2), horizon=20.0, dt=1e-5)
    ok = (
        absorbed_fraction >= 0.999
        and pair.prob(1) >= 0.999
        and live.prob(1) >= 0.999
    )
    report(
        2,
        "first-hit certainty",
        ok,
        f"absorbed fraction {absorbed_fraction:.4f} (>=0.999), isolated-pair "
        f"oracle P(hit)={live.prob(1):.10f} at horizon 20/k (>=0.999)",
    )


def test_criterion_3_skip_possibility_series(series3_off_100k):
    stats = series3_off_100k
    oracle = golden("first_hit_series3_rule4_off.txt")
    p = oracle.prob(2)
    observed = stats.first_hit_counts.get(2, 0) / stats.n_trajectories
    tolerance = band(p, stats.n_trajectories)
    ok = abs(observed - p) <= tolerance and observed > 0.0
    report(
        3,
        "skip possibility series",
        ok,
        f"P(first hit = 2): mc={observed:.5f} oracle={p:.5f} "
        f"|diff|={abs(observed - p):.5f} <= 3sigma={tolerance:.5f} (n=100000)",
    )


def test_criterion_4_parallel_path_determination(diamond_on_10k, diamond_off_10k):
    stats_on, _trajectories = diamond_on_10k
    stats_off = diamond_off_10k
    pc = stats_on.path_counts
    decided = pc["clockwise"] + pc["counterclockwise"]
    clockwise_fraction = pc["clockwise"] / decided
    oracle = golden("first_hit_diamond_rule4_off.txt")
    p_direct = oracle.prob(3)
    observed_direct = stats_off.first_hit_counts.get(3, 0) / stats_off.n_trajectories
    tolerance = band(p_direct, stats_off.n_trajectories)
    ok = (
        pc["direct"] == 0
        and abs(clockwise_fraction - 0.5) <= 0.015
        and stats_off.path_counts["direct"] > 0
        and abs(observed_direct - p_direct) <= tolerance
    )
    report(
        4,
        "parallel path determination",
        ok,
        f"rule4 on: direct={pc['direct']}, clockwise fraction "
        f"{clockwise_fraction:.4f} (0.5 +/- 0.015); rule4 off: "
        f"direct={stats_off.path_counts['direct']} "
        f"P(direct): mc={observed_direct:.5f} oracle={p_direct:.5f} "
        f"tol={tolerance:.5f}",
    )


def test_criterion_5_endpoint_statistics_invariance(diamond_on_100k, diamond_off_100k):
    comparison = compare_statistics(diamond_on_100k, diamond_off_100k)
    max_z = max(abs(c.z) for c in comparison.cells)
    ok = (
        not comparison.any_flagged
        and max_z < 3.0
        and comparison.visit_orders_differ
        and "0>3" in comparison.visit_orders_only_in_b
    )
    report(
        5,
        "endpoint statistics invariance",
        ok,
        f"terminal-state marginals max|z|={max_z:.3f} (<3) over "
        f"{[c.label for c in comparison.cells]}; visit-order histograms "
        f"differ (direct path only with rule 4 off): "
        f"{comparison.visit_orders_only_in_b}",
    )


def test_criterion_6_hammer_jump_start(hammer_on_10k, hammer_off_10k):
    stats_on, trajectories_on = hammer_on_10k
    stats_off = hammer_off_10k
    expected = tuple(range(9))
    in_order = sum(
        t.visit_sequence == expected
        for t in trajectories_on
        if t.terminated is TerminationReason.ABSORBED
    )
    absorbed = sum(
        t.terminated is TerminationReason.ABSORBED for t in trajectories_on
    )
    oracle = golden("first_hit_hammer8_rule4_off.txt")
    p_jump = oracle.prob_at_or_above(2)
    observed = (
        sum(c for comp, c in stats_off.first_hit_counts.items() if comp >= 2)
        / stats_off.n_trajectories
    )
    tolerance = band(p_jump, stats_off.n_trajectories)
    ok = (
        absorbed == 10_000
        and in_order == absorbed
        and stats_on.skip_count == 0
        and observed > 0.0
        and abs(observed - p_jump) <= tolerance
    )
    report(
        6,
        "hammer jump-start",
        ok,
        f"rule4 on: {in_order}/{absorbed} absorbed trajectories swept angles "
        f"1..8 in order; rule4 off: P(first hit index >= 2): mc={observed:.5f} "
        f"oracle={p_jump:.5f} tol={tolerance:.5f}",
    )


def test_criterion_7_conservation_and_determinism(tmp_path):
    drift = []
    for builder, rule4 in itertools.product(
        (lambda: series_chain(4), parallel_diamond, lambda: hammer_chain(8)),
        (True, False),
    ):
        g = builder()
        st = make_state(g, None, rule4=rule4)
        for _ in range(10_000):
            step(st, g, DT)
        drift.append(abs(float(st.moduli.sum()) - 1.0))
    conservation_ok = max(drift) <= 1e-8

    scenario = tmp_path / "diamond.txt"
    scenario.write_text(
        "[scenario]\nkind = parallel_diamond\nk = 1.0\n\n[run]\nseed = 42\n"
    )
    out_a, out_b = tmp_path / "a", tmp_path / "b"
    assert main(["run", str(scenario), "--out", str(out_a)]) == 0
    assert main(["run", str(scenario), "--out", str(out_b)]) == 0
    bytes_a = (out_a / "events.csv").read_bytes()
    determinism_ok = bytes_a == (out_b / "events.csv").read_bytes() and bytes_a

    ok = conservation_ok and bool(determinism_ok)
    report(
        7,
        "conservation and determinism",
        ok,
        f"max |total modulus drift| over 1e4 RK4 steps = {max(drift):.2e} "
        f"(<=1e-8) across all builder graphs, both mask settings; repeated "
        f"seeded runs emit byte-identical event CSVs",
    )


def test_criterion_8_mask_correctness(chain4_on_10k, diamond_on_10k, hammer_on_10k):
    # Exhaustive per-observer status pairs: blocked iff ready-ready.
    statuses = [None, BrainStatus.READY, BrainStatus.CONSCIOUS]
    enumeration_ok = True
    for s_src, s_dst in itertools.product(statuses, repeat=2):
        g = CouplingGraph(
            components=(
                Component(0, "a", {} if s_src is None else {0: s_src}),
                Component(1, "b", {} if s_dst is None else {0: s_dst}, terminal=True),
            ),
            edges=(Edge(0, 1, CurrentParams(k=1.0)),),
            observers=(0,),
        )
        expected = not (
            s_src is BrainStatus.READY and s_dst is BrainStatus.READY
        )
        if rule4_allowed(g, g.edges[0]) is not expected:
            enumeration_ok = False

    audited = 0
    violations = []
    for graph, bundle in (
        (series_chain(4), chain4_on_10k),
        (parallel_diamond(), diamond_on_10k),
        (hammer_chain(8), hammer_on_10k),
    ):
        trajectories = bundle[1]
        for t in trajectories:
            audited += 1
            violations.extend(audit_mask_obedience(graph, t, rule4_enabled=True))

    ok = enumeration_ok and not violations
    report(
        8,
        "mask correctness",
        ok,
        f"predicate matches the ready-ready rule on all 9 status pairs; "
        f"{audited} rule-4-on trajectories audited, "
        f"{len(violations)} masked-edge hits",
    )
