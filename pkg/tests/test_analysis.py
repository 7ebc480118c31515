import math
from pathlib import Path

import pytest
from scipy import special, stats as scipy_stats

from reduction_sim.analysis import (
    EnsembleStats,
    FirstHitDistribution,
    IncomparableStats,
    audit_mask_obedience,
    compare_statistics,
    first_hit_oracle,
    is_skip,
    run_ensemble,
    skip_rate,
)
from reduction_sim.dynamics import (
    HitEvent,
    RunConfig,
    TerminationReason,
    Trajectory,
    run_trajectory,
)
from reduction_sim.scenarios import hammer_chain, parallel_diamond, series_chain

DATA_DIR = Path(__file__).resolve().parent / "data"


def config(dt=1e-3, max_time=50.0, seed=42, rule4=True):
    return RunConfig(dt=dt, max_time=max_time, seed=seed, rule4_enabled=rule4)


def binomial_band(p, n, factor=3.0):
    return factor * math.sqrt(p * (1.0 - p) / n)


class TestIsSkip:
    @pytest.mark.parametrize(
        "visits,kind,expected",
        [
            ((0, 1, 2, 3), "series_chain", False),
            ((0, 2), "series_chain", True),
            ((0, 1, 3), "series_chain", True),
            ((0,), "series_chain", False),
            ((0, 1, 3), "parallel_diamond", False),
            ((0, 2, 3), "parallel_diamond", False),
            ((0, 3), "parallel_diamond", True),
            ((0,), "parallel_diamond", False),
            ((0, 1, 2, 3, 4), "hammer_chain", False),
            ((0, 1, 4), "hammer_chain", True),
        ],
    )
    def test_definitions(self, visits, kind, expected):
        assert is_skip(visits, kind) is expected


class TestRunEnsemble:
    def test_reproducible(self):
        g = parallel_diamond()
        a = run_ensemble(g, config(seed=11), 300)
        b = run_ensemble(g, config(seed=11), 300)
        assert a.to_text() == b.to_text()

    def test_trajectories_match_solo_runs(self):
        g = parallel_diamond()
        cfg = config(seed=5)
        stats, trajectories = run_ensemble(g, cfg, 10, return_trajectories=True)
        assert stats.n_trajectories == 10
        for i in (0, 3, 9):
            assert trajectories[i] == run_trajectory(g, cfg, traj_index=i)

    def test_counting_invariants(self):
        g = series_chain(3)
        n = 400
        stats = run_ensemble(g, config(seed=2, rule4=False), n)
        assert sum(stats.visit_order_histogram.values()) == n
        assert stats.skip_count <= n
        assert stats.absorption_count <= n
        assert sum(stats.first_hit_counts.values()) + stats.no_hit_count == n
        assert sum(stats.absorbed_at.values()) == stats.absorption_count
        assert stats.error_count == 0

    def test_no_skip_with_rule_enabled(self):
        g = series_chain(4)
        stats = run_ensemble(g, config(seed=3), 800)
        assert stats.skip_count == 0
        assert skip_rate(stats) == 0.0
        assert stats.visit_order_histogram == {"0>1>2>3": 800}

    def test_diamond_path_counts(self):
        g = parallel_diamond()
        n = 600
        stats = run_ensemble(g, config(seed=17), n)
        pc = stats.path_counts
        assert pc["direct"] == 0
        assert pc["clockwise"] + pc["counterclockwise"] == stats.absorption_count
        assert stats.absorption_count == n

    def test_mean_absorption_time_positive(self):
        g = series_chain(2)
        stats = run_ensemble(g, config(seed=1), 50)
        assert stats.absorption_count == 50
        assert 0.0 < stats.mean_absorption_time < 50.0

    def test_errors_reported_not_raised(self):
        # A dt far beyond the RK4 stability region fails every trajectory;
        # the ensemble must survive and report.
        g = series_chain(3, [1.0, 50.0])
        cfg = RunConfig(dt=0.1, max_time=10.0, seed=0, rule4_enabled=False)
        stats = run_ensemble(g, cfg, 5)
        assert stats.error_count == 5
        assert stats.errors
        assert sum(stats.visit_order_histogram.values()) == 0

    def test_threads_do_not_change_results(self, monkeypatch):
        g = parallel_diamond()
        baseline = run_ensemble(g, config(seed=23), 200)
        monkeypatch.setenv("REDUCTION_SIM_THREADS", "4")
        threaded = run_ensemble(g, config(seed=23), 200)
        assert baseline.to_text() == threaded.to_text()

    def test_monotone_masking_supports(self):
        g = parallel_diamond()
        on = run_ensemble(g, config(seed=31, rule4=True), 2000)
        off = run_ensemble(g, config(seed=31, rule4=False), 2000)
        assert set(on.visit_order_histogram) <= set(off.visit_order_histogram)

    def test_rejects_empty_ensemble(self):
        with pytest.raises(ValueError):
            run_ensemble(series_chain(2), config(), 0)


class TestFirstHitOracle:
    def test_two_chain_certainty(self):
        d = first_hit_oracle(series_chain(2), horizon=20.0, dt=1e-5)
        assert d.prob(1) >= 0.999
        assert d.prob(1) == pytest.approx(1.0 - math.exp(-20.0), abs=1e-9)
        assert d.survival == pytest.approx(math.exp(-20.0), rel=1e-6)

    def test_probabilities_and_survival_are_consistent(self):
        d = first_hit_oracle(parallel_diamond(), 40.0, 1e-5, rule4_enabled=False)
        assert d.survival + sum(d.probs) == pytest.approx(1.0, abs=1e-9)

    def test_three_chain_skip_probability_closed_form(self):
        # With the mask off, both targets compete; the skip probability has
        # the closed form 1 - sqrt(2*pi*e) * (1 - Phi(1)).
        d = first_hit_oracle(series_chain(3), 40.0, 1e-5, rule4_enabled=False)
        analytic = 1.0 - math.sqrt(2.0 * math.pi * math.e) * (
            1.0 - scipy_stats.norm.cdf(1.0)
        )
        assert d.prob(2) == pytest.approx(analytic, abs=1e-9)

    def test_diamond_direct_probability_closed_form(self):
        # P(first hit = final) = 1 - 2 e^2 E1(2) for the symmetric diamond.
        d = first_hit_oracle(parallel_diamond(), 40.0, 1e-5, rule4_enabled=False)
        analytic = 1.0 - 2.0 * math.exp(2.0) * special.exp1(2.0)
        assert d.prob(3) == pytest.approx(analytic, abs=1e-9)
        assert d.prob(1) == pytest.approx(d.prob(2), abs=1e-12)

    def test_masked_diamond_splits_evenly_and_never_direct(self):
        d = first_hit_oracle(parallel_diamond(), 40.0, 1e-5, rule4_enabled=True)
        assert d.prob(3) == 0.0
        assert d.prob(1) == pytest.approx(0.5, abs=1e-9)
        assert d.prob(2) == pytest.approx(0.5, abs=1e-9)

    def test_series_mask_concentrates_on_single_successor(self):
        d = first_hit_oracle(series_chain(4), 40.0, 1e-5, rule4_enabled=True)
        assert d.prob(1) == pytest.approx(1.0, abs=1e-9)
        assert d.prob(2) == 0.0
        assert d.prob(3) == 0.0

    def test_inert_graph_returns_zero_distribution(self):
        d = first_hit_oracle(hammer_chain(3, k_decay=0.0, k_angle=0.0), 40.0, 1e-5)
        assert d.probs == (0.0, 0.0, 0.0, 0.0)
        assert d.survival == 1.0

    def test_preconditions_enforced(self):
        g = series_chain(2)
        with pytest.raises(ValueError):
            first_hit_oracle(g, horizon=40.0, dt=1e-3)
        with pytest.raises(ValueError):
            first_hit_oracle(g, horizon=5.0, dt=1e-5)

    def test_text_round_trip(self):
        d = first_hit_oracle(series_chain(2), 20.0, 1e-5)
        assert FirstHitDistribution.from_text(d.to_text()) == d

    @pytest.mark.parametrize(
        "name,builder,horizon,rule4",
        [
            ("first_hit_series2_rule4_on.txt", lambda: series_chain(2), 20.0, True),
            ("first_hit_series3_rule4_off.txt", lambda: series_chain(3), 40.0, False),
            ("first_hit_diamond_rule4_on.txt", parallel_diamond, 40.0, True),
            ("first_hit_diamond_rule4_off.txt", parallel_diamond, 40.0, False),
            ("first_hit_hammer8_rule4_off.txt", lambda: hammer_chain(8), 40.0, False),
        ],
    )
    def test_matches_golden_fixture(self, name, builder, horizon, rule4):
        stored = FirstHitDistribution.from_text((DATA_DIR / name).read_text())
        live = first_hit_oracle(builder(), stored.horizon, stored.dt, rule4)
        assert live.horizon == horizon
        assert live.rule4_enabled == rule4
        for p_live, p_stored in zip(live.probs, stored.probs):
            assert p_live == pytest.approx(p_stored, abs=1e-12)


class TestOracleMonteCarloAgreement:
    """The sampler and the quadrature must agree within binomial error."""

    @pytest.mark.parametrize(
        "builder,rule4",
        [
            (lambda: series_chain(3), False),
            (parallel_diamond, True),
            (parallel_diamond, False),
        ],
    )
    def test_first_hit_frequencies(self, builder, rule4):
        g = builder()
        n = 6000
        stats = run_ensemble(g, config(seed=97, rule4=rule4), n)
        oracle = first_hit_oracle(g, 40.0, 1e-5, rule4_enabled=rule4)
        for comp in range(g.n_components):
            p = oracle.prob(comp)
            observed = stats.first_hit_counts.get(comp, 0) / n
            band = binomial_band(p, n) if 0.0 < p < 1.0 else 3.0 / n
            assert abs(observed - p) <= band + 1e-3, (
                f"component {comp}: mc={observed} oracle={p}"
            )


class TestCompareStatistics:
    def test_self_comparison_is_zero(self):
        g = parallel_diamond()
        stats = run_ensemble(g, config(seed=8), 500)
        report = compare_statistics(stats, stats)
        assert report.tv_distance == 0.0
        assert not report.any_flagged
        assert not report.visit_orders_differ

    def test_diamond_endpoint_invariance(self):
        g = parallel_diamond()
        n = 20_000
        on = run_ensemble(g, config(seed=12, rule4=True), n)
        off = run_ensemble(g, config(seed=12, rule4=False), n)
        report = compare_statistics(on, off)
        assert not report.any_flagged
        assert report.tv_distance < 0.01
        # the histograms must differ: the direct path exists only unmasked
        assert report.visit_orders_differ
        assert "0>3" in report.visit_orders_only_in_b

    def test_chain_endpoint_invariance(self):
        g = series_chain(4)
        n = 5000
        on = run_ensemble(g, config(seed=13, rule4=True), n)
        off = run_ensemble(g, config(seed=13, rule4=False), n)
        report = compare_statistics(on, off)
        assert not report.any_flagged
        assert on.absorbed_at == {3: n}
        assert off.absorbed_at == {3: n}

    def test_incomparable_families(self):
        a = run_ensemble(series_chain(3), config(seed=1), 20)
        b = run_ensemble(parallel_diamond(), config(seed=1), 20)
        with pytest.raises(IncomparableStats):
            compare_statistics(a, b)

    def test_report_text_contains_cells(self):
        g = parallel_diamond()
        stats = run_ensemble(g, config(seed=8), 200)
        text = compare_statistics(stats, stats).to_text()
        assert "absorbed@3" in text
        assert "unabsorbed" in text
        assert "[visit_orders_only_in_a]" in text


class TestAuditMaskObedience:
    def test_clean_ensembles_pass(self):
        g = parallel_diamond()
        _stats, trajectories = run_ensemble(
            g, config(seed=21), 400, return_trajectories=True
        )
        for t in trajectories:
            assert audit_mask_obedience(g, t, rule4_enabled=True) == []

    def test_masked_hit_is_flagged(self):
        g = parallel_diamond()
        # Fabricated: a hit through (1,3) while consciousness still sits at 0
        # crosses a ready-ready edge.
        bad = Trajectory(
            events=(HitEvent(time=0.5, target=3, source_edge=(1, 3)),),
            visit_sequence=(0, 3),
            terminated=TerminationReason.ABSORBED,
            end_time=0.5,
        )
        violations = audit_mask_obedience(g, bad, rule4_enabled=True)
        assert any("masked edge (1,3)" in v for v in violations)

    def test_inconsistent_event_target_is_flagged(self):
        g = series_chain(3)
        bad = Trajectory(
            events=(HitEvent(time=0.5, target=2, source_edge=(0, 1)),),
            visit_sequence=(0, 2),
            terminated=TerminationReason.MAX_TIME,
            end_time=1.0,
        )
        violations = audit_mask_obedience(g, bad, rule4_enabled=False)
        assert violations

    def test_unmasked_runs_audit_clean_without_rule(self):
        g = series_chain(3)
        _stats, trajectories = run_ensemble(
            g, config(seed=29, rule4=False), 200, return_trajectories=True
        )
        for t in trajectories:
            assert audit_mask_obedience(g, t, rule4_enabled=False) == []


class TestStatsSerialization:
    def test_report_blocks_present(self):
        stats = run_ensemble(parallel_diamond(), config(seed=2), 100)
        text = stats.to_text()
        assert "[visit_order_histogram]" in text
        assert "[first_hit_counts]" in text
        assert "[absorbed_at]" in text
        assert "path_clockwise" in text
        assert "n_trajectories = 100" in text
