"""Monte Carlo ensembles, first-hit oracle, and rule-mask statistics.

``run_ensemble`` aggregates visit-order, skip, path-direction, absorption and
first-hit statistics over many independently seeded trajectories.
``first_hit_oracle`` is the deterministic cross-check: it integrates the
no-hit survival S(t) = exp(-integral of the total hazard) alongside the
modulus flow on a dense fixed grid and accumulates P(first hit = c) =
integral of hazard_c * S. The two must agree within binomial error for every
scenario; the Monte Carlo sampler and the oracle share only the hazard
definition, not the sampling machinery.

``compare_statistics`` tests the endpoint-invariance claim: enabling the
selection rule changes which intermediate states are experienced, but not
the absorption-state marginals. Visit-order histograms are therefore
compared separately from absorption marginals and are expected to differ.
"""

from __future__ import annotations

import math
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from . import dynamics as _dyn
from ._kernel import njit
from .graph import (
    BrainStatus,
    CouplingGraph,
    active_edges,
    brain_status,
    conscious_map,
    ensure_valid,
    rule4_allowed,
)
from .scenarios import DIAMOND_FINAL, DIAMOND_LEFT, DIAMOND_RIGHT

THREADS_ENV_VAR = "REDUCTION_SIM_THREADS"


class IncomparableStats(ValueError):
    """Compared ensembles do not share a marginal support definition."""


def _signature(visit_sequence: tuple[int, ...]) -> str:
    return ">".join(str(c) for c in visit_sequence)


def _has_index_skip(visit_sequence: tuple[int, ...]) -> bool:
    return any(b - a > 1 for a, b in zip(visit_sequence, visit_sequence[1:]))


def is_skip(visit_sequence: tuple[int, ...], kind: str) -> bool:
    """Did this trajectory skip over a state the observer should experience?

    Series/hammer chains (and custom graphs): any jump of more than one
    component index between consecutive visits. Diamond: reaching the final
    state without passing either intermediate.
    """
    if kind == "parallel_diamond":
        reached_final = DIAMOND_FINAL in visit_sequence
        saw_intermediate = (
            DIAMOND_RIGHT in visit_sequence or DIAMOND_LEFT in visit_sequence
        )
        return reached_final and not saw_intermediate
    return _has_index_skip(visit_sequence)


@dataclass
class EnsembleStats:
    """Aggregated statistics of one Monte Carlo ensemble."""

    n_trajectories: int
    scenario_kind: str
    n_components: int
    seed: int
    rule4_enabled: bool
    visit_order_histogram: dict[str, int] = field(default_factory=dict)
    skip_count: int = 0
    path_counts: dict[str, int] | None = None
    absorption_count: int = 0
    absorbed_at: dict[int, int] = field(default_factory=dict)
    mean_absorption_time: float = float("nan")
    first_hit_counts: dict[int, int] = field(default_factory=dict)
    no_hit_count: int = 0
    error_count: int = 0
    errors: list[str] = field(default_factory=list)

    def first_hit_fraction(self, component: int) -> float:
        return self.first_hit_counts.get(component, 0) / self.n_trajectories

    def to_text(self) -> str:
        lines = [
            "# ensemble report",
            "format_version = 1",
            f"scenario_kind = {self.scenario_kind}",
            f"n_components = {self.n_components}",
            f"n_trajectories = {self.n_trajectories}",
            f"seed = {self.seed}",
            f"rule4 = {'on' if self.rule4_enabled else 'off'}",
            f"skip_count = {self.skip_count}",
            f"absorption_count = {self.absorption_count}",
            f"mean_absorption_time = {self.mean_absorption_time!r}",
            f"no_hit_count = {self.no_hit_count}",
            f"error_count = {self.error_count}",
        ]
        if self.path_counts is not None:
            for key in ("clockwise", "counterclockwise", "direct"):
                lines.append(f"path_{key} = {self.path_counts[key]}")
        lines.append("")
        lines.append("[absorbed_at]")
        lines.append("component,count")
        for comp in sorted(self.absorbed_at):
            lines.append(f"{comp},{self.absorbed_at[comp]}")
        lines.append("")
        lines.append("[first_hit_counts]")
        lines.append("component,count")
        for comp in sorted(self.first_hit_counts):
            lines.append(f"{comp},{self.first_hit_counts[comp]}")
        lines.append("")
        lines.append("[visit_order_histogram]")
        lines.append("sequence,count")
        for sig in sorted(self.visit_order_histogram):
            lines.append(f"{sig},{self.visit_order_histogram[sig]}")
        lines.append("")
        return "\n".join(lines)


def skip_rate(stats: EnsembleStats) -> float:
    """Fraction of trajectories that skipped a state."""
    return stats.skip_count / stats.n_trajectories


def _resolve_threads() -> int:
    raw = os.environ.get(THREADS_ENV_VAR, "").strip()
    if not raw:
        return 1
    value = int(raw)
    if value < 0:
        raise ValueError(f"{THREADS_ENV_VAR} must be >= 0, got {value}")
    if value == 0:
        return min(os.cpu_count() or 1, 8)
    return value


def run_ensemble(
    graph: CouplingGraph,
    config: _dyn.RunConfig,
    n: int,
    return_trajectories: bool = False,
    engine: str = "auto",
):
    """Run ``n`` independent trajectories and aggregate their statistics.

    Trajectory i draws from the RNG stream derived from (config.seed, i), so
    the result is reproducible and each trajectory is identical to a solo
    ``run_trajectory(graph, config, traj_index=i)``. Per-trajectory dynamics
    errors are counted and reported without aborting the ensemble.
    Concurrency is capped by the REDUCTION_SIM_THREADS environment variable
    (0 = auto); aggregation is an order-independent sum, so threading does
    not affect the result.
    """
    if n < 1:
        raise ValueError(f"ensemble size must be >= 1, got {n}")
    ensure_valid(graph)

    def run_range(lo: int, hi: int):
        out = []
        for i in range(lo, hi):
            try:
                out.append(_dyn.run_trajectory(graph, config, traj_index=i, engine=engine))
            except _dyn.DynamicsError as exc:
                out.append(f"trajectory {i}: {exc}")
        return out

    threads = _resolve_threads()
    if threads <= 1 or n < 2 * threads:
        results = run_range(0, n)
    else:
        bounds = np.linspace(0, n, threads + 1).astype(int)
        with ThreadPoolExecutor(max_workers=threads) as pool:
            chunks = list(
                pool.map(lambda ab: run_range(ab[0], ab[1]), zip(bounds[:-1], bounds[1:]))
            )
        results = [traj for chunk in chunks for traj in chunk]

    stats = EnsembleStats(
        n_trajectories=n,
        scenario_kind=graph.kind,
        n_components=graph.n_components,
        seed=config.seed,
        rule4_enabled=config.rule4_enabled,
        path_counts=(
            {"clockwise": 0, "counterclockwise": 0, "direct": 0}
            if graph.kind == "parallel_diamond"
            else None
        ),
    )
    trajectories: list[_dyn.Trajectory] = []
    absorption_time_sum = 0.0
    for res in results:
        if isinstance(res, str):
            stats.error_count += 1
            if len(stats.errors) < 16:
                stats.errors.append(res)
            continue
        trajectories.append(res)
        sig = _signature(res.visit_sequence)
        stats.visit_order_histogram[sig] = stats.visit_order_histogram.get(sig, 0) + 1
        if is_skip(res.visit_sequence, graph.kind):
            stats.skip_count += 1
        if stats.path_counts is not None:
            if DIAMOND_RIGHT in res.visit_sequence:
                stats.path_counts["clockwise"] += 1
            elif DIAMOND_LEFT in res.visit_sequence:
                stats.path_counts["counterclockwise"] += 1
            elif DIAMOND_FINAL in res.visit_sequence:
                stats.path_counts["direct"] += 1
        if res.terminated is _dyn.TerminationReason.ABSORBED:
            stats.absorption_count += 1
            final = res.visit_sequence[-1]
            stats.absorbed_at[final] = stats.absorbed_at.get(final, 0) + 1
            absorption_time_sum += res.end_time
        first = res.first_hit_target()
        if first is None:
            stats.no_hit_count += 1
        else:
            stats.first_hit_counts[first] = stats.first_hit_counts.get(first, 0) + 1
    if stats.absorption_count:
        stats.mean_absorption_time = absorption_time_sum / stats.absorption_count

    if return_trajectories:
        return stats, trajectories
    return stats


# ---------------------------------------------------------------------------
# First-hit oracle


@dataclass(frozen=True)
class FirstHitDistribution:
    """P(first stochastic hit lands on component c by the horizon), plus the
    probability of surviving the horizon without any hit."""

    probs: tuple[float, ...]
    survival: float
    horizon: float
    dt: float
    rule4_enabled: bool

    def prob(self, component: int) -> float:
        return self.probs[component]

    def prob_at_or_above(self, component: int) -> float:
        return float(sum(self.probs[component:]))

    def to_text(self) -> str:
        lines = [
            "# first-hit distribution",
            "format_version = 1",
            f"n_components = {len(self.probs)}",
            f"horizon = {self.horizon!r}",
            f"dt = {self.dt!r}",
            f"rule4 = {'on' if self.rule4_enabled else 'off'}",
            f"survival = {self.survival!r}",
            "",
            "[probabilities]",
            "component,probability",
        ]
        for c, p in enumerate(self.probs):
            lines.append(f"{c},{p!r}")
        lines.append("")
        return "\n".join(lines)

    @classmethod
    def from_text(cls, text: str) -> "FirstHitDistribution":
        fields: dict[str, str] = {}
        probs: dict[int, float] = {}
        in_block = False
        for line in text.splitlines():
            line = line.strip()
            if not line or line.startswith("#"):
                continue
            if line == "[probabilities]":
                in_block = True
                continue
            if in_block:
                if line == "component,probability":
                    continue
                comp, prob = line.split(",")
                probs[int(comp)] = float(prob)
            elif "=" in line:
                key, value = line.split("=", 1)
                fields[key.strip()] = value.strip()
        n = int(fields["n_components"])
        return cls(
            probs=tuple(probs[c] for c in range(n)),
            survival=float(fields["survival"]),
            horizon=float(fields["horizon"]),
            dt=float(fields["dt"]),
            rule4_enabled=fields["rule4"] == "on",
        )


@njit(cache=True)
def _oracle_kernel(n_comp, e_src, e_dst, e_k, n_steps, dt, y):
    """RK4 on the augmented system (moduli, cumulative hazard, first-hit
    probabilities). y layout: [m_0..m_{n-1}, H, P_0..P_{n-1}]."""
    n_edges = e_src.shape[0]
    size = 2 * n_comp + 1
    k1 = np.zeros(size)
    k2 = np.zeros(size)
    k3 = np.zeros(size)
    k4 = np.zeros(size)
    yy = np.zeros(size)
    infl = np.zeros(n_comp)

    for _step in range(n_steps):
        for stage in range(4):
            if stage == 0:
                for i in range(size):
                    yy[i] = y[i]
            elif stage == 1:
                for i in range(size):
                    yy[i] = y[i] + 0.5 * dt * k1[i]
            elif stage == 2:
                for i in range(size):
                    yy[i] = y[i] + 0.5 * dt * k2[i]
            else:
                for i in range(size):
                    yy[i] = y[i] + dt * k3[i]
            if stage == 0:
                kk = k1
            elif stage == 1:
                kk = k2
            elif stage == 2:
                kk = k3
            else:
                kk = k4
            for i in range(size):
                kk[i] = 0.0
            for e in range(n_edges):
                f = e_k[e] * yy[e_src[e]]
                kk[e_src[e]] -= f
                kk[e_dst[e]] += f
            for i in range(n_comp):
                infl[i] = 0.0
            for e in range(n_edges):
                f = e_k[e] * yy[e_src[e]]
                if f > 0.0:
                    infl[e_dst[e]] += f
            avail = 0.0
            for i in range(n_comp):
                avail += yy[i]
            for i in range(n_comp):
                if infl[i] > 0.0:
                    avail -= yy[i]
            if avail > 0.0:
                survival = math.exp(-yy[n_comp])
                h_total = 0.0
                for c in range(n_comp):
                    if infl[c] > 0.0:
                        h = infl[c] / avail
                        h_total += h
                        kk[n_comp + 1 + c] = h * survival
                kk[n_comp] = h_total
        for i in range(size):
            y[i] = y[i] + (dt / 6.0) * (k1[i] + 2.0 * k2[i] + 2.0 * k3[i] + k4[i])
    return y


def first_hit_oracle(
    graph: CouplingGraph,
    horizon: float,
    dt: float,
    rule4_enabled: bool = True,
) -> FirstHitDistribution:
    """Deterministic first-hit distribution by survival-weighted quadrature.

    Integrates the masked modulus flow from the initial state on a dense
    fixed grid, accumulating each target's hazard weighted by the no-hit
    survival. Requires dt <= 1e-4/k_max and horizon >= 20/k_min over the
    active couplings, so the quadrature is fine enough and the horizon long
    enough for the spec-level tolerances.
    """
    ensure_valid(graph)
    assignment = conscious_map(graph)
    act = active_edges(graph, rule4_enabled, assignment)
    rates = [e.coupling.k for e in act if e.coupling.k > 0]
    n = graph.n_components
    if not rates:
        return FirstHitDistribution(
            probs=(0.0,) * n,
            survival=1.0,
            horizon=horizon,
            dt=dt,
            rule4_enabled=rule4_enabled,
        )
    k_max_all = max(e.coupling.k for e in graph.edges)
    if dt > 1e-4 / k_max_all:
        raise ValueError(f"oracle dt {dt} too coarse; need <= {1e-4 / k_max_all}")
    if horizon < 20.0 / min(rates):
        raise ValueError(
            f"oracle horizon {horizon} too short; need >= {20.0 / min(rates)}"
        )

    e_src = np.array([e.src for e in act], dtype=np.int64)
    e_dst = np.array([e.dst for e in act], dtype=np.int64)
    e_k = np.array([e.coupling.k for e in act], dtype=np.float64)
    y = np.zeros(2 * n + 1)
    y[assignment[min(graph.observers)]] = 1.0
    n_steps = int(math.ceil(horizon / dt))
    y = _oracle_kernel(n, e_src, e_dst, e_k, n_steps, dt, y)
    return FirstHitDistribution(
        probs=tuple(float(p) for p in y[n + 1 :]),
        survival=float(math.exp(-y[n])),
        horizon=horizon,
        dt=dt,
        rule4_enabled=rule4_enabled,
    )


# ---------------------------------------------------------------------------
# Statistics comparison


@dataclass(frozen=True)
class MarginalCell:
    label: str
    count_a: int
    count_b: int
    p_a: float
    p_b: float
    z: float
    flagged: bool


@dataclass
class ComparisonReport:
    """Absorption-marginal comparison of two ensembles.

    The headline claim under test is endpoint invariance: the absorption
    marginals must agree statistically (all |z| <= 3), while the visit-order
    histograms may and typically do differ. "Overall statistics" is read as
    the absorption-state marginal; intermediate visit statistics are reported
    separately because the selection rule changes them by design.
    """

    kind: str
    n_a: int
    n_b: int
    cells: list[MarginalCell]
    tv_distance: float
    visit_orders_only_in_a: list[str]
    visit_orders_only_in_b: list[str]
    visit_orders_common: int

    @property
    def any_flagged(self) -> bool:
        return any(c.flagged for c in self.cells)

    @property
    def visit_orders_differ(self) -> bool:
        return bool(self.visit_orders_only_in_a or self.visit_orders_only_in_b)

    def to_text(self) -> str:
        lines = [
            "# statistics comparison",
            "format_version = 1",
            "# assumption: 'overall statistics' compared on absorption-state",
            "# marginals; visit-order histograms are expected to differ when the",
            "# selection rule changes which intermediate states are experienced.",
            f"scenario_kind = {self.kind}",
            f"n_a = {self.n_a}",
            f"n_b = {self.n_b}",
            f"tv_distance = {self.tv_distance!r}",
            f"flagged = {'yes' if self.any_flagged else 'no'}",
            f"visit_orders_differ = {'yes' if self.visit_orders_differ else 'no'}",
            "",
            "[absorption_marginals]",
            "cell,count_a,count_b,p_a,p_b,z,flagged",
        ]
        for c in self.cells:
            lines.append(
                f"{c.label},{c.count_a},{c.count_b},{c.p_a!r},{c.p_b!r},"
                f"{c.z!r},{'yes' if c.flagged else 'no'}"
            )
        lines.append("")
        lines.append("[visit_orders_only_in_a]")
        lines.extend(self.visit_orders_only_in_a)
        lines.append("")
        lines.append("[visit_orders_only_in_b]")
        lines.extend(self.visit_orders_only_in_b)
        lines.append("")
        return "\n".join(lines)


def _two_proportion_z(x_a: int, n_a: int, x_b: int, n_b: int) -> float:
    p_a = x_a / n_a
    p_b = x_b / n_b
    pooled = (x_a + x_b) / (n_a + n_b)
    variance = pooled * (1.0 - pooled) * (1.0 / n_a + 1.0 / n_b)
    if variance <= 0.0:
        return 0.0
    return (p_a - p_b) / math.sqrt(variance)


def compare_statistics(a: EnsembleStats, b: EnsembleStats) -> ComparisonReport:
    """Compare absorption-state marginals of two ensembles cell by cell.

    Cells are "absorbed@<component>" for every terminal component observed in
    either ensemble, plus "unabsorbed". A cell is flagged when its
    two-proportion |z| exceeds 3. Raises IncomparableStats when the ensembles
    describe different graph families.
    """
    if a.scenario_kind != b.scenario_kind or a.n_components != b.n_components:
        raise IncomparableStats(
            f"cannot compare {a.scenario_kind}/{a.n_components} with "
            f"{b.scenario_kind}/{b.n_components}"
        )
    labels = sorted(set(a.absorbed_at) | set(b.absorbed_at))
    cells = []
    tv = 0.0
    for comp in labels:
        x_a, x_b = a.absorbed_at.get(comp, 0), b.absorbed_at.get(comp, 0)
        p_a, p_b = x_a / a.n_trajectories, x_b / b.n_trajectories
        z = _two_proportion_z(x_a, a.n_trajectories, x_b, b.n_trajectories)
        cells.append(
            MarginalCell(f"absorbed@{comp}", x_a, x_b, p_a, p_b, z, abs(z) > 3.0)
        )
        tv += abs(p_a - p_b)
    x_a = a.n_trajectories - a.absorption_count
    x_b = b.n_trajectories - b.absorption_count
    p_a, p_b = x_a / a.n_trajectories, x_b / b.n_trajectories
    z = _two_proportion_z(x_a, a.n_trajectories, x_b, b.n_trajectories)
    cells.append(MarginalCell("unabsorbed", x_a, x_b, p_a, p_b, z, abs(z) > 3.0))
    tv = 0.5 * (tv + abs(p_a - p_b))

    support_a = set(a.visit_order_histogram)
    support_b = set(b.visit_order_histogram)
    return ComparisonReport(
        kind=a.scenario_kind,
        n_a=a.n_trajectories,
        n_b=b.n_trajectories,
        cells=cells,
        tv_distance=tv,
        visit_orders_only_in_a=sorted(support_a - support_b),
        visit_orders_only_in_b=sorted(support_b - support_a),
        visit_orders_common=len(support_a & support_b),
    )


def audit_mask_obedience(
    graph: CouplingGraph, trajectory: _dyn.Trajectory, rule4_enabled: bool = True
) -> list[str]:
    """Re-derive the mask state along a trajectory and flag illegal hits.

    Replays consciousness transfers event by event using only the graph and
    the recorded hit list (independent of any engine internals) and reports
    every hit whose source edge was masked at the moment it fired.
    """
    violations = []
    conscious = conscious_map(graph)
    for i, event in enumerate(trajectory.events):
        src, dst = event.source_edge
        if event.target != dst:
            violations.append(
                f"event {i}: target {event.target} != source edge head {dst}"
            )
        edge = graph.edge_between(src, dst)
        if edge is None:
            violations.append(f"event {i}: no edge ({src},{dst}) in graph")
            continue
        if rule4_enabled and not rule4_allowed(graph, edge, conscious):
            violations.append(
                f"event {i}: hit via masked edge ({src},{dst}) at t={event.time}"
            )
        for obs in graph.observers:
            if brain_status(graph, event.target, obs, conscious) is BrainStatus.READY:
                conscious[obs] = event.target
    return violations
