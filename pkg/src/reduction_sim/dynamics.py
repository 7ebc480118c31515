"""Square-modulus flow, stochastic hits and state reduction.

Between hits the square moduli evolve deterministically: every active edge
carries a probability current (RATE_LINEAR: k times the source modulus) that
moves modulus from source to destination, conserving the total. Integration
is fixed-step RK4.

A stochastic hit on a component occurs with probability per unit time equal
to the active inflow current into that component divided by the *available*
modulus: the total square modulus minus whatever already sits at components
currently receiving inflow. Modulus that has been delivered to a potential
hit target no longer competes to trigger it, so the cumulative hit
probability on a target equals the fraction of the wave delivered to it; a
component that receives the entire wave is chosen with certainty, however
small the surviving modulus after earlier collapses. This division is what
renormalizes the process after a reduction, not any bookkeeping on the
moduli themselves.

On a hit, every modulus except the target's is set to zero (the target keeps
its value, deliberately un-renormalized), consciousness transfers to the
target for every observer holding a ready brain state there, and the
selection-rule mask is recomputed from the new assignment.

The arithmetic here deliberately runs in plain sequential loops: the numba
kernel in ``_kernel`` mirrors it expression for expression, so both engines
produce bit-identical trajectories from the same seed.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from enum import Enum
from pathlib import Path

import numpy as np

from .graph import (
    BrainStatus,
    CouplingGraph,
    CurrentModel,
    Edge,
    active_edges,
    brain_status,
    conscious_map,
    ensure_valid,
)

# Current floor below which a step counts as quiescent.
QUIESCENT_CURRENT = 1e-12
# Thinning guard: one step may not carry more than this much total hit probability.
MAX_STEP_HIT_PROBABILITY = 0.1
# Largest tolerated RK4 undershoot before the step is rejected outright.
MAX_CLAMP_DEFICIT = 1e-9


class DynamicsError(Exception):
    pass


class NonFiniteModulus(DynamicsError):
    """A modulus became NaN or infinite (bad dt or corrupted state)."""


class ZeroTotalModulus(DynamicsError):
    """Hazard requested in a state with no modulus available to drive hits."""


class StepTooLarge(DynamicsError):
    """dt violates the thinning guard or destabilizes the integrator."""


class TerminationReason(Enum):
    ABSORBED = "absorbed"
    MAX_TIME = "max_time"
    QUIESCENT = "quiescent"


@dataclass
class RunConfig:
    """Per-run configuration shared by the engine, ensembles and the CLI."""

    dt: float
    max_time: float
    seed: int = 42
    rule4_enabled: bool = True
    n_trajectories: int = 1
    emit_traces: bool = False
    output_dir: Path | None = None

    def __post_init__(self):
        if self.dt <= 0:
            raise ValueError(f"dt must be positive, got {self.dt}")
        if self.max_time <= self.dt:
            raise ValueError(f"max_time {self.max_time} must exceed dt {self.dt}")
        if self.n_trajectories < 1:
            raise ValueError(f"n_trajectories must be >= 1, got {self.n_trajectories}")


@dataclass(frozen=True)
class HitEvent:
    """One stochastic choice: the hit time, the chosen component, and the
    inflow edge the hit is attributed to (target == source_edge[1])."""

    time: float
    target: int
    source_edge: tuple[int, int]


@dataclass(frozen=True)
class Trajectory:
    """Record of one run: the hits plus the experienced visit sequence,
    starting at the initially conscious component."""

    events: tuple[HitEvent, ...]
    visit_sequence: tuple[int, ...]
    terminated: TerminationReason
    end_time: float

    def first_hit_target(self) -> int | None:
        return self.events[0].target if self.events else None


def derive_stream_seed(master_seed: int, traj_index: int) -> int:
    """Per-trajectory 32-bit stream seed via the splittable SeedSequence tree."""
    ss = np.random.SeedSequence(entropy=master_seed, spawn_key=(traj_index,))
    return int(ss.generate_state(1, dtype=np.uint32)[0])


@dataclass
class TrajectoryState:
    """Mutable state of one run. Owned by exactly one trajectory.

    ``moduli`` are the square moduli per component (non-negative; the total
    is conserved between hits). ``conscious_at`` maps observer -> component
    index currently conscious for them. The RNG is an MT19937 stream seeded
    from (master seed, trajectory index).
    """

    moduli: np.ndarray
    time: float
    conscious_at: dict[int, int]
    rng: np.random.RandomState
    rule4_enabled: bool
    # Active couplings (edge index, src, dst, k) in graph edge order,
    # recomputed after every reduction.
    _active: list[tuple[int, int, int, float]] | None = field(default=None, repr=False)

    def invalidate_mask(self) -> None:
        self._active = None


def initial_state(
    graph: CouplingGraph, config: RunConfig, traj_index: int = 0
) -> TrajectoryState:
    """Fresh state at t=0: unit modulus on the conscious component of the
    lowest-numbered observer, everything else empty."""
    assignment = conscious_map(graph)
    moduli = np.zeros(graph.n_components)
    moduli[assignment[min(graph.observers)]] = 1.0
    return TrajectoryState(
        moduli=moduli,
        time=0.0,
        conscious_at=assignment,
        rng=np.random.RandomState(derive_stream_seed(config.seed, traj_index)),
        rule4_enabled=config.rule4_enabled,
    )


def _active_couplings(
    state: TrajectoryState, graph: CouplingGraph
) -> list[tuple[int, int, int, float]]:
    if state._active is None:
        allowed = {
            e.pair for e in active_edges(graph, state.rule4_enabled, state.conscious_at)
        }
        for e in graph.edges:
            if e.coupling.model is not CurrentModel.RATE_LINEAR:
                raise NotImplementedError(f"current model {e.coupling.model}")
        state._active = [
            (idx, e.src, e.dst, e.coupling.k)
            for idx, e in enumerate(graph.edges)
            if e.pair in allowed
        ]
    return state._active


def current(edge: Edge, state: TrajectoryState, graph: CouplingGraph) -> float:
    """Probability current carried by an edge in the given state.

    Masked edges carry exactly zero; callers may rely on that.
    """
    for _idx, src, dst, k in _active_couplings(state, graph):
        if (src, dst) == edge.pair:
            return k * float(state.moduli[src])
    return 0.0


def _inflows(state: TrajectoryState, graph: CouplingGraph) -> np.ndarray:
    """Active inflow current per component, accumulated in graph edge order."""
    m = state.moduli
    infl = np.zeros(graph.n_components)
    for _idx, src, dst, k in _active_couplings(state, graph):
        f = k * m[src]
        if f > 0.0:
            infl[dst] += f
    return infl


def _total_modulus(moduli: np.ndarray) -> float:
    total = 0.0
    for i in range(moduli.shape[0]):
        total += moduli[i]
    return total


def available_modulus(state: TrajectoryState, graph: CouplingGraph) -> float:
    """Total square modulus minus the moduli of components receiving inflow.

    This is the pool still able to trigger a hit somewhere; the hazard of
    each target divides its inflow current by it.
    """
    infl = _inflows(state, graph)
    avail = _total_modulus(state.moduli)
    for i in range(graph.n_components):
        if infl[i] > 0.0:
            avail -= state.moduli[i]
    return avail


def hazard(state: TrajectoryState, graph: CouplingGraph, target: int) -> float:
    """Probability per unit time of a stochastic hit on ``target``.

    Zero for components with no active inflow. Raises ZeroTotalModulus in
    degenerate states (no modulus at all, or none left outside the receiving
    components, which cannot happen on acyclic graphs).
    """
    if _total_modulus(state.moduli) <= 0.0:
        raise ZeroTotalModulus("total square modulus is zero")
    infl = _inflows(state, graph)
    if infl[target] <= 0.0:
        return 0.0
    avail = _total_modulus(state.moduli)
    for i in range(graph.n_components):
        if infl[i] > 0.0:
            avail -= state.moduli[i]
    if avail <= 0.0:
        raise ZeroTotalModulus("no modulus outside the receiving components")
    return float(infl[target]) / avail


def _flow_derivative(
    m: np.ndarray, couplings: list[tuple[int, int, int, float]], out: np.ndarray
) -> None:
    for i in range(out.shape[0]):
        out[i] = 0.0
    for _idx, src, dst, k in couplings:
        f = k * m[src]
        out[src] -= f
        out[dst] += f


def step(state: TrajectoryState, graph: CouplingGraph, dt: float) -> TrajectoryState:
    """Advance the moduli by one RK4 step of the active-edge flow.

    Conserves the total modulus to integrator tolerance and keeps every
    modulus non-negative: an undershoot within MAX_CLAMP_DEFICIT is clamped
    to zero and the surplus removed from this step's gainers in proportion
    to their gain; anything larger raises StepTooLarge.
    """
    if dt <= 0:
        raise ValueError(f"dt must be positive, got {dt}")
    couplings = _active_couplings(state, graph)
    n = graph.n_components
    m = state.moduli
    k1 = np.zeros(n)
    k2 = np.zeros(n)
    k3 = np.zeros(n)
    k4 = np.zeros(n)
    y = np.zeros(n)
    m_new = np.zeros(n)

    _flow_derivative(m, couplings, k1)
    for i in range(n):
        y[i] = m[i] + 0.5 * dt * k1[i]
    _flow_derivative(y, couplings, k2)
    for i in range(n):
        y[i] = m[i] + 0.5 * dt * k2[i]
    _flow_derivative(y, couplings, k3)
    for i in range(n):
        y[i] = m[i] + dt * k3[i]
    _flow_derivative(y, couplings, k4)
    for i in range(n):
        m_new[i] = m[i] + (dt / 6.0) * (k1[i] + 2.0 * k2[i] + 2.0 * k3[i] + k4[i])

    for i in range(n):
        if not np.isfinite(m_new[i]):
            raise NonFiniteModulus(
                f"non-finite modulus after step at t={state.time}: {m_new}"
            )

    any_negative = False
    deficit = 0.0
    worst = 0.0
    for i in range(n):
        if m_new[i] < 0.0:
            any_negative = True
            deficit += -m_new[i]
            if -m_new[i] > worst:
                worst = -m_new[i]
    if any_negative:
        if worst > MAX_CLAMP_DEFICIT:
            raise StepTooLarge(
                f"dt={dt} drove a modulus to {-worst:.3e}; reduce the step"
            )
        total_gain = 0.0
        for i in range(n):
            if m_new[i] < 0.0:
                continue
            g = m_new[i] - m[i]
            if g > 0.0:
                total_gain += g
        if total_gain > 0.0:
            for i in range(n):
                if m_new[i] < 0.0:
                    m_new[i] = 0.0
                else:
                    g = m_new[i] - m[i]
                    if g > 0.0:
                        m_new[i] -= deficit * g / total_gain
        else:
            total_pos = 0.0
            for i in range(n):
                if m_new[i] > 0.0:
                    total_pos += m_new[i]
            for i in range(n):
                if m_new[i] < 0.0:
                    m_new[i] = 0.0
                elif m_new[i] > 0.0:
                    m_new[i] -= deficit * m_new[i] / total_pos

    state.moduli = m_new
    state.time += dt
    return state


def sample_hit(
    state: TrajectoryState, graph: CouplingGraph, dt: float
) -> HitEvent | None:
    """Draw at most one stochastic hit for the step ending at ``state.time``.

    Each component with active inflow fires with probability hazard*dt,
    realized by a single uniform draw over stacked intervals so the
    per-target probabilities are exact and at most one target fires. The hit
    is attributed to one of the target's inflow edges with probability
    proportional to that edge's current. Consumes only the state's own RNG
    stream; no draw happens when nothing can fire.
    """
    n = graph.n_components
    m = state.moduli
    infl = _inflows(state, graph)
    have_target = False
    for i in range(n):
        if infl[i] > 0.0:
            have_target = True
    if not have_target:
        return None

    avail = _total_modulus(m)
    for i in range(n):
        if infl[i] > 0.0:
            avail -= m[i]
    if avail <= 0.0:
        raise ZeroTotalModulus("no modulus outside the receiving components")

    p_sum = 0.0
    for c in range(n):
        if infl[c] > 0.0:
            p_sum += infl[c] / avail * dt
    if p_sum >= MAX_STEP_HIT_PROBABILITY:
        raise StepTooLarge(
            f"total hit probability {p_sum:.3f} in one step exceeds "
            f"{MAX_STEP_HIT_PROBABILITY}; reduce dt"
        )

    u = state.rng.random_sample()
    if u >= p_sum:
        return None
    target = -1
    acc = 0.0
    for c in range(n):
        if infl[c] > 0.0:
            target = c
            acc += infl[c] / avail * dt
            if u < acc:
                break

    candidates = [
        (src, dst, k * m[src])
        for _idx, src, dst, k in _active_couplings(state, graph)
        if dst == target and k * m[src] > 0.0
    ]
    if len(candidates) == 1:
        chosen = candidates[0]
    else:
        j_total = 0.0
        for _src, _dst, j in candidates:
            j_total += j
        pick = state.rng.random_sample() * j_total
        acc = 0.0
        chosen = candidates[-1]
        for cand in candidates:
            acc += cand[2]
            if pick < acc:
                chosen = cand
                break
    return HitEvent(time=state.time, target=target, source_edge=(chosen[0], chosen[1]))


def reduce(state: TrajectoryState, graph: CouplingGraph, hit: HitEvent) -> TrajectoryState:
    """Collapse onto the hit target.

    All other moduli go to zero; the target keeps its value (the hazard's
    division by available modulus supplies the effective renormalization).
    Consciousness moves to the target for every observer with a ready brain
    state there, and the edge mask is recomputed against the new assignment.
    """
    keep = float(state.moduli[hit.target])
    state.moduli = np.zeros_like(state.moduli)
    state.moduli[hit.target] = keep
    for obs in graph.observers:
        if brain_status(graph, hit.target, obs, state.conscious_at) is BrainStatus.READY:
            state.conscious_at[obs] = hit.target
    state.invalidate_mask()
    return state


class TraceRecorder:
    """Collects (t, moduli..., total) rows during a reference-engine run."""

    def __init__(self):
        self.rows: list[np.ndarray] = []

    def record(self, state: TrajectoryState) -> None:
        self.rows.append(
            np.concatenate(([state.time], state.moduli, [state.moduli.sum()]))
        )

    def as_array(self) -> np.ndarray:
        return np.vstack(self.rows)


def _max_active_current(state: TrajectoryState, graph: CouplingGraph) -> float:
    m = state.moduli
    out = 0.0
    for _idx, src, _dst, k in _active_couplings(state, graph):
        f = k * m[src]
        if f > out:
            out = f
    return out


def run_trajectory(
    graph: CouplingGraph,
    config: RunConfig,
    traj_index: int = 0,
    engine: str = "auto",
    trace: TraceRecorder | None = None,
) -> Trajectory:
    """Run one trajectory to absorption, the time horizon, or quiescence.

    Deterministic given (graph, config.seed, traj_index). ``engine`` selects
    the implementation: "reference" is the plain composition of step /
    sample_hit / reduce; "compiled" the numba kernel (identical semantics and
    RNG stream); "auto" prefers the kernel when it is usable and no trace is
    requested.

    Loop per step: advance the moduli (RK4 over dt), then draw at most one
    hit with the post-step hazards, then reduce. Terminates ABSORBED once a
    terminal component is conscious, MAX_TIME when the clock passes
    config.max_time, and QUIESCENT when every active current stayed below
    QUIESCENT_CURRENT for a whole step.
    """
    ensure_valid(graph)
    if engine not in ("auto", "reference", "compiled"):
        raise ValueError(f"unknown engine {engine!r}")
    if engine != "reference" and trace is None:
        from . import _kernel

        if _kernel.usable(graph):
            return _kernel.run_trajectory_compiled(graph, config, traj_index)
        if engine == "compiled":
            raise RuntimeError(
                "compiled engine unavailable for this graph (needs numba and a "
                "single-observer graph)"
            )

    state = initial_state(graph, config, traj_index)
    terminal = [c.terminal for c in graph.components]
    conscious_of = min(graph.observers)
    visits = [state.conscious_at[conscious_of]]
    events: list[HitEvent] = []
    if trace is not None:
        trace.record(state)

    while True:
        if terminal[state.conscious_at[conscious_of]]:
            reason = TerminationReason.ABSORBED
            break
        if state.time >= config.max_time:
            reason = TerminationReason.MAX_TIME
            break
        pre_max = _max_active_current(state, graph)
        step(state, graph, config.dt)
        if trace is not None:
            trace.record(state)
        if pre_max < QUIESCENT_CURRENT and _max_active_current(state, graph) < QUIESCENT_CURRENT:
            reason = TerminationReason.QUIESCENT
            break
        hit = sample_hit(state, graph, config.dt)
        if hit is not None:
            events.append(hit)
            visits.append(hit.target)
            reduce(state, graph, hit)

    return Trajectory(
        events=tuple(events),
        visit_sequence=tuple(visits),
        terminated=reason,
        end_time=state.time,
    )
