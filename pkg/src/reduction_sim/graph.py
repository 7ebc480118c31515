"""Coupling graphs of apparatus/brain components.

A component is one branch of a macroscopic superposition: an apparatus state,
optionally entangled with brain states of one or more observers, carrying a
square modulus. Directed edges encode the interaction terms along which
probability current can flow. The selection rule implemented by
``rule4_allowed`` blocks any transition whose source and destination both
hold a *ready* (not yet conscious) brain state of the same observer; masked
edges carry no current and can never be the source of a stochastic hit.

Graphs are immutable after construction and safe to share across
concurrently running trajectories. All per-run mutable state lives in
``dynamics.TrajectoryState``.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from enum import Enum


class BrainStatus(Enum):
    """Status of one observer's brain state inside a component.

    The string values are part of the scenario-file contract.
    """

    CONSCIOUS = "conscious"
    READY = "ready"
    ABSENT = "absent"


class CurrentModel(Enum):
    """Functional form of the probability current carried by an edge."""

    RATE_LINEAR = "rate_linear"


@dataclass(frozen=True)
class CurrentParams:
    """Coupling parameters of an edge.

    RATE_LINEAR: current = k * modulus(src), k in units of 1/time.
    k = 0 is a structurally present but inert coupling.
    """

    k: float
    model: CurrentModel = CurrentModel.RATE_LINEAR


@dataclass(frozen=True)
class Edge:
    """Directed coupling from component ``src`` to component ``dst``."""

    src: int
    dst: int
    coupling: CurrentParams

    @property
    def pair(self) -> tuple[int, int]:
        return (self.src, self.dst)


@dataclass(frozen=True)
class Component:
    """One branch of the superposition.

    ``brain`` maps observer id -> declared BrainStatus. A component with no
    brain entries is pure apparatus (e.g. a decay source). ``terminal``
    components absorb: they must have no outgoing edges, and a trajectory
    ends once consciousness reaches one.
    """

    index: int
    apparatus_label: str
    brain: dict[int, BrainStatus] = field(default_factory=dict)
    terminal: bool = False

    def bears_brain(self, observer: int) -> bool:
        """True if the component declares a brain state (conscious or ready)
        for this observer."""
        return self.brain.get(observer, BrainStatus.ABSENT) is not BrainStatus.ABSENT


@dataclass(frozen=True)
class CouplingGraph:
    """Immutable component/edge structure plus the observer roster.

    ``kind`` labels the scenario family that built the graph
    ("series_chain", "parallel_diamond", "hammer_chain" or "custom"); the
    statistics layer uses it to pick skip/path definitions.
    """

    components: tuple[Component, ...]
    edges: tuple[Edge, ...]
    observers: tuple[int, ...]
    kind: str = "custom"

    @property
    def n_components(self) -> int:
        return len(self.components)

    def edge_between(self, src: int, dst: int) -> Edge | None:
        for e in self.edges:
            if e.src == src and e.dst == dst:
                return e
        return None


@dataclass
class ValidationReport:
    """Outcome of structural validation. Empty violations == runnable."""

    violations: list[str] = field(default_factory=list)

    @property
    def ok(self) -> bool:
        return not self.violations

    def __str__(self) -> str:
        if self.ok:
            return "ok"
        return "; ".join(self.violations)


class GraphInvalid(Exception):
    """Raised when dynamics is asked to run a graph that fails validation."""

    def __init__(self, report: ValidationReport):
        super().__init__(f"graph failed validation: {report}")
        self.report = report


def conscious_map(graph: CouplingGraph) -> dict[int, int]:
    """Observer -> index of the component declared CONSCIOUS for them.

    Assumes a validated graph (exactly one conscious component per observer).
    """
    out: dict[int, int] = {}
    for comp in graph.components:
        for obs, status in comp.brain.items():
            if status is BrainStatus.CONSCIOUS:
                out[obs] = comp.index
    return out


def brain_status(
    graph: CouplingGraph,
    component: int,
    observer: int,
    conscious_at: dict[int, int] | None = None,
) -> BrainStatus:
    """Current brain status of ``observer`` in ``component``.

    With ``conscious_at`` omitted the graph's declared statuses apply. During
    a run, consciousness moves: the component currently conscious for the
    observer reports CONSCIOUS, and every other brain-bearing component
    reports READY (a brain state re-appears whenever the interaction can
    repopulate its component, so the mask stays in force downstream of the
    conscious component). Components without a brain entry report ABSENT.
    """
    comp = graph.components[component]
    if not comp.bears_brain(observer):
        return BrainStatus.ABSENT
    if conscious_at is None:
        return comp.brain[observer]
    if conscious_at.get(observer) == component:
        return BrainStatus.CONSCIOUS
    return BrainStatus.READY


def rule4_allowed(
    graph: CouplingGraph,
    edge: Edge,
    conscious_at: dict[int, int] | None = None,
) -> bool:
    """Selection-rule predicate for a single edge.

    Returns False iff some observer holds a READY brain state in *both*
    endpoint components; every other status pairing is allowed. Evaluated
    against current statuses when ``conscious_at`` is given, so a state that
    just became conscious stops blocking its outgoing edges.
    """
    for obs in graph.observers:
        if (
            brain_status(graph, edge.src, obs, conscious_at) is BrainStatus.READY
            and brain_status(graph, edge.dst, obs, conscious_at) is BrainStatus.READY
        ):
            return False
    return True


def active_edges(
    graph: CouplingGraph,
    rule4_enabled: bool,
    conscious_at: dict[int, int] | None = None,
) -> list[Edge]:
    """Edges that may carry current, in stable (src, dst) order.

    With the selection rule disabled this is every edge; enabled, the
    ready-ready pairs are masked out. The mask is state dependent: pass the
    live ``conscious_at`` assignment to reflect a mid-run consciousness
    location.
    """
    if rule4_enabled:
        kept = [e for e in graph.edges if rule4_allowed(graph, e, conscious_at)]
    else:
        kept = list(graph.edges)
    return sorted(kept, key=lambda e: (e.src, e.dst))


def validate(graph: CouplingGraph) -> ValidationReport:
    """Structural validation; dynamics refuses graphs with a non-empty report.

    Checks: component indices consistent, edge endpoints in range, no
    self-loops or duplicate (src, dst) pairs, non-negative couplings,
    terminal components without outgoing edges, observers declared for every
    brain entry, and exactly one conscious component per observer.
    """
    report = ValidationReport()
    n = len(graph.components)

    for i, comp in enumerate(graph.components):
        if comp.index != i:
            report.violations.append(
                f"component at position {i} carries index {comp.index}"
            )
        for obs in comp.brain:
            if obs not in graph.observers:
                report.violations.append(
                    f"component {i} references undeclared observer {obs}"
                )

    seen_pairs: set[tuple[int, int]] = set()
    for e in graph.edges:
        if not (0 <= e.src < n) or not (0 <= e.dst < n):
            report.violations.append(f"edge ({e.src},{e.dst}) out of range")
            continue
        if e.src == e.dst:
            report.violations.append(f"self-loop on component {e.src}")
        if e.pair in seen_pairs:
            report.violations.append(f"duplicate edge ({e.src},{e.dst})")
        seen_pairs.add(e.pair)
        if e.coupling.k < 0:
            report.violations.append(
                f"negative coupling {e.coupling.k} on edge ({e.src},{e.dst})"
            )
        if graph.components[e.src].terminal:
            report.violations.append(
                f"terminal component {e.src} has outgoing edge to {e.dst}"
            )

    if not graph.observers:
        report.violations.append(
            "no observers declared; a runnable graph needs an initial conscious component"
        )
    for obs in graph.observers:
        conscious = [
            c.index
            for c in graph.components
            if c.brain.get(obs) is BrainStatus.CONSCIOUS
        ]
        bearing = [c.index for c in graph.components if c.bears_brain(obs)]
        if not bearing:
            report.violations.append(f"observer {obs} has no brain states")
        elif len(conscious) > 1:
            report.violations.append(
                f"multiple conscious components for observer {obs}: {conscious}"
            )
        elif not conscious:
            report.violations.append(f"observer {obs} has no conscious component")

    return report


def ensure_valid(graph: CouplingGraph) -> None:
    """Raise GraphInvalid unless the graph passes ``validate``."""
    report = validate(graph)
    if not report.ok:
        raise GraphInvalid(report)
