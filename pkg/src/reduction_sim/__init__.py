"""Stochastic trajectory simulator for observer-inclusive state reduction.

Probability current flows over a directed graph of entangled
apparatus/brain components; stochastic hits collapse the state onto one
component; a selection rule masks transitions between two ready brain
states of the same observer, which forces a conscious observer through
every step of a series or parallel sequence.
"""

from .graph import (
    BrainStatus,
    Component,
    CouplingGraph,
    CurrentModel,
    CurrentParams,
    Edge,
    GraphInvalid,
    ValidationReport,
    active_edges,
    brain_status,
    conscious_map,
    rule4_allowed,
    validate,
)
from .dynamics import (
    HitEvent,
    NonFiniteModulus,
    RunConfig,
    StepTooLarge,
    TerminationReason,
    TraceRecorder,
    Trajectory,
    TrajectoryState,
    ZeroTotalModulus,
    available_modulus,
    current,
    hazard,
    initial_state,
    reduce,
    run_trajectory,
    sample_hit,
    step,
)
from .scenarios import (
    BadSpec,
    ScenarioSpec,
    hammer_chain,
    parallel_diamond,
    series_chain,
)
from .analysis import (
    ComparisonReport,
    EnsembleStats,
    FirstHitDistribution,
    IncomparableStats,
    audit_mask_obedience,
    compare_statistics,
    first_hit_oracle,
    run_ensemble,
    skip_rate,
)
from .cli import ParseError, ValidationError, emit_scenario, parse_scenario

__version__ = "0.1.0"
