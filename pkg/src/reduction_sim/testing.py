"""Helpers for building engine states directly in tests."""

from __future__ import annotations

import numpy as np

from .dynamics import TrajectoryState, derive_stream_seed
from .graph import CouplingGraph, conscious_map


def make_state(
    graph: CouplingGraph,
    moduli=None,
    conscious: int | None = None,
    rule4: bool = True,
    seed: int = 0,
) -> TrajectoryState:
    """TrajectoryState with explicit moduli and consciousness location.

    ``moduli`` defaults to unit mass on the conscious component; ``conscious``
    overrides the assignment for every observer at once.
    """
    assignment = conscious_map(graph)
    if conscious is not None:
        assignment = {obs: conscious for obs in graph.observers}
    if moduli is None:
        m = np.zeros(graph.n_components)
        m[assignment[min(graph.observers)]] = 1.0
    else:
        m = np.asarray(moduli, dtype=float).copy()
    return TrajectoryState(
        moduli=m,
        time=0.0,
        conscious_at=assignment,
        rng=np.random.RandomState(derive_stream_seed(seed, 0)),
        rule4_enabled=rule4,
    )
