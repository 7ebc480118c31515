"""Builders for the three scenario families.

All builders produce validated single-observer graphs:

* ``series_chain``   -- a counter advancing through n dial readings.
* ``parallel_diamond`` -- two two-step routes (via a right or a left
  intermediate) from a start state to a shared final state, with no direct
  coupling from start to final.
* ``hammer_chain``   -- a decay-triggered mechanism swept through a sequence
  of angle states; structurally a labeled series chain whose first link is the
  decay coupling.
"""

from __future__ import annotations

from collections.abc import Sequence
from dataclasses import dataclass

from .graph import (
    BrainStatus,
    Component,
    CouplingGraph,
    CurrentParams,
    Edge,
)

OBSERVER = 0


class BadSpec(ValueError):
    """Scenario parameters outside the builder's domain."""


def _edge(src: int, dst: int, k: float) -> Edge:
    return Edge(src=src, dst=dst, coupling=CurrentParams(k=float(k)))


def _check_rates(rates: Sequence[float]) -> None:
    for k in rates:
        if k < 0:
            raise BadSpec(f"negative coupling rate {k}")


def series_chain(n: int, k: float | Sequence[float] = 1.0) -> CouplingGraph:
    """Chain of n components with nearest-neighbour couplings only.

    Component 0 starts conscious, components 1..n-1 hold ready brain states,
    and component n-1 is terminal. ``k`` is either one rate for every link or
    a sequence of n-1 per-link rates. There is deliberately no coupling that
    skips over a component.
    """
    if n < 2:
        raise BadSpec(f"series chain needs at least 2 components, got {n}")
    rates = [float(k)] * (n - 1) if isinstance(k, (int, float)) else [float(v) for v in k]
    if len(rates) != n - 1:
        raise BadSpec(f"need {n - 1} rates for a {n}-component chain, got {len(rates)}")
    _check_rates(rates)

    components = tuple(
        Component(
            index=i,
            apparatus_label=f"dial={i}",
            brain={OBSERVER: BrainStatus.CONSCIOUS if i == 0 else BrainStatus.READY},
            terminal=(i == n - 1),
        )
        for i in range(n)
    )
    edges = tuple(_edge(i, i + 1, rates[i]) for i in range(n - 1))
    return CouplingGraph(components, edges, observers=(OBSERVER,), kind="series_chain")


# Fixed component order of the diamond; the statistics layer relies on it.
DIAMOND_START, DIAMOND_RIGHT, DIAMOND_LEFT, DIAMOND_FINAL = 0, 1, 2, 3


def parallel_diamond(
    k_0r: float = 1.0,
    k_0l: float = 1.0,
    k_rf: float = 1.0,
    k_lf: float = 1.0,
) -> CouplingGraph:
    """Four components: start, right/left intermediates, final.

    Edges (0,r), (0,l), (r,f), (l,f); no direct start-to-final coupling. The
    start is conscious, everything else ready, the final state terminal.
    """
    _check_rates([k_0r, k_0l, k_rf, k_lf])
    labels = ["start", "right", "left", "final"]
    components = tuple(
        Component(
            index=i,
            apparatus_label=labels[i],
            brain={OBSERVER: BrainStatus.CONSCIOUS if i == 0 else BrainStatus.READY},
            terminal=(i == DIAMOND_FINAL),
        )
        for i in range(4)
    )
    edges = (
        _edge(DIAMOND_START, DIAMOND_RIGHT, k_0r),
        _edge(DIAMOND_START, DIAMOND_LEFT, k_0l),
        _edge(DIAMOND_RIGHT, DIAMOND_FINAL, k_rf),
        _edge(DIAMOND_LEFT, DIAMOND_FINAL, k_lf),
    )
    return CouplingGraph(components, edges, observers=(OBSERVER,), kind="parallel_diamond")


def hammer_chain(n_angles: int, k_decay: float = 1.0, k_angle: float = 1.0) -> CouplingGraph:
    """Decay source plus a discretized sweep through n_angles angle states.

    Component 0 is "no decay, hammer vertical" and starts conscious for the
    watching observer; components 1..n_angles are successive hammer angles,
    each with a ready brain state; the last angle is terminal. Edge (0,1)
    carries the decay rate, the remaining links the angle-to-angle rate. The
    sweep is modeled as a chain of stochastic steps so the selection rule can
    enforce that no angle is passed over.
    """
    if n_angles < 2:
        raise BadSpec(f"hammer chain needs at least 2 angle states, got {n_angles}")
    _check_rates([k_decay, k_angle])

    n = n_angles + 1
    components = tuple(
        Component(
            index=i,
            apparatus_label="no-decay hammer vertical" if i == 0 else f"hammer angle {i}",
            brain={OBSERVER: BrainStatus.CONSCIOUS if i == 0 else BrainStatus.READY},
            terminal=(i == n - 1),
        )
        for i in range(n)
    )
    edges = tuple(
        _edge(i, i + 1, k_decay if i == 0 else k_angle) for i in range(n - 1)
    )
    return CouplingGraph(components, edges, observers=(OBSERVER,), kind="hammer_chain")


@dataclass(frozen=True)
class ScenarioSpec:
    """Parsed scenario-file parameters for one builder invocation.

    ``couplings`` is the per-edge rate list in builder edge order:
    series/hammer links in chain order, diamond as (0r, 0l, rf, lf).
    """

    kind: str
    n: int | None
    couplings: tuple[float, ...]
    observer_count: int = 1

    def build(self) -> CouplingGraph:
        if self.observer_count != 1:
            raise BadSpec("builders support exactly one observer")
        if self.kind == "series_chain":
            if self.n is None:
                raise BadSpec("series_chain needs n")
            return series_chain(self.n, self.couplings or 1.0)
        if self.kind == "parallel_diamond":
            if len(self.couplings) != 4:
                raise BadSpec("parallel_diamond needs 4 rates (0r, 0l, rf, lf)")
            return parallel_diamond(*self.couplings)
        if self.kind == "hammer_chain":
            if self.n is None:
                raise BadSpec("hammer_chain needs n_angles")
            if len(self.couplings) != 2:
                raise BadSpec("hammer_chain needs rates (k_decay, k_angle)")
            return hammer_chain(self.n, *self.couplings)
        raise BadSpec(f"unknown scenario kind {self.kind!r}")
