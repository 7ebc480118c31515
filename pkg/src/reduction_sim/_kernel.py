"""Compiled single-observer trajectory kernel.

Mirrors the reference engine in ``dynamics`` statement for statement: the
same RK4 expressions, the same accumulation order, and the same MT19937
stream (numba's legacy np.random matches np.random.RandomState bit for bit),
so a compiled trajectory is byte-identical to its reference twin. Falls back
gracefully when numba is missing; multi-observer graphs always take the
reference path.
"""

from __future__ import annotations

import numpy as np

from .graph import BrainStatus, CouplingGraph
from . import dynamics as _dyn

try:
    from numba import njit

    HAVE_NUMBA = True
except ImportError:  # pragma: no cover - numba is a declared dependency
    HAVE_NUMBA = False

    def njit(*args, **kwargs):
        def wrap(fn):
            return fn

        if args and callable(args[0]):
            return args[0]
        return wrap


STATUS_ABSORBED = 0
STATUS_MAX_TIME = 1
STATUS_QUIESCENT = 2

ERR_NONE = 0
ERR_STEP_PROBABILITY = 1
ERR_NON_FINITE = 2
ERR_CLAMP = 3
ERR_NO_AVAILABLE = 4
ERR_EVENT_OVERFLOW = 5

_STATUS_TO_REASON = {
    STATUS_ABSORBED: _dyn.TerminationReason.ABSORBED,
    STATUS_MAX_TIME: _dyn.TerminationReason.MAX_TIME,
    STATUS_QUIESCENT: _dyn.TerminationReason.QUIESCENT,
}


def usable(graph: CouplingGraph) -> bool:
    """Compiled kernel handles exactly the single-observer case."""
    return HAVE_NUMBA and len(graph.observers) == 1


@njit(cache=True, nogil=True)
def _trajectory_kernel(
    n_comp,
    e_src,
    e_dst,
    e_k,
    brain,
    terminal,
    conscious0,
    rule4,
    dt,
    max_time,
    seed,
    max_events,
):
    np.random.seed(seed)
    n_edges = e_src.shape[0]
    m = np.zeros(n_comp)
    m[conscious0] = 1.0
    conscious = conscious0

    active = np.zeros(n_edges, np.bool_)
    for e in range(n_edges):
        ready_src = brain[e_src[e]] and e_src[e] != conscious
        ready_dst = brain[e_dst[e]] and e_dst[e] != conscious
        active[e] = not (rule4 and ready_src and ready_dst)

    k1 = np.zeros(n_comp)
    k2 = np.zeros(n_comp)
    k3 = np.zeros(n_comp)
    k4 = np.zeros(n_comp)
    y = np.zeros(n_comp)
    m_new = np.zeros(n_comp)
    infl = np.zeros(n_comp)

    ev_time = np.zeros(max_events)
    ev_src = np.zeros(max_events, np.int64)
    ev_dst = np.zeros(max_events, np.int64)
    ev_target = np.zeros(max_events, np.int64)
    n_ev = 0

    t = 0.0
    status = STATUS_MAX_TIME
    err = ERR_NONE

    while True:
        if terminal[conscious]:
            status = STATUS_ABSORBED
            break
        if t >= max_time:
            status = STATUS_MAX_TIME
            break

        pre_max = 0.0
        for e in range(n_edges):
            if active[e]:
                f = e_k[e] * m[e_src[e]]
                if f > pre_max:
                    pre_max = f

        # RK4 over [t, t+dt]; expressions mirror dynamics.step exactly.
        for i in range(n_comp):
            k1[i] = 0.0
        for e in range(n_edges):
            if active[e]:
                f = e_k[e] * m[e_src[e]]
                k1[e_src[e]] -= f
                k1[e_dst[e]] += f
        for i in range(n_comp):
            y[i] = m[i] + 0.5 * dt * k1[i]
        for i in range(n_comp):
            k2[i] = 0.0
        for e in range(n_edges):
            if active[e]:
                f = e_k[e] * y[e_src[e]]
                k2[e_src[e]] -= f
                k2[e_dst[e]] += f
        for i in range(n_comp):
            y[i] = m[i] + 0.5 * dt * k2[i]
        for i in range(n_comp):
            k3[i] = 0.0
        for e in range(n_edges):
            if active[e]:
                f = e_k[e] * y[e_src[e]]
                k3[e_src[e]] -= f
                k3[e_dst[e]] += f
        for i in range(n_comp):
            y[i] = m[i] + dt * k3[i]
        for i in range(n_comp):
            k4[i] = 0.0
        for e in range(n_edges):
            if active[e]:
                f = e_k[e] * y[e_src[e]]
                k4[e_src[e]] -= f
                k4[e_dst[e]] += f
        for i in range(n_comp):
            m_new[i] = m[i] + (dt / 6.0) * (k1[i] + 2.0 * k2[i] + 2.0 * k3[i] + k4[i])

        finite = True
        for i in range(n_comp):
            if not np.isfinite(m_new[i]):
                finite = False
        if not finite:
            err = ERR_NON_FINITE
            break

        any_negative = False
        deficit = 0.0
        worst = 0.0
        for i in range(n_comp):
            if m_new[i] < 0.0:
                any_negative = True
                deficit += -m_new[i]
                if -m_new[i] > worst:
                    worst = -m_new[i]
        if any_negative:
            if worst > _dyn.MAX_CLAMP_DEFICIT:
                err = ERR_CLAMP
                break
            total_gain = 0.0
            for i in range(n_comp):
                if m_new[i] < 0.0:
                    continue
                g = m_new[i] - m[i]
                if g > 0.0:
                    total_gain += g
            if total_gain > 0.0:
                for i in range(n_comp):
                    if m_new[i] < 0.0:
                        m_new[i] = 0.0
                    else:
                        g = m_new[i] - m[i]
                        if g > 0.0:
                            m_new[i] -= deficit * g / total_gain
            else:
                total_pos = 0.0
                for i in range(n_comp):
                    if m_new[i] > 0.0:
                        total_pos += m_new[i]
                for i in range(n_comp):
                    if m_new[i] < 0.0:
                        m_new[i] = 0.0
                    elif m_new[i] > 0.0:
                        m_new[i] -= deficit * m_new[i] / total_pos

        for i in range(n_comp):
            m[i] = m_new[i]
        t = t + dt

        post_max = 0.0
        for e in range(n_edges):
            if active[e]:
                f = e_k[e] * m[e_src[e]]
                if f > post_max:
                    post_max = f
        if pre_max < _dyn.QUIESCENT_CURRENT and post_max < _dyn.QUIESCENT_CURRENT:
            status = STATUS_QUIESCENT
            break

        # Hazards of the post-step state.
        for i in range(n_comp):
            infl[i] = 0.0
        for e in range(n_edges):
            if active[e]:
                f = e_k[e] * m[e_src[e]]
                if f > 0.0:
                    infl[e_dst[e]] += f
        have_target = False
        for i in range(n_comp):
            if infl[i] > 0.0:
                have_target = True
        if not have_target:
            continue

        total = 0.0
        for i in range(n_comp):
            total += m[i]
        avail = total
        for i in range(n_comp):
            if infl[i] > 0.0:
                avail -= m[i]
        if avail <= 0.0:
            err = ERR_NO_AVAILABLE
            break

        p_sum = 0.0
        for c in range(n_comp):
            if infl[c] > 0.0:
                p_sum += infl[c] / avail * dt
        if p_sum >= _dyn.MAX_STEP_HIT_PROBABILITY:
            err = ERR_STEP_PROBABILITY
            break

        u = np.random.random()
        if u >= p_sum:
            continue
        target = -1
        acc = 0.0
        for c in range(n_comp):
            if infl[c] > 0.0:
                target = c
                acc += infl[c] / avail * dt
                if u < acc:
                    break

        # Attribute the hit to one inflow edge, proportional to its current.
        n_candidates = 0
        chosen = -1
        j_total = 0.0
        for e in range(n_edges):
            if active[e] and e_dst[e] == target:
                f = e_k[e] * m[e_src[e]]
                if f > 0.0:
                    n_candidates += 1
                    chosen = e
                    j_total += f
        if n_candidates > 1:
            pick = np.random.random() * j_total
            acc = 0.0
            for e in range(n_edges):
                if active[e] and e_dst[e] == target:
                    f = e_k[e] * m[e_src[e]]
                    if f > 0.0:
                        chosen = e
                        acc += f
                        if pick < acc:
                            break

        if n_ev >= max_events:
            err = ERR_EVENT_OVERFLOW
            break
        ev_time[n_ev] = t
        ev_src[n_ev] = e_src[chosen]
        ev_dst[n_ev] = e_dst[chosen]
        ev_target[n_ev] = target
        n_ev += 1

        keep = m[target]
        for i in range(n_comp):
            m[i] = 0.0
        m[target] = keep
        if brain[target] and target != conscious:
            conscious = target
        for e in range(n_edges):
            ready_src = brain[e_src[e]] and e_src[e] != conscious
            ready_dst = brain[e_dst[e]] and e_dst[e] != conscious
            active[e] = not (rule4 and ready_src and ready_dst)

    return status, err, t, n_ev, ev_time, ev_src, ev_dst, ev_target, m


def _graph_arrays(graph: CouplingGraph):
    obs = graph.observers[0]
    e_src = np.array([e.src for e in graph.edges], dtype=np.int64)
    e_dst = np.array([e.dst for e in graph.edges], dtype=np.int64)
    e_k = np.array([e.coupling.k for e in graph.edges], dtype=np.float64)
    brain = np.array([c.bears_brain(obs) for c in graph.components], dtype=np.bool_)
    terminal = np.array([c.terminal for c in graph.components], dtype=np.bool_)
    conscious0 = next(
        c.index
        for c in graph.components
        if c.brain.get(obs) is BrainStatus.CONSCIOUS
    )
    return e_src, e_dst, e_k, brain, terminal, conscious0


def run_trajectory_compiled(
    graph: CouplingGraph, config: "_dyn.RunConfig", traj_index: int = 0
) -> "_dyn.Trajectory":
    e_src, e_dst, e_k, brain, terminal, conscious0 = _graph_arrays(graph)
    seed = _dyn.derive_stream_seed(config.seed, traj_index)
    max_events = 16 + 4 * graph.n_components
    while True:
        status, err, t, n_ev, ev_time, ev_src, ev_dst, ev_target, _m = _trajectory_kernel(
            graph.n_components,
            e_src,
            e_dst,
            e_k,
            brain,
            terminal,
            conscious0,
            config.rule4_enabled,
            config.dt,
            config.max_time,
            seed,
            max_events,
        )
        if err != ERR_EVENT_OVERFLOW:
            break
        max_events *= 4

    if err == ERR_STEP_PROBABILITY:
        raise _dyn.StepTooLarge(
            f"total hit probability in one step exceeds "
            f"{_dyn.MAX_STEP_HIT_PROBABILITY}; reduce dt"
        )
    if err == ERR_NON_FINITE:
        raise _dyn.NonFiniteModulus(f"non-finite modulus after step at t={t}")
    if err == ERR_CLAMP:
        raise _dyn.StepTooLarge(f"dt={config.dt} destabilizes the integrator")
    if err == ERR_NO_AVAILABLE:
        raise _dyn.ZeroTotalModulus("no modulus outside the receiving components")

    events = tuple(
        _dyn.HitEvent(
            time=float(ev_time[i]),
            target=int(ev_target[i]),
            source_edge=(int(ev_src[i]), int(ev_dst[i])),
        )
        for i in range(n_ev)
    )
    visits = (conscious0,) + tuple(int(ev_target[i]) for i in range(n_ev))
    return _dyn.Trajectory(
        events=events,
        visit_sequence=visits,
        terminated=_STATUS_TO_REASON[int(status)],
        end_time=float(t),
    )
