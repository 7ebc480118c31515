"""Scenario files and the ``reduction-sim`` command-line front end.

Scenario format: flat sectioned key/value text, diff-friendly and trivially
parseable. One ``[scenario]`` section selects a builder (series_chain,
parallel_diamond, hammer_chain) or ``kind = explicit`` with ``[component.i]``
and ``[edge.j]`` sections; one optional ``[run]`` section carries the run
configuration. Brain statuses are spelled ``conscious``, ``ready``,
``absent``; these spellings are part of the file contract.

Commands::

    reduction-sim run       scenario.txt [--rule4 on|off] [--seed N] [--out DIR]
                            [--traces] [--full-traces]
    reduction-sim ensemble  scenario.txt [--rule4 on|off] [--seed N] [--n N] [--out DIR]
    reduction-sim compare   scenario.txt [--seed N] [--n N] [--out DIR] [--strict]

Exit status: 0 success, 1 usage/parse error, 2 validation error,
3 statistical discrepancy under ``compare --strict``.
"""

from __future__ import annotations

import argparse
import math
import sys
from pathlib import Path

from .analysis import compare_statistics, run_ensemble
from .dynamics import RunConfig, TraceRecorder, Trajectory, run_trajectory
from .graph import (
    BrainStatus,
    Component,
    CouplingGraph,
    CurrentParams,
    Edge,
    GraphInvalid,
    validate,
)
from .scenarios import BadSpec, ScenarioSpec

TRACE_ROW_LIMIT = 10_000

DEFAULT_SEED = 42


class ParseError(Exception):
    """Scenario file syntax or format error, with location."""

    def __init__(self, message: str, line: int | None = None, column: int | None = None):
        self.line = line
        self.column = column
        where = ""
        if line is not None:
            where = f"line {line}"
            if column is not None:
                where += f", col {column}"
            where += ": "
        super().__init__(where + message)


class ValidationError(Exception):
    """Scenario is well-formed but does not describe a runnable graph."""


_BOOL_WORDS = {
    "true": True,
    "on": True,
    "yes": True,
    "1": True,
    "false": False,
    "off": False,
    "no": False,
    "0": False,
}


def _parse_sections(text: str) -> dict[str, dict[str, tuple[str, int]]]:
    sections: dict[str, dict[str, tuple[str, int]]] = {}
    current: dict[str, tuple[str, int]] | None = None
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.strip()
        if not line or line.startswith("#") or line.startswith(";"):
            continue
        if line.startswith("["):
            if not line.endswith("]"):
                raise ParseError("unterminated section header", lineno, len(raw))
            name = line[1:-1].strip()
            if not name:
                raise ParseError("empty section name", lineno, 1)
            if name in sections:
                raise ParseError(f"duplicate section [{name}]", lineno, 1)
            current = {}
            sections[name] = current
        elif "=" in line:
            if current is None:
                raise ParseError("key/value outside any section", lineno, 1)
            key, value = line.split("=", 1)
            key = key.strip()
            if not key:
                raise ParseError("empty key", lineno, 1)
            if key in current:
                raise ParseError(f"duplicate key {key!r}", lineno, 1)
            current[key] = (value.strip(), lineno)
        else:
            column = len(raw) - len(raw.lstrip()) + 1
            raise ParseError(f"expected 'key = value', got {line!r}", lineno, column)
    return sections


class _Section:
    def __init__(self, name: str, entries: dict[str, tuple[str, int]]):
        self.name = name
        self.entries = entries
        self.used: set[str] = set()

    def has(self, key: str) -> bool:
        return key in self.entries

    def raw(self, key: str) -> tuple[str, int]:
        self.used.add(key)
        return self.entries[key]

    def _convert(self, key: str, converter, kind: str):
        value, line = self.raw(key)
        try:
            return converter(value)
        except (ValueError, KeyError):
            raise ParseError(
                f"[{self.name}] {key}: expected {kind}, got {value!r}", line
            ) from None

    def get_int(self, key: str, default=None):
        if not self.has(key):
            if default is None:
                raise ParseError(f"[{self.name}] missing required key {key!r}")
            return default
        return self._convert(key, int, "an integer")

    def get_float(self, key: str, default=None):
        if not self.has(key):
            if default is None:
                raise ParseError(f"[{self.name}] missing required key {key!r}")
            return default
        return self._convert(key, float, "a number")

    def get_bool(self, key: str, default: bool) -> bool:
        if not self.has(key):
            return default
        return self._convert(key, lambda v: _BOOL_WORDS[v.lower()], "a boolean (on/off)")

    def get_str(self, key: str, default=None):
        if not self.has(key):
            if default is None:
                raise ParseError(f"[{self.name}] missing required key {key!r}")
            return default
        return self.raw(key)[0]

    def get_float_list(self, key: str) -> list[float]:
        return self._convert(
            key,
            lambda v: [float(part.strip()) for part in v.split(",")],
            "comma-separated numbers",
        )

    def get_int_list(self, key: str) -> list[int]:
        return self._convert(
            key,
            lambda v: [int(part.strip()) for part in v.split(",")],
            "comma-separated integers",
        )

    def check_unknown(self, known: set[str]) -> None:
        for key, (_value, line) in self.entries.items():
            if key not in known:
                raise ParseError(f"[{self.name}] unknown key {key!r}", line)


def _parse_brain(section: _Section, key: str) -> dict[int, BrainStatus]:
    if not section.has(key):
        return {}
    value, line = section.raw(key)
    if not value:
        return {}
    out: dict[int, BrainStatus] = {}
    for part in value.split(","):
        part = part.strip()
        if ":" not in part:
            raise ParseError(
                f"[{section.name}] brain entry {part!r} is not 'observer:status'", line
            )
        obs_text, status_text = part.split(":", 1)
        try:
            obs = int(obs_text.strip())
        except ValueError:
            raise ParseError(
                f"[{section.name}] bad observer id {obs_text.strip()!r}", line
            ) from None
        try:
            status = BrainStatus(status_text.strip().lower())
        except ValueError:
            raise ParseError(
                f"[{section.name}] bad brain status {status_text.strip()!r} "
                f"(use conscious/ready/absent)",
                line,
            ) from None
        out[obs] = status
    return out


def _build_explicit_graph(sections: dict[str, dict[str, tuple[str, int]]], scenario: _Section) -> CouplingGraph:
    comp_sections: dict[int, _Section] = {}
    edge_sections: dict[int, _Section] = {}
    for name, entries in sections.items():
        if name.startswith("component."):
            comp_sections[int(name.split(".", 1)[1])] = _Section(name, entries)
        elif name.startswith("edge."):
            edge_sections[int(name.split(".", 1)[1])] = _Section(name, entries)
        elif name not in ("scenario", "run"):
            raise ParseError(f"unknown section [{name}]")
    if not comp_sections:
        raise ParseError("explicit scenario needs [component.N] sections")
    n = len(comp_sections)
    if sorted(comp_sections) != list(range(n)):
        raise ParseError(
            f"component sections must be numbered 0..{n - 1}, got {sorted(comp_sections)}"
        )
    m = len(edge_sections)
    if sorted(edge_sections) != list(range(m)):
        raise ParseError(
            f"edge sections must be numbered 0..{m - 1}, got {sorted(edge_sections)}"
        )

    components = []
    for i in range(n):
        sec = comp_sections[i]
        sec.check_unknown({"label", "brain", "terminal"})
        components.append(
            Component(
                index=i,
                apparatus_label=sec.get_str("label", f"component {i}"),
                brain=_parse_brain(sec, "brain"),
                terminal=sec.get_bool("terminal", False),
            )
        )
    edges = []
    for j in range(m):
        sec = edge_sections[j]
        sec.check_unknown({"src", "dst", "k"})
        edges.append(
            Edge(
                src=sec.get_int("src"),
                dst=sec.get_int("dst"),
                coupling=CurrentParams(k=sec.get_float("k")),
            )
        )

    if scenario.has("observers"):
        observers = tuple(scenario.get_int_list("observers"))
    else:
        observers = tuple(sorted({obs for c in components for obs in c.brain}))
    family = scenario.get_str("family", "custom")
    return CouplingGraph(
        components=tuple(components),
        edges=tuple(edges),
        observers=observers,
        kind=family,
    )


def _default_config(graph: CouplingGraph) -> tuple[float, float]:
    """Documented defaults: dt = 1e-3/k_max, max_time = 50/k_min over the
    positive couplings (1e-3 and 50 when there are none)."""
    rates = [e.coupling.k for e in graph.edges if e.coupling.k > 0]
    dt = 1e-3 / max(rates) if rates else 1e-3
    max_time = 50.0 / min(rates) if rates else 50.0
    return dt, max_time


def parse_scenario(file: str | Path) -> tuple[CouplingGraph, RunConfig]:
    """Parse a scenario file into a validated graph plus run configuration.

    Raises ParseError on syntax/format problems (with line/column) and
    ValidationError when the described graph is not runnable.
    """
    path = Path(file)
    sections = _parse_sections(path.read_text())
    if "scenario" not in sections:
        raise ParseError("missing [scenario] section")
    scenario = _Section("scenario", sections["scenario"])
    kind = scenario.get_str("kind")

    try:
        if kind == "explicit":
            graph = _build_explicit_graph(sections, scenario)
        else:
            for name in sections:
                if name not in ("scenario", "run"):
                    raise ParseError(
                        f"section [{name}] only valid with kind = explicit"
                    )
            if kind == "series_chain":
                scenario.check_unknown({"kind", "n", "k"})
                n = scenario.get_int("n")
                if scenario.has("k"):
                    ks = scenario.get_float_list("k")
                    couplings = tuple(ks * (n - 1)) if len(ks) == 1 and n > 1 else tuple(ks)
                else:
                    couplings = tuple([1.0] * max(n - 1, 0))
                spec = ScenarioSpec(kind=kind, n=n, couplings=couplings)
            elif kind == "parallel_diamond":
                scenario.check_unknown({"kind", "k", "k_0r", "k_0l", "k_rf", "k_lf"})
                base = scenario.get_float("k", 1.0)
                spec = ScenarioSpec(
                    kind=kind,
                    n=None,
                    couplings=(
                        scenario.get_float("k_0r", base),
                        scenario.get_float("k_0l", base),
                        scenario.get_float("k_rf", base),
                        scenario.get_float("k_lf", base),
                    ),
                )
            elif kind == "hammer_chain":
                scenario.check_unknown({"kind", "n_angles", "k_decay", "k_angle"})
                spec = ScenarioSpec(
                    kind=kind,
                    n=scenario.get_int("n_angles"),
                    couplings=(
                        scenario.get_float("k_decay", 1.0),
                        scenario.get_float("k_angle", 1.0),
                    ),
                )
            else:
                value, line = scenario.raw("kind")
                raise ParseError(f"unknown scenario kind {value!r}", line)
            graph = spec.build()
    except BadSpec as exc:
        raise ValidationError(str(exc)) from exc

    report = validate(graph)
    if not report.ok:
        raise ValidationError(str(report))

    default_dt, default_max_time = _default_config(graph)
    run = _Section("run", sections.get("run", {}))
    run.check_unknown(
        {"dt", "max_time", "seed", "rule4", "n_trajectories", "emit_traces", "output_dir"}
    )
    out_dir = run.get_str("output_dir", "")
    try:
        config = RunConfig(
            dt=run.get_float("dt", default_dt),
            max_time=run.get_float("max_time", default_max_time),
            seed=run.get_int("seed", DEFAULT_SEED),
            rule4_enabled=run.get_bool("rule4", True),
            n_trajectories=run.get_int("n_trajectories", 1),
            emit_traces=run.get_bool("emit_traces", False),
            output_dir=Path(out_dir) if out_dir else None,
        )
    except ValueError as exc:
        raise ValidationError(str(exc)) from exc
    return graph, config


def emit_scenario(graph: CouplingGraph, config: RunConfig) -> str:
    """Serialize (graph, config) so that parse_scenario reproduces it exactly."""
    lines = ["# reduction-sim scenario", "[scenario]", "kind = explicit"]
    lines.append(f"family = {graph.kind}")
    lines.append(f"observers = {','.join(str(o) for o in graph.observers)}")
    for comp in graph.components:
        lines.append("")
        lines.append(f"[component.{comp.index}]")
        lines.append(f"label = {comp.apparatus_label}")
        if comp.brain:
            brain = ",".join(
                f"{obs}:{comp.brain[obs].value}" for obs in sorted(comp.brain)
            )
            lines.append(f"brain = {brain}")
        lines.append(f"terminal = {'true' if comp.terminal else 'false'}")
    for j, edge in enumerate(graph.edges):
        lines.append("")
        lines.append(f"[edge.{j}]")
        lines.append(f"src = {edge.src}")
        lines.append(f"dst = {edge.dst}")
        lines.append(f"k = {edge.coupling.k!r}")
    lines.append("")
    lines.append("[run]")
    lines.append(f"dt = {config.dt!r}")
    lines.append(f"max_time = {config.max_time!r}")
    lines.append(f"seed = {config.seed}")
    lines.append(f"rule4 = {'on' if config.rule4_enabled else 'off'}")
    lines.append(f"n_trajectories = {config.n_trajectories}")
    lines.append(f"emit_traces = {'true' if config.emit_traces else 'false'}")
    if config.output_dir is not None:
        lines.append(f"output_dir = {config.output_dir}")
    lines.append("")
    return "\n".join(lines)


# ---------------------------------------------------------------------------
# Commands


def _format_float(x: float) -> str:
    return repr(float(x))


def _write_events_csv(path: Path, trajectory: Trajectory, traj_id: int = 0) -> None:
    lines = ["traj_id,t,src,dst,target"]
    for ev in trajectory.events:
        lines.append(
            f"{traj_id},{_format_float(ev.time)},{ev.source_edge[0]},"
            f"{ev.source_edge[1]},{ev.target}"
        )
    path.write_text("\n".join(lines) + "\n")


def _write_trace_csv(path: Path, trace: TraceRecorder, n_comp: int, full: bool) -> None:
    rows = trace.as_array()
    if not full and rows.shape[0] > TRACE_ROW_LIMIT:
        stride = math.ceil(rows.shape[0] / TRACE_ROW_LIMIT)
        rows = rows[::stride]
    header = "t," + ",".join(f"m_{i}" for i in range(n_comp)) + ",total"
    lines = [header]
    for row in rows:
        lines.append(",".join(_format_float(x) for x in row))
    path.write_text("\n".join(lines) + "\n")


def _apply_overrides(config: RunConfig, args) -> RunConfig:
    if getattr(args, "rule4", None) is not None:
        config.rule4_enabled = args.rule4 == "on"
    if getattr(args, "seed", None) is not None:
        config.seed = args.seed
    if getattr(args, "n", None) is not None:
        config.n_trajectories = args.n
    if getattr(args, "traces", False):
        config.emit_traces = True
    return config


def _out_dir(config: RunConfig, args) -> Path:
    if getattr(args, "out", None) is not None:
        out = Path(args.out)
    elif config.output_dir is not None:
        out = config.output_dir
    else:
        out = Path(".")
    out.mkdir(parents=True, exist_ok=True)
    return out


def cmd_run(args) -> int:
    graph, config = parse_scenario(args.scenario)
    config = _apply_overrides(config, args)
    out = _out_dir(config, args)
    trace = TraceRecorder() if config.emit_traces else None
    trajectory = run_trajectory(graph, config, trace=trace)
    _write_events_csv(out / "events.csv", trajectory)
    written = [out / "events.csv"]
    if trace is not None:
        _write_trace_csv(
            out / "trace.csv", trace, graph.n_components, args.full_traces
        )
        written.append(out / "trace.csv")
    visits = ">".join(str(c) for c in trajectory.visit_sequence)
    print(f"terminated: {trajectory.terminated.value} at t={trajectory.end_time!r}")
    print(f"visits: {visits}")
    print(f"events: {len(trajectory.events)}")
    for path in written:
        print(f"wrote {path}")
    return 0


def cmd_ensemble(args) -> int:
    graph, config = parse_scenario(args.scenario)
    config = _apply_overrides(config, args)
    out = _out_dir(config, args)
    stats = run_ensemble(graph, config, config.n_trajectories)
    report_path = out / "report.txt"
    report_path.write_text(stats.to_text())
    print(f"n = {stats.n_trajectories}")
    print(f"skip_count = {stats.skip_count}")
    print(f"absorbed = {stats.absorption_count}")
    if stats.path_counts is not None:
        print(f"paths = {stats.path_counts}")
    print(f"wrote {report_path}")
    return 0


def cmd_compare(args) -> int:
    graph, config = parse_scenario(args.scenario)
    config = _apply_overrides(config, args)
    out = _out_dir(config, args)
    n = config.n_trajectories

    config_on = RunConfig(
        dt=config.dt,
        max_time=config.max_time,
        seed=config.seed,
        rule4_enabled=True,
        n_trajectories=n,
    )
    config_off = RunConfig(
        dt=config.dt,
        max_time=config.max_time,
        seed=config.seed,
        rule4_enabled=False,
        n_trajectories=n,
    )
    stats_on = run_ensemble(graph, config_on, n)
    stats_off = run_ensemble(graph, config_off, n)
    report = compare_statistics(stats_on, stats_off)

    (out / "ensemble_rule4_on.txt").write_text(stats_on.to_text())
    (out / "ensemble_rule4_off.txt").write_text(stats_off.to_text())
    report_path = out / "comparison.txt"
    report_path.write_text(report.to_text())

    print(f"tv_distance = {report.tv_distance!r}")
    print(f"flagged = {'yes' if report.any_flagged else 'no'}")
    print(f"visit_orders_differ = {'yes' if report.visit_orders_differ else 'no'}")
    print(f"wrote {report_path}")
    if args.strict and report.any_flagged:
        print("strict mode: absorption marginals disagree", file=sys.stderr)
        return 3
    return 0


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        print(f"{self.prog}: error: {message}", file=sys.stderr)
        raise SystemExit(1)


def _build_parser() -> _Parser:
    parser = _Parser(
        prog="reduction-sim",
        description="Stochastic state-reduction trajectories on coupling graphs.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p, with_n: bool):
        p.add_argument("scenario", help="scenario file")
        p.add_argument("--seed", type=int, default=None, help="override master seed")
        p.add_argument("--out", default=None, help="output directory")
        if with_n:
            p.add_argument(
                "--n", type=int, default=None, help="override trajectory count"
            )

    p_run = sub.add_parser("run", help="run a single trajectory")
    common(p_run, with_n=False)
    p_run.add_argument("--rule4", choices=("on", "off"), default=None)
    p_run.add_argument(
        "--traces", action="store_true", help="emit the per-step modulus trace"
    )
    p_run.add_argument(
        "--full-traces",
        action="store_true",
        help="do not downsample the trace CSV",
    )
    p_run.set_defaults(fn=cmd_run)

    p_ens = sub.add_parser("ensemble", help="run a Monte Carlo ensemble")
    common(p_ens, with_n=True)
    p_ens.add_argument("--rule4", choices=("on", "off"), default=None)
    p_ens.set_defaults(fn=cmd_ensemble)

    p_cmp = sub.add_parser(
        "compare", help="run the scenario with the selection rule on and off"
    )
    common(p_cmp, with_n=True)
    p_cmp.add_argument(
        "--strict",
        action="store_true",
        help="exit 3 when absorption marginals disagree",
    )
    p_cmp.set_defaults(fn=cmd_compare)
    return parser


def main(argv=None) -> int:
    try:
        args = _build_parser().parse_args(argv)
    except SystemExit as exc:
        return 0 if exc.code in (0, None) else 1
    try:
        return args.fn(args)
    except FileNotFoundError as exc:
        print(f"reduction-sim: {exc}", file=sys.stderr)
        return 1
    except ParseError as exc:
        print(f"reduction-sim: parse error: {exc}", file=sys.stderr)
        return 1
    except (ValidationError, GraphInvalid) as exc:
        print(f"reduction-sim: validation error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
