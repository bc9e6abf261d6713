"""Command-line front end: validate scenarios, run them, compare strategies, replay events.

Scenario files are YAML (JSON works too, being a YAML subset); the schema is
given by SCENARIO_SCHEMA below. A run writes six files into its output
directory: requests.csv, weights.csv, rolling_qos.csv, regret.csv,
summary.json and manifest.json. `compare` sweeps strategy x topology cells
and emits aggregate.csv; `events` additionally writes events.csv aligning
scenario events with the rolling-QoS series.
"""

from __future__ import annotations

import argparse
import csv
import json
import math
import os
import sys
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import replace
from pathlib import Path
from typing import Optional

import jsonschema
import yaml

from . import __version__
from .core import QosRequirements, Topology
from .engine import SimulationTrace, run_scenario
from .metrics import MetricsReport, compute_report
from .scenarios import (
    EngineParams,
    ScenarioSpec,
    ServiceTimeModel,
    StrategySpec,
    TimedEvent,
    TopologyParams,
    WorkloadSpec,
)

RUN_FILES = (
    "requests.csv",
    "weights.csv",
    "rolling_qos.csv",
    "regret.csv",
    "summary.json",
    "manifest.json",
)

SCENARIO_SCHEMA = {
    "type": "object",
    "required": ["qos", "duration_s", "topology", "placement"],
    "additionalProperties": False,
    "properties": {
        "seed": {"type": "integer", "minimum": 0},
        "duration_s": {"type": "number", "exclusiveMinimum": 0},
        "qos": {
            "type": "object",
            "required": ["tau_ms", "rho", "window_s"],
            "additionalProperties": False,
            "properties": {
                "tau_ms": {"type": "number", "exclusiveMinimum": 0},
                "rho": {"type": "number", "exclusiveMinimum": 0, "maximum": 1},
                "window_s": {"type": "number", "exclusiveMinimum": 0},
            },
        },
        "topology": {
            "type": "object",
            "minProperties": 1,
            "maxProperties": 1,
            "additionalProperties": False,
            "properties": {
                "generator": {
                    "type": "object",
                    "additionalProperties": False,
                    "properties": {
                        "n_nodes": {"type": "integer", "minimum": 2},
                        "box": {"type": "number", "exclusiveMinimum": 0},
                        "ms_per_unit": {"type": "number", "minimum": 0},
                        "base_ms": {"type": "number", "minimum": 0},
                        "seed": {"type": "integer", "minimum": 0},
                    },
                },
                "matrix_csv": {"type": "string"},
            },
        },
        "placement": {
            "type": "object",
            "minProperties": 1,
            "maxProperties": 1,
            "additionalProperties": False,
            "properties": {
                "k_center": {
                    "type": "object",
                    "required": ["k"],
                    "additionalProperties": False,
                    "properties": {"k": {"type": "integer", "minimum": 1}},
                },
                "explicit": {
                    "type": "array",
                    "minItems": 1,
                    "items": {
                        "type": "array",
                        "minItems": 2,
                        "maxItems": 2,
                        "items": {"type": "integer", "minimum": 0},
                    },
                },
            },
        },
        "workload": {
            "type": "object",
            "additionalProperties": False,
            "properties": {
                "clients_per_lb": {"type": "integer", "minimum": 0},
                "rate_per_client": {"type": "number", "exclusiveMinimum": 0},
                "phase": {"enum": ["spread", "zero"]},
            },
        },
        "service": {
            "type": "object",
            "additionalProperties": False,
            "properties": {
                "family": {"enum": ["lognormal"]},
                "mean_ms": {"type": "number", "exclusiveMinimum": 0},
                "cv": {"type": "number", "minimum": 0},
                "idle_latency_ms": {"type": "number", "exclusiveMinimum": 0},
            },
        },
        "strategy": {
            "type": "object",
            "required": ["name"],
            "properties": {
                "name": {"enum": ["qedgeproxy", "proxymity", "dec_sarsa"]},
            },
        },
        "engine": {
            "type": "object",
            "additionalProperties": False,
            "properties": {
                "probe_period_s": {"type": "number", "exclusiveMinimum": 0},
                "mc_draws": {"type": "integer", "minimum": 1},
                "removal_mode": {"enum": ["drain", "fail"]},
            },
        },
        "events": {
            "type": "array",
            "items": {
                "type": "object",
                "required": ["time_s", "kind"],
                "properties": {
                    "time_s": {"type": "number", "minimum": 0},
                    "kind": {"enum": ["add_clients", "remove_instance", "add_instance"]},
                },
            },
        },
    },
}


class ScenarioError(ValueError):
    """Scenario file failed validation; message names the offending field."""


def load_topology_csv(path: Path) -> Topology:
    """Latency matrix CSV: first row node ids, then the symmetric matrix in ms."""
    with open(path, newline="") as fh:
        rows = list(csv.reader(fh))
    if len(rows) < 2:
        raise ScenarioError(f"{path}: matrix CSV needs a header row and matrix rows")
    n = len(rows[0])
    matrix = []
    for i, row in enumerate(rows[1:]):
        if len(row) != n:
            raise ScenarioError(f"{path}: row {i + 1} has {len(row)} cells, expected {n}")
        matrix.append([float(x) for x in row])
    if len(matrix) != n:
        raise ScenarioError(f"{path}: expected {n} matrix rows, found {len(matrix)}")
    try:
        return Topology(matrix)
    except ValueError as exc:
        raise ScenarioError(f"{path}: {exc}") from exc


def parse_scenario_dict(doc: dict, base_dir: Path) -> ScenarioSpec:
    try:
        jsonschema.validate(doc, SCENARIO_SCHEMA)
    except jsonschema.ValidationError as exc:
        path = ".".join(str(p) for p in exc.absolute_path) or "(document root)"
        raise ScenarioError(f"scenario field {path!r}: {exc.message}") from exc

    qos_doc = doc["qos"]
    try:
        qos = QosRequirements(qos_doc["tau_ms"], qos_doc["rho"], qos_doc["window_s"])
    except ValueError as exc:
        raise ScenarioError(f"scenario field 'qos': {exc}") from exc

    topo_doc = doc["topology"]
    topology_params = None
    topology_matrix = None
    if "generator" in topo_doc:
        topology_params = TopologyParams(**topo_doc["generator"])
    else:
        topology_matrix = load_topology_csv(base_dir / topo_doc["matrix_csv"])

    placement_doc = doc["placement"]
    placement_k = None
    placement_explicit = None
    if "k_center" in placement_doc:
        placement_k = placement_doc["k_center"]["k"]
    else:
        placement_explicit = [(int(a), int(b)) for a, b in placement_doc["explicit"]]

    strategy_doc = dict(doc.get("strategy", {"name": "qedgeproxy"}))
    name = strategy_doc.pop("name")

    spec = ScenarioSpec(
        qos=qos,
        duration_s=float(doc["duration_s"]),
        seed=int(doc.get("seed", 0)),
        topology_params=topology_params,
        topology_matrix=topology_matrix,
        placement_k=placement_k,
        placement_explicit=placement_explicit,
        workload=WorkloadSpec(**doc.get("workload", {})),
        service=ServiceTimeModel(**doc.get("service", {})),
        strategy=StrategySpec(name, strategy_doc),
        engine=EngineParams(**doc.get("engine", {})),
        events=[
            TimedEvent(
                time_s=float(e["time_s"]),
                kind=e["kind"],
                params={k: v for k, v in e.items() if k not in ("time_s", "kind")},
            )
            for e in doc.get("events", [])
        ],
    )
    try:
        spec.validate()
    except ValueError as exc:
        raise ScenarioError(str(exc)) from exc
    return spec


def load_scenario(path: str | Path) -> ScenarioSpec:
    path = Path(path)
    try:
        doc = yaml.safe_load(path.read_text())
    except yaml.YAMLError as exc:
        raise ScenarioError(f"{path}: not valid YAML: {exc}") from exc
    if not isinstance(doc, dict):
        raise ScenarioError(f"{path}: scenario document must be a mapping")
    return parse_scenario_dict(doc, path.parent)


def parse_strategy_token(token: str) -> StrategySpec:
    """Tokens like 'qedgeproxy', 'proxymity:0.9', 'dec_sarsa'."""
    name, _, arg = token.strip().partition(":")
    params: dict = {}
    if name == "proxymity":
        params["alpha"] = float(arg) if arg else 1.0
    elif arg:
        raise ScenarioError(f"strategy {name!r} takes no parameter, got {arg!r}")
    return StrategySpec(name, params)


# -- output writers ------------------------------------------------------------


def _fmt_ms(x: float) -> str:
    return "inf" if math.isinf(x) else f"{x:.3f}"


def _fmt_frac(x: float) -> str:
    return f"{x:.6f}"


def _atomic_write(path: Path, text: str) -> None:
    tmp = path.with_suffix(path.suffix + ".tmp")
    tmp.write_text(text)
    os.replace(tmp, path)


def write_requests_csv(path: Path, trace: SimulationTrace) -> None:
    rows = ["client,lb,instance,send_time_ms,net_ms,proc_ms,total_ms,success"]
    for r in sorted(trace.records, key=lambda r: (r.send_time_ms, r.client)):
        inst = "" if r.instance is None else str(r.instance)
        rows.append(
            f"{r.client},{r.lb},{inst},{_fmt_ms(r.send_time_ms)},{_fmt_ms(r.net_ms)},"
            f"{_fmt_ms(r.proc_ms)},{_fmt_ms(r.total_ms)},{int(r.success)}"
        )
    _atomic_write(path, "\n".join(rows) + "\n")


def write_weights_csv(path: Path, trace: SimulationTrace) -> None:
    rows = ["time_s,lb,instance,weight"]
    for t_idx, t_ms in enumerate(trace.tick_times_ms):
        w = trace.weights[t_idx]
        for lb in trace.lb_ids:
            for col, m in enumerate(trace.instance_ids):
                if w[lb, col] > 0:
                    rows.append(
                        f"{t_ms / 1000.0:.3f},{lb},{m},{_fmt_frac(w[lb, col])}"
                    )
    _atomic_write(path, "\n".join(rows) + "\n")


def write_rolling_csv(path: Path, report: MetricsReport) -> None:
    rows = ["time_s,qos"]
    for t, v in report.rolling:
        rows.append(f"{t:.3f},{_fmt_frac(v)}")
    _atomic_write(path, "\n".join(rows) + "\n")


def write_regret_csv(path: Path, report: MetricsReport) -> None:
    rows = ["time_s,lb,step_regret,cum_regret"]
    reg = report.regret
    for i, t_ms in enumerate(reg.tick_times_ms):
        t = t_ms / 1000.0
        for lb in sorted(reg.per_lb_step):
            rows.append(
                f"{t:.3f},{lb},{_fmt_frac(reg.per_lb_step[lb][i])},"
                f"{_fmt_frac(reg.per_lb_cumulative[lb][i])}"
            )
        rows.append(
            f"{t:.3f},system,{_fmt_frac(reg.system_step[i])},{_fmt_frac(reg.system_cumulative[i])}"
        )
    _atomic_write(path, "\n".join(rows) + "\n")


def write_events_csv(path: Path, trace: SimulationTrace, report: MetricsReport) -> None:
    """Scenario events aligned with the rolling-QoS series around each event."""
    window_s = trace.qos.window_s
    rolling = report.rolling

    def qos_at(t_s: float) -> str:
        candidates = [v for (tt, v) in rolling if tt <= t_s]
        return _fmt_frac(candidates[-1]) if candidates else ""

    def qos_after(t_s: float) -> str:
        candidates = [v for (tt, v) in rolling if tt >= t_s]
        return _fmt_frac(candidates[0]) if candidates else ""

    rows = ["time_s,kind,detail,qos_before,qos_after_1w,qos_after_3w"]
    for entry in trace.events:
        if entry["kind"] not in ("add_clients", "remove_instance", "add_instance"):
            continue
        t_s = entry["time_ms"] / 1000.0
        detail = ";".join(
            f"{k}={v}" for k, v in sorted(entry.items()) if k not in ("time_ms", "kind")
        )
        rows.append(
            f"{t_s:.3f},{entry['kind']},{detail},{qos_at(t_s)},"
            f"{qos_after(t_s + window_s)},{qos_after(t_s + 3 * window_s)}"
        )
    _atomic_write(path, "\n".join(rows) + "\n")


def write_run_outputs(out_dir: Path, trace: SimulationTrace, report: MetricsReport,
                      with_events_csv: bool = False) -> list[str]:
    write_requests_csv(out_dir / "requests.csv", trace)
    write_weights_csv(out_dir / "weights.csv", trace)
    write_rolling_csv(out_dir / "rolling_qos.csv", report)
    write_regret_csv(out_dir / "regret.csv", report)
    _atomic_write(out_dir / "summary.json", json.dumps(report.to_json_dict(), indent=2) + "\n")
    files = list(RUN_FILES)
    if with_events_csv:
        write_events_csv(out_dir / "events.csv", trace, report)
        files.append("events.csv")
    return files


def _prepare_out_dir(out_dir: Path, force: bool) -> Optional[str]:
    if out_dir.exists() and any(out_dir.iterdir()):
        if not force:
            return f"output directory {out_dir} is not empty (use --force to overwrite)"
    out_dir.mkdir(parents=True, exist_ok=True)
    return None


def _manifest(scenario_path: str, spec: ScenarioSpec, out_dir: Path) -> dict:
    return {
        "scenario": str(scenario_path),
        "seed": spec.seed,
        "strategy": spec.strategy.label(),
        "out_dir": str(out_dir),
        "tool_version": __version__,
        "started_at": time.strftime("%Y-%m-%dT%H:%M:%S%z"),
        "finished_at": None,
        "files": [],
    }


def _finalize_manifest(out_dir: Path, manifest: dict, files: list[str]) -> None:
    manifest["finished_at"] = time.strftime("%Y-%m-%dT%H:%M:%S%z")
    manifest["files"] = sorted(set(files) | {"manifest.json"})
    _atomic_write(out_dir / "manifest.json", json.dumps(manifest, indent=2) + "\n")


def execute_run(scenario_path: str, out_dir: Path, seed_override: Optional[int] = None,
                force: bool = False, require_events: bool = False) -> int:
    try:
        spec = load_scenario(scenario_path)
    except (ScenarioError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    if require_events and not spec.events:
        print(
            "error: this scenario declares no events; add an `events:` list "
            "(add_clients / remove_instance / add_instance) or use `run` instead",
            file=sys.stderr,
        )
        return 2
    if seed_override is not None:
        spec.seed = seed_override
    problem = _prepare_out_dir(out_dir, force)
    if problem:
        print(f"error: {problem}", file=sys.stderr)
        return 1
    manifest = _manifest(scenario_path, spec, out_dir)
    _atomic_write(out_dir / "manifest.json", json.dumps(manifest, indent=2) + "\n")
    trace = run_scenario(spec)
    report = compute_report(trace, idle_latency_ms=spec.service.idle_ms)
    files = write_run_outputs(out_dir, trace, report, with_events_csv=require_events)
    _finalize_manifest(out_dir, manifest, files)
    missing = [f for f in files if not (out_dir / f).exists()]
    if missing:
        print(f"error: missing outputs: {missing}", file=sys.stderr)
        return 1
    print(
        f"{spec.strategy.label()}: satisfied={report.satisfied_fraction:.3f} "
        f"jain={report.jain_index:.3f} requests={len(trace.records)} -> {out_dir}"
    )
    return 0


# -- compare -------------------------------------------------------------------


def _compare_cell(args: tuple) -> tuple[str, int, dict]:
    scenario_path, strategy_token, topo_index, out_dir_str = args
    spec = load_scenario(scenario_path)
    strat = parse_strategy_token(strategy_token)
    merged = dict(spec.strategy.params) if spec.strategy.name == strat.name else {}
    merged.update(strat.params)
    spec.strategy = StrategySpec(strat.name, merged)
    if spec.topology_params is None:
        raise ScenarioError("compare needs a generated topology (topology.generator)")
    spec.topology_params = replace(
        spec.topology_params, seed=spec.topology_params.seed + topo_index
    )
    trace = run_scenario(spec)
    report = compute_report(trace, idle_latency_ms=spec.service.idle_ms)
    cell_dir = Path(out_dir_str)
    cell_dir.mkdir(parents=True, exist_ok=True)
    summary = report.to_json_dict()
    summary["topology"] = topo_index
    _atomic_write(cell_dir / "summary.json", json.dumps(summary, indent=2) + "\n")
    manifest = _manifest(scenario_path, spec, cell_dir)
    _finalize_manifest(cell_dir, manifest, ["summary.json"])
    return strategy_token, topo_index, summary


def execute_compare(template_path: str, strategies: list[str], topologies: int,
                    out_dir: Path, workers: Optional[int] = None, force: bool = False) -> int:
    try:
        spec = load_scenario(template_path)
        for token in strategies:
            parse_strategy_token(token)
        if spec.topology_params is None:
            raise ScenarioError("compare needs a generated topology (topology.generator)")
    except (ScenarioError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    problem = _prepare_out_dir(out_dir, force)
    if problem:
        print(f"error: {problem}", file=sys.stderr)
        return 1

    cells = []
    for token in strategies:
        label = token.replace(":", "_")
        for t in range(topologies):
            cells.append((template_path, token, t, str(out_dir / f"{label}__topo{t}")))

    results = []
    n_workers = workers or min(len(cells), os.cpu_count() or 1)
    try:
        if n_workers > 1:
            with ProcessPoolExecutor(max_workers=n_workers) as pool:
                results = list(pool.map(_compare_cell, cells))
        else:
            results = [_compare_cell(c) for c in cells]
    except Exception as exc:  # a failing cell aborts the sweep
        print(f"error: compare cell failed: {exc}", file=sys.stderr)
        return 1

    rows = ["strategy,topology,seed,satisfied_fraction,jain_index"]
    for token, topo, summary in results:
        rows.append(
            f"{token},{topo},{summary['seed']},"
            f"{_fmt_frac(summary['satisfied_fraction'])},{_fmt_frac(summary['jain_index'])}"
        )
        print(
            f"{token} topo={topo}: satisfied={summary['satisfied_fraction']:.3f} "
            f"jain={summary['jain_index']:.3f}"
        )
    _atomic_write(out_dir / "aggregate.csv", "\n".join(rows) + "\n")
    return 0


# -- entry point -----------------------------------------------------------------


def main(argv: Optional[list[str]] = None) -> int:
    parser = argparse.ArgumentParser(
        prog="qlbsim",
        description="QoS-aware load balancing simulator and strategy comparison harness",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p_run = sub.add_parser("run", help="run one scenario and write its outputs")
    p_run.add_argument("--scenario", required=True)
    p_run.add_argument("--out", required=True)
    p_run.add_argument("--seed", type=int, default=None)
    p_run.add_argument("--force", action="store_true")

    p_cmp = sub.add_parser("compare", help="sweep strategies across generated topologies")
    p_cmp.add_argument("--template", required=True)
    p_cmp.add_argument(
        "--strategies",
        required=True,
        help="comma-separated, e.g. qedgeproxy,proxymity:1.0,proxymity:0.9,dec_sarsa",
    )
    p_cmp.add_argument("--topologies", type=int, default=5)
    p_cmp.add_argument("--out", required=True)
    p_cmp.add_argument("--workers", type=int, default=None)
    p_cmp.add_argument("--force", action="store_true")

    p_ev = sub.add_parser("events", help="run an event scenario and align events with QoS")
    p_ev.add_argument("--scenario", required=True)
    p_ev.add_argument("--out", required=True)
    p_ev.add_argument("--seed", type=int, default=None)
    p_ev.add_argument("--force", action="store_true")

    args = parser.parse_args(argv)
    if args.command == "run":
        return execute_run(args.scenario, Path(args.out), args.seed, args.force)
    if args.command == "compare":
        strategies = [s for s in args.strategies.split(",") if s.strip()]
        return execute_compare(
            args.template, strategies, args.topologies, Path(args.out), args.workers, args.force
        )
    if args.command == "events":
        return execute_run(
            args.scenario, Path(args.out), args.seed, args.force, require_events=True
        )
    parser.error("unknown command")
    return 2


if __name__ == "__main__":
    sys.exit(main())
