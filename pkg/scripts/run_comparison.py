#!/usr/bin/env python3
"""Reproduce the strategy comparison over the five canonical evaluation topologies.

Each (strategy, topology) cell is a full 300 s run of the shipped comparison
template; the script prints per-cell satisfied-client fraction and Jain index
plus the per-strategy medians, and writes aggregate.csv.

Usage:
    python scripts/run_comparison.py [--out results/comparison] [--workers 2]
"""

import argparse
import csv
import statistics
import sys
from concurrent.futures import ProcessPoolExecutor
from dataclasses import replace
from pathlib import Path

ROOT = Path(__file__).resolve().parent.parent
sys.path.insert(0, str(ROOT / "src"))

from qlbsim.cli import load_scenario, parse_strategy_token  # noqa: E402
from qlbsim.engine import run_scenario  # noqa: E402
from qlbsim.metrics import compute_report  # noqa: E402

TEMPLATE = ROOT / "scenarios" / "comparison.yaml"
STRATEGIES = ("qedgeproxy", "dec_sarsa", "proxymity:1.0", "proxymity:0.9")
TOPOLOGY_SEEDS = (1, 2, 3, 4, 7)


def run_cell(args):
    token, topo_seed = args
    spec = load_scenario(TEMPLATE)
    spec.topology_params = replace(spec.topology_params, seed=topo_seed)
    spec.strategy = parse_strategy_token(token)
    trace = run_scenario(spec)
    report = compute_report(trace, idle_latency_ms=spec.service.idle_ms)
    return token, topo_seed, report.satisfied_fraction, report.jain_index


def main() -> int:
    parser = argparse.ArgumentParser(description=__doc__)
    parser.add_argument("--out", default="results/comparison")
    parser.add_argument("--workers", type=int, default=2)
    args = parser.parse_args()

    cells = [(s, t) for s in STRATEGIES for t in TOPOLOGY_SEEDS]
    with ProcessPoolExecutor(max_workers=args.workers) as pool:
        results = list(pool.map(run_cell, cells))

    out_dir = Path(args.out)
    out_dir.mkdir(parents=True, exist_ok=True)
    with open(out_dir / "aggregate.csv", "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["strategy", "topology", "satisfied_fraction", "jain_index"])
        for token, topo, sat, jain in results:
            writer.writerow([token, topo, f"{sat:.6f}", f"{jain:.6f}"])
            print(f"{token:15s} topology={topo} satisfied={sat:.3f} jain={jain:.3f}")

    print()
    for token in STRATEGIES:
        sats = [s for (t, _, s, _) in results if t == token]
        jains = [j for (t, _, _, j) in results if t == token]
        print(
            f"{token:15s} median satisfied={statistics.median(sats):.3f} "
            f"median jain={statistics.median(jains):.3f}"
        )
    print(f"\naggregate written to {out_dir / 'aggregate.csv'}")
    return 0


if __name__ == "__main__":
    sys.exit(main())
