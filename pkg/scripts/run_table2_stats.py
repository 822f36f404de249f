#!/usr/bin/env python3
"""Directional feature statistics: run a random policy for many epochs and
report Mann-Whitney p-values for how frequency, core count and priority move
makespan, energy and miss counts."""

import argparse
import sys
from pathlib import Path

sys.path.insert(0, str(Path(__file__).resolve().parents[1] / "src"))

import numpy as np

from hidvfs.agents import SuiteContext
from hidvfs.analysis import mann_whitney_u
from hidvfs.baselines import GovernorRunner
from hidvfs.platform import Platform
from hidvfs.workload import WorkloadModelParams, generate_suite


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--epochs", type=int, default=300)
    ap.add_argument("--seeds", default="42,123,456")
    ap.add_argument("--benchmarks", default="fft")
    args = ap.parse_args()

    suite = generate_suite(args.benchmarks.split(","), 1, 42)
    ctx = SuiteContext.build(suite, Platform.default(), WorkloadModelParams())
    rows, app_rows = [], []
    for seed in (int(s) for s in args.seeds.split(",")):
        runner = GovernorRunner(ctx, "random", seed=seed)
        rows.extend(runner.run_phase("train", args.epochs))
        app_rows.extend(runner.app_log)

    print(f"{len(rows)} epochs, {len(app_rows)} application records")
    print(f"{'variable':<10} {'metric':<14} {'low mean':>12} {'high mean':>12} {'p-value':>12}")

    def report(var, metric, lo, hi):
        _, p = mann_whitney_u([float(x) for x in lo], [float(x) for x in hi])
        print(f"{var:<10} {metric:<14} {np.mean(lo):>12.4g} {np.mean(hi):>12.4g} {p:>12.3g}")

    for metric in ("makespan_s", "energy_j", "branch_misses", "cache_misses"):
        lo = [getattr(r, metric) for r in rows if r.freq_level <= 5]
        hi = [getattr(r, metric) for r in rows if r.freq_level >= 6]
        report("frequency", metric, lo, hi)
    for metric in ("makespan_s", "energy_j", "branch_misses", "cache_misses"):
        lo = [getattr(r, metric) for r in rows if r.core_count <= 2]
        hi = [getattr(r, metric) for r in rows if r.core_count >= 4]
        report("cores", metric, lo, hi)
    for metric in ("makespan_s", "branch_misses", "cache_misses"):
        lo = [a[metric] for a in app_rows if a["priority"] == 70]
        hi = [a[metric] for a in app_rows if a["priority"] == 90]
        report("priority", metric, lo, hi)


if __name__ == "__main__":
    main()
