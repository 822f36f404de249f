#!/usr/bin/env python3
"""Compare the learning schedulers against the governor baselines on the
default FFT suite and print a mean+-std summary table per algorithm."""

import argparse
import sys
from pathlib import Path

sys.path.insert(0, str(Path(__file__).resolve().parents[1] / "src"))

import numpy as np

from hidvfs.agents import AlgoParams, HidvfsRunner, SarbRunner, SuiteContext, sarb_config
from hidvfs.analysis import aggregate_seeds, convergence_epoch, hf_rate, lastk_avg
from hidvfs.baselines import GovernorRunner
from hidvfs.platform import Platform
from hidvfs.workload import WorkloadModelParams, generate_suite


def run_algo(name, ctx, seed, epochs):
    if name == "hidvfs":
        runner = HidvfsRunner(ctx, AlgoParams(), seed=seed, total_epochs=epochs)
    elif name == "sarb":
        runner = SarbRunner(ctx, AlgoParams(train=sarb_config("V8")), seed=seed,
                            total_epochs=epochs)
    else:
        runner = GovernorRunner(ctx, name, seed=seed)
    train = runner.run_phase("train", epochs)
    finetune = runner.run_phase("finetune", epochs)
    mk = [r.makespan_s for r in finetune]
    return {
        "l10": lastk_avg(mk, 10),
        "l20": lastk_avg(mk, 20),
        "hf": hf_rate([r.freq_level for r in finetune]),
        "conv": convergence_epoch(mk),
        "energy_kj": (sum(r.energy_j for r in train) + sum(r.energy_j for r in finetune)) / 1e3,
    }


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--benchmarks", default="fft")
    ap.add_argument("--epochs", type=int, default=100)
    ap.add_argument("--seeds", default="42,123,456")
    ap.add_argument("--algorithms", default="hidvfs,sarb,performance,powersave,ondemand,random")
    args = ap.parse_args()

    seeds = [int(s) for s in args.seeds.split(",")]
    suite = generate_suite(args.benchmarks.split(","), 1, 42)
    ctx = SuiteContext.build(suite, Platform.default(), WorkloadModelParams())
    print(f"suite={args.benchmarks} epochs={args.epochs}+{args.epochs} seeds={seeds}")
    print(f"targets: makespan {ctx.targets.m_target:.3f}s energy {ctx.targets.e_target:.2f}J")
    header = f"{'algorithm':<12} {'L10 (s)':>14} {'L20 (s)':>14} {'HF%':>12} {'Conv.':>10} {'Energy (kJ)':>14}"
    print(header)
    print("-" * len(header))
    for algo in args.algorithms.split(","):
        stats = [run_algo(algo, ctx, s, args.epochs) for s in seeds]

        def ms(key):
            vals = [s[key] for s in stats]
            if len(vals) == 1:
                return f"{vals[0]:.2f}"
            m, sd = aggregate_seeds(vals)
            return f"{m:.2f}+-{sd:.2f}"

        print(f"{algo:<12} {ms('l10'):>14} {ms('l20'):>14} {ms('hf'):>12} "
              f"{ms('conv'):>10} {ms('energy_kj'):>14}")


if __name__ == "__main__":
    main()
