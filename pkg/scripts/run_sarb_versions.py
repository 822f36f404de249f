#!/usr/bin/env python3
"""Evaluate the single-agent scheduler under its version-flag presets and
print finetuned L10/L20 and frequency-selection rates per version."""

import argparse
import sys
from pathlib import Path

sys.path.insert(0, str(Path(__file__).resolve().parents[1] / "src"))

from hidvfs.agents import SARB_VERSION_FLAGS, AlgoParams, SarbRunner, SuiteContext, sarb_config
from hidvfs.analysis import hf_rate, lastk_avg
from hidvfs.platform import Platform
from hidvfs.workload import WorkloadModelParams, generate_suite


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--epochs", type=int, default=100)
    ap.add_argument("--seed", type=int, default=42)
    ap.add_argument("--versions", default=",".join(SARB_VERSION_FLAGS))
    args = ap.parse_args()

    suite = generate_suite(["fft"], 1, 42)
    ctx = SuiteContext.build(suite, Platform.default(), WorkloadModelParams())
    print(f"{'version':<8} {'L10 (s)':>10} {'L20 (s)':>10} {'HF%':>8} {'LF%':>8}")
    for version in args.versions.split(","):
        algo = AlgoParams(train=sarb_config(version))
        runner = SarbRunner(ctx, algo, seed=args.seed, total_epochs=args.epochs)
        runner.run_phase("train", args.epochs)
        finetune = runner.run_phase("finetune", args.epochs)
        mk = [r.makespan_s for r in finetune]
        levels = [r.freq_level for r in finetune]
        lf = 100.0 * sum(1 for lv in levels if lv <= 2) / len(levels)
        print(f"{version:<8} {lastk_avg(mk, 10):>10.2f} {lastk_avg(mk, 20):>10.2f} "
              f"{hf_rate(levels):>8.1f} {lf:>8.1f}")


if __name__ == "__main__":
    main()
