#!/usr/bin/env python3
"""Hot-start thermal correction scenario: from a 49.5 degC start under a
pinned 3-core max-frequency load, count the seeded runs in which the thermal
agent changes its core combination within 3 epochs of the 50 degC crossing."""

import argparse
import sys
from pathlib import Path

sys.path.insert(0, str(Path(__file__).resolve().parents[1] / "src"))

from hidvfs.agents import hot_start_context, thermal_correction_run
from hidvfs.platform import Platform
from hidvfs.workload import WorkloadModelParams


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--runs", type=int, default=20)
    ap.add_argument("--within", type=int, default=3)
    args = ap.parse_args()

    ctx = hot_start_context(Platform.default(), WorkloadModelParams())
    results = [thermal_correction_run(ctx, seed, within=args.within)
               for seed in range(args.runs)]
    corrected = sum(results)
    print(f"corrected within {args.within} epochs: {corrected}/{args.runs} "
          f"({100.0 * corrected / args.runs:.0f}%)")
    for seed, ok in enumerate(results):
        print(f"  seed {seed}: {'corrected' if ok else 'no change'}")


if __name__ == "__main__":
    main()
