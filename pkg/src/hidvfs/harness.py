"""Experiment harness: configuration, multi-seed orchestration, CSV/JSON
artifact emission and the command-line interface.

Artifacts are fully deterministic: a config run twice produces byte-identical
CSVs, and every summary field can be recomputed from the CSV alone.
"""

from __future__ import annotations

import argparse
import dataclasses
import json
import os
import sys
from dataclasses import dataclass, field
from pathlib import Path
from typing import Mapping, Sequence

from .agents import (
    FINETUNE,
    TRAIN,
    AlgoParams,
    HidvfsRunner,
    RewardParams,
    SarbRunner,
    SuiteContext,
    sarb_config,
)
from .analysis import (
    EpochMetrics,
    aggregate_seeds,
    convergence_epoch,
    hf_rate,
    lastk_avg,
)
from .baselines import GOVERNOR_KINDS, GovernorRunner
from .errors import ConfigError
from .platform import Platform, platform_from_dict
from .rlcore import TrainConfig, save_policy
from .simengine import check_trace, read_trace, write_trace
from .workload import BENCHMARK_CATALOG, WorkloadModelParams, generate_suite

CONFIG_SCHEMA = "hidvfs-experiment-v1"
EPOCHS_SCHEMA = "hidvfs-epochs-v1"
SUMMARY_SCHEMA = "hidvfs-summary-v1"
AGGREGATE_SCHEMA = "hidvfs-aggregate-v1"
PLOTDATA_SCHEMA = "hidvfs-plotdata-v1"

ALGORITHMS = ("hidvfs", "sarb") + GOVERNOR_KINDS

CSV_COLUMNS = [
    "epoch", "phase", "makespan_s", "energy_j", "temp_avg_c", "temp_max_c",
    "branch_misses", "cache_misses", "freq_level", "core_count",
    "r_profiler", "r_thermal", "r_priority",
    "shaped_profiler", "shaped_thermal", "shaped_priority",
]

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_RUNTIME = 3


@dataclass
class ExperimentConfig:
    algorithm: str = "hidvfs"
    benchmarks: list[str] = field(default_factory=lambda: ["fft"])
    scale: int = 1
    epochs: int = 100
    phases: list[str] = field(default_factory=lambda: [TRAIN, FINETUNE])
    seeds: list[int] = field(default_factory=lambda: [42, 123, 456])
    suite_seed: int = 42
    output_dir: str = "runs/experiment"
    sarb_version: str | None = None
    collect_traces: bool = False
    t_target_c: float = 50.0
    train: dict = field(default_factory=dict)       # TrainConfig overrides
    reward: dict = field(default_factory=dict)      # RewardParams overrides
    workload: dict = field(default_factory=dict)    # WorkloadModelParams overrides
    platform: dict | None = None                    # full platform description

    def validate(self) -> None:
        if self.algorithm not in ALGORITHMS:
            raise ConfigError(f"algorithm: unknown value {self.algorithm!r}; known: {ALGORITHMS}")
        if not self.benchmarks:
            raise ConfigError("benchmarks: must not be empty")
        for b in self.benchmarks:
            if b not in BENCHMARK_CATALOG:
                raise ConfigError(f"benchmarks: unknown benchmark {b!r}")
        if self.scale < 1:
            raise ConfigError("scale: must be >= 1")
        if self.epochs < 15:
            raise ConfigError("epochs: must be >= 15 so convergence can be reported")
        if not self.seeds:
            raise ConfigError("seeds: must not be empty")
        if len(set(self.seeds)) != len(self.seeds):
            raise ConfigError("seeds: must be distinct")
        for ph in self.phases:
            if ph not in (TRAIN, FINETUNE):
                raise ConfigError(f"phases: unknown phase {ph!r}")
        try:
            self.build_train_config()
        except (TypeError, ValueError) as exc:
            raise ConfigError(f"train: {exc}") from exc
        try:
            RewardParams(**self.reward)
        except (TypeError, ValueError) as exc:
            raise ConfigError(f"reward: {exc}") from exc
        try:
            WorkloadModelParams(**self.workload)
        except (TypeError, ValueError) as exc:
            raise ConfigError(f"workload: {exc}") from exc
        if self.platform is not None:
            platform_from_dict(self.platform)

    def build_train_config(self) -> TrainConfig:
        overrides = dict(self.train)
        if "hidden" in overrides:
            overrides["hidden"] = tuple(overrides["hidden"])
        base = TrainConfig(reward_averaging=True)
        cfg = dataclasses.replace(base, **overrides)
        if self.sarb_version is not None:
            cfg = sarb_config(self.sarb_version, cfg)
        return cfg

    def build_platform(self) -> Platform:
        if self.platform is None:
            return Platform.default()
        return platform_from_dict(self.platform)

    def to_dict(self) -> dict:
        d = dataclasses.asdict(self)
        d["schema"] = CONFIG_SCHEMA
        return d

    @classmethod
    def from_dict(cls, d: Mapping) -> "ExperimentConfig":
        known = {f.name for f in dataclasses.fields(cls)}
        body = {k: v for k, v in d.items() if k != "schema"}
        unknown = set(body) - known
        if unknown:
            raise ConfigError(f"unknown config fields: {sorted(unknown)}")
        return cls(**body)

    @classmethod
    def load(cls, path: str) -> "ExperimentConfig":
        try:
            with open(path, "r", encoding="utf-8") as fh:
                return cls.from_dict(json.load(fh))
        except (OSError, json.JSONDecodeError) as exc:
            raise ConfigError(f"cannot read config {path}: {exc}") from exc


def make_runner(config: ExperimentConfig, ctx: SuiteContext, seed: int):
    if config.algorithm == "hidvfs":
        algo = AlgoParams(
            train=config.build_train_config(),
            reward=RewardParams(**config.reward),
            t_target=config.t_target_c,
        )
        return HidvfsRunner(ctx, algo, seed, total_epochs=config.epochs)
    if config.algorithm == "sarb":
        algo = AlgoParams(
            train=config.build_train_config(),
            reward=RewardParams(**config.reward),
            t_target=config.t_target_c,
        )
        return SarbRunner(ctx, algo, seed, total_epochs=config.epochs)
    return GovernorRunner(
        ctx, config.algorithm, seed, reward_params=RewardParams(**config.reward)
    )


def _fmt(value) -> str:
    if value is None:
        return ""
    if isinstance(value, float):
        return repr(float(value))
    return str(value)


def write_epochs_csv(rows: Sequence[EpochMetrics], path: Path) -> None:
    lines = [f"# schema={EPOCHS_SCHEMA}", ",".join(CSV_COLUMNS)]
    for r in rows:
        d = dataclasses.asdict(r)
        lines.append(",".join(_fmt(d[c]) for c in CSV_COLUMNS))
    path.write_text("\n".join(lines) + "\n", encoding="utf-8")


def read_epochs_csv(path: Path) -> list[dict]:
    text = path.read_text(encoding="utf-8").splitlines()
    rows: list[dict] = []
    header: list[str] | None = None
    for line in text:
        if line.startswith("#") or not line.strip():
            continue
        if header is None:
            header = line.split(",")
            continue
        parts = line.split(",")
        row: dict = {}
        for col, raw in zip(header, parts):
            if col in ("epoch", "branch_misses", "cache_misses", "freq_level", "core_count"):
                row[col] = int(raw)
            elif col == "phase":
                row[col] = raw
            else:
                row[col] = float(raw) if raw != "" else None
        rows.append(row)
    return rows


def summarize_rows(rows: Sequence[Mapping]) -> dict:
    """Per-phase and overall summary; pure function of the CSV contents."""
    phases: dict[str, dict] = {}
    for phase in dict.fromkeys(r["phase"] for r in rows):
        sub = [r for r in rows if r["phase"] == phase]
        makespans = [r["makespan_s"] for r in sub]
        levels = [r["freq_level"] for r in sub]
        cores = [r["core_count"] for r in sub]
        phases[phase] = {
            "epochs": len(sub),
            "l10_s": lastk_avg(makespans, 10) if len(sub) >= 10 else None,
            "l20_s": lastk_avg(makespans, 20) if len(sub) >= 20 else None,
            "hf_pct": hf_rate(levels),
            "cores_ge5_pct": 100.0 * sum(1 for k in cores if k >= 5) / len(cores),
            "convergence_epoch": convergence_epoch(makespans) if len(sub) >= 15 else None,
            "total_energy_j": sum(r["energy_j"] for r in sub),
            "total_makespan_s": sum(makespans),
        }
    return {
        "schema": SUMMARY_SCHEMA,
        "phases": phases,
        "overall": {
            "total_energy_j": sum(r["energy_j"] for r in rows),
            "total_makespan_s": sum(r["makespan_s"] for r in rows),
            "epochs": len(rows),
        },
    }


def summary_from_csv(path: Path) -> dict:
    return summarize_rows(read_epochs_csv(path))


@dataclass
class RunArtifacts:
    seed: int
    run_dir: Path
    csv_path: Path
    summary: dict
    policy_paths: dict[str, Path]


def run_experiment(config: ExperimentConfig, output_dir: str | None = None) -> dict:
    """Run all seeds and phases; returns the aggregate document."""
    config.validate()
    out_root = Path(
        output_dir or os.environ.get("HIDVFS_OUTPUT_DIR") or config.output_dir
    )
    out_root.mkdir(parents=True, exist_ok=True)
    (out_root / "config.json").write_text(
        json.dumps(config.to_dict(), indent=2, sort_keys=True) + "\n", encoding="utf-8"
    )

    platform = config.build_platform()
    params = WorkloadModelParams(**config.workload)
    suite = generate_suite(config.benchmarks, config.scale, config.suite_seed, params)
    ctx = SuiteContext.build(suite, platform, params, t_target=config.t_target_c)

    per_seed: list[RunArtifacts] = []
    for seed in config.seeds:
        runner = make_runner(config, ctx, seed)
        runner.collect_trace = config.collect_traces
        seed_dir = out_root / f"seed-{seed}"
        seed_dir.mkdir(parents=True, exist_ok=True)
        policy_paths: dict[str, Path] = {}
        all_rows: list[EpochMetrics] = []
        try:
            for phase in config.phases:
                rows = runner.run_phase(phase, config.epochs)
                all_rows.extend(rows)
                for name, doc in runner.snapshots().items():
                    p = seed_dir / f"policy_{phase}_{name}.json"
                    save_policy(doc, str(p))
                    policy_paths[f"{phase}:{name}"] = p
        except Exception as exc:
            # Mid-run failure: keep partial artifacts and leave a manifest.
            partial = list(runner.metrics)
            if partial:
                write_epochs_csv(partial, seed_dir / "epochs_partial.csv")
            manifest = {
                "schema": "hidvfs-error-manifest-v1",
                "failed_seed": seed,
                "epochs_completed": len(partial),
                "error": f"{type(exc).__name__}: {exc}",
                "completed_seeds": [a.seed for a in per_seed],
            }
            (out_root / "error_manifest.json").write_text(
                json.dumps(manifest, indent=2, sort_keys=True) + "\n", encoding="utf-8"
            )
            raise
        if config.collect_traces and runner.last_trace is not None:
            write_trace(runner.last_trace, str(seed_dir / "trace_final.jsonl"))
        csv_path = seed_dir / "epochs.csv"
        write_epochs_csv(all_rows, csv_path)
        summary = summary_from_csv(csv_path)
        summary["algorithm"] = config.algorithm
        summary["seed"] = seed
        (seed_dir / "summary.json").write_text(
            json.dumps(summary, indent=2, sort_keys=True) + "\n", encoding="utf-8"
        )
        per_seed.append(RunArtifacts(seed, seed_dir, csv_path, summary, policy_paths))

    aggregate = aggregate_summaries([a.summary for a in per_seed], config)
    (out_root / "aggregate.json").write_text(
        json.dumps(aggregate, indent=2, sort_keys=True) + "\n", encoding="utf-8"
    )
    return aggregate


def aggregate_summaries(summaries: Sequence[dict], config: ExperimentConfig) -> dict:
    fields_of_interest = [
        "l10_s", "l20_s", "hf_pct", "cores_ge5_pct",
        "convergence_epoch", "total_energy_j", "total_makespan_s",
    ]
    phases: dict[str, dict] = {}
    for phase in config.phases:
        block: dict[str, dict] = {}
        for name in fields_of_interest:
            values = [
                s["phases"][phase][name]
                for s in summaries
                if s["phases"].get(phase, {}).get(name) is not None
            ]
            if len(values) >= 2:
                mean, std = aggregate_seeds(values)
                block[name] = {"mean": mean, "std": std, "n": len(values)}
            elif len(values) == 1:
                block[name] = {"mean": values[0], "std": 0.0, "n": 1}
        phases[phase] = block
    return {
        "schema": AGGREGATE_SCHEMA,
        "algorithm": config.algorithm,
        "seeds": list(config.seeds),
        "phases": phases,
    }


PLOT_KINDS = {
    "makespan": "makespan_s",
    "energy": "energy_j",
    "freq": "freq_level",
    "cores": "core_count",
}


def emit_plotdata(run_dir: str, kind: str) -> Path:
    """Long-format (epoch, series, value) table with mean/std bands."""
    if kind not in PLOT_KINDS:
        raise ConfigError(f"unknown plot kind {kind!r}; known: {sorted(PLOT_KINDS)}")
    column = PLOT_KINDS[kind]
    root = Path(run_dir)
    seed_dirs = sorted(root.glob("seed-*"))
    if not seed_dirs:
        raise FileNotFoundError(f"no seed directories under {run_dir}")
    series: dict[str, list] = {}
    for sd in seed_dirs:
        rows = read_epochs_csv(sd / "epochs.csv")
        series[sd.name] = [r[column] for r in rows]
    lengths = {len(v) for v in series.values()}
    n_epochs = min(lengths)
    lines = [f"# schema={PLOTDATA_SCHEMA}", "epoch,series,value"]
    for name in sorted(series):
        for e in range(n_epochs):
            lines.append(f"{e},{name},{_fmt(series[name][e])}")
    for e in range(n_epochs):
        vals = [series[name][e] for name in sorted(series)]
        if len(vals) >= 2:
            mean, std = aggregate_seeds(vals)
        else:
            mean, std = float(vals[0]), 0.0
        lines.append(f"{e},mean,{_fmt(mean)}")
        lines.append(f"{e},std,{_fmt(std)}")
    out = root / f"plot_{kind}.csv"
    out.write_text("\n".join(lines) + "\n", encoding="utf-8")
    return out


def replay_trace(config: ExperimentConfig, trace_path: str) -> list[str]:
    """Re-verify scheduling invariants on an exported trace."""
    params = WorkloadModelParams(**config.workload)
    suite = generate_suite(config.benchmarks, config.scale, config.suite_seed, params)
    trace = read_trace(trace_path)
    relevant = [t for t in suite if t.id in set(trace.get("arrivals", {}))]
    return check_trace(relevant or suite, trace)


def main(argv: Sequence[str] | None = None) -> int:
    parser = argparse.ArgumentParser(
        prog="hidvfs",
        description="Deterministic DVFS scheduling simulator and experiment harness",
    )
    sub = parser.add_subparsers(dest="verb", required=True)

    p_run = sub.add_parser("run", help="run an experiment")
    p_run.add_argument("--config", help="experiment config JSON")
    p_run.add_argument("--algorithm")
    p_run.add_argument("--benchmarks", help="comma-separated benchmark names")
    p_run.add_argument("--epochs", type=int)
    p_run.add_argument("--scale", type=int)
    p_run.add_argument("--seeds", help="comma-separated seed list")
    p_run.add_argument("--sarb-version")
    p_run.add_argument("--output-dir")

    p_val = sub.add_parser("validate-config", help="check a config file")
    p_val.add_argument("--config", required=True)

    p_plot = sub.add_parser("plotdata", help="emit plot-ready long-format tables")
    p_plot.add_argument("--run-dir", required=True)
    p_plot.add_argument("--kind", required=True, choices=sorted(PLOT_KINDS))

    p_replay = sub.add_parser("replay-trace", help="verify invariants on a trace")
    p_replay.add_argument("--config", required=True)
    p_replay.add_argument("--trace", required=True)

    args = parser.parse_args(argv)
    try:
        if args.verb == "run":
            config = ExperimentConfig.load(args.config) if args.config else ExperimentConfig()
            if args.algorithm:
                config.algorithm = args.algorithm
            if args.benchmarks:
                config.benchmarks = args.benchmarks.split(",")
            if args.epochs is not None:
                config.epochs = args.epochs
            if args.scale is not None:
                config.scale = args.scale
            if args.seeds:
                config.seeds = [int(s) for s in args.seeds.split(",")]
            if args.sarb_version:
                config.sarb_version = args.sarb_version
            aggregate = run_experiment(config, output_dir=args.output_dir)
            json.dump(aggregate, sys.stdout, indent=2, sort_keys=True)
            print()
            return EXIT_OK
        if args.verb == "validate-config":
            ExperimentConfig.load(args.config).validate()
            print("config ok")
            return EXIT_OK
        if args.verb == "plotdata":
            out = emit_plotdata(args.run_dir, args.kind)
            print(out)
            return EXIT_OK
        if args.verb == "replay-trace":
            config = ExperimentConfig.load(args.config)
            problems = replay_trace(config, args.trace)
            if problems:
                for p in problems:
                    print(p, file=sys.stderr)
                return EXIT_RUNTIME
            print("trace ok")
            return EXIT_OK
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except Exception as exc:  # noqa: BLE001 - CLI boundary
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_RUNTIME
    return EXIT_CONFIG


if __name__ == "__main__":
    raise SystemExit(main())
