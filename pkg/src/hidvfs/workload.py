"""Synthetic OpenMP-style DAG workloads and their execution-time/miss models.

Each benchmark name expands to three variant instances (serial, tied,
untied) built from a per-family graph template: recursion trees, butterfly
stages, fork-join rounds, or irregular random DAGs. Subtask work is measured
in kHz*s so that work / frequency-in-kHz gives seconds.
"""

from __future__ import annotations

import json

from dataclasses import dataclass
from typing import Iterable, Sequence

import numpy as np

from .errors import ConfigError
from .platform import FrequencyLadder

SERIAL = "serial"
TIED = "tied"
UNTIED = "untied"
VARIANTS = (SERIAL, TIED, UNTIED)

# name -> (graph family, relative work factor)
BENCHMARK_CATALOG: dict[str, tuple[str, float]] = {
    "alignment": ("forkjoin", 1.6),
    "concom": ("irregular", 2.4),
    "fft": ("butterfly", 1.0),
    "fib": ("tree", 0.5),
    "floorplan": ("irregular", 0.7),
    "health": ("irregular", 1.2),
    "sort": ("forkjoin", 2.0),
    "sparselu": ("forkjoin", 0.6),
    "strassen": ("forkjoin", 0.8),
    "uts": ("irregular", 1.8),
}

BASE_WORK = 2.2e6  # kHz*s of total work per unit scale at factor 1.0


@dataclass(frozen=True)
class Subtask:
    id: int
    work: float
    deps: tuple[int, ...] = ()
    binding: str = UNTIED

    def __post_init__(self) -> None:
        if self.work <= 0:
            raise ValueError("subtask work must be positive")


@dataclass(frozen=True)
class DagTask:
    id: str
    benchmark_name: str
    variant: str
    subtasks: tuple[Subtask, ...]
    priority: int = 80

    def __post_init__(self) -> None:
        if not 1 <= self.priority <= 99:
            raise ValueError("priority must be in 1..99")
        if self.variant not in VARIANTS:
            raise ValueError(f"unknown variant {self.variant}")
        ids = {s.id for s in self.subtasks}
        for s in self.subtasks:
            for d in s.deps:
                if d not in ids:
                    raise ValueError(f"subtask {s.id} depends on unknown {d}")
        topological_order(self.subtasks)  # raises on cycles

    @property
    def total_work(self) -> float:
        return sum(s.work for s in self.subtasks)


@dataclass(frozen=True)
class WorkloadModelParams:
    """Coefficients of the duration and miss models."""

    serial_fraction: float = 0.10
    kappa_tied: float = 0.08
    kappa_untied: float = 0.02
    jitter_sigma: float = 0.05
    parallel_sigma_scale: float = 3.0
    branch_base: float = 1.7e7
    cache_base: float = 3.3e7
    branch_priority_slope: float = 0.31
    branch_cores_slope: float = 0.12
    cache_priority_slope: float = 0.25
    cache_cores_slope: float = 0.36
    cache_freq_slope: float = -0.04
    miss_sigma: float = 0.12
    # How strongly above-baseline cache misses stretch subtask durations.
    miss_makespan_coeff: float = 0.5

    def __post_init__(self) -> None:
        if not self.kappa_tied > self.kappa_untied >= 0:
            raise ValueError("need kappa_tied > kappa_untied >= 0")
        if self.branch_base <= 0 or self.cache_base <= 0:
            raise ValueError("miss base rates must be positive")


def topological_order(subtasks: Sequence[Subtask]) -> list[int]:
    """Kahn topological sort; raises ValueError if the graph has a cycle."""
    indeg = {s.id: len(s.deps) for s in subtasks}
    succs: dict[int, list[int]] = {s.id: [] for s in subtasks}
    for s in subtasks:
        for d in s.deps:
            succs[d].append(s.id)
    ready = sorted(i for i, n in indeg.items() if n == 0)
    order: list[int] = []
    while ready:
        i = ready.pop(0)
        order.append(i)
        for j in sorted(succs[i]):
            indeg[j] -= 1
            if indeg[j] == 0:
                ready.append(j)
        ready.sort()
    if len(order) != len(subtasks):
        raise ValueError("dependency cycle detected")
    return order


def _tree_graph(depth: int) -> tuple[list[tuple[int, ...]], list[bool]]:
    """Full binary recursion tree, children feed parents; leaves first."""
    deps: list[tuple[int, ...]] = []
    is_leaf: list[bool] = []
    prev_level: list[int] = []
    next_id = 0
    for level in range(depth, -1, -1):
        width = 2**level
        this_level = []
        for j in range(width):
            if level == depth:
                deps.append(())
                is_leaf.append(True)
            else:
                deps.append((prev_level[2 * j], prev_level[2 * j + 1]))
                is_leaf.append(False)
            this_level.append(next_id)
            next_id += 1
        prev_level = this_level
    return deps, is_leaf


def _butterfly_graph(stages: int) -> list[tuple[int, ...]]:
    width = 2**stages
    deps: list[tuple[int, ...]] = []
    for layer in range(stages + 1):
        for j in range(width):
            if layer == 0:
                deps.append(())
            else:
                base = (layer - 1) * width
                deps.append(tuple(sorted({base + j, base + (j ^ (1 << (layer - 1)))})))
    return deps


def _forkjoin_graph(rounds: int, width: int) -> list[tuple[int, ...]]:
    deps: list[tuple[int, ...]] = [()]
    join = 0
    nid = 1
    for _ in range(rounds):
        workers = []
        for _ in range(width):
            deps.append((join,))
            workers.append(nid)
            nid += 1
        deps.append(tuple(workers))
        join = nid
        nid += 1
    return deps


def _irregular_graph(n: int, rng: np.random.Generator) -> list[tuple[int, ...]]:
    deps: list[tuple[int, ...]] = [()]
    for i in range(1, n):
        k = int(min(i, 1 + rng.integers(0, 3)))
        picks = rng.choice(i, size=k, replace=False)
        deps.append(tuple(sorted(int(x) for x in picks)))
    return deps


def _build_graph(family: str, scale: int, rng: np.random.Generator) -> tuple[list[tuple[int, ...]], list[float]]:
    """Return (deps per node, work weight per node) for one benchmark family."""
    if family == "tree":
        depth = min(4 + (scale - 1), 7)
        deps, is_leaf = _tree_graph(depth)
        weights = [3.0 if leaf else 1.0 for leaf in is_leaf]
    elif family == "butterfly":
        stages = min(3 + (scale - 1), 5)
        deps = _butterfly_graph(stages)
        weights = [1.0] * len(deps)
    elif family == "forkjoin":
        deps = _forkjoin_graph(rounds=2 + scale, width=4 + 2 * scale)
        weights = [1.0 if len(d) <= 1 else 0.3 for d in deps]  # joins are light
    elif family == "irregular":
        deps = _irregular_graph(20 + 10 * scale, rng)
        weights = [1.0] * len(deps)
    else:  # pragma: no cover - catalog is validated upstream
        raise ConfigError(f"unknown graph family {family}")
    jitter = rng.lognormal(0.0, 0.4, size=len(deps))
    return deps, [w * j for w, j in zip(weights, jitter)]


def generate_suite(
    names: Iterable[str],
    scale: int = 1,
    seed: int = 42,
    params: WorkloadModelParams | None = None,
) -> list[DagTask]:
    """Expand benchmark names into per-variant DagTask instances.

    Deterministic in (names, scale, seed); every name yields serial, tied and
    untied instances of the same underlying graph.
    """
    params = params or WorkloadModelParams()
    if scale < 1:
        raise ConfigError("scale must be >= 1")
    catalog_order = list(BENCHMARK_CATALOG)
    tasks: list[DagTask] = []
    for name in names:
        if name not in BENCHMARK_CATALOG:
            raise ConfigError(f"unknown benchmark {name!r}; known: {sorted(BENCHMARK_CATALOG)}")
        family, factor = BENCHMARK_CATALOG[name]
        rng = np.random.default_rng(
            np.random.SeedSequence(entropy=seed, spawn_key=(catalog_order.index(name), scale))
        )
        deps, weights = _build_graph(family, scale, rng)
        total = BASE_WORK * factor * scale
        root_work = params.serial_fraction * total
        rest = total - root_work
        wsum = sum(weights)
        works = [rest * w / wsum for w in weights]
        # The serial bottleneck rides on the sink node (the last in topo order).
        works[-1] += root_work
        for variant in VARIANTS:
            if variant == SERIAL:
                subs = tuple(
                    Subtask(id=i, work=works[i], deps=(i - 1,) if i else (), binding=TIED)
                    for i in range(len(deps))
                )
            else:
                subs = tuple(
                    Subtask(id=i, work=works[i], deps=deps[i], binding=variant)
                    for i in range(len(deps))
                )
            tasks.append(
                DagTask(
                    id=f"{name}-{variant}",
                    benchmark_name=name,
                    variant=variant,
                    subtasks=subs,
                )
            )
    return tasks


_KAPPA_KEY = {SERIAL: 0.0}


def kappa_for(variant: str, params: WorkloadModelParams) -> float:
    if variant == SERIAL:
        return 0.0
    if variant == TIED:
        return params.kappa_tied
    if variant == UNTIED:
        return params.kappa_untied
    raise ValueError(f"unknown variant {variant}")


def subtask_duration(
    sub: Subtask,
    k_allocated: int,
    level: int,
    variant: str,
    rng: np.random.Generator,
    ladder: FrequencyLadder,
    params: WorkloadModelParams,
    speed_scale: float = 1.0,
    extra_mult: float = 1.0,
) -> float:
    """Sampled wall-clock seconds for one subtask under the given allocation."""
    if k_allocated < 1:
        raise ValueError("k_allocated must be >= 1")
    freq = ladder.freq_of_level(level)
    kappa = kappa_for(variant, params)
    sigma = params.jitter_sigma * (1.0 if variant == SERIAL else params.parallel_sigma_scale)
    jitter = float(rng.lognormal(0.0, sigma)) if sigma > 0 else 1.0
    return (sub.work / freq) * (1.0 + kappa * (k_allocated - 1)) * jitter * extra_mult / speed_scale


def expected_misses(
    params: WorkloadModelParams,
    cores: int,
    level: int,
    priority: int,
    n_levels: int = 12,
    max_cores: int = 5,
) -> tuple[float, float]:
    """Mean (branch, cache) miss counts for a decision context."""
    p01 = (priority - 1) / 98.0
    c01 = (cores - 1) / (max_cores - 1) if max_cores > 1 else 0.0
    f01 = level / (n_levels - 1) if n_levels > 1 else 0.0
    e_branch = (
        params.branch_base
        * (1.0 + params.branch_priority_slope * p01)
        * (1.0 + params.branch_cores_slope * c01)
    )
    e_cache = (
        params.cache_base
        * (1.0 + params.cache_priority_slope * p01)
        * (1.0 + params.cache_cores_slope * c01)
        * (1.0 + params.cache_freq_slope * f01)
    )
    return e_branch, e_cache


def miss_counts(
    task: DagTask,
    cores: int,
    level: int,
    priority: int,
    rng: np.random.Generator,
    params: WorkloadModelParams,
    n_levels: int = 12,
    max_cores: int = 5,
) -> tuple[int, int]:
    """Sampled nonnegative (branch, cache) miss counts.

    Rounded lognormal around the calibrated means; the multiplier has mean
    exactly 1 so sample means track the expected values.
    """
    e_branch, e_cache = expected_misses(params, cores, level, priority, n_levels, max_cores)
    s = params.miss_sigma
    if s > 0:
        mb = float(rng.lognormal(-0.5 * s * s, s))
        mc = float(rng.lognormal(-0.5 * s * s, s))
    else:
        mb = mc = 1.0
    return max(0, int(round(e_branch * mb))), max(0, int(round(e_cache * mc)))


def suite_to_dict(tasks: Sequence[DagTask]) -> dict:
    return {
        "schema": "hidvfs-suite-v1",
        "tasks": [
            {
                "id": t.id,
                "benchmark": t.benchmark_name,
                "variant": t.variant,
                "priority": t.priority,
                "subtasks": [
                    {"id": s.id, "work": s.work, "deps": list(s.deps), "binding": s.binding}
                    for s in t.subtasks
                ],
            }
            for t in tasks
        ],
    }


def dump_suite(tasks: Sequence[DagTask], path: str) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(suite_to_dict(tasks), fh, indent=2)


def benchmark_groups(tasks: Sequence[DagTask]) -> list[list[int]]:
    """Indices of tasks grouped by benchmark, preserving first-seen order."""
    groups: dict[str, list[int]] = {}
    for i, t in enumerate(tasks):
        groups.setdefault(t.benchmark_name, []).append(i)
    return list(groups.values())
