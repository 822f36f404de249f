"""Priority-preemptive discrete-event execution of DAG suites on the platform.

Semantics: every application owns a core subset, one frequency level and a
static priority. At every event (job completion or thermal tick) cores are
reassigned from scratch in descending priority order, so a higher-priority
application preempts lower-priority work on shared cores at event
granularity. Tied subtasks never leave the core they started on; untied
subtasks resume on the least-loaded core of their subset.
"""

from __future__ import annotations

import dataclasses
import json
from dataclasses import dataclass, field
from typing import Mapping, Sequence

import numpy as np

from .errors import SchedulingError
from .platform import (
    Platform,
    ThermalState,
    dynamic_power_per_core,
    power_draw,
    thermal_step,
    total_power,
)
from .workload import (
    DagTask,
    WorkloadModelParams,
    benchmark_groups,
    expected_misses,
    miss_counts,
    subtask_duration,
)

TRACE_SCHEMA = "hidvfs-trace-v1"


@dataclass(frozen=True)
class AppDecision:
    app_id: str
    cores: tuple[int, ...]
    freq_level: int
    priority: int


@dataclass(frozen=True)
class ScheduleDecision:
    apps: tuple[AppDecision, ...]
    policy: str = ""
    meta: Mapping[str, object] = field(default_factory=dict)

    def entry(self, app_id: str) -> AppDecision:
        for a in self.apps:
            if a.app_id == app_id:
                return a
        raise SchedulingError(f"decision has no entry for application {app_id!r}")


@dataclass(frozen=True)
class Job:
    """One contiguous execution interval of a subtask on a core."""

    core: int
    app_id: str
    subtask: int
    start: float
    end: float


@dataclass(frozen=True)
class AppOutcome:
    app_id: str
    priority: int
    cores: tuple[int, ...]
    makespan: float
    finished_at: float
    branch_misses: int
    cache_misses: int


@dataclass(frozen=True)
class Observation:
    """Measured outcome of one epoch."""

    total_makespan: float
    energy_j: float
    temps_end: tuple[float, ...]
    temps_avg: tuple[float, ...]
    utilization: tuple[float, ...]
    mean_utilization: float
    branch_misses: int
    cache_misses: int
    app_outcomes: tuple[AppOutcome, ...]
    decision: ScheduleDecision

    def __post_init__(self) -> None:
        if self.total_makespan <= 0 or self.energy_j < 0:
            raise ValueError("makespan must be positive and energy nonnegative")
        if any(not 0.0 <= u <= 1.0 + 1e-9 for u in self.utilization):
            raise ValueError("utilization out of [0, 1]")


@dataclass
class EpochResult:
    observation: Observation
    thermal: ThermalState
    trace: dict | None = None


def level_of_parallelism(m_one_core: float, m_all_cores: float, m_avail: int) -> int:
    """Core demand of an application: rounded serial/parallel makespan ratio."""
    if m_one_core <= 0 or m_all_cores <= 0:
        raise ValueError("makespans must be positive")
    return int(min(max(round(m_one_core / m_all_cores), 1), m_avail))


def allocate_cores(
    apps: Sequence[tuple[int, int]], available: int
) -> tuple[list[int], list[dict]]:
    """Greedy descending-priority core-count allocation.

    ``apps`` is a sequence of (priority, level_of_parallelism); ties are
    served in list order (FCFS). Returns counts aligned with the input plus a
    shortage log.
    """
    if available < 1:
        raise ValueError("available cores must be >= 1")
    order = sorted(range(len(apps)), key=lambda i: (-apps[i][0], i))
    counts = [0] * len(apps)
    shortages: list[dict] = []
    remaining = available
    for i in order:
        _, lop = apps[i]
        granted = min(lop, remaining)
        counts[i] = granted
        remaining -= granted
        if granted < lop:
            shortages.append({"app_index": i, "requested": lop, "granted": granted})
    return counts, shortages


def _validate_decision(tasks: Sequence[DagTask], decision: ScheduleDecision, platform: Platform) -> None:
    usable = set(platform.topology.usable_cores)
    n_levels = platform.ladder.n_levels
    for t in tasks:
        entry = decision.entry(t.id)
        if not entry.cores:
            raise SchedulingError(f"empty core set for application {t.id!r}")
        if not set(entry.cores) <= usable:
            raise SchedulingError(f"decision for {t.id!r} uses reserved or unknown cores")
        if not 0 <= entry.freq_level < n_levels:
            raise SchedulingError(f"invalid frequency level {entry.freq_level}")
        if not 1 <= entry.priority <= 99:
            raise SchedulingError(f"priority {entry.priority} out of 1..99")


class _AppRun:
    """Mutable per-application execution state inside one group."""

    def __init__(self, index: int, task: DagTask, entry: AppDecision):
        self.index = index
        self.task = task
        self.entry = entry
        self.allowed = tuple(sorted(entry.cores))
        self.subs = {s.id: s for s in task.subtasks}
        self.indeg = {s.id: len(s.deps) for s in task.subtasks}
        self.succs: dict[int, list[int]] = {s.id: [] for s in task.subtasks}
        for s in task.subtasks:
            for d in s.deps:
                self.succs[d].append(s.id)
        self.ready = sorted(i for i, n in self.indeg.items() if n == 0)
        self.done: set[int] = set()
        self.remaining: dict[int, float] = {}   # reference-speed seconds left
        self.bound: dict[int, int] = {}         # tied subtask -> core
        self.started: set[int] = set()
        self.finished_at: float | None = None
        self.branch_misses = 0
        self.cache_misses = 0
        self.duration_mult = 1.0

    @property
    def alive(self) -> bool:
        return len(self.done) < len(self.subs)


def _assign(
    runs: list[_AppRun],
    prev_assign: dict[int, tuple[int, int]],
    busy_time: dict[int, float],
) -> dict[int, tuple[int, int]]:
    """One global core-assignment pass at an event boundary.

    Returns core -> (app list index, subtask id). Applications are served in
    descending priority (FCFS on ties); within an application, tied subtasks
    that already started claim their bound core first, then flexible work
    fills remaining cores, sticking to the previous core when possible and
    otherwise picking the least-loaded (lowest id on ties).
    """
    assignment: dict[int, tuple[int, int]] = {}
    for ri in sorted(range(len(runs)), key=lambda i: (-runs[i].entry.priority, runs[i].index)):
        run = runs[ri]
        if not run.alive:
            continue
        avail = [c for c in run.allowed if c not in assignment]
        if not avail:
            continue
        pending = [s for s in run.ready if s not in run.done]
        tied_started = [
            s for s in pending
            if s in run.started and run.subs[s].binding != "untied" and s in run.bound
        ]
        flexible = [s for s in pending if s not in tied_started]
        for s in sorted(tied_started):
            core = run.bound[s]
            if core in avail:
                assignment[core] = (ri, s)
                avail.remove(core)
        for s in sorted(flexible):
            if not avail:
                break
            prev_core = next(
                (c for c, j in prev_assign.items() if j == (ri, s) and c in avail), None
            )
            if prev_core is not None:
                core = prev_core
            else:
                core = min(avail, key=lambda c: (busy_time.get(c, 0.0), c))
            assignment[core] = (ri, s)
            avail.remove(core)
            if run.subs[s].binding != "untied":
                run.bound[s] = core
    return assignment


def run_epoch(
    tasks: Sequence[DagTask],
    decision: ScheduleDecision,
    platform: Platform,
    thermal: ThermalState,
    params: WorkloadModelParams,
    rng: np.random.Generator,
    freq_changes: int = 0,
    max_step_s: float = 0.25,
    collect_trace: bool = False,
) -> EpochResult:
    """Execute one epoch: every benchmark group's variants run concurrently,
    groups run back to back. Returns the observation, the carried thermal
    state and optionally a job trace."""
    _validate_decision(tasks, decision, platform)
    topo = platform.topology
    ladder = platform.ladder
    cores = topo.cores
    speed = {c: topo.cluster_of(c).speed_scale for c in cores}
    m_avail = len(topo.usable_cores)

    t = 0.0
    energy = 0.0
    temp_integral = [0.0] * len(cores)
    busy_time = {c: 0.0 for c in cores}
    records: list[Job] = []
    arrivals: dict[str, float] = {}

    def advance_idle(duration: float) -> None:
        nonlocal t, energy, thermal
        left = duration
        while left > 1e-15:
            dt = min(left, max_step_s)
            ppc = power_draw(topo, {}, thermal, platform.power, ladder)
            energy += total_power(ppc) * dt
            for i in range(len(cores)):
                temp_integral[i] += thermal.temp_per_core[i] * dt
            thermal = thermal_step(
                thermal, ppc, dt, topo, None, platform.core_offset_c_per_w
            )
            t += dt
            left -= dt

    overhead = platform.decision_overhead_s + platform.dvfs_latency_s * freq_changes
    if overhead > 0:
        advance_idle(overhead)

    outcomes: list[AppOutcome] = []
    for group in benchmark_groups(tasks):
        group_start = t
        runs: list[_AppRun] = []
        for gi in group:
            task = tasks[gi]
            entry = decision.entry(task.id)
            run = _AppRun(gi, task, entry)
            k = len(run.allowed)
            bm, cm = miss_counts(
                task, k, entry.freq_level, entry.priority, rng, params,
                n_levels=ladder.n_levels, max_cores=m_avail,
            )
            run.branch_misses, run.cache_misses = bm, cm
            _, cache_floor = expected_misses(
                params, k, entry.freq_level, 1,
                n_levels=ladder.n_levels, max_cores=m_avail,
            )
            run.duration_mult = 1.0 + params.miss_makespan_coeff * (cm / cache_floor - 1.0)
            runs.append(run)
            arrivals[task.id] = group_start

        prev_assign: dict[int, tuple[int, int]] = {}
        while any(r.alive for r in runs):
            assignment = _assign(runs, prev_assign, busy_time)
            if not assignment:
                raise SchedulingError("no runnable work despite unfinished applications")
            # Sample durations at first dispatch, in deterministic core order.
            for core in sorted(assignment):
                ri, s = assignment[core]
                run = runs[ri]
                if s not in run.started:
                    run.started.add(s)
                    run.remaining[s] = subtask_duration(
                        run.subs[s], len(run.allowed), run.entry.freq_level,
                        run.task.variant, rng, ladder, params,
                        speed_scale=1.0, extra_mult=run.duration_mult,
                    )
            finish_dt = {
                core: runs[ri].remaining[s] / speed[core]
                for core, (ri, s) in assignment.items()
            }
            dt = min(min(finish_dt.values()), max_step_s)

            active_levels = {
                core: runs[ri].entry.freq_level for core, (ri, s) in assignment.items()
            }
            ppc = power_draw(topo, active_levels, thermal, platform.power, ladder)
            energy += total_power(ppc) * dt
            for i in range(len(cores)):
                temp_integral[i] += thermal.temp_per_core[i] * dt
            dyn = dynamic_power_per_core(topo, active_levels, platform.power, ladder)
            thermal = thermal_step(thermal, ppc, dt, topo, dyn, platform.core_offset_c_per_w)

            t_next = t + dt
            for core in sorted(assignment):
                ri, s = assignment[core]
                run = runs[ri]
                busy_time[core] += dt
                if collect_trace:
                    records.append(Job(core, run.task.id, s, t, t_next))
                if finish_dt[core] <= dt * (1.0 + 1e-12):
                    run.remaining[s] = 0.0
                    run.done.add(s)
                    run.ready.remove(s)
                    for succ in sorted(run.succs[s]):
                        run.indeg[succ] -= 1
                        if run.indeg[succ] == 0:
                            run.ready.append(succ)
                    run.ready.sort()
                    if not run.alive:
                        run.finished_at = t_next
                else:
                    run.remaining[s] -= dt * speed[core]
            prev_assign = {
                c: j for c, j in assignment.items()
                if runs[j[0]].alive and j[1] not in runs[j[0]].done
            }
            t = t_next

        for run in runs:
            outcomes.append(
                AppOutcome(
                    app_id=run.task.id,
                    priority=run.entry.priority,
                    cores=run.allowed,
                    makespan=(run.finished_at or t) - group_start,
                    finished_at=run.finished_at or t,
                    branch_misses=run.branch_misses,
                    cache_misses=run.cache_misses,
                )
            )

    epoch_len = t
    union_cores = sorted({c for a in decision.apps for c in a.cores})
    util = tuple(busy_time[c] / epoch_len for c in cores)
    mean_util = (
        sum(busy_time[c] for c in union_cores) / (epoch_len * len(union_cores))
        if union_cores else 0.0
    )
    obs = Observation(
        total_makespan=epoch_len,
        energy_j=energy,
        temps_end=thermal.temp_per_core,
        temps_avg=tuple(x / epoch_len for x in temp_integral),
        utilization=util,
        mean_utilization=mean_util,
        branch_misses=sum(o.branch_misses for o in outcomes),
        cache_misses=sum(o.cache_misses for o in outcomes),
        app_outcomes=tuple(outcomes),
        decision=decision,
    )
    trace = None
    if collect_trace:
        trace = {
            "schema": TRACE_SCHEMA,
            "arrivals": arrivals,
            "decision": decision_to_dict(decision),
            "records": [dataclasses.asdict(r) for r in records],
        }
    return EpochResult(observation=obs, thermal=thermal, trace=trace)


def probe_makespan(
    task: DagTask,
    core_subset: Sequence[int],
    level: int,
    platform: Platform,
    params: WorkloadModelParams,
) -> float:
    """Deterministic single-application makespan probe (all noise off)."""
    quiet = dataclasses.replace(params, jitter_sigma=0.0, miss_sigma=0.0)
    decision = ScheduleDecision(
        apps=(AppDecision(task.id, tuple(sorted(core_subset)), level, 80),),
        policy="probe",
    )
    res = run_epoch(
        [task], decision, platform, platform.initial_thermal(), quiet,
        np.random.default_rng(0),
    )
    return res.observation.total_makespan


def measure_lop(
    task: DagTask, platform: Platform, params: WorkloadModelParams
) -> int:
    """Level of parallelism from two noise-free probes at the top level."""
    usable = platform.topology.usable_cores
    top = platform.ladder.n_levels - 1
    m_one = probe_makespan(task, usable[:1], top, platform, params)
    m_all = probe_makespan(task, usable, top, platform, params)
    return level_of_parallelism(m_one, m_all, len(usable))


def decision_to_dict(decision: ScheduleDecision) -> dict:
    return {
        "policy": decision.policy,
        "meta": dict(decision.meta),
        "apps": [
            {
                "app_id": a.app_id,
                "cores": list(a.cores),
                "freq_level": a.freq_level,
                "priority": a.priority,
            }
            for a in decision.apps
        ],
    }


def decision_from_dict(d: Mapping) -> ScheduleDecision:
    return ScheduleDecision(
        apps=tuple(
            AppDecision(
                app_id=a["app_id"],
                cores=tuple(a["cores"]),
                freq_level=int(a["freq_level"]),
                priority=int(a["priority"]),
            )
            for a in d["apps"]
        ),
        policy=str(d.get("policy", "")),
        meta=dict(d.get("meta", {})),
    )


def write_trace(trace: dict, path: str) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        header = {k: trace[k] for k in ("schema", "arrivals", "decision")}
        fh.write(json.dumps(header) + "\n")
        for rec in trace["records"]:
            fh.write(json.dumps(rec) + "\n")


def read_trace(path: str) -> dict:
    with open(path, "r", encoding="utf-8") as fh:
        lines = [ln for ln in fh.read().splitlines() if ln.strip()]
    header = json.loads(lines[0])
    header["records"] = [json.loads(ln) for ln in lines[1:]]
    return header


def check_trace(tasks: Sequence[DagTask], trace: Mapping) -> list[str]:
    """Verify dependency, binding and core-exclusivity invariants on a trace.

    Returns a list of violation messages (empty when the trace is clean).
    """
    problems: list[str] = []
    by_task = {t.id: t for t in tasks}
    records = [r if isinstance(r, Job) else Job(**r) for r in trace["records"]]

    per_core: dict[int, list[Job]] = {}
    for r in records:
        if r.end <= r.start:
            problems.append(f"empty interval for {r.app_id}/{r.subtask}")
        per_core.setdefault(r.core, []).append(r)
    for core, recs in sorted(per_core.items()):
        recs.sort(key=lambda r: r.start)
        for a, b in zip(recs, recs[1:]):
            if b.start < a.end - 1e-12:
                problems.append(f"overlap on core {core} at t={b.start:.6f}")

    starts: dict[tuple[str, int], float] = {}
    ends: dict[tuple[str, int], float] = {}
    cores_used: dict[tuple[str, int], set[int]] = {}
    for r in records:
        key = (r.app_id, r.subtask)
        starts[key] = min(starts.get(key, r.start), r.start)
        ends[key] = max(ends.get(key, r.end), r.end)
        cores_used.setdefault(key, set()).add(r.core)

    for app_id, task in sorted(by_task.items()):
        for s in task.subtasks:
            key = (app_id, s.id)
            if key not in starts:
                problems.append(f"{app_id}/{s.id} never executed")
                continue
            for d in s.deps:
                dep_key = (app_id, d)
                if dep_key in ends and starts[key] < ends[dep_key] - 1e-12:
                    problems.append(
                        f"{app_id}/{s.id} started before dependency {d} finished"
                    )
            if s.binding != "untied" and len(cores_used[key]) > 1:
                problems.append(f"tied subtask {app_id}/{s.id} migrated cores")
    return problems
