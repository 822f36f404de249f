"""Machine model: frequency ladder, core topology, power draw, thermal dynamics.

Defaults mirror a six-core embedded board with a 2-core high-performance
cluster and a 4-core efficiency cluster, a 12-step frequency ladder from
345,600 kHz to 2,035,200 kHz, and core 0 reserved for system tasks.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field, replace
from typing import Mapping, Sequence

from .errors import ConfigError

CONFIG_SCHEMA = "hidvfs-platform-v1"

MIN_FREQ_KHZ = 345_600
MAX_FREQ_KHZ = 2_035_200
N_LEVELS = 12
# (max - min) / (n - 1); the ladder endpoints and step count pin this.
STEP_KHZ = 153_600

PERFORMANCE = "performance"
EFFICIENCY = "efficiency"


@dataclass(frozen=True)
class FrequencyLadder:
    """Ordered per-core frequency steps in kHz, indexed 0..n-1."""

    levels: tuple[int, ...]

    def __post_init__(self) -> None:
        if len(self.levels) < 2:
            raise ValueError("ladder needs at least two levels")
        if any(b <= a for a, b in zip(self.levels, self.levels[1:])):
            raise ValueError("ladder levels must be strictly increasing")

    @property
    def n_levels(self) -> int:
        return len(self.levels)

    @property
    def f_max(self) -> int:
        return self.levels[-1]

    def freq_of_level(self, level: int) -> int:
        if not 0 <= level < len(self.levels):
            raise ValueError(f"frequency level {level} out of range 0..{len(self.levels) - 1}")
        return self.levels[level]

    def level_of_freq(self, khz: int) -> int:
        try:
            return self.levels.index(khz)
        except ValueError:
            raise ValueError(f"{khz} kHz is not a ladder frequency") from None

    @classmethod
    def default(cls) -> "FrequencyLadder":
        return cls(tuple(MIN_FREQ_KHZ + STEP_KHZ * i for i in range(N_LEVELS)))


def freq_of_level(ladder: FrequencyLadder, level: int) -> int:
    return ladder.freq_of_level(level)


def level_of_freq(ladder: FrequencyLadder, khz: int) -> int:
    return ladder.level_of_freq(khz)


@dataclass(frozen=True)
class Cluster:
    """A group of cores sharing a thermal/frequency domain."""

    cluster_id: int
    cores: tuple[int, ...]
    perf_class: str
    # Relative subtask execution speed of this cluster's cores (efficiency = 1.0).
    speed_scale: float = 1.0


@dataclass(frozen=True)
class Topology:
    clusters: tuple[Cluster, ...]
    reserved: frozenset[int] = frozenset()

    def __post_init__(self) -> None:
        seen: set[int] = set()
        for cl in self.clusters:
            for c in cl.cores:
                if c in seen:
                    raise ValueError(f"core {c} belongs to more than one cluster")
                seen.add(c)
        if not self.reserved <= seen:
            raise ValueError("reserved cores must be a subset of all cores")

    @property
    def cores(self) -> tuple[int, ...]:
        return tuple(sorted(c for cl in self.clusters for c in cl.cores))

    @property
    def usable_cores(self) -> tuple[int, ...]:
        return tuple(c for c in self.cores if c not in self.reserved)

    def cluster_of(self, core: int) -> Cluster:
        for cl in self.clusters:
            if core in cl.cores:
                return cl
        raise ValueError(f"unknown core {core}")

    @classmethod
    def default(cls) -> "Topology":
        return cls(
            clusters=(
                Cluster(0, (1, 2), PERFORMANCE, speed_scale=1.3),
                Cluster(1, (0, 3, 4, 5), EFFICIENCY, speed_scale=1.0),
            ),
            reserved=frozenset({0}),
        )


@dataclass(frozen=True)
class PowerParams:
    """Power model coefficients.

    Dynamic draw per active core is dyn_coeff * class_scale * (f / f_max)^3.
    Leakage per core is leak_base * exp(leak_temp_coeff * (T - ambient)).
    Defaults are calibrated so three efficiency cores at level 7 near 45 degC
    draw about 4.9 W total, and so static power dominates enough that raising
    frequency shortens runs by more than it raises power (energy falls).
    """

    dyn_coeff: float = 0.72
    leak_base: float = 0.36
    leak_temp_coeff: float = 0.02
    idle_power: float = 1.2
    perf_class_scale: Mapping[str, float] = field(
        default_factory=lambda: {PERFORMANCE: 1.5, EFFICIENCY: 1.0}
    )
    # Leakage saturates beyond this exponent so runaway states stay finite.
    leak_exp_cap: float = 4.0

    def __post_init__(self) -> None:
        if min(self.dyn_coeff, self.leak_base, self.leak_temp_coeff, self.idle_power) <= 0:
            raise ValueError("power coefficients must be positive")


@dataclass(frozen=True)
class ThermalState:
    """Per-core temperatures plus the RC constants that drive them."""

    temp_per_core: tuple[float, ...]
    ambient: float = 30.0
    r_th: Mapping[int, float] = field(default_factory=dict)   # degC/W per cluster id
    tau: Mapping[int, float] = field(default_factory=dict)    # seconds per cluster id

    def __post_init__(self) -> None:
        if any(not math.isfinite(t) for t in self.temp_per_core):
            raise ValueError("temperatures must be finite")

    @classmethod
    def at_ambient(cls, topology: Topology, ambient: float = 30.0,
                   r_th: Mapping[int, float] | None = None,
                   tau: Mapping[int, float] | None = None) -> "ThermalState":
        if r_th is None:
            r_th = {cl.cluster_id: (7.5 if cl.perf_class == PERFORMANCE else 5.5)
                    for cl in topology.clusters}
        if tau is None:
            tau = {cl.cluster_id: 0.7 for cl in topology.clusters}
        n = len(topology.cores)
        return cls(temp_per_core=(ambient,) * n, ambient=ambient,
                   r_th=dict(r_th), tau=dict(tau))

    def with_temps(self, temps: Sequence[float]) -> "ThermalState":
        return replace(self, temp_per_core=tuple(float(t) for t in temps))


@dataclass(frozen=True)
class Platform:
    """Bundle of everything the engine needs to know about the machine."""

    ladder: FrequencyLadder
    topology: Topology
    power: PowerParams
    ambient: float = 30.0
    r_th: Mapping[int, float] = field(default_factory=dict)
    tau: Mapping[int, float] = field(default_factory=dict)
    # Fixed overheads: one decision round-trip per epoch, one latency hit per
    # frequency change (idle intervals prepended to the epoch).
    decision_overhead_s: float = 0.002
    dvfs_latency_s: float = 0.0003
    # Deterministic per-core spread on top of the cluster temperature, degC/W
    # of that core's dynamic draw.
    core_offset_c_per_w: float = 1.5

    def initial_thermal(self) -> ThermalState:
        return ThermalState.at_ambient(
            self.topology, self.ambient,
            r_th=self.r_th or None, tau=self.tau or None,
        )

    @classmethod
    def default(cls) -> "Platform":
        topo = Topology.default()
        return cls(
            ladder=FrequencyLadder.default(),
            topology=topo,
            power=PowerParams(),
            r_th={cl.cluster_id: (7.5 if cl.perf_class == PERFORMANCE else 5.5)
                  for cl in topo.clusters},
            tau={cl.cluster_id: 0.7 for cl in topo.clusters},
        )


def dynamic_power_per_core(
    topology: Topology,
    active: Mapping[int, int],
    params: PowerParams,
    ladder: FrequencyLadder,
) -> dict[int, float]:
    """Dynamic draw of each active core in W."""
    f_max = float(ladder.f_max)
    out: dict[int, float] = {}
    for core, level in active.items():
        cl = topology.cluster_of(core)
        scale = params.perf_class_scale.get(cl.perf_class, 1.0)
        ratio = ladder.freq_of_level(level) / f_max
        out[core] = params.dyn_coeff * scale * ratio**3
    return out


def power_draw(
    topology: Topology,
    active: Mapping[int, int],
    thermal: ThermalState,
    params: PowerParams,
    ladder: FrequencyLadder,
) -> dict[int, float]:
    """Per-cluster power in W for a set of active cores at given levels."""
    cores = topology.cores
    core_index = {c: i for i, c in enumerate(cores)}
    for core in active:
        if core not in core_index:
            raise ValueError(f"active core {core} not in topology")
    dyn = dynamic_power_per_core(topology, active, params, ladder)
    n_cores = len(cores)
    out: dict[int, float] = {}
    for cl in topology.clusters:
        p = sum(dyn.get(c, 0.0) for c in cl.cores)
        for c in cl.cores:
            dt = thermal.temp_per_core[core_index[c]] - thermal.ambient
            p += params.leak_base * math.exp(
                min(params.leak_temp_coeff * dt, params.leak_exp_cap)
            )
        p += params.idle_power * len(cl.cores) / n_cores
        out[cl.cluster_id] = p
    return out


def total_power(power_per_cluster: Mapping[int, float]) -> float:
    return sum(power_per_cluster.values())


def thermal_step(
    thermal: ThermalState,
    power_per_cluster: Mapping[int, float],
    dt: float,
    topology: Topology,
    core_dyn_w: Mapping[int, float] | None = None,
    core_offset_c_per_w: float = 1.5,
) -> ThermalState:
    """Advance the thermal RC model by dt seconds.

    Every core relaxes toward its cluster's steady state plus a deterministic
    offset proportional to that core's dynamic draw:
    T <- T + alpha * (T_inf - T) with alpha = min(dt/tau, 1) and
    T_inf = ambient + r_th * P_cluster + offset. Clamping alpha keeps the
    step a contraction toward T_inf for any dt.
    """
    if dt <= 0:
        raise ValueError("dt must be positive")
    core_dyn_w = core_dyn_w or {}
    cores = topology.cores
    core_index = {c: i for i, c in enumerate(cores)}
    temps = list(thermal.temp_per_core)
    for cl in topology.clusters:
        tau = thermal.tau.get(cl.cluster_id, 0.7)
        r = thermal.r_th.get(cl.cluster_id, 5.5)
        t_cluster_inf = thermal.ambient + r * power_per_cluster.get(cl.cluster_id, 0.0)
        alpha = min(dt / tau, 1.0)
        for c in cl.cores:
            i = core_index[c]
            t_inf = t_cluster_inf + core_offset_c_per_w * core_dyn_w.get(c, 0.0)
            temps[i] = temps[i] + alpha * (t_inf - temps[i])
    return thermal.with_temps(temps)


def platform_to_dict(p: Platform) -> dict:
    return {
        "schema": CONFIG_SCHEMA,
        "ladder_khz": list(p.ladder.levels),
        "clusters": [
            {
                "cluster_id": cl.cluster_id,
                "cores": list(cl.cores),
                "perf_class": cl.perf_class,
                "speed_scale": cl.speed_scale,
            }
            for cl in p.topology.clusters
        ],
        "reserved_cores": sorted(p.topology.reserved),
        "power": {
            "dyn_coeff": p.power.dyn_coeff,
            "leak_base": p.power.leak_base,
            "leak_temp_coeff": p.power.leak_temp_coeff,
            "idle_power": p.power.idle_power,
            "perf_class_scale": dict(p.power.perf_class_scale),
        },
        "thermal": {
            "ambient_c": p.ambient,
            "r_th_c_per_w": {str(k): v for k, v in p.r_th.items()},
            "tau_s": {str(k): v for k, v in p.tau.items()},
            "core_offset_c_per_w": p.core_offset_c_per_w,
        },
        "decision_overhead_s": p.decision_overhead_s,
        "dvfs_latency_s": p.dvfs_latency_s,
    }


def platform_from_dict(d: Mapping) -> Platform:
    try:
        ladder = FrequencyLadder(tuple(int(x) for x in d["ladder_khz"]))
        topo = Topology(
            clusters=tuple(
                Cluster(
                    cluster_id=int(c["cluster_id"]),
                    cores=tuple(int(x) for x in c["cores"]),
                    perf_class=str(c["perf_class"]),
                    speed_scale=float(c.get("speed_scale", 1.0)),
                )
                for c in d["clusters"]
            ),
            reserved=frozenset(int(x) for x in d.get("reserved_cores", [])),
        )
        pw = d.get("power", {})
        power = PowerParams(
            dyn_coeff=float(pw.get("dyn_coeff", 0.65)),
            leak_base=float(pw.get("leak_base", 0.28)),
            leak_temp_coeff=float(pw.get("leak_temp_coeff", 0.04)),
            idle_power=float(pw.get("idle_power", 1.2)),
            perf_class_scale={str(k): float(v)
                              for k, v in pw.get("perf_class_scale",
                                                 {PERFORMANCE: 1.5, EFFICIENCY: 1.0}).items()},
        )
        th = d.get("thermal", {})
        return Platform(
            ladder=ladder,
            topology=topo,
            power=power,
            ambient=float(th.get("ambient_c", 30.0)),
            r_th={int(k): float(v) for k, v in th.get("r_th_c_per_w", {}).items()}
            or Platform.default().r_th,
            tau={int(k): float(v) for k, v in th.get("tau_s", {}).items()}
            or Platform.default().tau,
            decision_overhead_s=float(d.get("decision_overhead_s", 0.002)),
            dvfs_latency_s=float(d.get("dvfs_latency_s", 0.0003)),
            core_offset_c_per_w=float(th.get("core_offset_c_per_w", 1.5)),
        )
    except (KeyError, TypeError, ValueError) as exc:
        raise ConfigError(f"bad platform description: {exc}") from exc


def load_platform(path: str) -> Platform:
    with open(path, "r", encoding="utf-8") as fh:
        return platform_from_dict(json.load(fh))
