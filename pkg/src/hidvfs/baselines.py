"""Non-learning scheduling policies: static governors, a utilization
heuristic, and a decomposed-action-space random policy."""

from __future__ import annotations

import numpy as np

from .agents import (
    PRIORITY_CATALOG,
    RewardParams,
    SuiteContext,
    _EpochLoop,
    build_decision,
    enumerate_subsets,
)
from .analysis import EpochMetrics
from .errors import ConfigError
from .platform import ThermalState
from .simengine import AppDecision, Observation, ScheduleDecision

PERFORMANCE_GOV = "performance"
POWERSAVE_GOV = "powersave"
ONDEMAND_GOV = "ondemand"
RANDOM_GOV = "random"
GOVERNOR_KINDS = (PERFORMANCE_GOV, POWERSAVE_GOV, ONDEMAND_GOV, RANDOM_GOV)

ONDEMAND_HIGH_UTIL = 0.8
ONDEMAND_LOW_UTIL = 0.3
ONDEMAND_STEP = 2
ONDEMAND_START_LEVEL = 5


def governor_decide(
    kind: str,
    prev_observation: Observation | None,
    ctx: SuiteContext,
    rng: np.random.Generator,
) -> ScheduleDecision:
    """One epoch's decision for a governor baseline.

    The static and heuristic governors give every application the full
    non-reserved core set at uniform priority 80; the random policy samples
    the decomposed action space (count, level, core combination, priority
    permutation) uniformly.
    """
    if kind not in GOVERNOR_KINDS:
        raise ConfigError(f"unknown governor {kind!r}; known: {GOVERNOR_KINDS}")
    usable = ctx.platform.topology.usable_cores
    n_levels = ctx.platform.ladder.n_levels

    if kind == RANDOM_GOV:
        k = int(rng.integers(1, len(usable) + 1))
        level = int(rng.integers(0, n_levels))
        size_k = [s for s in enumerate_subsets(usable) if len(s) == k]
        subset = size_k[int(rng.integers(len(size_k)))]
        combo = PRIORITY_CATALOG[int(rng.integers(len(PRIORITY_CATALOG)))]
        # Baselines do not partition cores: every application gets the whole
        # sampled combination and contends through preemption.
        entries = []
        for group in ctx.groups:
            for j, gi in enumerate(group):
                entries.append(
                    AppDecision(ctx.suite[gi].id, subset, level, combo[j % len(combo)])
                )
        return ScheduleDecision(
            apps=tuple(entries), policy=kind,
            meta={"k": k, "level": level, "subset": list(subset)},
        )

    if kind == PERFORMANCE_GOV:
        level = n_levels - 1
    elif kind == POWERSAVE_GOV:
        level = 0
    else:  # ondemand-like
        if prev_observation is None:
            level = ONDEMAND_START_LEVEL
        else:
            level = int(prev_observation.decision.apps[0].freq_level)
            util = prev_observation.mean_utilization
            if util > ONDEMAND_HIGH_UTIL:
                level += ONDEMAND_STEP
            elif util < ONDEMAND_LOW_UTIL:
                level -= ONDEMAND_STEP
            level = min(max(level, 0), n_levels - 1)
    entries = build_decision(
        ctx, usable, level, (80,), policy=kind,
        meta={"k": len(usable), "level": level, "subset": list(usable)},
    )
    # Static governors do not partition cores: every app shares the full set.
    shared = tuple(
        a.__class__(a.app_id, usable, a.freq_level, 80) for a in entries.apps
    )
    return ScheduleDecision(apps=shared, policy=kind, meta=entries.meta)


class GovernorRunner(_EpochLoop):
    """Epoch loop driving a governor policy; rewards logged for comparison."""

    def __init__(
        self,
        ctx: SuiteContext,
        kind: str,
        seed: int,
        reward_params: RewardParams | None = None,
        initial_thermal: ThermalState | None = None,
    ):
        super().__init__(ctx, seed, initial_thermal)
        if kind not in GOVERNOR_KINDS:
            raise ConfigError(f"unknown governor {kind!r}")
        self.kind = kind
        self.reward_params = reward_params or RewardParams()

    def run_epoch_cycle(self, phase: str = "train") -> EpochMetrics:
        decision = governor_decide(self.kind, self.prev_obs, self.ctx, self.policy_rng)
        obs = self.execute(decision)
        subset = sorted({c for a in decision.apps for c in a.cores})
        rewards = self.epoch_rewards(obs, subset, self.reward_params)
        level = int(decision.meta.get("level", decision.apps[0].freq_level))
        k = int(decision.meta.get("k", len(subset)))
        return self.record(phase, obs, level, k, rewards)

    def run_phase(self, phase: str, epochs: int) -> list[EpochMetrics]:
        return [self.run_epoch_cycle(phase) for _ in range(epochs)]

    def snapshots(self) -> dict[str, dict]:
        return {}
