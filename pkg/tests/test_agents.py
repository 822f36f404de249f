import dataclasses

import numpy as np
import pytest
from hypothesis import assume, given, settings
from hypothesis import strategies as st

from hidvfs.agents import (
    PRIORITY_CATALOG,
    AlgoParams,
    HidvfsRunner,
    RewardParams,
    SarbRunner,
    SuiteContext,
    Targets,
    build_decision,
    compute_targets,
    enumerate_subsets,
    hidvfs_train,
    hot_start_context,
    profiler_actions,
    reconcile_subset,
    reward_priority,
    reward_profiler,
    reward_thermal,
    sarb_config,
    sarb_train,
    thermal_correction_run,
    thermal_select_cores,
)
from hidvfs.platform import Cluster, FrequencyLadder, Platform, PowerParams, Topology
from hidvfs.rlcore import TrainConfig, compute_targets_for_batch
from hidvfs.simengine import AppDecision, ScheduleDecision, run_epoch
from hidvfs.workload import WorkloadModelParams, generate_suite

PLATFORM = Platform.default()
PARAMS = WorkloadModelParams()
TG = Targets(m_target=2.5, e_target=10.0)
RP = RewardParams()


@pytest.fixture(scope="module")
def fft_ctx():
    return SuiteContext.build(generate_suite(["fft"], 1, 42), PLATFORM, PARAMS)


class TestRewardProfiler:
    def test_walkthrough_value(self):
        r = reward_profiler(3.1, 15.2, TG, RP)
        assert 0.805 <= r <= 0.810

    def test_epsilon_perturbed_identity(self):
        tg = Targets(1.0, 10.0)
        assert reward_profiler(1.0, 5.0, tg, RP) == pytest.approx(1.0 / 1.001)

    def test_energy_branch_with_beta_zero(self):
        params = RewardParams(beta=0.0)
        tg = Targets(1.0, 10.0)
        assert reward_profiler(5.0, 20.0, tg, params) == pytest.approx(10.0 / 20.001)

    @given(m1=st.floats(min_value=0.1, max_value=50), m2=st.floats(min_value=0.1, max_value=50))
    def test_monotone_decreasing_in_makespan(self, m1, m2):
        if m1 == m2:
            return
        lo, hi = sorted((m1, m2))
        assert reward_profiler(lo, 1.0, TG, RP) > reward_profiler(hi, 1.0, TG, RP)

    @given(
        m=st.floats(min_value=1.0, max_value=20),
        scale=st.floats(min_value=0.1, max_value=10),
    )
    @settings(max_examples=80)
    def test_scale_invariance_up_to_epsilon(self, m, scale):
        # Joint scaling of (M, M_target) is invariant up to the epsilon
        # guard, whose relative weight stays under 1e-3 for second-scale
        # makespans on both sides of the scaling.
        assume(m * scale >= 1.0)
        base = reward_profiler(m, 1.0, Targets(2.5, 1.0), RP)
        scaled = reward_profiler(m * scale, 1.0, Targets(2.5 * scale, 1.0), RP)
        assert scaled == pytest.approx(base, rel=1e-3)

    @given(e1=st.floats(min_value=0, max_value=1e6), e2=st.floats(min_value=0, max_value=1e6))
    def test_beta_one_ignores_energy_bitwise(self, e1, e2):
        assert reward_profiler(3.0, e1, TG, RP) == reward_profiler(3.0, e2, TG, RP)


class TestRewardThermal:
    def test_walkthrough_value_exact(self):
        assert reward_thermal(44.0, 44.0, TG, RP) == 0.70

    def test_at_target_is_one(self):
        assert reward_thermal(50.0, 45.0, TG, RP) == 1.0

    def test_crossing_penalty_additive(self):
        assert reward_thermal(51.0, 49.0, TG, RP) == pytest.approx(-0.5)

    def test_above_without_crossing(self):
        assert reward_thermal(51.0, 52.0, TG, RP) == pytest.approx(0.5)

    @given(delta=st.floats(min_value=1e-6, max_value=5.0))
    def test_continuous_approach_from_below(self, delta):
        r = reward_thermal(50.0 - delta, 30.0, TG, RP)
        assert r == pytest.approx(1.0 - 0.05 * delta)
        assert r < 1.0


class TestRewardPriority:
    def test_walkthrough_value_exact(self):
        got = reward_priority(3.1, TG)
        assert got == (2.5 - 3.1) / 2.5
        assert round(got, 10) == -0.24

    def test_zero_at_target(self):
        assert reward_priority(2.5, TG) == 0.0

    def test_perfect_improvement_bound(self):
        assert reward_priority(0.0, TG) == 1.0

    @given(
        m1=st.floats(min_value=0, max_value=100),
        m2=st.floats(min_value=0, max_value=100),
        w=st.floats(min_value=0, max_value=1),
    )
    @settings(max_examples=60)
    def test_linear_in_makespan(self, m1, m2, w):
        mid = w * m1 + (1 - w) * m2
        want = w * reward_priority(m1, TG) + (1 - w) * reward_priority(m2, TG)
        assert reward_priority(mid, TG) == pytest.approx(want, abs=1e-9)


class TestComputeTargets:
    def test_min_selection_against_duplicate_path_oracle(self):
        # Independent re-implementation of the four sequential scenarios.
        suite = generate_suite(["fft"], 1, 42)
        quiet = dataclasses.replace(PARAMS, jitter_sigma=0.0, miss_sigma=0.0)
        usable = PLATFORM.topology.usable_cores
        mk, en = [], []
        for level, cores in [(0, usable), (0, usable[:1]), (11, usable), (11, usable[:1])]:
            thermal = PLATFORM.initial_thermal()
            m = e = 0.0
            for task in suite:
                dec = ScheduleDecision(
                    apps=(AppDecision(task.id, tuple(cores), level, 80),),
                    policy="target-probe",
                )
                res = run_epoch([task], dec, PLATFORM, thermal, quiet, np.random.default_rng(0))
                thermal = res.thermal
                m += res.observation.total_makespan
                e += res.observation.energy_j
            mk.append(m)
            en.append(e)
        got = compute_targets(suite, PLATFORM, PARAMS)
        assert got.m_target == min(mk)
        assert got.e_target == min(en)

    def test_single_serial_subtask_closed_form(self):
        from hidvfs.workload import DagTask, Subtask

        topo = Topology(clusters=(Cluster(0, (0, 1), "efficiency"),), reserved=frozenset())
        platform = Platform(
            ladder=FrequencyLadder.default(), topology=topo, power=PowerParams(),
            r_th={0: 5.0}, tau={0: 0.7}, decision_overhead_s=0.0, dvfs_latency_s=0.0,
        )
        work = 1.5 * platform.ladder.f_max
        task = DagTask(id="one", benchmark_name="fft", variant="serial",
                       subtasks=(Subtask(id=0, work=work, binding="tied"),))
        quiet = dataclasses.replace(PARAMS, miss_makespan_coeff=0.0)
        tg = compute_targets([task], platform, quiet)
        assert tg.m_target == pytest.approx(work / platform.ladder.f_max, abs=1e-12)

    def test_empty_suite_rejected(self):
        with pytest.raises(ValueError):
            compute_targets([], PLATFORM, PARAMS)

    def test_default_t_target_is_50(self):
        suite = generate_suite(["fib"], 1, 1)
        assert compute_targets(suite, PLATFORM, PARAMS).t_target == 50.0


class TestThermalSelectCores:
    TEMPS = {1: 42.0, 2: 48.0, 3: 43.0, 4: 47.0, 5: 41.0}

    def test_walkthrough_cooler_combination(self):
        assert thermal_select_cores(3, self.TEMPS, mode="greedy") == (1, 3, 5)

    def test_full_set_regardless_of_temps(self):
        assert thermal_select_cores(5, self.TEMPS, mode="greedy") == (1, 2, 3, 4, 5)

    def test_equal_temps_tie_break_lowest_ids(self):
        temps = {c: 40.0 for c in (1, 2, 3, 4, 5)}
        assert thermal_select_cores(2, temps, mode="greedy") == (1, 2)

    def test_count_out_of_range(self):
        with pytest.raises(ValueError):
            thermal_select_cores(6, self.TEMPS, mode="greedy")
        with pytest.raises(ValueError):
            thermal_select_cores(0, self.TEMPS, mode="greedy")

    def test_learned_mode_scores_enumerated_subsets(self):
        subsets = enumerate_subsets(sorted(self.TEMPS))
        q = np.zeros(len(subsets))
        want = (2, 4, 5)
        q[subsets.index(want)] = 10.0
        assert thermal_select_cores(3, self.TEMPS, q, mode="learned") == want

    def test_learned_mode_requires_full_q_vector(self):
        with pytest.raises(ValueError):
            thermal_select_cores(3, self.TEMPS, np.zeros(3), mode="learned")


class TestActionSpaces:
    def test_profiler_table_is_m_times_n(self):
        table = profiler_actions(5, 12)
        assert len(table) == 60
        assert len(set(table)) == 60

    def test_subset_enumeration_size(self):
        assert len(enumerate_subsets((1, 2, 3, 4, 5))) == 31

    def test_priority_catalog_is_six_permutations(self):
        assert len(PRIORITY_CATALOG) == 6
        assert all(sorted(c) == [70, 80, 90] for c in PRIORITY_CATALOG)

    def test_reconcile_shrinks_to_coolest(self):
        temps = {1: 42.0, 2: 48.0, 3: 43.0, 4: 47.0, 5: 41.0}
        assert reconcile_subset((1, 2, 3), 2, temps) == (1, 3)

    def test_reconcile_grows_with_coolest_outsiders(self):
        temps = {1: 42.0, 2: 48.0, 3: 43.0, 4: 47.0, 5: 41.0}
        assert reconcile_subset((2,), 3, temps) == (1, 2, 5)


class TestBuildDecision:
    def test_allocation_disjoint_and_reserved_free(self, fft_ctx):
        decision = build_decision(fft_ctx, (1, 2, 3), 8, (90, 80, 70), policy="t")
        seen: set[int] = set()
        for a in decision.apps:
            assert 0 not in a.cores
            if a.cores != (1, 2, 3):
                assert not (set(a.cores) & seen)
                seen.update(a.cores)

    def test_zero_count_apps_share_full_subset(self, fft_ctx):
        # With one core, lower-priority applications share the whole subset.
        decision = build_decision(fft_ctx, (4,), 3, (90, 80, 70), policy="t")
        assert all(a.cores == (4,) for a in decision.apps)

    def test_priorities_follow_combo_positions(self, fft_ctx):
        decision = build_decision(fft_ctx, (1, 2, 3, 4, 5), 11, (70, 90, 80), policy="t")
        assert [a.priority for a in decision.apps] == [70, 90, 80]


class TestHidvfsTrain:
    def test_single_epoch_emits_full_row(self, fft_ctx):
        out = hidvfs_train(fft_ctx, AlgoParams(), seed=1, epochs=1)
        assert len(out.metrics) == 1
        row = out.metrics[0]
        assert row.epoch == 0
        assert row.makespan_s > 0 and row.energy_j > 0
        assert 0 <= row.freq_level <= 11
        assert 1 <= row.core_count <= 5
        assert row.shaped_profiler is not None
        assert set(out.snapshots) == {"profiler", "thermal", "priority"}

    def test_reproducible_bit_for_bit(self, fft_ctx):
        a = hidvfs_train(fft_ctx, AlgoParams(), seed=5, epochs=5)
        b = hidvfs_train(fft_ctx, AlgoParams(), seed=5, epochs=5)
        assert a.metrics == b.metrics

    def test_action_space_sizes_match_decomposition(self, fft_ctx):
        runner = HidvfsRunner(fft_ctx, AlgoParams(), seed=0)
        assert runner.ensemble.profiler.net.n_actions == 60
        assert runner.ensemble.thermal.net.n_actions == 31
        assert runner.ensemble.priority.net.n_actions == 6

    def test_core_count_restriction_respected(self, fft_ctx):
        algo = AlgoParams(core_count_choices=(2,))
        out = hidvfs_train(fft_ctx, algo, seed=3, epochs=4)
        assert all(r.core_count == 2 for r in out.metrics)

    def test_crossing_and_decision_logs_align(self, fft_ctx):
        out = hidvfs_train(fft_ctx, AlgoParams(), seed=2, epochs=3)
        runner = out.runner
        assert len(runner.crossing_log) == 3
        assert len(runner.decision_log) == 3


class TestSarbTrain:
    def test_joint_action_space(self, fft_ctx):
        runner = SarbRunner(fft_ctx, AlgoParams(), seed=0)
        assert runner.agent.net.n_actions == 60

    def test_v8_flags_keep_targets_clamped(self, fft_ctx):
        algo = AlgoParams(train=sarb_config("V8"))
        out = sarb_train(fft_ctx, algo, seed=1, epochs=25)
        runner = out.runner
        cfg = runner.agent.config
        assert cfg.q_clip == 10.0 and cfg.reward_averaging and cfg.lr == 0.01
        batch = runner.agent.sample_combined(min(16, runner.agent.combined_size()))
        ys = compute_targets_for_batch(runner.agent.net, runner.agent.target_net, batch, cfg)
        assert np.all(np.abs(ys) <= 10.0)

    def test_version_ladder_flags(self):
        v1 = sarb_config("V1")
        assert v1.lr == 0.1 and v1.plan_count == 100
        v2 = sarb_config("V2")
        assert v2.plan_count == 20
        v4 = sarb_config("V4")
        assert v4.reward_averaging
        with pytest.raises(ValueError):
            sarb_config("V99")

    def test_reproducible(self, fft_ctx):
        a = sarb_train(fft_ctx, AlgoParams(), seed=9, epochs=4)
        b = sarb_train(fft_ctx, AlgoParams(), seed=9, epochs=4)
        assert a.metrics == b.metrics


class TestThermalCorrection:
    def test_correction_on_a_few_seeds(self):
        ctx = hot_start_context(PLATFORM, PARAMS)
        results = [thermal_correction_run(ctx, seed) for seed in range(5)]
        assert sum(results) >= 4


class TestSuiteContext:
    def test_context_caches_lops_and_targets(self, fft_ctx):
        assert set(fft_ctx.lops) == {t.id for t in fft_ctx.suite}
        assert fft_ctx.targets.m_target > 0
        assert fft_ctx.targets.t_target == 50.0
        assert fft_ctx.groups == [[0, 1, 2]]
