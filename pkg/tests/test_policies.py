"""Policy family: consensus updates, scenario building, decision entry points."""

from __future__ import annotations

import dataclasses

import numpy as np
import pytest

from dispatchwaves.env import Action, EpochConfig, Episode, must_dispatch
from dispatchwaves.instgen import (
    EPOCH_TIMES,
    HORIZON,
    InstanceClassSpec,
    builtin_topology,
)
from dispatchwaves.policies import (
    POLICY_NAMES,
    SCENARIO_ID_BASE,
    IcdConfig,
    PolicyError,
    ScenarioSolution,
    build_scenario,
    decide,
    dispatch_score,
    greedy_decide,
    hamming_update,
    icd_decide,
    policy_config,
    rh_config,
    rh_decide,
    threshold_update,
)
from dispatchwaves.solver.params import StopCriterion, scenario_params

SPEC60 = InstanceClassSpec("R", "HOM", "TW2", 60.0)


def quick_icd(**overrides) -> IcdConfig:
    kwargs = dict(
        consensus="double",
        iterations=2,
        scenarios=3,
        scenario_budget_ms=30_000,
        scenario_max_iterations=4,
        action_budget_ms=60_000,
        solver_params=scenario_params(),
    )
    kwargs.update(overrides)
    return IcdConfig(**kwargs)


def quick_config() -> EpochConfig:
    return EpochConfig(
        topology=builtin_topology("R1"),
        class_spec=SPEC60,
        direct_stop=StopCriterion(budget_ms=60_000, max_iterations=40),
        direct_params=scenario_params(),
    )


def states_from_episode(seed: int, stop_before_final: bool = True):
    """Epoch states of one greedy playout, skipping the forced final wave."""
    config = quick_config()
    ep = Episode(config, seed)
    state = ep.reset()
    out = []
    while state is not None:
        if not stop_before_final or state.t < config.num_epochs:
            out.append((state, config))
        state = ep.step(Action(dispatch=frozenset(state.ids()))).state
    return out


def fake_solutions(*dispatched: set) -> list[ScenarioSolution]:
    return [ScenarioSolution(index=i, solution=None,
                             dispatched=frozenset(d))
            for i, d in enumerate(dispatched)]


class TestScores:
    def test_dispatch_fraction(self):
        sols = fake_solutions(*([{4}] * 15 + [set()] * 15))
        assert dispatch_score(4, sols) == 0.5

    def test_empty_solutions(self):
        with pytest.raises(PolicyError):
            dispatch_score(4, [])


class TestThresholdUpdate:
    SCORES = {1: 0.9, 2: 0.1, 3: 0.4}

    def test_double_moves_both_ways(self):
        icd = quick_icd(eps_dispatch=0.5, eps_postpone=0.2)
        d, p = threshold_update(self.SCORES, frozenset(), frozenset(), icd)
        assert d == {1}
        assert p == {2}

    def test_dispatch_only_variant_never_postpones(self):
        icd = quick_icd(consensus="dshh", eps_dispatch=0.5)
        d, p = threshold_update(self.SCORES, frozenset(), frozenset(), icd)
        assert d == {1}
        assert p == frozenset()

    def test_postpone_only_variant_never_dispatches(self):
        icd = quick_icd(consensus="postpone", eps_postpone=0.3)
        d, p = threshold_update(self.SCORES, frozenset(), frozenset(), icd)
        assert d == frozenset()
        assert p == {2}

    def test_decided_requests_are_left_alone(self):
        icd = quick_icd(eps_dispatch=0.5, eps_postpone=0.2)
        d0, p0 = frozenset([2]), frozenset([1])
        d, p = threshold_update(self.SCORES, d0, p0, icd)
        assert d == d0
        assert p == p0

    def test_boundary_score_dispatches(self):
        icd = quick_icd(eps_dispatch=0.5, eps_postpone=0.2)
        d, p = threshold_update({5: 0.5}, frozenset(), frozenset(), icd)
        assert d == {5}


class TestHammingUpdate:
    def test_selects_minimum_average_distance(self):
        known = frozenset({1, 2, 3})
        sols = fake_solutions({1}, {1}, {2, 3})
        d, p = hamming_update(sols, frozenset(), frozenset(), known)
        assert d == {1}
        assert p == frozenset()

    def test_postpones_universally_absent_requests(self):
        known = frozenset({1, 2, 3})
        sols = fake_solutions({1}, {1, 2}, {2})
        d, p = hamming_update(sols, frozenset(), frozenset(), known)
        assert 3 not in d
        assert p == {3}

    def test_tie_breaks_to_lowest_index(self):
        known = frozenset({1, 2})
        sols = fake_solutions({1}, {2})
        d, p = hamming_update(sols, frozenset(), frozenset(), known)
        assert d == {1}

    def test_existing_decisions_accumulate(self):
        known = frozenset({1, 2, 3})
        sols = fake_solutions({2}, {2})
        d, p = hamming_update(sols, frozenset({1}), frozenset(), known)
        assert d == {1, 2}


class TestBuildScenario:
    def test_membership_windows(self):
        (state, config), *_ = states_from_episode(61)
        ids = sorted(state.ids())
        now = config.time_of(state.t)
        nxt = config.time_of(state.t + 1)
        d = frozenset(ids[:1])
        p = frozenset(ids[1:2])
        rng = np.random.default_rng(0)
        inst = build_scenario(state, config, quick_icd(), d, p, rng)
        assert inst.earliest_dispatch == now
        windows = {r.id: (r.depart_early, r.depart_late)
                   for r in inst.requests}
        assert windows[ids[0]] == (now, now)
        assert windows[ids[1]] == (nxt, HORIZON)
        for rid in ids[2:]:
            req = state.request(rid)
            assert windows[rid] == (req.release, HORIZON)

    def test_lookahead_adds_future_requests(self):
        (state, config), *_ = states_from_episode(61)
        rng = np.random.default_rng(1)
        inst = build_scenario(state, config, quick_icd(lookahead=2),
                              frozenset(), frozenset(), rng)
        future = [r for r in inst.requests if r.id >= SCENARIO_ID_BASE]
        known = [r for r in inst.requests if r.id < SCENARIO_ID_BASE]
        assert len(known) == len(state.requests)
        assert future
        nxt = config.time_of(state.t + 1)
        assert {r.release for r in future} <= {nxt, config.time_of(state.t + 2)}

    def test_zero_lookahead_keeps_only_known(self):
        (state, config), *_ = states_from_episode(61)
        rng = np.random.default_rng(1)
        inst = build_scenario(state, config, quick_icd(lookahead=0),
                              frozenset(), frozenset(), rng)
        assert all(r.id < SCENARIO_ID_BASE for r in inst.requests)

    def test_overlapping_membership_rejected(self):
        (state, config), *_ = states_from_episode(61)
        rid = sorted(state.ids())[0]
        with pytest.raises(PolicyError):
            build_scenario(state, config, quick_icd(), frozenset([rid]),
                           frozenset([rid]), np.random.default_rng(0))

    def test_unknown_membership_rejected(self):
        (state, config), *_ = states_from_episode(61)
        with pytest.raises(PolicyError):
            build_scenario(state, config, quick_icd(),
                           frozenset([987_654]), frozenset(),
                           np.random.default_rng(0))


class TestIcdDecide:
    def test_forced_requests_always_dispatched(self):
        icd = quick_icd()
        for state, config in states_from_episode(17,
                                                 stop_before_final=False):
            decision = icd_decide(state, config, icd, seed=17)
            forced = must_dispatch(state, config)
            assert forced <= decision.action.dispatch
            assert decision.action.dispatch <= set(state.ids())

    def test_same_seed_same_decision(self):
        (state, config), *_ = states_from_episode(29)
        icd = quick_icd()
        a = icd_decide(state, config, icd, seed=4)
        b = icd_decide(state, config, icd, seed=4)
        assert a.action == b.action
        assert a.dispatched == b.dispatched
        assert a.postponed == b.postponed

    def test_no_request_is_both_dispatched_and_postponed(self):
        for state, config in states_from_episode(43):
            decision = icd_decide(state, config, quick_icd(), seed=1)
            assert not decision.dispatched & decision.postponed

    def test_complementary_thresholds_resolve_in_one_pass(self):
        icd = quick_icd(eps_dispatch=0.5, eps_postpone=0.5, iterations=5)
        for state, config in states_from_episode(9):
            decision = icd_decide(state, config, icd, seed=2)
            assert decision.iterations_run <= 1
            resolved = decision.dispatched | decision.postponed
            assert resolved == frozenset(state.ids())

    def test_undecided_set_shrinks_monotonically(self):
        icd = quick_icd(iterations=3, scenarios=3)
        (state, config), *_ = states_from_episode(3)
        decision = icd_decide(state, config, icd, seed=5)
        undecided = [diag["undecided"] for diag in decision.diagnostics]
        assert all(b <= a for a, b in zip(undecided, undecided[1:]))

    def test_postpone_variant_dispatches_complement(self):
        icd = quick_icd(consensus="postpone", eps_postpone=0.3)
        (state, config), *_ = states_from_episode(3)
        decision = icd_decide(state, config, icd, seed=5)
        assert decision.action.dispatch == \
            frozenset(state.ids()) - decision.postponed

    def test_empty_state_returns_empty_action(self):
        (state, config), *_ = states_from_episode(3)
        empty = dataclasses.replace(state, requests=())
        decision = icd_decide(empty, config, quick_icd(), seed=0)
        assert decision.action.dispatch == frozenset()
        assert decision.iterations_run == 0


class TestEntryPoints:
    def test_policy_names_covered(self):
        assert set(POLICY_NAMES) == {
            "greedy", "rh", "dshh", "icd-postpone", "icd-double",
            "icd-hamming"}

    def test_policy_config_presets(self):
        base = quick_icd()
        assert policy_config("icd-double", base).consensus == "double"
        assert policy_config("icd-double", base).eps_dispatch == 0.5
        assert policy_config("icd-double", base).eps_postpone == 0.2
        assert policy_config("dshh", base).consensus == "dshh"
        assert policy_config("dshh", base).eps_dispatch == 0.5
        assert policy_config("icd-postpone", base).consensus == "postpone"
        assert policy_config("icd-postpone", base).eps_postpone == 0.3
        assert policy_config("icd-hamming", base).consensus == "hamming"
        with pytest.raises(PolicyError):
            policy_config("warp-drive", base)

    def test_greedy_dispatches_everything(self):
        (state, _), *_ = states_from_episode(3)
        assert greedy_decide(state).dispatch == frozenset(state.ids())
        assert decide("greedy", state, quick_config()) == \
            greedy_decide(state)

    def test_rh_scales_one_scenario_budget(self):
        base = quick_icd(iterations=2, scenarios=3, scenario_budget_ms=1000,
                         scenario_max_iterations=4)
        rh = rh_config(base)
        assert rh.consensus == "hamming"
        assert (rh.iterations, rh.scenarios) == (1, 1)
        assert rh.scenario_budget_ms == 6000
        assert rh.scenario_max_iterations == 24

    def test_rh_equals_single_scenario_hamming(self):
        base = quick_icd(iterations=2, scenarios=2,
                         scenario_max_iterations=4)
        manual = dataclasses.replace(
            base, consensus="hamming", iterations=1, scenarios=1,
            eps_dispatch=0.5, eps_postpone=0.2,
            scenario_budget_ms=base.scenario_budget_ms * 4,
            scenario_max_iterations=16)
        for state, config in states_from_episode(51):
            a = rh_decide(state, config, base, seed=8)
            b = icd_decide(state, config, manual, seed=8)
            assert a.action == b.action

    def test_dshh_never_postpones(self):
        for state, config in states_from_episode(27):
            decision = icd_decide(state, config, quick_icd(consensus="dshh"),
                                  seed=3)
            assert decision.postponed == frozenset()
            assert all(diag["postponed"] == 0
                       for diag in decision.diagnostics)


class TestIcdConfigValidation:
    def test_rejects_unknown_consensus(self):
        with pytest.raises(PolicyError):
            quick_icd(consensus="majority")

    def test_rejects_inverted_thresholds(self):
        with pytest.raises(PolicyError):
            quick_icd(eps_dispatch=0.1, eps_postpone=0.6)

    def test_rejects_nonpositive_counts(self):
        with pytest.raises(PolicyError):
            quick_icd(iterations=0)
        with pytest.raises(PolicyError):
            quick_icd(scenarios=0)
        with pytest.raises(PolicyError):
            quick_icd(lookahead=-1)
