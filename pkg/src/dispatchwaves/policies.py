"""Dispatching policies.

The iterative conditional dispatch (ICD) family decides each epoch in two
steps: solve a batch of sampled scenarios as static problems, then apply a
consensus rule to classify requests as dispatch-now or postpone.  Requests
forced one way are pinned through their dispatch windows in the next
iteration's scenarios, so later solves condition on earlier decisions.

Consensus rules: a double threshold on per-request dispatch frequency, the
single-threshold variants (dispatch-only, postpone-only), and a Hamming
rule that adopts the scenario solution closest on average to the others.
A rolling-horizon policy is the single-scenario, single-iteration Hamming
special case; the greedy baseline dispatches everything immediately.
"""

from __future__ import annotations

import dataclasses
import logging
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np

from . import solver
from .env import (
    SCENARIO_ID_BASE,
    Action,
    EpochConfig,
    EpochState,
    must_dispatch,
)
from .instgen import sample_epoch_requests
from .model import (
    FleetSpec,
    ModelError,
    Request,
    Solution,
    StaticInstance,
    VehicleClass,
)
from .solver import SolverParams, StopCriterion, scenario_params

logger = logging.getLogger("dispatchwaves.policies")

CONSENSUS_KINDS = ("double", "dshh", "postpone", "hamming")
POLICY_NAMES = ("greedy", "rh", "dshh", "icd-postpone", "icd-double",
                "icd-hamming")


class PolicyError(ModelError):
    """Raised for invalid policy configuration or inputs."""


@dataclass(frozen=True)
class IcdConfig:
    """Knobs of the scenario-consensus loop."""

    consensus: str = "double"
    iterations: int = 3
    scenarios: int = 30
    lookahead: int = 1
    eps_dispatch: float = 0.5
    eps_postpone: float = 0.2
    scenario_budget_ms: int = 1000
    scenario_max_iterations: Optional[int] = None
    action_budget_ms: int = 30000
    solver_params: SolverParams = field(default_factory=scenario_params)

    def __post_init__(self) -> None:
        if self.consensus not in CONSENSUS_KINDS:
            raise PolicyError(f"unknown consensus kind {self.consensus!r}")
        if self.iterations < 1:
            raise PolicyError("iterations must be >= 1")
        if self.scenarios < 1:
            raise PolicyError("scenarios must be >= 1")
        if self.lookahead < 0:
            raise PolicyError("lookahead must be >= 0")
        if self.eps_dispatch < self.eps_postpone:
            raise PolicyError("dispatch threshold must be >= postpone "
                              "threshold")

    def scenario_stop(self) -> StopCriterion:
        return StopCriterion(budget_ms=self.scenario_budget_ms,
                             max_iterations=self.scenario_max_iterations)


@dataclass(frozen=True)
class ScenarioSolution:
    """One solved scenario and the dispatch set it implies."""

    index: int
    solution: Solution
    dispatched: frozenset[int]


@dataclass(frozen=True)
class IcdDecision:
    """Action plus per-iteration diagnostics."""

    action: Action
    iterations_run: int
    dispatched: frozenset[int]
    postponed: frozenset[int]
    diagnostics: tuple[dict, ...]


def build_scenario(state: EpochState, config: EpochConfig, icd: IcdConfig,
                   dispatch_now: frozenset[int], postpone: frozenset[int],
                   rng: np.random.Generator) -> StaticInstance:
    """A static instance combining s_t with sampled future epochs.

    Conditioning: requests already classified dispatch-now get a dispatch
    window pinned to the current epoch start; postponed ones may leave any
    time from the next epoch on; the rest keep their full window.  Sampled
    future requests are released at their epoch's start time.
    """
    if dispatch_now & postpone:
        raise PolicyError("dispatch and postpone sets overlap")
    unknown = (dispatch_now | postpone) - state.ids()
    if unknown:
        raise PolicyError(f"classified ids not in state: {sorted(unknown)[:5]}")
    t, horizon = state.t, config.horizon
    now = config.time_of(t)
    nxt = config.time_of(t + 1) if t < config.num_epochs else horizon
    requests: list[Request] = []
    for r in state.requests:
        if r.id in dispatch_now:
            requests.append(dataclasses.replace(r, depart_early=now,
                                                depart_late=now))
        elif r.id in postpone:
            requests.append(dataclasses.replace(r, depart_early=nxt,
                                                depart_late=horizon))
        else:
            requests.append(dataclasses.replace(r, depart_early=r.release,
                                                depart_late=horizon))
    next_id = SCENARIO_ID_BASE
    future_epochs = range(t + 1, min(t + icd.lookahead, config.num_epochs) + 1)
    for ft in future_epochs:
        wave = sample_epoch_requests(config.topology, config.class_spec, ft,
                                     rng, id_start=next_id, horizon=horizon)
        next_id += len(wave)
        requests.extend(wave)

    cap = config.topology.capacity
    if config.fleet_mode == "unlimited":
        fleet = FleetSpec.unlimited(cap)
    else:
        classes = [VehicleClass(capacity=cap, count=int(state.primaries),
                                fixed_cost=0, available_from=now)]
        for ft in future_epochs:
            planned = config.planned_primaries[ft - 1]
            if planned > 0:
                classes.append(VehicleClass(capacity=cap, count=planned,
                                            fixed_cost=0,
                                            available_from=config.time_of(ft)))
        classes.append(VehicleClass(capacity=cap, count=None,
                                    fixed_cost=config.secondary_fixed_cost,
                                    available_from=now))
        fleet = FleetSpec(classes=tuple(classes))
    return StaticInstance(requests=tuple(requests),
                          travel=config.topology.travel, horizon=horizon,
                          fleet=fleet, earliest_dispatch=now)


def extract_dispatched(solution: Solution, known_ids: frozenset[int],
                       depart_time: int) -> frozenset[int]:
    """Known requests whose route leaves right at the epoch start."""
    out = set()
    for route in solution.routes:
        if route.departure == depart_time:
            out.update(rid for rid in route.visits if rid in known_ids)
    return frozenset(out)


def solve_scenarios(instances: Sequence[StaticInstance],
                    known_ids: frozenset[int], depart_time: int,
                    icd: IcdConfig,
                    seeds: Sequence[int]) -> list[ScenarioSolution]:
    """Solve each scenario; failures are dropped (and logged)."""
    stop = icd.scenario_stop()
    out: list[ScenarioSolution] = []
    for j, (inst, seed) in enumerate(zip(instances, seeds)):
        try:
            sol = solver.solve(inst, icd.solver_params, stop, seed=seed)
        except ModelError as exc:
            logger.warning("scenario %d failed: %s", j, exc)
            continue
        out.append(ScenarioSolution(
            index=j, solution=sol,
            dispatched=extract_dispatched(sol, known_ids, depart_time)))
    return out


def dispatch_score(request_id: int,
                   solutions: Sequence[ScenarioSolution]) -> float:
    """Fraction of scenario solutions that dispatch the request now."""
    if not solutions:
        raise PolicyError("no scenario solutions to score against")
    hits = sum(1 for s in solutions if request_id in s.dispatched)
    return hits / len(solutions)


def threshold_update(scores: dict[int, float], dispatch_now: frozenset[int],
                     postpone: frozenset[int], icd: IcdConfig,
                     ) -> tuple[frozenset[int], frozenset[int]]:
    """Classify undecided requests by their dispatch frequency.

    The double rule moves high scores into the dispatch set and low scores
    into the postpone set; the single-threshold variants apply only their
    own half.
    """
    if icd.eps_dispatch < icd.eps_postpone:
        raise PolicyError("dispatch threshold must be >= postpone threshold")
    d, p = set(dispatch_now), set(postpone)
    for rid, phi in scores.items():
        if rid in d or rid in p:
            continue
        if icd.consensus in ("double", "dshh") and phi >= icd.eps_dispatch:
            d.add(rid)
        elif icd.consensus in ("double", "postpone") and phi < icd.eps_postpone:
            p.add(rid)
    return frozenset(d), frozenset(p)


def hamming_update(solutions: Sequence[ScenarioSolution],
                   dispatch_now: frozenset[int], postpone: frozenset[int],
                   known_ids: frozenset[int],
                   ) -> tuple[frozenset[int], frozenset[int]]:
    """Adopt the scenario dispatch set with minimum average distance.

    Distance between two scenarios is the size of the symmetric difference
    of their dispatch sets, averaged over all solutions (self included).
    Ties go to the lowest scenario index.  A request is postponed only
    when every scenario solution postponed it.
    """
    if not solutions:
        raise PolicyError("no scenario solutions for consensus")
    sets = [s.dispatched for s in solutions]
    best_idx, best_avg = 0, float("inf")
    for i, a in enumerate(sets):
        total = sum(len(a ^ b) for b in sets)
        avg = total / len(sets)
        if avg < best_avg - 1e-12:
            best_idx, best_avg = i, avg
    d = frozenset(dispatch_now | sets[best_idx])
    never = known_ids - frozenset().union(*sets)
    p = frozenset(postpone | never)
    return d, p


def _scenario_rng(seed: int, t: int, iteration: int, index: int,
                  ) -> np.random.Generator:
    return np.random.default_rng(
        np.random.SeedSequence([seed, t, iteration, index]))


def _scenario_solver_seed(seed: int, t: int, iteration: int,
                          index: int) -> int:
    ss = np.random.SeedSequence([seed, t, iteration, index, 1])
    return int(ss.generate_state(1)[0])


def icd_decide(state: EpochState, config: EpochConfig, icd: IcdConfig,
               seed: int) -> IcdDecision:
    """Run the scenario-consensus loop for one epoch.

    Stops early once every request is classified.  The returned action is
    the dispatch set (for the postpone-only rule: everything that was not
    postponed) and always contains the must-dispatch requests.
    """
    s_ids = state.ids()
    forced = must_dispatch(state, config)
    if not s_ids:
        return IcdDecision(Action(frozenset(), primaries=state.primaries),
                           0, frozenset(), frozenset(), ())
    d, p = frozenset(forced), frozenset()
    diagnostics: list[dict] = []
    iterations_run = 0
    for it in range(1, icd.iterations + 1):
        if d | p == s_ids:
            break
        iterations_run = it
        instances, seeds = [], []
        for j in range(icd.scenarios):
            rng = _scenario_rng(seed, state.t, it, j)
            instances.append(build_scenario(state, config, icd, d, p, rng))
            seeds.append(_scenario_solver_seed(seed, state.t, it, j))
        depart = config.time_of(state.t)
        solutions = solve_scenarios(instances, s_ids, depart, icd, seeds)
        if not solutions:
            logger.warning("epoch %d iteration %d: every scenario failed, "
                           "no consensus update", state.t, it)
            continue
        scores = {rid: dispatch_score(rid, solutions) for rid in s_ids}
        for rid in d:
            if scores[rid] != 1.0:
                raise PolicyError(f"pinned request {rid} was not dispatched "
                                  f"in every scenario (score {scores[rid]})")
        for rid in p:
            if scores[rid] != 0.0:
                raise PolicyError(f"postponed request {rid} was dispatched "
                                  f"in a scenario (score {scores[rid]})")
        undecided_before = s_ids - d - p
        if icd.consensus == "hamming":
            d, p = hamming_update(solutions, d, p, s_ids)
        else:
            d, p = threshold_update(scores, d, p, icd)
        if d & p:
            raise PolicyError("consensus produced overlapping sets")
        undecided_after = s_ids - d - p
        if not undecided_after <= undecided_before:
            raise PolicyError("undecided set grew between iterations")
        hist, _ = np.histogram([scores[r] for r in undecided_before],
                               bins=10, range=(0.0, 1.0))
        diagnostics.append({
            "iteration": it, "scenarios_solved": len(solutions),
            "dispatched": len(d), "postponed": len(p),
            "undecided": len(undecided_after),
            "score_histogram": hist.tolist(),
        })
        logger.debug("epoch %d iteration %d: d=%d p=%d undecided=%d",
                     state.t, it, len(d), len(p), len(undecided_after))
    if icd.consensus == "postpone":
        chosen = s_ids - p
    else:
        chosen = d
    chosen = frozenset(chosen | forced)
    return IcdDecision(Action(chosen, primaries=state.primaries),
                       iterations_run, frozenset(d), frozenset(p),
                       tuple(diagnostics))


def rh_config(icd: IcdConfig) -> IcdConfig:
    """The rolling-horizon special case of the given budget profile.

    A single scenario and iteration receive the whole consensus budget
    (iterations x scenarios x per-scenario limits of the base profile).
    """
    factor = icd.iterations * icd.scenarios
    max_it = icd.scenario_max_iterations
    return dataclasses.replace(
        icd, consensus="hamming", iterations=1, scenarios=1,
        scenario_budget_ms=icd.scenario_budget_ms * factor,
        scenario_max_iterations=None if max_it is None else max_it * factor,
        eps_dispatch=0.5, eps_postpone=0.2)


def rh_decide(state: EpochState, config: EpochConfig, icd: IcdConfig,
              seed: int) -> IcdDecision:
    """Plan on one sampled scenario and dispatch what it dispatches."""
    return icd_decide(state, config, rh_config(icd), seed)


def greedy_decide(state: EpochState) -> Action:
    """Dispatch every known request immediately."""
    return Action(dispatch=state.ids(), primaries=state.primaries)


def policy_config(name: str, base: Optional[IcdConfig] = None) -> IcdConfig:
    """The named benchmark policy's configuration.

    Threshold defaults follow the tuned values: double (0.5, 0.2),
    dispatch-only 0.5, postpone-only 0.3.
    """
    base = base or IcdConfig()
    if name == "icd-double":
        return dataclasses.replace(base, consensus="double")
    if name == "dshh":
        return dataclasses.replace(base, consensus="dshh", eps_dispatch=0.5)
    if name == "icd-postpone":
        return dataclasses.replace(base, consensus="postpone",
                                   eps_postpone=0.3)
    if name == "icd-hamming":
        return dataclasses.replace(base, consensus="hamming")
    if name in ("rh", "greedy"):
        return base
    raise PolicyError(f"unknown policy {name!r}; expected one of "
                      f"{POLICY_NAMES}")


def decide(name: str, state: EpochState, config: EpochConfig,
           base: Optional[IcdConfig] = None, seed: int = 0) -> Action:
    """Single entry point used by the benchmark harness and CLI."""
    if name == "greedy":
        return greedy_decide(state)
    icd = policy_config(name, base)
    if name == "rh":
        return rh_decide(state, config, icd, seed).action
    return icd_decide(state, config, icd, seed).action
