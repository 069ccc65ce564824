"""Epoch-based dispatching episodes.

An episode reveals requests in hourly waves.  At each epoch the operator
picks a dispatch set (it must include every request that could not wait
another epoch), the chosen requests are routed on vehicles that leave the
depot exactly at the epoch start, and the remainder carries over.  The
perfect-information counterpart of a finished episode is a single static
instance whose solver cost lower-bounds what any policy could have paid.

A limited-fleet mode tracks a pool of planned zero-cost primary vehicles;
extra vehicles can always be hired at a fixed upfront cost.
"""

from __future__ import annotations

import dataclasses
import time
from dataclasses import dataclass, field
from typing import Optional, Sequence, TextIO

import numpy as np

from . import solver
from .fileio import append_jsonl
from .instgen import (
    EPOCH_TIMES,
    HORIZON,
    InstanceClassSpec,
    Topology,
    sample_epoch_requests,
)
from .model import (
    FleetSpec,
    ModelError,
    Request,
    Solution,
    StaticInstance,
    VehicleClass,
    evaluate_solution,
)
from .solver import SolverParams, StopCriterion, default_params

SECONDARY_FIXED_COST = 2 * 3600
# ids at or above this mark are reserved for sampled lookahead requests
SCENARIO_ID_BASE = 1_000_000


class EnvError(ModelError):
    """Raised for invalid actions or malformed episode configuration."""


@dataclass(frozen=True)
class EpochConfig:
    """Everything an episode needs except the seed."""

    topology: Topology
    class_spec: InstanceClassSpec
    horizon: int = HORIZON
    epoch_times: tuple[int, ...] = EPOCH_TIMES
    fleet_mode: str = "unlimited"  # "unlimited" | "limited"
    planned_primaries: Optional[tuple[int, ...]] = None
    secondary_fixed_cost: int = SECONDARY_FIXED_COST
    direct_stop: StopCriterion = field(
        default_factory=lambda: StopCriterion(budget_ms=30000))
    direct_params: SolverParams = field(default_factory=default_params)

    def __post_init__(self) -> None:
        times = self.epoch_times
        if not times or any(b <= a for a, b in zip(times, times[1:])):
            raise EnvError("epoch times must be strictly increasing")
        if times[-1] >= self.horizon:
            raise EnvError("final epoch must start before the horizon")
        if self.fleet_mode not in ("unlimited", "limited"):
            raise EnvError(f"unknown fleet mode {self.fleet_mode!r}")
        if self.fleet_mode == "limited":
            if (self.planned_primaries is None
                    or len(self.planned_primaries) != len(times)):
                raise EnvError("limited mode needs one planned primary count "
                               "per epoch")
            if any(p < 0 for p in self.planned_primaries):
                raise EnvError("planned primary counts must be >= 0")

    @property
    def num_epochs(self) -> int:
        return len(self.epoch_times)

    def time_of(self, t: int) -> int:
        return self.epoch_times[t - 1]


@dataclass(frozen=True)
class EpochState:
    """Known, not yet dispatched requests at one epoch."""

    t: int
    requests: tuple[Request, ...]
    primaries: Optional[int] = None  # remaining primary vehicles (limited)

    def ids(self) -> frozenset[int]:
        return frozenset(r.id for r in self.requests)

    def request(self, rid: int) -> Request:
        for r in self.requests:
            if r.id == rid:
                return r
        raise EnvError(f"unknown request id {rid}")


@dataclass(frozen=True)
class Action:
    """Dispatch decision for one epoch."""

    dispatch: frozenset[int]
    primaries: Optional[int] = None  # primary vehicles made available


class StepResult(tuple):
    """(next_state or None, direct cost, Solution or None, log record)."""

    __slots__ = ()

    def __new__(cls, state, cost, solution, record):
        return super().__new__(cls, (state, cost, solution, record))

    state = property(lambda self: self[0])
    cost = property(lambda self: self[1])
    solution = property(lambda self: self[2])
    record = property(lambda self: self[3])


def must_dispatch(state: EpochState, config: EpochConfig) -> frozenset[int]:
    """Requests that become unservable if postponed one more epoch.

    At the final epoch everything must go.  Otherwise request i must be
    dispatched now when a departure at the next epoch either misses its
    time window or cannot make it back to the depot by the horizon.
    """
    if state.t >= config.num_epochs:
        return state.ids()
    t_next = config.time_of(state.t + 1)
    horizon = config.horizon
    travel = config.topology.travel
    out = set()
    for r in state.requests:
        to = int(travel[0, r.location])
        back = int(travel[r.location, 0])
        arrive = t_next + to
        if arrive > r.tw_late or max(arrive, r.tw_early) + r.service + back > horizon:
            out.add(r.id)
    return frozenset(out)


class Episode:
    """A single episode: state machine plus realized-request bookkeeping."""

    def __init__(self, config: EpochConfig, seed: int):
        self.config = config
        self.seed = int(seed)
        self.state: Optional[EpochState] = None
        self.done = False
        self.realized: list[Request] = []
        self.records: list[dict] = []
        self.total_cost = 0
        self.total_dispatched = 0
        self.invariant_checks = {"must_subset": 0, "fleet_accounting": 0,
                                 "departure_exact": 0}
        self._next_id = 1
        self._revealed_last = 0

    # -- sampling ------------------------------------------------------

    def _arrival_rng(self, t: int) -> np.random.Generator:
        # arrivals keyed by (episode seed, epoch) so scenario sampling
        # elsewhere can never perturb the realization
        return np.random.default_rng(np.random.SeedSequence([self.seed, t]))

    def _solver_seed(self, t: int) -> int:
        ss = np.random.SeedSequence([self.seed, t, 0xD15])
        return int(ss.generate_state(1)[0])

    def _sample_wave(self, t: int) -> list[Request]:
        reqs = sample_epoch_requests(self.config.topology,
                                     self.config.class_spec, t,
                                     self._arrival_rng(t),
                                     id_start=self._next_id,
                                     horizon=self.config.horizon)
        self._next_id += len(reqs)
        if self._next_id >= SCENARIO_ID_BASE:
            raise EnvError("episode produced too many requests")
        self.realized.extend(reqs)
        self._revealed_last = len(reqs)
        return reqs

    # -- protocol ------------------------------------------------------

    def reset(self) -> EpochState:
        if self.state is not None:
            raise EnvError("episode already started")
        wave = self._sample_wave(1)
        primaries = None
        if self.config.fleet_mode == "limited":
            primaries = self.config.planned_primaries[0]
        self.state = EpochState(t=1, requests=tuple(wave), primaries=primaries)
        return self.state

    def must_dispatch(self) -> frozenset[int]:
        if self.state is None or self.done:
            raise EnvError("no active epoch")
        return must_dispatch(self.state, self.config)

    def _action_fleet(self, k_primary: Optional[int], depart: int) -> FleetSpec:
        cap = self.config.topology.capacity
        if self.config.fleet_mode == "unlimited":
            return FleetSpec.unlimited(cap)
        return FleetSpec(classes=(
            VehicleClass(capacity=cap, count=int(k_primary), fixed_cost=0,
                         available_from=depart),
            VehicleClass(capacity=cap, count=None,
                         fixed_cost=self.config.secondary_fixed_cost,
                         available_from=depart),
        ))

    def _action_instance(self, requests: Sequence[Request], depart: int,
                         k_primary: Optional[int]) -> StaticInstance:
        pinned = tuple(dataclasses.replace(r, depart_early=depart,
                                           depart_late=depart)
                       for r in requests)
        return StaticInstance(requests=pinned,
                              travel=self.config.topology.travel,
                              horizon=self.config.horizon,
                              fleet=self._action_fleet(k_primary, depart),
                              earliest_dispatch=depart)

    def _route_action(self, requests: Sequence[Request], depart: int,
                      k_primary: Optional[int],
                      routes: Optional[Sequence[tuple[Sequence[int], int]]],
                      ) -> Solution:
        instance = self._action_instance(requests, depart, k_primary)
        if routes is not None:
            visit_lists = [list(v) for v, _ in routes]
            classes = [k for _, k in routes]
            sol = evaluate_solution(instance, visit_lists,
                                    vehicle_classes=classes)
        else:
            sol = solver.solve(instance, self.config.direct_params,
                               self.config.direct_stop,
                               seed=self._solver_seed(self.state.t))
        if not sol.feasible:
            raise EnvError(f"epoch {self.state.t}: dispatched routes are "
                           f"infeasible (cost {sol.cost})")
        for route in sol.routes:
            if route.departure != depart:
                raise EnvError(f"epoch {self.state.t}: route departs at "
                               f"{route.departure}, expected {depart}")
            self.invariant_checks["departure_exact"] += 1
        return sol

    def step(self, action: Action,
             routes: Optional[Sequence[tuple[Sequence[int], int]]] = None,
             ) -> StepResult:
        """Apply one dispatch decision.

        ``routes`` optionally replays a precomputed plan (visit ids plus a
        vehicle class per route) instead of re-solving; it must cover the
        action exactly.
        """
        if self.state is None:
            raise EnvError("call reset() first")
        if self.done:
            raise EnvError("episode is finished")
        state, cfg = self.state, self.config
        known = state.ids()
        unknown = action.dispatch - known
        if unknown:
            raise EnvError(f"action dispatches unknown ids {sorted(unknown)[:5]}")
        forced = must_dispatch(state, cfg)
        missing = forced - action.dispatch
        if missing:
            raise EnvError(f"action misses must-dispatch ids {sorted(missing)[:5]}")
        self.invariant_checks["must_subset"] += 1

        k_primary = None
        if cfg.fleet_mode == "limited":
            if action.primaries is None:
                raise EnvError("limited mode requires a primary vehicle count")
            k_primary = int(action.primaries)
            if not 0 <= k_primary <= state.primaries:
                raise EnvError(f"primary count {k_primary} outside "
                               f"[0, {state.primaries}]")

        depart = cfg.time_of(state.t)
        chosen = [r for r in state.requests if r.id in action.dispatch]
        if routes is not None:
            routed_ids = {rid for visits, _ in routes for rid in visits}
            if routed_ids != action.dispatch:
                raise EnvError("replayed routes do not match the action")
        started = time.perf_counter()
        if chosen:
            sol = self._route_action(chosen, depart, k_primary, routes)
            cost = sol.cost
        else:
            sol, cost = None, 0
        elapsed_ms = (time.perf_counter() - started) * 1000.0

        self.total_cost += cost
        self.total_dispatched += len(chosen)
        secondary_used = 0
        if sol is not None and cfg.fleet_mode == "limited":
            secondary_used = sum(1 for r in sol.routes if r.vehicle_class == 1)
        record = {
            "epoch": state.t,
            "time": depart,
            "revealed": self._revealed_last,
            "must": len(forced),
            "dispatched": len(chosen),
            "cost": int(cost),
            "routes": [list(r.visits) for r in sol.routes] if sol else [],
            "solve_ms": round(elapsed_ms, 1),
        }
        if cfg.fleet_mode == "limited":
            record["primaries_available"] = state.primaries
            record["primaries_offered"] = k_primary
            record["secondary_used"] = secondary_used
        self.records.append(record)

        leftovers = [r for r in state.requests if r.id not in action.dispatch]
        if state.t >= cfg.num_epochs:
            if leftovers:
                raise EnvError("final epoch left requests behind")
            self.done = True
            self.state = None
            return StepResult(None, cost, sol, record)

        next_primaries = None
        if cfg.fleet_mode == "limited":
            next_primaries = (state.primaries - k_primary
                              + cfg.planned_primaries[state.t])
            self.invariant_checks["fleet_accounting"] += 1
        wave = self._sample_wave(state.t + 1)
        merged = tuple(sorted(leftovers + wave, key=lambda r: r.id))
        self.state = EpochState(t=state.t + 1, requests=merged,
                                primaries=next_primaries)
        return StepResult(self.state, cost, sol, record)

    # -- after the fact ------------------------------------------------

    def realize_all(self) -> tuple[Request, ...]:
        """Every request this episode will ever reveal, without stepping.

        Arrival randomness is keyed by (seed, epoch) only, so sampling the
        remaining waves up front cannot disturb a later playout with the
        same seed.
        """
        if self.state is not None:
            raise EnvError("episode already started")
        for t in range(1, self.config.num_epochs + 1):
            self._sample_wave(t)
        return tuple(self.realized)

    def hindsight_instance(self) -> StaticInstance:
        """The perfect-information static problem of this episode."""
        if not self.done:
            raise EnvError("episode not finished")
        if self.total_dispatched != len(self.realized):
            raise EnvError("conservation violated: "
                           f"{self.total_dispatched} dispatched vs "
                           f"{len(self.realized)} revealed")
        return realized_instance(self.config, tuple(self.realized))

    def write_log(self, fh: TextIO,
                  hindsight_cost: Optional[int] = None) -> None:
        """Line-delimited episode log; final line totals the episode."""
        for rec in self.records:
            append_jsonl(fh, rec)
        final = {"total_cost": int(self.total_cost),
                 "total_requests": len(self.realized)}
        if hindsight_cost is not None:
            final["hindsight_cost"] = int(hindsight_cost)
            final["gap_pct"] = round(
                100.0 * (self.total_cost - hindsight_cost) / hindsight_cost, 3)
        append_jsonl(fh, final)


def realized_instance(config: EpochConfig,
                      requests: tuple[Request, ...]) -> StaticInstance:
    """Static full-information problem over an episode's request stream."""
    return StaticInstance(
        requests=requests,
        travel=config.topology.travel,
        horizon=config.horizon,
        fleet=FleetSpec.unlimited(config.topology.capacity),
        earliest_dispatch=config.epoch_times[0],
    )


def realize_requests(config: EpochConfig, seed: int) -> tuple[Request, ...]:
    """The full request stream an episode with this seed would reveal."""
    return Episode(config, seed).realize_all()


@dataclass(frozen=True)
class PrimaryPlan:
    """Greedy dispatch plan used to size the primary fleet."""

    counts: tuple[int, ...]
    routes: tuple[tuple[tuple[tuple[int, ...], int], ...], ...]
    total_cost: int


def plan_primaries(config: EpochConfig, seed: int) -> PrimaryPlan:
    """Run the immediate-dispatch policy under an unlimited fleet.

    The number of routes the greedy solution uses at each epoch becomes
    that epoch's planned primary vehicle count; the routes themselves are
    kept so a limited-fleet replay can reuse them verbatim.
    """
    base = dataclasses.replace(config, fleet_mode="unlimited",
                               planned_primaries=None)
    ep = Episode(base, seed)
    state = ep.reset()
    counts: list[int] = []
    routes: list[tuple[tuple[tuple[int, ...], int], ...]] = []
    while True:
        result = ep.step(Action(dispatch=state.ids()))
        sol = result.solution
        counts.append(len(sol.routes) if sol else 0)
        routes.append(tuple((r.visits, 0) for r in sol.routes) if sol else ())
        if result.state is None:
            break
        state = result.state
    return PrimaryPlan(counts=tuple(counts), routes=tuple(routes),
                       total_cost=ep.total_cost)
