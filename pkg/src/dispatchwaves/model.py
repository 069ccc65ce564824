"""Core domain types for vehicle routing with time windows and dispatch windows.

All quantities are integer seconds (or integer cost units; travel cost equals
travel time unless a matrix says otherwise).  A dispatch window [depart_early,
depart_late] constrains when the vehicle serving a request may leave the depot;
plain VRPTW requests carry the non-binding window [release, horizon].

The segment statistics implemented here support O(1) evaluation of route
fragments under concatenation, including waiting time, time warp and dispatch
window propagation.  ``evaluate_route_forward`` is an intentionally naive
timeline simulation kept free of the segment algebra so the two can be checked
against each other.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace
from typing import Iterable, Mapping, NamedTuple, Optional, Sequence

import numpy as np


class ModelError(ValueError):
    """Raised for structurally invalid model inputs (unknown ids, bad windows)."""


@dataclass(frozen=True)
class Request:
    """One customer request.

    ``location`` indexes the travel matrix of the owning instance.  The time
    window [tw_early, tw_late] bounds service start at the customer; the
    dispatch window [depart_early, depart_late] bounds the depot departure of
    whichever route serves the request.  Leave the dispatch fields at -1 for
    the default window [release, horizon]; StaticInstance fills them in.
    """

    id: int
    location: int
    demand: int
    service: int
    tw_early: int
    tw_late: int
    release: int = 0
    depart_early: int = -1
    depart_late: int = -1

    def validate(self, horizon: int) -> None:
        if self.tw_early > self.tw_late:
            raise ModelError(f"request {self.id}: empty time window")
        if self.depart_early > self.depart_late:
            raise ModelError(f"request {self.id}: empty dispatch window")
        if not (0 <= self.tw_early and self.tw_late <= horizon):
            raise ModelError(f"request {self.id}: time window outside [0, horizon]")
        if self.demand < 0 or self.service < 0:
            raise ModelError(f"request {self.id}: negative demand or service")


@dataclass(frozen=True)
class VehicleClass:
    """A group of identical vehicles.

    ``count`` is None for an unlimited pool.  ``fixed_cost`` is charged once
    per used (non-empty) route of this class.  ``available_from`` is the
    earliest depot departure for vehicles of this class.
    """

    capacity: int
    count: Optional[int] = None
    fixed_cost: int = 0
    available_from: int = 0


@dataclass(frozen=True)
class FleetSpec:
    classes: tuple[VehicleClass, ...]

    @staticmethod
    def unlimited(capacity: int) -> "FleetSpec":
        return FleetSpec((VehicleClass(capacity=capacity),))

    @property
    def is_unlimited(self) -> bool:
        return len(self.classes) == 1 and self.classes[0].count is None

    def validate(self) -> None:
        if not self.classes:
            raise ModelError("fleet must contain at least one vehicle class")
        for k, cls in enumerate(self.classes):
            if cls.capacity <= 0:
                raise ModelError(f"vehicle class {k}: non-positive capacity")
            if cls.count is not None and cls.count < 0:
                raise ModelError(f"vehicle class {k}: negative count")


@dataclass(frozen=True)
class StaticInstance:
    """A static routing problem over a fixed request set.

    ``travel`` is a square integer matrix over locations; row/column
    ``depot_location`` is the depot.  ``earliest_dispatch`` is the earliest
    admissible depot departure for any route (the decision time of the
    problem); individual requests may tighten it via their dispatch windows.
    """

    requests: tuple[Request, ...]
    travel: np.ndarray
    horizon: int
    fleet: FleetSpec
    depot_location: int = 0
    earliest_dispatch: int = 0

    def __post_init__(self):
        normalized = []
        changed = False
        for r in self.requests:
            de = r.release if r.depart_early < 0 else r.depart_early
            dl = self.horizon if r.depart_late < 0 else r.depart_late
            if de != r.depart_early or dl != r.depart_late:
                r = replace(r, depart_early=de, depart_late=dl)
                changed = True
            normalized.append(r)
        if changed:
            object.__setattr__(self, "requests", tuple(normalized))
        elif not isinstance(self.requests, tuple):
            object.__setattr__(self, "requests", tuple(self.requests))
        object.__setattr__(self, "_by_id", {r.id: r for r in self.requests})

    def request(self, request_id: int) -> Request:
        try:
            return self._by_id[request_id]
        except KeyError:
            raise ModelError(f"unknown request id {request_id}") from None

    @property
    def ids(self) -> list[int]:
        return [r.id for r in self.requests]

    def validate(self) -> None:
        self.fleet.validate()
        n = self.travel.shape[0]
        if self.travel.shape != (n, n):
            raise ModelError("travel matrix must be square")
        if len(self._by_id) != len(self.requests):
            raise ModelError("duplicate request ids")
        for r in self.requests:
            r.validate(self.horizon)
            if not (0 <= r.location < n):
                raise ModelError(f"request {r.id}: location outside travel matrix")


class SegmentStats(NamedTuple):
    """Aggregate statistics of a visit sequence, composable in O(1).

    duration     total traversal time including waiting, net of warped time
    warp         total time warp inside the segment
    start_early  earliest segment start minimizing duration and warp
    start_late   latest segment start minimizing warp
    cost         accumulated travel cost
    load         accumulated demand
    depart_early lower dispatch bound imposed by members on depot departure
    depart_late  upper dispatch bound imposed by members on depot departure
    """

    duration: int
    warp: int
    start_early: int
    start_late: int
    cost: int
    load: int
    depart_early: int
    depart_late: int


def segment_singleton(instance: StaticInstance, request_id: Optional[int] = None) -> SegmentStats:
    """Stats of a single visit; ``request_id=None`` denotes the depot.

    The depot singleton carries the instance-level earliest dispatch time as
    its lower dispatch bound, so folding a route (depot, v1, ..., vn, depot)
    yields dispatch bounds that already account for the decision time.
    """
    if request_id is None:
        return SegmentStats(
            duration=0,
            warp=0,
            start_early=0,
            start_late=instance.horizon,
            cost=0,
            load=0,
            depart_early=instance.earliest_dispatch,
            depart_late=instance.horizon,
        )
    r = instance.request(request_id)
    return SegmentStats(
        duration=r.service,
        warp=0,
        start_early=r.tw_early,
        start_late=r.tw_late,
        cost=0,
        load=r.demand,
        depart_early=max(r.depart_early, instance.earliest_dispatch),
        depart_late=r.depart_late,
    )


def segment_concat(a: SegmentStats, b: SegmentStats, travel: int, cost: Optional[int] = None) -> SegmentStats:
    """Concatenate two segments linked by a leg of the given travel time.

    ``cost`` defaults to the travel time.  Waiting inflates duration only;
    time warp absorbs lateness so the remaining timeline stays consistent.
    """
    link_cost = travel if cost is None else cost
    delta = a.duration - a.warp + travel
    wait = b.start_early - delta - a.start_late
    if wait < 0:
        wait = 0
    late = a.start_early + delta - b.start_late
    if late < 0:
        late = 0
    start_early = b.start_early - delta
    if start_early < a.start_early:
        start_early = a.start_early
    start_late = b.start_late - delta
    if start_late > a.start_late:
        start_late = a.start_late
    return SegmentStats(
        duration=a.duration + b.duration + travel + wait,
        warp=a.warp + b.warp + late,
        start_early=start_early - wait,
        start_late=start_late + late,
        cost=a.cost + b.cost + link_cost,
        load=a.load + b.load,
        depart_early=a.depart_early if a.depart_early >= b.depart_early else b.depart_early,
        depart_late=a.depart_late if a.depart_late <= b.depart_late else b.depart_late,
    )


def route_timewarp_dw(stats: SegmentStats) -> int:
    """Total time warp of a full route segment, dispatch windows included.

    Adds to the in-route warp the lateness forced by having to depart no
    earlier than ``depart_early`` (when that exceeds the latest feasible
    start) and the irreconcilable part of the members' dispatch windows.
    """
    total = stats.warp
    if stats.depart_early > stats.start_late:
        total += stats.depart_early - stats.start_late
    if stats.depart_early > stats.depart_late:
        total += stats.depart_early - stats.depart_late
    return total


def route_departure(stats: SegmentStats) -> int:
    """Reported depot departure: duration-minimizing start clamped into the
    dispatch window."""
    t = stats.depart_early
    if stats.start_early > t:
        t = stats.start_early
    if t > stats.depart_late:
        t = stats.depart_late
    return t


def fold_route(instance: StaticInstance, visits: Sequence[int], vehicle_class: int = 0) -> SegmentStats:
    """Fold depot, visits, depot left to right through ``segment_concat``."""
    depot = segment_singleton(instance, None)
    cls = instance.fleet.classes[vehicle_class]
    if cls.available_from > depot.depart_early:
        depot = depot._replace(depart_early=cls.available_from)
    travel = instance.travel
    dloc = instance.depot_location
    acc = depot
    prev = dloc
    for rid in visits:
        r = instance.request(rid)
        acc = segment_concat(acc, segment_singleton(instance, rid), int(travel[prev, r.location]))
        prev = r.location
    end = SegmentStats(0, 0, 0, instance.horizon, 0, 0, 0, instance.horizon)
    return segment_concat(acc, end, int(travel[prev, dloc]))


class RouteEval(NamedTuple):
    cost: int
    timewarp: int
    load_excess: int
    departure: int


def evaluate_route_forward(
    instance: StaticInstance,
    visits: Sequence[int],
    vehicle_class: int = 0,
    departure: Optional[int] = None,
) -> RouteEval:
    """Timeline simulation of one route, independent of the segment algebra.

    Starts at the latest of the instance dispatch time, the vehicle class
    availability and the members' lower dispatch bounds (or at ``departure``
    when forced).  Early arrivals wait; late arrivals count the excess as time
    warp and the clock is pulled back to the window end so the remainder of
    the route is evaluated consistently.  Departing after some member's upper
    dispatch bound counts the overshoot as warp too.  Travel cost excludes
    vehicle fixed cost.
    """
    cls = instance.fleet.classes[vehicle_class]
    if not visits:
        return RouteEval(0, 0, 0, max(instance.earliest_dispatch, cls.available_from))

    reqs = [instance.request(rid) for rid in visits]
    lower = max(instance.earliest_dispatch, cls.available_from)
    for r in reqs:
        if r.depart_early > lower:
            lower = r.depart_early
    upper = instance.horizon
    for r in reqs:
        if r.depart_late < upper:
            upper = r.depart_late

    t0 = lower if departure is None else departure
    warp = 0
    if t0 < lower:
        warp += lower - t0
        t0 = lower
    if t0 > upper:
        warp += t0 - upper

    travel = instance.travel
    cost = 0
    load = 0
    t = t0
    prev = instance.depot_location
    for r in reqs:
        leg = int(travel[prev, r.location])
        cost += leg
        t += leg
        if t < r.tw_early:
            t = r.tw_early
        elif t > r.tw_late:
            warp += t - r.tw_late
            t = r.tw_late
        t += r.service
        load += r.demand
        prev = r.location
    leg = int(travel[prev, instance.depot_location])
    cost += leg
    t += leg
    if t > instance.horizon:
        warp += t - instance.horizon

    capacity = cls.capacity
    excess = load - capacity if load > capacity else 0
    return RouteEval(cost=cost, timewarp=warp, load_excess=excess, departure=t0)


@dataclass(frozen=True)
class Route:
    """One vehicle route: request ids in service order, depot implicit at
    both ends."""

    visits: tuple[int, ...]
    vehicle_class: int = 0
    departure: int = 0

    def __len__(self) -> int:
        return len(self.visits)


@dataclass(frozen=True)
class Solution:
    """A set of routes with cached totals.

    ``cost`` is travel cost plus fixed costs of used vehicles;
    ``penalized_cost`` additionally prices capacity excess and time warp.
    A solution is feasible exactly when the two coincide.
    """

    routes: tuple[Route, ...]
    cost: int
    penalized_cost: float
    feasible: bool

    def visited(self) -> list[int]:
        out: list[int] = []
        for r in self.routes:
            out.extend(r.visits)
        return out


def evaluate_solution(
    instance: StaticInstance,
    routes: Sequence[Sequence[int]],
    vehicle_classes: Optional[Sequence[int]] = None,
    penalty_capacity: float = 20.0,
    penalty_timewarp: float = 6.0,
) -> Solution:
    """Assemble a Solution from raw visit lists, checking coverage.

    Every request of the instance must appear exactly once across routes.
    Fleet counts are enforced per class (unlimited classes excepted).
    """
    if vehicle_classes is None:
        vehicle_classes = [0] * len(routes)
    seen: set[int] = set()
    used_per_class = [0] * len(instance.fleet.classes)
    built: list[Route] = []
    cost = 0
    excess = 0
    warp = 0
    for visits, k in zip(routes, vehicle_classes):
        if not visits:
            continue
        for rid in visits:
            if rid in seen:
                raise ModelError(f"request {rid} visited more than once")
            seen.add(rid)
        ev = evaluate_route_forward(instance, visits, vehicle_class=k)
        stats = fold_route(instance, visits, vehicle_class=k)
        cost += ev.cost + instance.fleet.classes[k].fixed_cost
        excess += ev.load_excess
        warp += route_timewarp_dw(stats)
        used_per_class[k] += 1
        built.append(Route(visits=tuple(visits), vehicle_class=k, departure=route_departure(stats)))
    missing = set(instance.ids) - seen
    if missing:
        raise ModelError(f"requests not covered: {sorted(missing)[:5]}...")
    for k, cls in enumerate(instance.fleet.classes):
        if cls.count is not None and used_per_class[k] > cls.count:
            raise ModelError(f"vehicle class {k}: {used_per_class[k]} routes exceed count {cls.count}")
    penalized = cost + penalty_capacity * excess + penalty_timewarp * warp
    return Solution(
        routes=tuple(built),
        cost=cost,
        penalized_cost=float(penalized),
        feasible=(excess == 0 and warp == 0),
    )
