"""Hybrid genetic search over feasible and infeasible subpopulations.

The loop follows the classic structure: binary-tournament parent selection
on biased fitness (cost rank blended with a diversity rank), route-exchange
crossover with greedy repair, local-search education, penalty weights
adapted toward a target feasibility fraction, and a full restart after a
long non-improving streak.
"""

from __future__ import annotations

import time
from dataclasses import dataclass

import numpy as np

from ..model import ModelError, Solution, StaticInstance
from .core import CoreInstance, Individual, RouteState, broken_pairs, cat, pen_of, to_solution
from .localsearch import LocalSearch, reassign_classes
from .params import PenaltyParams, SolverParams, StopCriterion, default_params

# Construction penalty that makes any violation dominate every routing
# cost, so the first seed individual opens routes (an open-class
# singleton at worst) instead of violating windows or capacity.
FEASIBILITY_FIRST_WEIGHT = 1e9


def update_penalty(weight: float, feasible_fraction: float, params: PenaltyParams) -> float:
    """One penalty-weight adaptation step toward the target feasibility."""
    if feasible_fraction < params.target_feasible:
        weight = weight * params.increase
    elif feasible_fraction > params.target_feasible:
        weight = weight * params.decrease
    return min(max(weight, params.min_weight), params.max_weight)


class PenaltyState:
    def __init__(self, params: PenaltyParams):
        self.params = params
        self.capacity = params.init_capacity
        self.timewarp = params.init_timewarp
        self._cap_hist: list[bool] = []
        self._tw_hist: list[bool] = []

    def register(self, cap_feasible: bool, tw_feasible: bool) -> None:
        self._cap_hist.append(cap_feasible)
        self._tw_hist.append(tw_feasible)
        if len(self._cap_hist) >= self.params.registrations:
            self.capacity = update_penalty(
                self.capacity, sum(self._cap_hist) / len(self._cap_hist), self.params)
            self.timewarp = update_penalty(
                self.timewarp, sum(self._tw_hist) / len(self._tw_hist), self.params)
            self._cap_hist.clear()
            self._tw_hist.clear()


class SubPopulation:
    def __init__(self, params: SolverParams):
        self.p = params.population
        self.items: list[Individual] = []
        self._dirty = True

    def add(self, ind: Individual) -> None:
        self.items.append(ind)
        self._dirty = True
        if len(self.items) > self.p.min_size + self.p.generation_size:
            self._select_survivors()

    def _distances(self):
        k = len(self.items)
        dm = [[0.0] * k for _ in range(k)]
        for a in range(k):
            for b in range(a + 1, k):
                d = broken_pairs(self.items[a], self.items[b])
                dm[a][b] = d
                dm[b][a] = d
        return dm

    def update_fitness(self) -> None:
        if not self._dirty:
            return
        items = self.items
        k = len(items)
        if k == 0:
            self._dirty = False
            return
        if k == 1:
            items[0].fit = 0.0
            items[0].div = self.p.diversity_ub
            self._dirty = False
            return
        dm = self._distances()
        close = min(self.p.close, k - 1)
        for i, ind in enumerate(items):
            near = sorted(dm[i][j] for j in range(k) if j != i)[:close]
            ind.div = min(sum(near) / len(near), self.p.diversity_ub)
        cost_order = sorted(range(k), key=lambda i: (items[i].pen, i))
        div_order = sorted(range(k), key=lambda i: (-items[i].div, i))
        weight = max(1.0 - self.p.elite / k, 0.0)
        fit = [0.0] * k
        for rank, i in enumerate(cost_order):
            fit[i] = float(rank)
        for rank, i in enumerate(div_order):
            fit[i] += weight * rank
        for i, ind in enumerate(items):
            ind.fit = fit[i]
        self._dirty = False

    def _select_survivors(self) -> None:
        self.update_fitness()
        items = self.items
        target = self.p.min_size
        protect = items[min(range(len(items)), key=lambda i: (items[i].pen, i))]
        while len(items) > target:
            dm_needed = len(items)
            # clones first: nearest-neighbor distance under the diversity floor
            clone = None
            for i, ind in enumerate(items):
                if ind is protect:
                    continue
                nearest = min(
                    (broken_pairs(ind, other) for j, other in enumerate(items) if j != i),
                    default=1.0,
                )
                if nearest < self.p.diversity_lb:
                    if clone is None or ind.fit > clone.fit:
                        clone = ind
            victim = clone
            if victim is None:
                victim = max(
                    (ind for ind in items if ind is not protect),
                    key=lambda ind: ind.fit,
                )
            items.remove(victim)
        self._dirty = True


def cheapest_insert(core: CoreInstance, states: list[RouteState], u: int,
                    pc: float, pt: float, used: list[int]) -> None:
    """Insert customer u at its cheapest penalized position, possibly
    opening a route of any class with remaining count."""
    dist = core.dist
    ns = core.node_stat[u]
    best = None
    for r in states:
        vb = r.visits
        for slot in range(len(vb) + 1):
            prev = vb[slot - 1] if slot > 0 else 0
            nxt = vb[slot] if slot < len(vb) else 0
            s = cat(cat(r.pre[slot], ns, dist[prev][u]), r.suf[slot], dist[u][nxt])
            delta = pen_of(core, s, r.k, pc, pt) - r.pen
            if best is None or delta < best[0]:
                best = (delta, r, slot, None)
    if len(states) < core.max_routes:
        for k in range(core.n_classes):
            if used[k] >= core.counts[k]:
                continue
            s = cat(cat(core.depot_start[k], ns, dist[0][u]), core.depot_end, dist[u][0])
            delta = pen_of(core, s, k, pc, pt)
            if best is None or delta < best[0]:
                best = (delta, None, 0, k)
    _, r, slot, k = best
    if r is None:
        nr = RouteState([u], k)
        nr.rebuild(core, pc, pt)
        states.append(nr)
        used[k] += 1
    else:
        r.visits.insert(slot, u)
        r.rebuild(core, pc, pt)


def build_randomized(core: CoreInstance, rng: np.random.Generator,
                     pc: float, pt: float) -> tuple[list[list[int]], list[int]]:
    """One randomized cheapest-insertion construction."""
    order = [int(x) + 1 for x in rng.permutation(core.n)]
    states: list[RouteState] = []
    used = [0] * core.n_classes
    for u in order:
        cheapest_insert(core, states, u, pc, pt, used)
    return [list(r.visits) for r in states], [r.k for r in states]


def route_exchange(core: CoreInstance, pa: Individual, pb: Individual,
                   rng: np.random.Generator, pc: float, pt: float
                   ) -> tuple[list[list[int]], list[int]]:
    """Offspring inherits a random subset of parent A's routes, all
    non-conflicting parent B routes, then repairs uncovered customers by
    cheapest insertion."""
    a_routes = [r for r in pa.routes if r]
    keep_mask = rng.random(len(a_routes)) < 0.5
    if not keep_mask.any():
        keep_mask[int(rng.integers(len(a_routes)))] = True
    child: list[list[int]] = []
    child_classes: list[int] = []
    covered: set[int] = set()
    for keep, visits, k in zip(keep_mask, a_routes, pa.classes):
        if keep:
            child.append(list(visits))
            child_classes.append(k)
            covered.update(visits)
    for visits, k in zip(pb.routes, pb.classes):
        if visits and covered.isdisjoint(visits):
            child.append(list(visits))
            child_classes.append(k)
            covered.update(visits)
    states = []
    used = [0] * core.n_classes
    for visits, k in zip(child, child_classes):
        r = RouteState(list(visits), k)
        r.rebuild(core, pc, pt)
        states.append(r)
        used[k] += 1
    uncovered = [u for u in range(1, core.n + 1) if u not in covered]
    if uncovered:
        for u in [uncovered[int(i)] for i in rng.permutation(len(uncovered))]:
            cheapest_insert(core, states, u, pc, pt, used)
    return [list(r.visits) for r in states if r.visits], [r.k for r in states if r.visits]


class _Search:
    """State of one solve run."""

    def __init__(self, instance: StaticInstance, params: SolverParams, seed: int):
        if not instance.requests:
            raise ModelError("cannot solve an instance without requests")
        params.validate()
        self.instance = instance
        self.params = params
        self.core = CoreInstance(instance)
        nb = params.neighborhood
        self.core.build_neighbors(nb.neighbors, nb.weight_wait, nb.weight_timewarp,
                                  nb.symmetric_proximity)
        self.rng = np.random.default_rng(np.random.SeedSequence(seed))
        self.ls = LocalSearch(self.core, params, self.rng)
        self.pen = PenaltyState(params.penalty)
        self.feas = SubPopulation(params)
        self.infeas = SubPopulation(params)
        self.best: Individual | None = None
        self.iterations = 0

    def _educate(self, routes, classes, booster: float = 1.0) -> Individual:
        pc = self.pen.capacity * booster
        pt = self.pen.timewarp * booster
        routes, classes = self.ls.improve(routes, classes, pc, pt)
        if self.core.n_classes > 1:
            classes = reassign_classes(self.core, routes, pc, pt)
        ind = Individual(routes, classes)
        ind.evaluate(self.core, self.pen.capacity, self.pen.timewarp)
        return ind

    def _register(self, ind: Individual) -> bool:
        self.pen.register(ind.excess == 0, ind.warp == 0)
        (self.feas if ind.feasible else self.infeas).add(ind)
        return self._track_best(ind)

    def _track_best(self, ind: Individual) -> bool:
        b = self.best
        if b is None:
            self.best = ind
            return True
        if ind.feasible:
            if not b.feasible or ind.cost < b.cost:
                self.best = ind
                return True
            return False
        if not b.feasible and ind.pen < b.pen:
            self.best = ind
            return True
        return False

    def _seed_population(self, deadline: float) -> None:
        p = self.params.population
        count = p.min_size + p.generation_size
        for i in range(count):
            if i == 0:
                # Feasibility-first seed: whenever every request can be
                # served alone on some open vehicle class, this
                # construction is feasible, so the search always holds a
                # feasible incumbent even under tight iteration caps
                # (fixed hire costs otherwise trap it in infeasible space).
                routes, classes = build_randomized(
                    self.core, self.rng,
                    FEASIBILITY_FIRST_WEIGHT, FEASIBILITY_FIRST_WEIGHT)
                raw = Individual(routes, classes)
                raw.evaluate(self.core, self.pen.capacity, self.pen.timewarp)
                self._register(raw)
            else:
                routes, classes = build_randomized(
                    self.core, self.rng, self.pen.capacity, self.pen.timewarp)
            ind = self._educate(routes, classes)
            self._register(ind)
            if i >= 1 and time.perf_counter() >= deadline:
                break

    def _parents(self) -> tuple[Individual, Individual]:
        self.feas.update_fitness()
        self.infeas.update_fitness()
        pool = self.feas.items + self.infeas.items
        def tournament() -> Individual:
            i = int(self.rng.integers(len(pool)))
            j = int(self.rng.integers(len(pool)))
            return pool[i] if pool[i].fit <= pool[j].fit else pool[j]
        a = tournament()
        b = tournament()
        if a is b and len(pool) > 1:
            b = tournament()
        return a, b

    def run(self, stop: StopCriterion) -> Solution:
        stop.validate()
        t0 = time.perf_counter()
        deadline = t0 + stop.budget_ms / 1000.0
        self._seed_population(deadline)
        non_improving = 0
        while True:
            if time.perf_counter() >= deadline:
                break
            if stop.max_iterations is not None and self.iterations >= stop.max_iterations:
                break
            self.iterations += 1
            pa, pb = self._parents()
            routes, classes = route_exchange(
                self.core, pa, pb, self.rng, self.pen.capacity, self.pen.timewarp)
            ind = self._educate(routes, classes)
            if not ind.feasible and self.rng.random() < self.params.repair_probability:
                repaired = self._educate(ind.routes, ind.classes,
                                         booster=self.params.penalty.booster)
                ind = repaired
            improved = self._register(ind)
            non_improving = 0 if improved else non_improving + 1
            if non_improving >= self.params.restart_after:
                self.feas = SubPopulation(self.params)
                self.infeas = SubPopulation(self.params)
                self.pen = PenaltyState(self.params.penalty)
                self._seed_population(deadline)
                non_improving = 0
        best = self.best
        covered = sorted(u for visits in best.routes for u in visits)
        if covered != list(range(1, self.core.n + 1)):
            raise RuntimeError("internal error: best solution does not cover all requests")
        return to_solution(self.core, best, self.instance,
                           self.pen.capacity, self.pen.timewarp)


def solve(instance: StaticInstance, params: SolverParams | None = None,
          stop: StopCriterion | None = None, seed: int = 0) -> Solution:
    """Best solution found for a static instance within the stop criterion.

    Returns a feasible solution whenever one was found; otherwise the best
    penalized one, flagged infeasible.  Runs bounded by ``max_iterations``
    (with a generous wall budget) are fully deterministic in (instance,
    params, seed).
    """
    params = params or default_params()
    stop = stop or StopCriterion()
    return _Search(instance, params, seed).run(stop)


def crossover(instance: StaticInstance, parent_a: Solution, parent_b: Solution,
              params: SolverParams | None = None, seed: int = 0) -> Solution:
    """Route-exchange offspring of two solutions (repaired, not educated)."""
    params = params or default_params()
    ids_a = sorted(rid for r in parent_a.routes for rid in r.visits)
    ids_b = sorted(rid for r in parent_b.routes for rid in r.visits)
    if ids_a != ids_b:
        raise ModelError("parents do not cover the same request set")
    core = CoreInstance(instance)
    rng = np.random.default_rng(np.random.SeedSequence(seed))
    index = {rid: i + 1 for i, rid in enumerate(core.ids)}
    pa = Individual([[index[rid] for rid in r.visits] for r in parent_a.routes],
                    [r.vehicle_class for r in parent_a.routes])
    pb = Individual([[index[rid] for rid in r.visits] for r in parent_b.routes],
                    [r.vehicle_class for r in parent_b.routes])
    pc = params.penalty.init_capacity
    pt = params.penalty.init_timewarp
    routes, classes = route_exchange(core, pa, pb, rng, pc, pt)
    child = Individual(routes, classes)
    child.evaluate(core, pc, pt)
    return to_solution(core, child, instance, pc, pt)


def local_search(instance: StaticInstance, candidate: Solution,
                 params: SolverParams | None = None,
                 penalty_capacity: float | None = None,
                 penalty_timewarp: float | None = None,
                 seed: int = 0) -> Solution:
    """Educate a candidate solution; penalized cost never increases."""
    params = params or default_params()
    pc = params.penalty.init_capacity if penalty_capacity is None else penalty_capacity
    pt = params.penalty.init_timewarp if penalty_timewarp is None else penalty_timewarp
    core = CoreInstance(instance)
    nb = params.neighborhood
    core.build_neighbors(nb.neighbors, nb.weight_wait, nb.weight_timewarp,
                         nb.symmetric_proximity)
    rng = np.random.default_rng(np.random.SeedSequence(seed))
    ls = LocalSearch(core, params, rng)
    index = {rid: i + 1 for i, rid in enumerate(core.ids)}
    routes = [[index[rid] for rid in r.visits] for r in candidate.routes]
    classes = [r.vehicle_class for r in candidate.routes]
    routes, classes = ls.improve(routes, classes, pc, pt)
    ind = Individual(routes, classes)
    ind.evaluate(core, pc, pt)
    return to_solution(core, ind, instance, pc, pt)
