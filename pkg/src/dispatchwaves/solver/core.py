"""Internal solver state: compact instance arrays, route statistics caches.

The solver works on integer node indices (0 = depot, 1..n = requests in
instance order) and plain 8-tuples for segment statistics:

    (duration, warp, start_early, start_late, cost, load, depart_early, depart_late)

Tuples and hand-inlined arithmetic keep move evaluation cheap; the public
model types are only touched at the solve() boundary.
"""

from __future__ import annotations

import numpy as np

from ..model import Request, Route, Solution, StaticInstance

# Segment stat tuple layout indices.
D, TW, E, L, C, Q, RM, RP = range(8)


def cat(a, b, tau):
    """Concatenate two stat tuples over a leg of length tau (cost = tau)."""
    d1, tw1, e1, l1, c1, q1, rm1, rp1 = a
    d2, tw2, e2, l2, c2, q2, rm2, rp2 = b
    delta = d1 - tw1 + tau
    wait = e2 - delta - l1
    if wait < 0:
        wait = 0
    late = e1 + delta - l2
    if late < 0:
        late = 0
    e = e2 - delta
    if e < e1:
        e = e1
    lo = l2 - delta
    if lo > l1:
        lo = l1
    return (
        d1 + d2 + tau + wait,
        tw1 + tw2 + late,
        e - wait,
        lo + late,
        c1 + c2 + tau,
        q1 + q2,
        rm1 if rm1 >= rm2 else rm2,
        rp1 if rp1 <= rp2 else rp2,
    )


class CoreInstance:
    """Array view of a StaticInstance for the solver hot path."""

    __slots__ = (
        "n", "ids", "horizon", "T", "dist", "e", "l", "serv", "dem", "rm", "rp",
        "node_stat", "depot_start", "depot_end", "caps", "fixes", "avails",
        "counts", "n_classes", "neighbors", "max_routes",
    )

    def __init__(self, instance: StaticInstance):
        reqs = instance.requests
        n = len(reqs)
        self.n = n
        self.ids = [r.id for r in reqs]
        H = instance.horizon
        self.horizon = H
        T = instance.earliest_dispatch
        self.T = T

        locs = [instance.depot_location] + [r.location for r in reqs]
        travel = instance.travel
        sub = travel[np.ix_(locs, locs)]
        self.dist = [[int(x) for x in row] for row in sub.tolist()]

        self.e = [0] + [r.tw_early for r in reqs]
        self.l = [H] + [r.tw_late for r in reqs]
        self.serv = [0] + [r.service for r in reqs]
        self.dem = [0] + [r.demand for r in reqs]
        self.rm = [T] + [max(r.depart_early, T) for r in reqs]
        self.rp = [H] + [r.depart_late for r in reqs]

        self.node_stat = [
            (self.serv[i], 0, self.e[i], self.l[i], 0, self.dem[i], self.rm[i], self.rp[i])
            for i in range(n + 1)
        ]

        classes = instance.fleet.classes
        self.n_classes = len(classes)
        self.caps = [c.capacity for c in classes]
        self.fixes = [c.fixed_cost for c in classes]
        self.avails = [c.available_from for c in classes]
        self.counts = [n if c.count is None else c.count for c in classes]
        self.max_routes = min(sum(self.counts), n)
        self.depot_start = [
            (0, 0, 0, H, 0, 0, max(T, a), H) for a in self.avails
        ]
        self.depot_end = (0, 0, 0, H, 0, 0, 0, H)
        self.neighbors: list[list[int]] = []

    def build_neighbors(self, count: int, w_wait: float, w_tw: float, symmetric: bool) -> None:
        """Granular candidate lists by time-aware proximity."""
        n = self.n
        if n <= 1:
            self.neighbors = [[] for _ in range(n + 1)]
            return
        e = np.array(self.e[1:], dtype=np.float64)
        l = np.array(self.l[1:], dtype=np.float64)
        serv = np.array(self.serv[1:], dtype=np.float64)
        d = np.array([row[1:] for row in self.dist[1:]], dtype=np.float64)
        ready = (l + serv)[:, None] + d
        prox = d + w_wait * np.maximum(e[None, :] - ready, 0.0)
        prox += w_tw * np.maximum(((e + serv)[:, None] + d) - l[None, :], 0.0)
        if symmetric:
            prox = np.minimum(prox, prox.T)
        np.fill_diagonal(prox, np.inf)
        k = min(count, n - 1)
        order = np.argsort(prox, axis=1, kind="stable")[:, :k]
        self.neighbors = [[]] + [[int(j) + 1 for j in row] for row in order]

    def route_metrics(self, stats, k: int):
        """(cost incl. fixed, warp incl. dispatch terms, load excess) of a
        nonempty route with class k whose stats embed the class depot."""
        warp = stats[TW]
        rm = stats[RM]
        over = rm - stats[L]
        if over > 0:
            warp += over
        over = rm - stats[RP]
        if over > 0:
            warp += over
        excess = stats[Q] - self.caps[k]
        if excess < 0:
            excess = 0
        return stats[C] + self.fixes[k], warp, excess

    def fold(self, visits, k: int):
        """Full stats of depot + visits + depot for vehicle class k."""
        acc = self.depot_start[k]
        dist = self.dist
        prev = 0
        ns = self.node_stat
        for u in visits:
            acc = cat(acc, ns[u], dist[prev][u])
            prev = u
        return cat(acc, self.depot_end, dist[prev][0])


class RouteState:
    """One route plus its prefix/suffix stat caches.

    pre[i] covers depot + visits[:i]; suf[i] covers visits[i:] + depot.
    """

    __slots__ = ("visits", "k", "pre", "suf", "stats", "cost", "warp", "excess",
                 "pen", "member_rm", "member_rp")

    def __init__(self, visits: list[int], k: int):
        self.visits = visits
        self.k = k

    def rebuild(self, core: CoreInstance, pc: float, pt: float) -> None:
        visits = self.visits
        m = len(visits)
        dist = core.dist
        ns = core.node_stat
        pre = [core.depot_start[self.k]]
        prev = 0
        for u in visits:
            pre.append(cat(pre[-1], ns[u], dist[prev][u]))
            prev = u
        suf = [None] * (m + 1)
        suf[m] = core.depot_end
        nxt = 0
        for i in range(m - 1, -1, -1):
            u = visits[i]
            suf[i] = cat(ns[u], suf[i + 1], dist[u][nxt])
            nxt = u
        self.pre = pre
        self.suf = suf
        self.stats = cat(pre[m], core.depot_end, dist[prev][0]) if m else None
        if m:
            rm = 0
            rp = core.horizon
            crm = core.rm
            crp = core.rp
            for u in visits:
                if crm[u] > rm:
                    rm = crm[u]
                if crp[u] < rp:
                    rp = crp[u]
            self.member_rm = rm
            self.member_rp = rp
            cost, warp, excess = core.route_metrics(self.stats, self.k)
            self.cost = cost
            self.warp = warp
            self.excess = excess
            self.pen = cost + pc * excess + pt * warp
        else:
            self.member_rm = 0
            self.member_rp = core.horizon
            self.cost = 0
            self.warp = 0
            self.excess = 0
            self.pen = 0.0


def pen_of(core: CoreInstance, stats, k: int, pc: float, pt: float) -> float:
    cost, warp, excess = core.route_metrics(stats, k)
    return cost + pc * excess + pt * warp


class Individual:
    """A solution candidate inside the genetic algorithm."""

    __slots__ = ("routes", "classes", "cost", "warp", "excess", "pen",
                 "feasible", "edges", "div", "fit")

    def __init__(self, routes: list[list[int]], classes: list[int]):
        self.routes = routes
        self.classes = classes
        self.edges: frozenset | None = None
        self.div = 0.0
        self.fit = 0.0

    def evaluate(self, core: CoreInstance, pc: float, pt: float) -> None:
        cost = 0
        warp = 0
        excess = 0
        for visits, k in zip(self.routes, self.classes):
            if not visits:
                continue
            stats = core.fold(visits, k)
            c, w, x = core.route_metrics(stats, k)
            cost += c
            warp += w
            excess += x
        self.cost = cost
        self.warp = warp
        self.excess = excess
        self.pen = cost + pc * excess + pt * warp
        self.feasible = warp == 0 and excess == 0

    def edge_set(self) -> frozenset:
        if self.edges is None:
            acc = []
            for visits in self.routes:
                if not visits:
                    continue
                prev = 0
                for u in visits:
                    acc.append((prev, u) if prev < u else (u, prev))
                    prev = u
                acc.append((0, prev))
            self.edges = frozenset(acc)
        return self.edges


def broken_pairs(a: Individual, b: Individual) -> float:
    ea = a.edge_set()
    eb = b.edge_set()
    union = len(ea) + len(eb)
    if union == 0:
        return 0.0
    return len(ea.symmetric_difference(eb)) / union


def to_solution(core: CoreInstance, ind: Individual, instance: StaticInstance,
                pc: float, pt: float) -> Solution:
    """Translate an internal individual back to public model types."""
    routes = []
    cost = 0
    warp = 0
    excess = 0
    for visits, k in zip(ind.routes, ind.classes):
        if not visits:
            continue
        stats = core.fold(visits, k)
        c, w, x = core.route_metrics(stats, k)
        cost += c
        warp += w
        excess += x
        rm, rp, e_start = stats[RM], stats[RP], stats[E]
        depart = rm if rm >= e_start else e_start
        if depart > rp:
            depart = rp
        routes.append(Route(
            visits=tuple(core.ids[u - 1] for u in visits),
            vehicle_class=k,
            departure=depart,
        ))
    pen = cost + pc * excess + pt * warp
    return Solution(
        routes=tuple(routes),
        cost=cost,
        penalized_cost=float(pen),
        feasible=(warp == 0 and excess == 0),
    )
