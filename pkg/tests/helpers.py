"""Shared test utilities: random instance generation and a brute-force
optimum for tiny instances.

The brute-force solver enumerates every ordered partition of the request
set into routes via a subset DP: first the best feasible permutation per
subset (forward simulation only), then an exact cover over subsets.  It is
deliberately independent of the genetic solver.
"""

from __future__ import annotations

from itertools import permutations

import numpy as np

from dispatchwaves.model import (
    FleetSpec,
    Request,
    StaticInstance,
    evaluate_route_forward,
)


def random_instance(
    rng: np.random.Generator,
    n: int,
    horizon: int = 480,
    capacity: int = 60,
    with_dispatch_windows: bool = False,
    earliest_dispatch: int = 0,
    ensure_servable: bool = True,
) -> StaticInstance:
    """A random Euclidean instance with n requests."""
    pts = rng.uniform(0, 100, size=(n + 1, 2))
    diff = pts[:, None, :] - pts[None, :, :]
    travel = np.rint(np.hypot(diff[..., 0], diff[..., 1])).astype(np.int64)
    np.fill_diagonal(travel, 0)
    reqs = []
    for i in range(1, n + 1):
        while True:
            service = int(rng.integers(5, 20))
            e = int(rng.integers(0, horizon - 60))
            width = int(rng.integers(30, horizon))
            l = min(e + width, horizon)
            if l <= e:
                continue
            de, dl = -1, -1
            if with_dispatch_windows and rng.random() < 0.5:
                de = int(rng.integers(0, horizon // 2))
                dl = int(rng.integers(de, horizon))
            if ensure_servable:
                t0 = max(earliest_dispatch, de if de >= 0 else 0)
                arrive = t0 + int(travel[0, i])
                if arrive > l:
                    continue
                start = max(arrive, e)
                if start + service + int(travel[i, 0]) > horizon:
                    continue
                if dl >= 0 and dl < t0:
                    continue
            reqs.append(Request(
                id=100 + i,
                location=i,
                demand=int(rng.integers(1, 15)),
                service=service,
                tw_early=e,
                tw_late=l,
                release=0,
                depart_early=de,
                depart_late=dl,
            ))
            break
    return StaticInstance(
        requests=tuple(reqs),
        travel=travel,
        horizon=horizon,
        fleet=FleetSpec.unlimited(capacity),
        earliest_dispatch=earliest_dispatch,
    )


def brute_force_optimum(instance: StaticInstance) -> int:
    """Exact optimum cost over all ordered partitions into routes.

    Requires that the all-singletons solution is feasible (the generators
    above guarantee it); raises otherwise.
    """
    reqs = instance.requests
    n = len(reqs)
    if n > 10:
        raise ValueError("brute force limited to 10 requests")
    capacity = instance.fleet.classes[0].capacity
    ids = [r.id for r in reqs]

    INF = float("inf")
    route_cost = [INF] * (1 << n)
    for mask in range(1, 1 << n):
        members = [i for i in range(n) if mask >> i & 1]
        if sum(reqs[i].demand for i in members) > capacity:
            continue
        best = INF
        for perm in permutations(members):
            ev = evaluate_route_forward(instance, [ids[i] for i in perm])
            if ev.timewarp == 0 and ev.load_excess == 0 and ev.cost < best:
                best = ev.cost
        route_cost[mask] = best

    part = [INF] * (1 << n)
    part[0] = 0
    for mask in range(1, 1 << n):
        low = mask & -mask
        sub = mask
        while sub:
            if sub & low and route_cost[sub] < INF and part[mask ^ sub] < INF:
                cand = route_cost[sub] + part[mask ^ sub]
                if cand < part[mask]:
                    part[mask] = cand
            sub = (sub - 1) & mask
    full = part[(1 << n) - 1]
    if full == INF:
        raise ValueError("instance has no feasible solution")
    return int(full)
