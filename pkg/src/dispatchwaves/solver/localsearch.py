"""Granular local search over routes using cached segment statistics.

Moves are screened with a distance-only lower bound where that bound is
valid (both touched routes currently feasible and loads stay within
capacity), then evaluated exactly through segment concatenation.  Applied
moves trigger an O(route length) rebuild of the touched routes' caches.

Node operators work on (u, v) pairs where v runs over u's granular
neighbor list; SWAP* is a route-pair operator run after node moves
converge, screened by precomputed insertion costs.
"""

from __future__ import annotations

import numpy as np

from .core import CoreInstance, Individual, RouteState, cat, pen_of, C, E, L, Q, RM, RP, TW
from .params import SolverParams

EPS = 1e-9
MAX_PASSES = 500


class LocalSearch:
    def __init__(self, core: CoreInstance, params: SolverParams, rng: np.random.Generator):
        self.core = core
        self.params = params
        self.rng = rng
        ops = params.operators
        self.seg_lens = [1]
        if ops.exchange20:
            self.seg_lens.append(2)
        if ops.exchange30:
            self.seg_lens.append(3)
        self.swap_shapes: list[tuple[int, int]] = []
        if ops.exchange11:
            self.swap_shapes.append((1, 1))
        if ops.exchange21:
            self.swap_shapes.extend([(2, 1), (1, 2)])
        if ops.exchange22:
            self.swap_shapes.append((2, 2))

    # ------------------------------------------------------------------ setup

    def improve(self, routes: list[list[int]], classes: list[int], pc: float, pt: float):
        """Run all enabled operators to convergence; returns (routes, classes)."""
        core = self.core
        self.pc = pc
        self.pt = pt
        self.routes = []
        self.used = [0] * core.n_classes
        for visits, k in zip(routes, classes):
            if not visits:
                continue
            r = RouteState(list(visits), k)
            r.rebuild(core, pc, pt)
            self.routes.append(r)
            self.used[k] += 1
        self.node_route: dict[int, RouteState] = {}
        self.node_pos: dict[int, int] = {}
        for r in self.routes:
            for idx, u in enumerate(r.visits):
                self.node_route[u] = r
                self.node_pos[u] = idx

        passes = 0
        while passes < MAX_PASSES:
            while self._pass_nodes():
                passes += 1
                if passes >= MAX_PASSES:
                    break
            if self.params.operators.swap_star and self._pass_swap_star():
                passes += 1
                continue
            break
        out_routes = [list(r.visits) for r in self.routes if r.visits]
        out_classes = [r.k for r in self.routes if r.visits]
        return out_routes, out_classes

    def _rebuild(self, r: RouteState) -> None:
        r.rebuild(self.core, self.pc, self.pt)
        for idx, u in enumerate(r.visits):
            self.node_route[u] = r
            self.node_pos[u] = idx

    # ------------------------------------------------------------- node moves

    def _pass_nodes(self) -> bool:
        core = self.core
        order = [int(x) for x in self.rng.permutation(core.n)]
        applied = False
        for ui in order:
            u = ui + 1
            if self._try_empty_route(u):
                applied = True
            for v in core.neighbors[u]:
                if self._try_pair(u, v):
                    applied = True
        return applied

    def _try_pair(self, u: int, v: int) -> bool:
        if u == v:
            return False
        if self._try_relocate(u, v, 1):
            return True
        ops = self.params.operators
        for m1, m2 in self.swap_shapes:
            if self._try_swap(u, v, m1, m2):
                return True
        if ops.two_opt and self._try_two_opt(u, v):
            return True
        for m in self.seg_lens[1:]:
            if self._try_relocate(u, v, m):
                return True
        return False

    def _seg_stats(self, visits, i, m):
        core = self.core
        ns = core.node_stat
        s = ns[visits[i]]
        for t in range(1, m):
            a, b = visits[i + t - 1], visits[i + t]
            s = cat(s, ns[b], core.dist[a][b])
        return s

    def _try_relocate(self, u: int, v: int, m: int) -> bool:
        ru = self.node_route[u]
        rv = self.node_route[v]
        i = self.node_pos[u]
        j = self.node_pos[v]
        if i + m > len(ru.visits):
            return False
        if ru is rv and i <= j < i + m:
            return False
        # insert after v, then before v
        for slot in (j + 1, j):
            if ru is rv:
                if self._relocate_intra(ru, i, m, slot):
                    return True
            else:
                if self._relocate_inter(ru, i, m, rv, slot):
                    return True
        return False

    def _relocate_inter(self, ru: RouteState, i: int, m: int, rv: RouteState, slot: int) -> bool:
        core = self.core
        dist = core.dist
        va = ru.visits
        vb = rv.visits
        f = va[i]
        g = va[i + m - 1]
        B = va[i - 1] if i > 0 else 0
        A = va[i + m] if i + m < len(va) else 0
        P = vb[slot - 1] if slot > 0 else 0
        Qn = vb[slot] if slot < len(vb) else 0
        dd = (dist[B][A] - dist[B][f] - dist[g][A]
              + dist[P][f] + dist[g][Qn] - dist[P][Qn])
        if (dd >= 0 and ru.warp == 0 and ru.excess == 0
                and rv.warp == 0 and rv.excess == 0):
            seg_load = sum(core.dem[x] for x in va[i:i + m])
            if rv.stats[Q] + seg_load <= core.caps[rv.k]:
                return False
        seg = self._seg_stats(va, i, m)
        if m == len(va):
            new_pen_u = 0.0
        else:
            s = cat(ru.pre[i], ru.suf[i + m], dist[B][A])
            new_pen_u = pen_of(core, s, ru.k, self.pc, self.pt)
        mid = cat(rv.pre[slot], seg, dist[P][f])
        s2 = cat(mid, rv.suf[slot], dist[g][Qn])
        new_pen_v = pen_of(core, s2, rv.k, self.pc, self.pt)
        if new_pen_u + new_pen_v - ru.pen - rv.pen < -EPS:
            seg_nodes = va[i:i + m]
            del va[i:i + m]
            rv.visits[slot:slot] = seg_nodes
            if not va:
                self.used[ru.k] -= 1
                self.routes.remove(ru)
                for x in seg_nodes:
                    self.node_route.pop(x, None)
            self._rebuild(rv)
            if va:
                self._rebuild(ru)
            return True
        return False

    def _relocate_intra(self, r: RouteState, i: int, m: int, slot: int) -> bool:
        if slot == i or slot == i + m:
            return False
        core = self.core
        va = r.visits
        seg = va[i:i + m]
        rest = va[:i] + va[i + m:]
        s2 = slot - m if slot >= i + m else slot
        new = rest[:s2] + seg + rest[s2:]
        if new == va:
            return False
        if r.warp == 0 and r.excess == 0:
            dist = core.dist
            f, g = va[i], va[i + m - 1]
            B = va[i - 1] if i > 0 else 0
            A = va[i + m] if i + m < len(va) else 0
            P = va[slot - 1] if slot > 0 else 0
            Qn = va[slot] if slot < len(va) else 0
            dd = (dist[B][A] - dist[B][f] - dist[g][A]
                  + dist[P][f] + dist[g][Qn] - dist[P][Qn])
            if dd >= 0:
                return False
        stats = core.fold(new, r.k)
        new_pen = pen_of(core, stats, r.k, self.pc, self.pt)
        if new_pen - r.pen < -EPS:
            r.visits[:] = new
            self._rebuild(r)
            return True
        return False

    def _try_swap(self, u: int, v: int, m1: int, m2: int) -> bool:
        ru = self.node_route[u]
        rv = self.node_route[v]
        i = self.node_pos[u]
        j = self.node_pos[v]
        if i + m1 > len(ru.visits) or j + m2 > len(rv.visits):
            return False
        if ru is rv:
            if i < j:
                if i + m1 > j:
                    return False
            elif j < i:
                if j + m2 > i:
                    return False
            else:
                return False
            return self._swap_intra(ru, i, m1, j, m2)
        return self._swap_inter(ru, i, m1, rv, j, m2)

    def _swap_inter(self, ru, i, m1, rv, j, m2) -> bool:
        core = self.core
        dist = core.dist
        va, vb = ru.visits, rv.visits
        f1, g1 = va[i], va[i + m1 - 1]
        f2, g2 = vb[j], vb[j + m2 - 1]
        B1 = va[i - 1] if i > 0 else 0
        A1 = va[i + m1] if i + m1 < len(va) else 0
        B2 = vb[j - 1] if j > 0 else 0
        A2 = vb[j + m2] if j + m2 < len(vb) else 0
        dd = (dist[B1][f2] + dist[g2][A1] - dist[B1][f1] - dist[g1][A1]
              + dist[B2][f1] + dist[g1][A2] - dist[B2][f2] - dist[g2][A2])
        if (dd >= 0 and ru.warp == 0 and ru.excess == 0
                and rv.warp == 0 and rv.excess == 0):
            l1 = sum(core.dem[x] for x in va[i:i + m1])
            l2 = sum(core.dem[x] for x in vb[j:j + m2])
            if (ru.stats[Q] - l1 + l2 <= core.caps[ru.k]
                    and rv.stats[Q] - l2 + l1 <= core.caps[rv.k]):
                return False
        seg1 = self._seg_stats(va, i, m1)
        seg2 = self._seg_stats(vb, j, m2)
        s1 = cat(cat(ru.pre[i], seg2, dist[B1][f2]), ru.suf[i + m1], dist[g2][A1])
        s2 = cat(cat(rv.pre[j], seg1, dist[B2][f1]), rv.suf[j + m2], dist[g1][A2])
        new_pen = (pen_of(core, s1, ru.k, self.pc, self.pt)
                   + pen_of(core, s2, rv.k, self.pc, self.pt))
        if new_pen - ru.pen - rv.pen < -EPS:
            nodes1 = va[i:i + m1]
            nodes2 = vb[j:j + m2]
            va[i:i + m1] = nodes2
            vb[j:j + m2] = nodes1
            self._rebuild(ru)
            self._rebuild(rv)
            return True
        return False

    def _swap_intra(self, r, i, m1, j, m2) -> bool:
        core = self.core
        va = r.visits
        if i > j:
            i, j, m1, m2 = j, i, m2, m1
        new = va[:i] + va[j:j + m2] + va[i + m1:j] + va[i:i + m1] + va[j + m2:]
        if new == va:
            return False
        stats = core.fold(new, r.k)
        new_pen = pen_of(core, stats, r.k, self.pc, self.pt)
        if new_pen - r.pen < -EPS:
            r.visits[:] = new
            self._rebuild(r)
            return True
        return False

    def _try_two_opt(self, u: int, v: int) -> bool:
        ru = self.node_route[u]
        rv = self.node_route[v]
        i = self.node_pos[u]
        j = self.node_pos[v]
        core = self.core
        dist = core.dist
        if ru is rv:
            if i > j:
                i, j = j, i
            if j - i < 2:
                return False
            va = ru.visits
            a, sa = va[i], va[i + 1]
            b, sb = va[j], va[j + 1] if j + 1 < len(va) else 0
            if ru.warp == 0 and ru.excess == 0:
                dd = dist[a][b] + dist[sa][sb] - dist[a][sa] - dist[b][sb]
                if dd >= 0:
                    return False
            new = va[:i + 1] + va[i + 1:j + 1][::-1] + va[j + 1:]
            stats = core.fold(new, ru.k)
            new_pen = pen_of(core, stats, ru.k, self.pc, self.pt)
            if new_pen - ru.pen < -EPS:
                ru.visits[:] = new
                self._rebuild(ru)
                return True
            return False
        # tail exchange between two routes
        va, vb = ru.visits, rv.visits
        nu = va[i + 1] if i + 1 < len(va) else 0
        nv = vb[j + 1] if j + 1 < len(vb) else 0
        dd = dist[u][nv] + dist[v][nu] - dist[u][nu] - dist[v][nv]
        qa = ru.pre[i + 1][Q] + rv.suf[j + 1][Q]
        qb = rv.pre[j + 1][Q] + ru.suf[i + 1][Q]
        if (dd >= 0 and ru.warp == 0 and ru.excess == 0
                and rv.warp == 0 and rv.excess == 0
                and qa <= core.caps[ru.k] and qb <= core.caps[rv.k]):
            return False
        s1 = cat(ru.pre[i + 1], rv.suf[j + 1], dist[u][nv])
        s2 = cat(rv.pre[j + 1], ru.suf[i + 1], dist[v][nu])
        new_pen = (pen_of(core, s1, ru.k, self.pc, self.pt)
                   + pen_of(core, s2, rv.k, self.pc, self.pt))
        if new_pen - ru.pen - rv.pen < -EPS:
            tail_u = va[i + 1:]
            tail_v = vb[j + 1:]
            del va[i + 1:]
            del vb[j + 1:]
            va.extend(tail_v)
            vb.extend(tail_u)
            self._rebuild(ru)
            self._rebuild(rv)
            return True
        return False

    def _try_empty_route(self, u: int) -> bool:
        core = self.core
        if len(self.routes) >= core.max_routes:
            return False
        ru = self.node_route[u]
        if len(ru.visits) == 1:
            return False
        i = self.node_pos[u]
        dist = core.dist
        va = ru.visits
        B = va[i - 1] if i > 0 else 0
        A = va[i + 1] if i + 1 < len(va) else 0
        s = cat(ru.pre[i], ru.suf[i + 1], dist[B][A])
        new_pen_u = pen_of(core, s, ru.k, self.pc, self.pt)
        best = None
        for k in range(core.n_classes):
            if self.used[k] >= core.counts[k]:
                continue
            st = cat(cat(core.depot_start[k], core.node_stat[u], dist[0][u]),
                     core.depot_end, dist[u][0])
            pen_new = pen_of(core, st, k, self.pc, self.pt)
            delta = new_pen_u + pen_new - ru.pen
            if delta < -EPS and (best is None or delta < best[0]):
                best = (delta, k)
        if best is None:
            return False
        k = best[1]
        del va[i:i + 1]
        r = RouteState([u], k)
        self.routes.append(r)
        self.used[k] += 1
        self._rebuild(r)
        self._rebuild(ru)
        return True

    # ------------------------------------------------------------------ SWAP*

    def _pass_swap_star(self) -> bool:
        applied = False
        routes = self.routes
        idx = 0
        while idx < len(routes):
            r1 = routes[idx]
            jdx = idx + 1
            while jdx < len(routes):
                r2 = routes[jdx]
                if r1.visits and r2.visits and self._swap_star_pair(r1, r2):
                    applied = True
                jdx += 1
            idx += 1
        return applied

    def _insertion_slots(self, u: int, r: RouteState, top: int = 3):
        """Cheapest insertion slots of u into r by distance delta."""
        core = self.core
        dist = core.dist
        vb = r.visits
        out = []
        for slot in range(len(vb) + 1):
            prev = vb[slot - 1] if slot > 0 else 0
            nxt = vb[slot] if slot < len(vb) else 0
            delta = dist[prev][u] + dist[u][nxt] - dist[prev][nxt]
            out.append((delta, slot))
        out.sort(key=lambda t: (t[0], t[1]))
        return out[:top]

    def _swap_star_pair(self, r1: RouteState, r2: RouteState) -> bool:
        core = self.core
        dist = core.dist
        pc, pt = self.pc, self.pt
        v1, v2 = r1.visits, r2.visits
        ins_into_2 = {u: self._insertion_slots(u, r2) for u in v1}
        ins_into_1 = {v: self._insertion_slots(v, r1) for v in v2}

        best = None
        for i, u in enumerate(v1):
            Bu = v1[i - 1] if i > 0 else 0
            Au = v1[i + 1] if i + 1 < len(v1) else 0
            rem_u = dist[Bu][Au] - dist[Bu][u] - dist[u][Au]
            for j, v in enumerate(v2):
                Bv = v2[j - 1] if j > 0 else 0
                Av = v2[j + 1] if j + 1 < len(v2) else 0
                rem_v = dist[Bv][Av] - dist[Bv][v] - dist[v][Av]
                cand_u = next(((d_, s) for d_, s in ins_into_2[u] if s != j and s != j + 1), None)
                cand_v = next(((d_, s) for d_, s in ins_into_1[v] if s != i and s != i + 1), None)
                if cand_u is None or cand_v is None:
                    continue
                est = rem_u + rem_v + cand_u[0] + cand_v[0]
                if best is None or est < best[0]:
                    best = (est, i, u, cand_u[1], j, v, cand_v[1])
        if best is None or best[0] >= 0:
            return False
        _, i, u, slot_u, j, v, slot_v = best
        new1 = [x for x in v1 if x != u]
        s_v = slot_v - (1 if slot_v > i else 0)
        new1[s_v:s_v] = [v]
        new2 = [x for x in v2 if x != v]
        s_u = slot_u - (1 if slot_u > j else 0)
        new2[s_u:s_u] = [u]
        pen1 = pen_of(core, core.fold(new1, r1.k), r1.k, pc, pt)
        pen2 = pen_of(core, core.fold(new2, r2.k), r2.k, pc, pt)
        if pen1 + pen2 - r1.pen - r2.pen < -EPS:
            r1.visits[:] = new1
            r2.visits[:] = new2
            self._rebuild(r1)
            self._rebuild(r2)
            return True
        return False


def reassign_classes(core: CoreInstance, routes: list[list[int]], pc: float, pt: float) -> list[int]:
    """Greedy vehicle-class assignment for multi-class fleets.

    Routes with the tightest latest start pick first; each takes the class
    minimizing fixed cost plus penalized warp/excess impact, subject to
    remaining class counts.
    """
    if core.n_classes == 1:
        return [0] * len(routes)
    neutral = (0, 0, 0, core.horizon, 0, 0, 0, core.horizon)
    folded = []
    for visits in routes:
        acc = neutral
        prev = 0
        for u in visits:
            acc = cat(acc, core.node_stat[u], core.dist[prev][u])
            prev = u
        acc = cat(acc, core.depot_end, core.dist[prev][0])
        folded.append(acc)
    order = sorted(range(len(routes)), key=lambda idx: (folded[idx][L], idx))
    remaining = list(core.counts)
    classes = [0] * len(routes)
    for idx in order:
        s = folded[idx]
        best = None
        for k in range(core.n_classes):
            if remaining[k] <= 0:
                continue
            eff_rm = s[RM] if s[RM] >= core.avails[k] else core.avails[k]
            warp = s[TW]
            if eff_rm > s[L]:
                warp += eff_rm - s[L]
            if eff_rm > s[RP]:
                warp += eff_rm - s[RP]
            excess = s[Q] - core.caps[k]
            if excess < 0:
                excess = 0
            score = core.fixes[k] + pt * warp + pc * excess
            if best is None or score < best[0]:
                best = (score, k)
        classes[idx] = best[1]
        remaining[best[1]] -= 1
    return classes
