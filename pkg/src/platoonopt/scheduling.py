"""Scheduling problem: phase two of each heuristic iteration.

Given fixed routes, bounds each vehicle's arrival time at every node it
visits, prunes vehicle pairs whose time windows cannot overlap, contracts
consecutive edges shared by identical vehicle sets, and builds the
departure-time/platooning MILP (maximizing fuel savings).  By default the
interior arrival-time variables are substituted out, so the only continuous
decision per vehicle is its departure time.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import mip

EQUAL_ENTRY_TOL = 1e-6
PRUNE_TOL = 1e-9


class InfeasibleRoute(Exception):
    """A route cannot be traversed within its mission time window."""


class InconsistentPlatoon(Exception):
    """Solver output violates the platoon structure constraints."""


@dataclass
class CutOptions:
    star_partition: bool = False
    size_facets: bool = False
    size_facet_cap: int = 200
    keep_time_vars: bool = False


@dataclass
class TimeBounds:
    lower: dict[tuple, float]   # (vehicle, node) -> earliest arrival
    upper: dict[tuple, float]   # (vehicle, node) -> latest arrival

    def window(self, v, node) -> tuple[float, float]:
        return self.lower[(v, node)], self.upper[(v, node)]


def time_bounds(routes, missions) -> TimeBounds:
    """Prefix/suffix time sums along each route.

    ``routes`` may be a raw assignment or contracted routes; it only needs
    ``vehicles`` and ``route_edges(v) -> [(edge_key, time)]``.
    """
    by_id = {m.id: m for m in missions}
    lower, upper = {}, {}
    for v in routes.vehicles:
        m = by_id[v]
        edges = routes.route_edges(v)
        nodes = [edges[0][0][0]] + [key[1] for key, _ in edges] if edges else []
        times = [t for _, t in edges]
        total = sum(times)
        acc = 0.0
        for idx, node in enumerate(nodes):
            lower[(v, node)] = m.t_earliest + acc
            upper[(v, node)] = m.t_latest - (total - acc)
            if lower[(v, node)] > upper[(v, node)] + 1e-9:
                raise InfeasibleRoute(f"vehicle {v}: window closes at node {node}")
            if idx < len(times):
                acc += times[idx]
    return TimeBounds(lower, upper)


def platoonable_and_bigM(routes, bounds: TimeBounds):
    """Big-M values for pairs that can still meet; the rest are pruned.

    A pair is pruned only when its entry windows at the shared edge tail are
    strictly disjoint, i.e. simultaneous entry is impossible.
    """
    big_m: dict[tuple, float] = {}
    pruned: list[tuple] = []
    shared: dict[tuple, list[int]] = {}
    for v in routes.vehicles:
        for key, _ in routes.route_edges(v):
            shared.setdefault(key, []).append(v)
    for key, vs in sorted(shared.items()):
        vs = sorted(vs)
        tail = key[0]
        for a, v in enumerate(vs):
            for u in vs[a + 1:]:
                du = bounds.upper[(u, tail)] - bounds.lower[(v, tail)]
                dv = bounds.upper[(v, tail)] - bounds.lower[(u, tail)]
                if du < -PRUNE_TOL or dv < -PRUNE_TOL:
                    pruned.append((u, v, key))
                else:
                    big_m[(u, v, key)] = max(max(du, 0.0), max(dv, 0.0))
    return big_m, pruned


@dataclass(frozen=True)
class CEdge:
    """Contracted edge: one or more consecutive original edges carrying the
    same vehicle set."""
    tail: object
    head: object
    serial: int
    time: float
    cost: float
    vehicles: frozenset
    original: tuple

    @property
    def key(self):
        return (self.tail, self.head, self.serial)


class ContractedRoutes:
    def __init__(self, routes: dict[int, list[CEdge]]):
        self.routes = routes
        self.cedges: dict[tuple, CEdge] = {}
        for segs in routes.values():
            for s in segs:
                self.cedges[s.key] = s

    @property
    def vehicles(self) -> list[int]:
        return sorted(self.routes)

    def route_edges(self, v):
        return [(s.key, s.time) for s in self.routes[v]]

    def vehicles_by_edge(self) -> dict[tuple, list[int]]:
        return {key: sorted(s.vehicles) for key, s in self.cedges.items()}

    def edge_cost(self, key) -> float:
        return self.cedges[key].cost


def contract(routes, times: dict, costs: dict) -> ContractedRoutes:
    """Merge consecutive route edges whose vehicle sets coincide, summing
    travel time and fuel cost, until no further merge applies."""
    veh_sets: dict[tuple, frozenset] = {
        e: frozenset(vs) for e, vs in routes.vehicles_by_edge().items()}

    class Seg:
        __slots__ = ("tail", "head", "time", "cost", "vehicles", "original")

        def __init__(self, e):
            self.tail, self.head = e[0], e[1]
            self.time = times[e]
            self.cost = costs[e]
            self.vehicles = veh_sets[e]
            self.original = (e,)

    seg_by_edge = {e: Seg(e) for e in routes.all_edges()}
    work = {v: [seg_by_edge[e] for e in routes.edges(v)] for v in routes.vehicles}

    changed = True
    while changed:
        changed = False
        for v in sorted(work):
            segs = work[v]
            for i in range(len(segs) - 1):
                s1, s2 = segs[i], segs[i + 1]
                if s1.vehicles == s2.vehicles:
                    merged = Seg.__new__(Seg)
                    merged.tail, merged.head = s1.tail, s2.head
                    merged.time = s1.time + s2.time
                    merged.cost = s1.cost + s2.cost
                    merged.vehicles = s1.vehicles
                    merged.original = s1.original + s2.original
                    for u in sorted(s1.vehicles):
                        lst = work[u]
                        pos = lst.index(s1)
                        if pos + 1 >= len(lst) or lst[pos + 1] is not s2:
                            raise InfeasibleRoute(
                                f"contraction: inconsistent segment order for {u}")
                        work[u] = lst[:pos] + [merged] + lst[pos + 2:]
                    changed = True
                    break
            if changed:
                break

    final_segs = []
    seen = set()
    for v in sorted(work):
        for s in work[v]:
            if id(s) not in seen:
                seen.add(id(s))
                final_segs.append(s)
    final_segs.sort(key=lambda s: (str(s.tail), str(s.head), s.original))
    serial: dict[tuple, int] = {}
    out_edges = {}
    for s in final_segs:
        k = (s.tail, s.head)
        serial[k] = serial.get(k, -1) + 1
        out_edges[id(s)] = CEdge(s.tail, s.head, serial[k], s.time, s.cost,
                                 s.vehicles, s.original)
    return ContractedRoutes({v: [out_edges[id(s)] for s in work[v]]
                             for v in work})


@dataclass
class SpModelHandle:
    model: mip.LinearModel
    dep_col: dict[int, int]                 # vehicle -> departure column
    f_col: dict[tuple, int]                 # (u, v, edge_key) -> column
    l_col: dict[tuple, int]                 # (v, edge_key) -> column
    t_col: dict[tuple, int]                 # (v, node) -> column (debug mode)
    big_m: dict[tuple, float]
    pruned: list[tuple]
    contracted: ContractedRoutes
    bounds: TimeBounds
    sigma_l: float
    sigma_f: float
    max_platoon: int
    prefix: dict[tuple, float] = field(default_factory=dict)  # (v, node) ->
    origin: dict[int, object] = field(default_factory=dict)

    def entry_time(self, x, v, edge_key) -> float:
        """Entry time of v at the tail of edge_key under solution vector x."""
        tail = edge_key[0]
        if self.t_col:
            return float(x[self.t_col[(v, tail)]])
        return float(x[self.dep_col[v]]) + self.prefix[(v, tail)]

    def time_value(self, x, v, node) -> float:
        if self.t_col:
            return float(x[self.t_col[(v, node)]])
        return float(x[self.dep_col[v]]) + self.prefix[(v, node)]


def build_sp(contracted: ContractedRoutes, params, bounds: TimeBounds,
             cut_options: CutOptions | None = None) -> SpModelHandle:
    """Assemble the scheduling MILP (a maximization of fuel savings).

    ``params`` carries sigma_l, sigma_f and max_platoon attributes.
    """
    opts = cut_options or CutOptions()
    big_m, pruned = platoonable_and_bigM(contracted, bounds)
    pruned_set = set(pruned)

    model = mip.LinearModel("sp")
    dep_col, f_col, l_col, t_col = {}, {}, {}, {}
    prefix, origin = {}, {}

    for v in contracted.vehicles:
        edges = contracted.route_edges(v)
        first = edges[0][0][0]
        origin[v] = first
        acc = 0.0
        prefix[(v, first)] = 0.0
        for key, t in edges:
            acc += t
            prefix[(v, key[1])] = acc
        lo, hi = bounds.window(v, first)
        dep_col[v] = model.add_var(f"dep_{v}", lb=lo, ub=hi)

    if opts.keep_time_vars:
        for v in contracted.vehicles:
            for (key, _t) in contracted.route_edges(v):
                for node in (key[0], key[1]):
                    if (v, node) not in t_col:
                        lo, hi = bounds.window(v, node)
                        t_col[(v, node)] = model.add_var(
                            f"t_{v}_{node}", lb=lo, ub=hi)
            first = origin[v]
            model.add_constraint({t_col[(v, first)]: 1.0, dep_col[v]: -1.0},
                                 "==", 0.0, name=f"dep_link_{v}")
            for (key, t) in contracted.route_edges(v):
                model.add_constraint({t_col[(v, key[1])]: 1.0,
                                      t_col[(v, key[0])]: -1.0}, "==", t,
                                     name=f"chain_{v}_{key}")

    by_edge = contracted.vehicles_by_edge()
    shared_edges = {k: vs for k, vs in sorted(by_edge.items())
                    if len(vs) >= 2}

    obj: dict[int, float] = {}
    for key, vs in shared_edges.items():
        cost = contracted.edge_cost(key)
        for v in vs:
            l_col[(v, key)] = model.add_var(f"l_{v}_{key}", kind=mip.BINARY)
            obj[l_col[(v, key)]] = params.sigma_l * cost
        for a, v in enumerate(vs):
            for u in vs[a + 1:]:
                if (u, v, key) in pruned_set:
                    continue
                f_col[(u, v, key)] = model.add_var(f"f_{u}_{v}_{key}",
                                                   kind=mip.BINARY)
                obj[f_col[(u, v, key)]] = params.sigma_f * cost
    model.set_objective(obj, sense="max")

    def tail_expr(v, node):
        if opts.keep_time_vars:
            return {t_col[(v, node)]: 1.0}, 0.0
        return {dep_col[v]: 1.0}, prefix[(v, node)]

    lam = params.max_platoon
    for key, vs in shared_edges.items():
        tail = key[0]
        for a, v in enumerate(vs):
            for u in vs[a + 1:]:
                if (u, v, key) not in f_col:
                    continue
                m_uv = big_m[(u, v, key)]
                cu, ku = tail_expr(u, tail)
                cv, kv = tail_expr(v, tail)
                fc = f_col[(u, v, key)]
                row = dict(cu)
                for col, c in cv.items():
                    row[col] = row.get(col, 0.0) - c
                const = ku - kv
                up = dict(row)
                up[fc] = up.get(fc, 0.0) + m_uv
                model.add_constraint(up, "<=", m_uv - const,
                                     name=f"meet_ub_{u}_{v}_{key}")
                lo = dict(row)
                lo[fc] = lo.get(fc, 0.0) - m_uv
                model.add_constraint(lo, ">=", -m_uv - const,
                                     name=f"meet_lb_{u}_{v}_{key}")
        for v in vs:
            lead = l_col[(v, key)]
            follows = {f_col[(v, w, key)]: 1.0 for w in vs
                       if w < v and (v, w, key) in f_col}
            row = dict(follows)
            row[lead] = row.get(lead, 0.0) + 1.0
            model.add_constraint(row, "<=", 1.0,
                                 name=f"lead_xor_follow_{v}_{key}")
            followers = {f_col[(u, v, key)]: 1.0 for u in vs
                         if u > v and (u, v, key) in f_col}
            row = dict(followers)
            row[lead] = row.get(lead, 0.0) - (lam - 1.0)
            model.add_constraint(row, "<=", 0.0, name=f"cap_{v}_{key}")
            row = dict(followers)
            row[lead] = row.get(lead, 0.0) - 1.0
            model.add_constraint(row, ">=", 0.0, name=f"nonempty_{v}_{key}")

    if opts.star_partition or opts.size_facets:
        from . import cuts as _cuts
        for key, vs in shared_edges.items():
            if opts.star_partition:
                for coeffs, sense, rhs in _cuts.star_partition_constraints(vs):
                    row = {f_col[(u, v, key)]: c for (u, v), c in coeffs.items()
                           if (u, v, key) in f_col}
                    if row:
                        model.add_constraint(row, sense, rhs,
                                             name=f"star_{key}")
            if opts.size_facets and len(vs) >= lam + 1:
                rows = _cuts.platoon_size_facets(vs, lam,
                                                 cap=opts.size_facet_cap)
                for coeffs, sense, rhs in rows:
                    row = {f_col[(u, v, key)]: c for (u, v), c in coeffs.items()
                           if (u, v, key) in f_col}
                    if row:
                        model.add_constraint(row, sense, rhs,
                                             name=f"facet_{key}")

    return SpModelHandle(model, dep_col, f_col, l_col, t_col, big_m, pruned,
                         contracted, bounds, params.sigma_l, params.sigma_f,
                         params.max_platoon, prefix, origin)


@dataclass
class PlatoonConfiguration:
    """Realized platoons per edge plus the departure times that admit them."""
    platoons: dict[tuple, list[tuple]]   # edge key -> [(leader, followers)]
    departures: dict[int, float]

    def size(self, v, edge_key) -> int:
        for leader, followers in self.platoons.get(edge_key, []):
            if v == leader or v in followers:
                return 1 + len(followers)
        return 1

    def platoon_sets(self, edge_key) -> set:
        return {frozenset((leader,) + tuple(followers))
                for leader, followers in self.platoons.get(edge_key, [])}

    def savings(self, edge_costs, sigma_l, sigma_f) -> float:
        total = 0.0
        for key, plist in self.platoons.items():
            for leader, followers in plist:
                if followers:
                    total += (sigma_l + sigma_f * len(followers)) * edge_costs[key]
        return total


def extract_platoons(handle: SpModelHandle, sol) -> PlatoonConfiguration:
    """Decode leader/follower variables, auditing the structure rules."""
    if sol.x is None:
        raise InconsistentPlatoon("no solution to extract")
    x = sol.x
    lam = handle.max_platoon
    by_edge = handle.contracted.vehicles_by_edge()
    platoons: dict[tuple, list[tuple]] = {}
    for key, vs in sorted(by_edge.items()):
        if len(vs) < 2:
            platoons[key] = [(v, ()) for v in vs]
            continue
        leaders = [v for v in vs if (v, key) in handle.l_col
                   and x[handle.l_col[(v, key)]] > 0.5]
        follow_of: dict[int, int] = {}
        for (u, v, k), col in handle.f_col.items():
            if k != key or x[col] < 0.5:
                continue
            if u in follow_of:
                raise InconsistentPlatoon(f"{u} follows two vehicles on {key}")
            follow_of[u] = v
        plist = []
        used = set()
        for v in sorted(leaders):
            if v in follow_of:
                raise InconsistentPlatoon(f"leader {v} also follows on {key}")
            followers = tuple(sorted(u for u, w in follow_of.items() if w == v))
            if not followers:
                raise InconsistentPlatoon(f"leader {v} has no follower on {key}")
            if 1 + len(followers) > lam:
                raise InconsistentPlatoon(f"platoon of {v} exceeds size cap")
            entry = handle.entry_time(x, v, key)
            for u in followers:
                if abs(handle.entry_time(x, u, key) - entry) > EQUAL_ENTRY_TOL:
                    raise InconsistentPlatoon(
                        f"{u} and {v} platoon on {key} with unequal entry")
            plist.append((v, followers))
            used.add(v)
            used.update(followers)
        for u, w in follow_of.items():
            if w not in leaders:
                raise InconsistentPlatoon(f"{u} follows non-leader {w} on {key}")
        for v in vs:
            if v not in used:
                plist.append((v, ()))
        platoons[key] = sorted(plist)
    deps = {v: float(x[handle.dep_col[v]]) for v in handle.contracted.vehicles}
    return PlatoonConfiguration(platoons, deps)


def expand_platoons(config: PlatoonConfiguration,
                    contracted: ContractedRoutes) -> PlatoonConfiguration:
    """Map a configuration on contracted edges back to the original edges."""
    out: dict[tuple, list[tuple]] = {}
    for key, plist in config.platoons.items():
        for orig in contracted.cedges[key].original:
            out[orig] = list(plist)
    return PlatoonConfiguration(out, dict(config.departures))


def total_fuel(routes, platoons: PlatoonConfiguration, edge_costs: dict,
               params) -> float:
    """Total fuel: raw route cost minus realized platooning savings."""
    base = sum(edge_costs[e] for v in routes.vehicles for e in routes.edges(v))
    return base - platoons.savings(edge_costs, params.sigma_l, params.sigma_f)
