"""Repeated route-then-schedule heuristic.

Each iteration routes all vehicles under presumed platooning economics,
schedules the resulting routes exactly, and feeds the realized platoon
sizes back into the next routing objective: edges a vehicle just used are
re-priced at the platoon-averaged cost, other explored edges at the most
optimistic follower cost, unless an earlier iteration already realized the
same platoon configuration there (in which case its price is reused).
"""

from __future__ import annotations

import time
from dataclasses import dataclass, field

from . import mip, routing, scheduling
from .routing import EdgeCostTable, RouteAssignment
from .scheduling import CutOptions, PlatoonConfiguration
from .simplex import NumericalFailure


class SubproblemFailure(Exception):
    """A routing or scheduling solve failed inside the loop."""


class MissingHistory(Exception):
    """Recurrence referenced an unstored cost table (internal bug signal)."""


class NotApplicableError(Exception):
    """Gap bound hypotheses not met by this run."""


@dataclass(frozen=True)
class SavingsParams:
    sigma_l: float
    sigma_f: float
    max_platoon: int

    @classmethod
    def from_instance(cls, inst) -> "SavingsParams":
        return cls(inst.sigma_l, inst.sigma_f, inst.max_platoon)


def c_plat(size: int, cost: float, params: SavingsParams) -> float:
    """Total fuel a platoon of the given size burns on one edge."""
    if size <= 1:
        return size * cost
    return (1 - params.sigma_l) * cost + (1 - params.sigma_f) * (size - 1) * cost


def c_plat_tilde(size: int, cost: float, params: SavingsParams) -> float:
    """Variant pricing a singleton as if it still led a platoon."""
    if size == 1:
        return (1 - params.sigma_l) * cost
    return c_plat(size, cost, params)


@dataclass
class IterationRecord:
    index: int
    routes: RouteAssignment
    platoons: PlatoonConfiguration      # on original edges
    z: float
    presumed: float
    runtime_s: float


class RshmState:
    """Everything the feedback recurrence and diagnostics need to look back at."""

    def __init__(self, inst):
        self.instance = inst
        self.params = SavingsParams.from_instance(inst)
        self.records: dict[int, IterationRecord] = {}
        self.tables: dict[int, EdgeCostTable] = {1: EdgeCostTable.initial(inst)}
        self.explored: set = set()
        self.routes_freq: dict[str, int] = {}
        self.best_z = float("inf")
        self.best: IterationRecord | None = None

    @property
    def iterations(self) -> int:
        return len(self.records)

    def record(self, rec: IterationRecord) -> None:
        self.records[rec.index] = rec
        self.explored |= rec.routes.all_edges()
        key = rec.routes.key()
        self.routes_freq[key] = self.routes_freq.get(key, 0) + 1
        if rec.z < self.best_z:
            self.best_z = rec.z
            self.best = rec

    def max_freq(self) -> int:
        return max(self.routes_freq.values(), default=0)


def similarity_index(state: RshmState, n: int, v: int, edge) -> int | None:
    """Largest earlier iteration whose platoon configuration on ``edge``
    matches iteration ``n``'s, with ``v`` assigned to the edge right after.
    None below iteration 3 or when no iteration qualifies."""
    if n < 3 or n not in state.records:
        return None
    target = state.records[n].platoons.platoon_sets(edge)
    for k in range(n - 2, 0, -1):
        nxt = state.records.get(k + 1)
        if nxt is None or edge not in nxt.routes.edges(v):
            continue
        if state.records[k].platoons.platoon_sets(edge) == target:
            return k
    return None


def update_cost_table(state: RshmState, n: int) -> EdgeCostTable:
    """Adjusted costs feeding the next routing objective.

    Explored edges a vehicle just traversed get the platoon-averaged cost;
    other explored edges get the optimistic follower cost, or a price copied
    from the iteration after the last configuration-similar one.
    """
    rec = state.records[n]
    params = state.params
    base = state.tables[1].base
    explored = frozenset(state.explored)
    adjusted: dict[tuple, float] = {}
    vehicles = [m.id for m in state.instance.missions]
    on_route = {v: set(rec.routes.edges(v)) for v in vehicles}
    for e in sorted(explored):
        cost = base[e]
        for v in vehicles:
            if e in on_route[v]:
                size = rec.platoons.size(v, e)
                adjusted[(v, e)] = c_plat(size, cost, params) / size
            else:
                k = similarity_index(state, n, v, e)
                if k is None:
                    adjusted[(v, e)] = (1 - params.sigma_f) * cost
                else:
                    src = state.tables.get(k + 2)
                    if src is None or (v, e) not in src.adjusted:
                        raise MissingHistory(
                            f"no stored cost for vehicle {v}, edge {e}, "
                            f"iteration {k + 2}")
                    adjusted[(v, e)] = src.adjusted[(v, e)]
    table = EdgeCostTable(base=base, adjusted=adjusted, explored=explored)
    table.validate(params.sigma_f)
    return table


@dataclass
class RshmOptions:
    freq_threshold: int = 3
    per_solve_time_s: float = 600.0
    total_time_s: float = 3600.0
    iter_cap: int | None = None
    sp_cuts: str = "none"      # none | star | star+disj | star+disj+facets
    contract: bool = True
    rel_gap: float = 1e-4


@dataclass
class RshmResult:
    routes: RouteAssignment
    platoons: PlatoonConfiguration
    departures: dict[int, float]
    z_hat: float
    trace: list[dict]
    termination: str           # repeat_consecutive | freq_threshold |
    iterations: int            # time_limit | iter_cap
    state: RshmState = field(repr=False, default=None)

    def fuel_baseline(self) -> float:
        inst = self.state.instance
        return routing.shortest_path_assignment(inst).total_cost()

    def saving_rate(self) -> float:
        base = self.fuel_baseline()
        return (base - self.z_hat) / base if base else 0.0


def _solve_iteration_sp(routes, inst, opts):
    """Contract, build, and solve the scheduling problem for fixed routes."""
    params = SavingsParams.from_instance(inst)
    if opts.contract:
        contracted = scheduling.contract(routes, routes.edge_times,
                                         routes.edge_costs)
    else:
        contracted = uncontracted(routes)
    bounds = scheduling.time_bounds(contracted, inst.missions)
    cut_opts = CutOptions(
        star_partition=opts.sp_cuts in ("star", "star+disj", "star+disj+facets"),
        size_facets=opts.sp_cuts == "star+disj+facets")
    handle = scheduling.build_sp(contracted, params, bounds, cut_opts)
    hook = None
    if opts.sp_cuts in ("star+disj", "star+disj+facets"):
        from . import cuts as _cuts
        hook = _cuts.make_disjunctive_hook(handle)
    sol = mip.solve_mip(handle.model, rel_gap=opts.rel_gap,
                        time_limit_s=opts.per_solve_time_s,
                        root_cut_hook=hook)
    if sol.status not in ("optimal", "feasible"):
        raise SubproblemFailure(f"scheduling solve ended {sol.status}")
    config = scheduling.extract_platoons(handle, sol)
    expanded = scheduling.expand_platoons(config, contracted)
    return expanded, config, sol


def uncontracted(routes) -> scheduling.ContractedRoutes:
    """Wrap raw routes in the contracted container without merging."""
    sigs = {e: frozenset(vs) for e, vs in routes.vehicles_by_edge().items()}
    cedges = {}
    out = {}
    for v in routes.vehicles:
        lst = []
        for e in routes.edges(v):
            if e not in cedges:
                cedges[e] = scheduling.CEdge(e[0], e[1], 0,
                                             routes.edge_times[e],
                                             routes.edge_costs[e],
                                             sigs[e], (e,))
            lst.append(cedges[e])
        out[v] = lst
    return scheduling.ContractedRoutes(out)


def run(inst, opts: RshmOptions | None = None) -> RshmResult:
    """Alternate routing and scheduling until a route assignment repeats
    consecutively, some assignment has been seen ``freq_threshold`` times,
    or a limit is hit.  Returns the best realized solution."""
    opts = opts or RshmOptions()
    inst.validate()
    state = RshmState(inst)
    params = state.params
    fuel = inst.network.fuel_table()
    t_start = time.perf_counter()
    trace = []
    termination = None
    n = 1
    prev_routes = None
    while True:
        if opts.iter_cap is not None and n > opts.iter_cap:
            termination = "iter_cap"
            break
        if time.perf_counter() - t_start > opts.total_time_s:
            termination = "time_limit"
            break
        t_iter = time.perf_counter()
        costs = state.tables[n]
        try:
            handle = routing.build_rdp(inst, costs, iteration=n)
            rdp_sol = mip.solve_mip(handle.model, rel_gap=opts.rel_gap,
                                    time_limit_s=opts.per_solve_time_s,
                                    initial_solution=routing.initial_solution(handle))
            if rdp_sol.status not in ("optimal", "feasible"):
                raise SubproblemFailure(f"routing solve ended {rdp_sol.status}")
            routes = routing.extract_route_assignment(handle, rdp_sol)
            platoons, _config, sp_sol = _solve_iteration_sp(routes, inst, opts)
        except (mip.ModelError, NumericalFailure) as exc:
            raise SubproblemFailure(f"iteration {n}: {exc}") from exc
        z = scheduling.total_fuel(routes, platoons, fuel, params)
        presumed = routing.presumed_objective(routes, costs, inst)
        runtime = time.perf_counter() - t_iter
        rec = IterationRecord(n, routes, platoons, z, presumed, runtime)
        state.record(rec)
        trace.append({"iteration": n, "z": z, "presumed": presumed,
                      "runtime_s": runtime})
        state.tables[n + 1] = update_cost_table(state, n)
        if prev_routes is not None and routes == prev_routes:
            termination = "repeat_consecutive"
            break
        if state.max_freq() >= opts.freq_threshold:
            termination = "freq_threshold"
            break
        prev_routes = routes
        n += 1
    if state.best is None:
        raise SubproblemFailure("no iteration completed")
    best = state.best
    return RshmResult(best.routes, best.platoons, best.platoons.departures,
                      state.best_z, trace, termination, state.iterations,
                      state)


def gap_bound(state: RshmState) -> float:
    """A-posteriori optimality gap bound, valid only when the run ended with
    a repeated assignment and no configuration similarity anywhere."""
    n = state.iterations
    if n < 2:
        raise NotApplicableError("needs at least two iterations")
    last, prev = state.records[n], state.records[n - 1]
    if last.routes != prev.routes:
        raise NotApplicableError("final iteration did not repeat its routes")
    vehicles = [m.id for m in state.instance.missions]
    for e in sorted(state.explored):
        for v in vehicles:
            if similarity_index(state, n - 1, v, e) is not None:
                raise NotApplicableError(
                    f"configuration similarity at edge {e}, vehicle {v}")
    params = state.params
    base = state.tables[1].base
    bound = 0.0
    for e in sorted(last.routes.all_edges()):
        for leader, followers in last.platoons.platoons.get(e, []):
            size = 1 + len(followers)
            term = (1 - size / params.max_platoon) * (params.sigma_f - params.sigma_l)
            if size == 1:
                term += params.sigma_l
            bound += term * base[e]
    return bound
