"""Cutting planes for the scheduling problem.

Two families: scenario-based disjunctive cuts separating fractional
follower variables whose big-M coupling is tight (active-set collection,
then a cut-generating LP), and star-partition inequalities describing the
per-edge platoon polytope (plus the optional size-capped facet family).
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass, field

import numpy as np

from . import mip
from .scheduling import SpModelHandle

FRAC_TOL = 1e-6
ACTIVE_TOL = 1e-7
MIN_VIOLATION = 1e-7


class AssemblyError(Exception):
    """Internal index-map inconsistency while assembling the cut LP."""


# ---------------------------------------------------------------------------
# Star-partition inequalities
# ---------------------------------------------------------------------------

def star_partition_constraints(vehicles):
    """Exact linear description of unbounded-size star partitions.

    Rows are (coeffs keyed by (u, v) with u > v, sense, rhs): one row for the
    largest-index vehicle, one row per (u, v) pair with v above the smallest
    index.
    """
    vs = sorted(vehicles)
    if len(vs) < 2:
        return []
    vmin, vmax = vs[0], vs[-1]
    rows = [({(vmax, v): 1.0 for v in vs[:-1]}, "<=", 1.0)]
    for v in vs:
        if v == vmin:
            continue
        below = {(v, w): 1.0 for w in vs if w < v}
        for u in vs:
            if u > v:
                row = {(u, v): 1.0}
                for k, c in below.items():
                    row[k] = row.get(k, 0.0) + c
                rows.append((row, "<=", 1.0))
    return rows


def platoon_size_facets(vehicles, max_platoon: int, cap: int = 200,
                        lp_point: dict | None = None):
    """Size-cap facets: over any lambda+1 vehicles, at most lambda-1
    follower links.  Subsets beyond ``cap`` are ranked by violation at
    ``lp_point`` (pair -> value) when provided, else truncated
    lexicographically."""
    vs = sorted(vehicles)
    if len(vs) < max_platoon + 1:
        return []
    subsets = itertools.combinations(vs, max_platoon + 1)
    rows = []
    if lp_point is None:
        for us in itertools.islice(subsets, cap):
            rows.append(({(u, v): 1.0 for u, v in itertools.combinations(us[::-1], 2)},
                         "<=", float(max_platoon - 1)))
        return rows
    scored = []
    for us in subsets:
        pairs = [(u, v) for u, v in itertools.combinations(us[::-1], 2)]
        lhs = sum(lp_point.get(p, 0.0) for p in pairs)
        scored.append((lhs - (max_platoon - 1), pairs))
    scored.sort(key=lambda t: -t[0])
    for viol, pairs in scored[:cap]:
        rows.append(({p: 1.0 for p in pairs}, "<=", float(max_platoon - 1)))
    return rows


# ---------------------------------------------------------------------------
# Disjunctive cuts
# ---------------------------------------------------------------------------

@dataclass
class ActiveSets:
    """Vehicles and constraints active at a fractional scheduling point."""
    v1: list[int]
    v2: list[int]
    star: tuple                      # (u*, v*, edge_key)
    f_star: float
    u1: list[int] = field(default_factory=list)   # departure lower bound tight
    u2: list[int] = field(default_factory=list)   # departure upper bound tight
    fset: list[tuple] = field(default_factory=list)  # (u, v, edge) with f = 1
    none_reason: str = ""


@dataclass
class DisjunctiveCut:
    cut: mip.Cut
    violation: float
    active: ActiveSets
    alpha: np.ndarray
    beta0: np.ndarray
    beta1: np.ndarray
    gamma0: float
    gamma1: float


def _origin_window(handle: SpModelHandle, v):
    node = handle.origin[v]
    return handle.bounds.window(v, node), node


def collect_active_sets(point, handle: SpModelHandle) -> ActiveSets | None:
    """Active-set collection walking follower links with tight big-M rows.

    Returns None when no fractional follower variable has its big-M row
    tight, or when a chain search bottoms out without reaching a vehicle
    pinned at a departure bound (the input was then not an extreme point of
    the time-relaxation polytope).
    """
    x = point.x
    candidates = []
    for (u, v, key) in sorted(handle.f_col):
        f = float(x[handle.f_col[(u, v, key)]])
        if FRAC_TOL < f < 1.0 - FRAC_TOL:
            tu = handle.entry_time(x, u, key)
            tv = handle.entry_time(x, v, key)
            m_uv = handle.big_m[(u, v, key)]
            if abs(abs(tu - tv) - m_uv * (1.0 - f)) <= ACTIVE_TOL:
                candidates.append((u, v, key))
    if not candidates:
        return None

    u_star, v_star, key_star = candidates[0]
    f_star = float(x[handle.f_col[(u_star, v_star, key_star)]])
    vehicles = set(handle.contracted.vehicles)

    def origin_state(v):
        (lo, hi), node = _origin_window(handle, v)
        t = handle.time_value(x, v, node)
        at_lo = t <= lo + ACTIVE_TOL
        at_hi = t >= hi - ACTIVE_TOL
        return at_lo, at_hi

    def deep_search(veh_set: list[int]) -> int:
        while True:
            added = None
            for u in sorted(vehicles - set(veh_set)):
                for v in sorted(veh_set):
                    lo_v, hi_v = min(u, v), max(u, v)
                    for (key, _t) in handle.contracted.route_edges(u):
                        col = handle.f_col.get((hi_v, lo_v, key))
                        if col is not None and x[col] > 1.0 - FRAC_TOL:
                            added = u
                            break
                    if added:
                        break
                if added:
                    break
            if added is None:
                return 0
            veh_set.append(added)
            at_lo, at_hi = origin_state(added)
            if at_lo or at_hi:
                return 1

    v1, v2 = [u_star], [v_star]
    for veh_set, seed in ((v1, u_star), (v2, v_star)):
        at_lo, at_hi = origin_state(seed)
        if not at_lo and not at_hi:
            if deep_search(veh_set) == 0:
                return None

    members = v1 + v2
    u1, u2 = [], []
    for u in sorted(members):
        at_lo, at_hi = origin_state(u)
        if at_lo:
            u1.append(u)
        if at_hi:
            u2.append(u)
    fset = []
    for group in (v1, v2):
        gs = sorted(group)
        for a, v in enumerate(gs):
            for u in gs[a + 1:]:
                for (key, _t) in handle.contracted.route_edges(u):
                    col = handle.f_col.get((u, v, key))
                    if col is not None and x[col] > 1.0 - FRAC_TOL:
                        fset.append((u, v, key))
    return ActiveSets(sorted(v1), sorted(v2), (u_star, v_star, key_star),
                      f_star, u1, u2, sorted(set(fset)))


class _CglpSystem:
    """The lifted inequality system A~ w + p~ f* >= b~ and its column map."""

    def __init__(self, active: ActiveSets, handle: SpModelHandle):
        self.omega: list[tuple] = []
        index: dict[tuple, int] = {}
        members = sorted(set(active.v1) | set(active.v2))
        for u in members:
            edges = handle.contracted.route_edges(u)
            nodes = [edges[0][0][0]] + [k[1] for k, _ in edges]
            for node in nodes:
                index[("t", u, node)] = len(self.omega)
                self.omega.append(("t", u, node))
        for tup in active.fset:
            index[("f",) + tup] = len(self.omega)
            self.omega.append(("f",) + tup)
        self.index = index
        self.rows: list[dict[int, float]] = []
        self.p: list[float] = []
        self.b: list[float] = []
        self.members = members

        def var(kind, *args):
            key = (kind,) + args
            if key not in index:
                raise AssemblyError(f"missing omega column for {key}")
            return index[key]

        def add(coeffs, p_coef, rhs):
            self.rows.append(coeffs)
            self.p.append(p_coef)
            self.b.append(rhs)

        # Travel-time chaining along each member's route (both directions).
        for u in members:
            for (key, t) in handle.contracted.route_edges(u):
                i, j = key[0], key[1]
                add({var("t", u, j): 1.0, var("t", u, i): -1.0}, 0.0, t)
                add({var("t", u, j): -1.0, var("t", u, i): 1.0}, 0.0, -t)
        # Tight departure bounds.
        for u in active.u1:
            (lo, _hi), node = _origin_window(handle, u)
            add({var("t", u, node): 1.0}, 0.0, lo)
        for u in active.u2:
            (_lo, hi), node = _origin_window(handle, u)
            add({var("t", u, node): -1.0}, 0.0, -hi)
        # Both big-M rows for every pair platooned at the point.
        for (u, v, key) in active.fset:
            m_uv = handle.big_m[(u, v, key)]
            tail = key[0]
            fi = var("f", u, v, key)
            add({var("t", u, tail): -1.0, var("t", v, tail): 1.0, fi: -m_uv},
                0.0, -m_uv)
            add({var("t", u, tail): 1.0, var("t", v, tail): -1.0, fi: -m_uv},
                0.0, -m_uv)
        # Both big-M rows for the starred pair (f* lives in the p column).
        us, vs_, key_s = active.star
        m_s = handle.big_m[(us, vs_, key_s)]
        tail = key_s[0]
        add({var("t", us, tail): -1.0, var("t", vs_, tail): 1.0}, -m_s, -m_s)
        add({var("t", us, tail): 1.0, var("t", vs_, tail): -1.0}, -m_s, -m_s)
        # Departure windows for every member.
        for u in members:
            (lo, hi), node = _origin_window(handle, u)
            add({var("t", u, node): 1.0}, 0.0, lo)
            add({var("t", u, node): -1.0}, 0.0, -hi)
        # 0 <= f <= 1 for the platooned pairs and the starred pair.
        for tup in active.fset:
            fi = var("f", *tup)
            add({fi: 1.0}, 0.0, 0.0)
            add({fi: -1.0}, 0.0, -1.0)
        add({}, 1.0, 0.0)
        add({}, -1.0, -1.0)

    def omega_values(self, point, handle) -> np.ndarray:
        x = point.x
        out = np.zeros(len(self.omega))
        for k, key in enumerate(self.omega):
            if key[0] == "t":
                _, u, node = key
                out[k] = handle.time_value(x, u, node)
            else:
                out[k] = float(x[handle.f_col[key[1:]]])
        return out


def build_cglp(active: ActiveSets, point, handle: SpModelHandle):
    """Cut-generating LP whose optimum yields a disjunctive inequality.

    Returns (model, system, column layout) where the layout maps the CGLP
    columns back to multipliers (alpha, beta0, beta1, gamma0, gamma1).
    """
    sys_ = _CglpSystem(active, handle)
    omega_hat = sys_.omega_values(point, handle)
    f_hat = active.f_star
    n_omega = len(sys_.omega)
    n_rows = len(sys_.rows)

    m = mip.LinearModel("cglp")
    a_cols = [m.add_var(f"alpha_{k}", lb=-np.inf, ub=np.inf)
              for k in range(n_omega)]
    b0_cols = [m.add_var(f"beta0_{r}", lb=0.0) for r in range(n_rows)]
    b1_cols = [m.add_var(f"beta1_{r}", lb=0.0) for r in range(n_rows)]
    g0 = m.add_var("gamma0", lb=0.0)
    g1 = m.add_var("gamma1", lb=0.0, ub=1.0)

    # A~^T beta0 = alpha and A~^T beta1 = alpha.
    col_rows: dict[int, list[tuple[int, float]]] = {k: [] for k in range(n_omega)}
    for r, row in enumerate(sys_.rows):
        for k, c in row.items():
            col_rows[k].append((r, c))
    for k in range(n_omega):
        for beta_cols in (b0_cols, b1_cols):
            coeffs = {beta_cols[r]: c for r, c in col_rows[k]}
            coeffs[a_cols[k]] = coeffs.get(a_cols[k], 0.0) - 1.0
            m.add_constraint(coeffs, "==", 0.0)

    # Multiplier-sum normalization: the multiplier family is a cone, and the
    # gamma1 cap alone leaves rays with gamma1 = 0 unbounded, so pin the
    # total multiplier mass instead.
    norm = {c: 1.0 for c in b0_cols + b1_cols}
    norm[g0] = 1.0
    norm[g1] = 1.0
    m.add_constraint(norm, "==", 1.0, name="normalization")

    obj: dict[int, float] = {}
    for k in range(n_omega):
        if omega_hat[k] != 0.0:
            obj[a_cols[k]] = omega_hat[k]
    for r in range(n_rows):
        b_r, p_r = sys_.b[r], sys_.p[r]
        c0 = b_r * (f_hat - 1.0)
        if c0 != 0.0:
            obj[b0_cols[r]] = c0
        c1 = (p_r - b_r) * f_hat
        if c1 != 0.0:
            obj[b1_cols[r]] = c1
    obj[g0] = f_hat
    obj[g1] = 1.0 - f_hat
    m.set_objective(obj, sense="min")
    layout = {"alpha": a_cols, "beta0": b0_cols, "beta1": b1_cols,
              "gamma0": g0, "gamma1": g1}
    return m, sys_, layout


def separate_disjunctive(point, handle: SpModelHandle,
                         min_violation: float = MIN_VIOLATION
                         ) -> DisjunctiveCut | None:
    """End-to-end separation: active sets, CGLP, materialized cut.

    Returns None when no qualifying fractional tuple exists, the chain
    search fails, or the best inequality does not cut the point off.
    """
    active = collect_active_sets(point, handle)
    if active is None:
        return None
    model, sys_, layout = build_cglp(active, point, handle)
    sol = mip.solve_lp(model)
    if sol.status != "optimal":
        return None
    violation = -sol.objective
    if violation <= min_violation:
        return None

    alpha = np.array([sol.x[c] for c in layout["alpha"]])
    beta0 = np.array([sol.x[c] for c in layout["beta0"]])
    beta1 = np.array([sol.x[c] for c in layout["beta1"]])
    gamma0 = float(sol.x[layout["gamma0"]])
    gamma1 = float(sol.x[layout["gamma1"]])
    b_vec = np.array(sys_.b)
    p_vec = np.array(sys_.p)
    f_coef = float(beta0 @ b_vec - beta1 @ b_vec + beta1 @ p_vec
                   + gamma0 - gamma1)
    const = float(-beta0 @ b_vec + gamma1)

    # alpha^T omega + f_coef * f* + const >= 0, mapped into model columns.
    coeffs: dict[int, float] = {}
    shift = const
    for k, key in enumerate(sys_.omega):
        a_k = alpha[k]
        if abs(a_k) < 1e-12:
            continue
        if key[0] == "t":
            _, u, node = key
            if handle.t_col:
                col = handle.t_col[(u, node)]
                coeffs[col] = coeffs.get(col, 0.0) + a_k
            else:
                col = handle.dep_col[u]
                coeffs[col] = coeffs.get(col, 0.0) + a_k
                shift += a_k * handle.prefix[(u, node)]
        else:
            col = handle.f_col[key[1:]]
            coeffs[col] = coeffs.get(col, 0.0) + a_k
    star_col = handle.f_col[active.star]
    if abs(f_coef) >= 1e-12:
        coeffs[star_col] = coeffs.get(star_col, 0.0) + f_coef
    if not coeffs:
        return None
    cut = mip.Cut(coeffs, ">=", -shift, tag="disjunctive")

    lhs = sum(c * point.x[j] for j, c in coeffs.items())
    achieved = cut.rhs - lhs
    if abs(achieved - violation) > 1e-6 * max(1.0, abs(violation)):
        raise AssemblyError("cut violation mismatch between spaces")
    return DisjunctiveCut(cut, violation, active, alpha, beta0, beta1,
                          gamma0, gamma1)


def make_disjunctive_hook(handle: SpModelHandle, log: list | None = None):
    """Root-cut hook for the MIP solver: one disjunctive cut per round."""

    def hook(lp_solution):
        found = separate_disjunctive(lp_solution, handle)
        if found is None:
            return []
        if log is not None:
            log.append(found)
        return [found.cut]

    return hook


def bound_improvement_report(contracted, params, bounds,
                             rounds: int = 20) -> dict:
    """Root-relaxation bounds: plain, after disjunctive cuts, after adding
    the star rows as well (maximization: lower is tighter)."""
    from . import scheduling as sched
    t0 = __import__("time").perf_counter()
    plain = sched.build_sp(contracted, params, bounds)
    lp0 = mip.solve_lp(plain.model)
    bd0 = lp0.objective

    disj: list[DisjunctiveCut] = []
    work = plain.model.copy()
    lp = lp0
    for _ in range(rounds):
        if lp.status != "optimal":
            break
        found = separate_disjunctive(lp, plain)
        if found is None:
            break
        disj.append(found)
        work.add_cut(found.cut)
        lp = mip.solve_lp(work)
    bd1 = lp.objective if lp.status == "optimal" else bd0
    cut_time = __import__("time").perf_counter() - t0

    starred = sched.build_sp(contracted, params, bounds,
                             sched.CutOptions(star_partition=True))
    n_star = starred.model.num_constraints - plain.model.num_constraints
    work2 = starred.model.copy()
    for d in disj:
        work2.add_cut(d.cut)
    lp2 = mip.solve_lp(work2)
    bd2 = lp2.objective if lp2.status == "optimal" else bd1
    return {"lp_bound_plain": bd0, "lp_bound_disj": bd1,
            "lp_bound_disj_star": bd2, "n_disjunctive": len(disj),
            "n_star_rows": n_star, "disj_cuts": disj,
            "time_disj_cut_s": cut_time}
