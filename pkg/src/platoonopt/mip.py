"""Generic MILP layer: model container, LP solve, branch and bound, export.

The LP relaxations are solved by the embedded simplex in ``simplex.py``;
branch and bound uses best-bound node selection, most-fractional branching
(ties to the lowest variable index), and an optional root cut hook that is
called with every fractional root LP solution.
"""

from __future__ import annotations

import heapq
import time
from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp

from . import simplex
from .simplex import NumericalFailure

INT_TOL = 1e-6
FEAS_TOL = 1e-7
DEFAULT_REL_GAP = 1e-4
DEFAULT_CUT_ROUNDS = 20

CONTINUOUS, BINARY, INTEGER = "continuous", "binary", "integer"
LE, GE, EQ = "<=", ">=", "=="


class ModelError(Exception):
    """Model invariant violated."""


class IoError(Exception):
    """Model export failed."""


@dataclass
class Variable:
    name: str
    lb: float
    ub: float
    kind: str = CONTINUOUS


@dataclass
class Constraint:
    coeffs: dict[int, float]
    sense: str
    rhs: float
    name: str = ""


@dataclass
class Cut:
    """A valid inequality produced by a separation routine."""
    coeffs: dict[int, float]
    sense: str
    rhs: float
    tag: str = ""  # disjunctive | star_partition | size_facet | hull

    def validate(self) -> None:
        if not self.coeffs:
            raise ModelError("cut with empty support")
        for v in self.coeffs.values():
            if not np.isfinite(v):
                raise ModelError("cut with non-finite coefficient")


class LinearModel:
    """Sparse MILP: variables with bounds/kinds, linear rows, one objective."""

    def __init__(self, name: str = "model"):
        self.name = name
        self.variables: list[Variable] = []
        self.constraints: list[Constraint] = []
        self.obj_coeffs: dict[int, float] = {}
        self.obj_constant = 0.0
        self.obj_sense = "min"

    def add_var(self, name: str, lb: float = 0.0, ub: float = np.inf,
                kind: str = CONTINUOUS) -> int:
        if kind == BINARY:
            lb = max(lb, 0.0)
            ub = min(ub, 1.0)
        if lb > ub + 1e-15:
            raise ModelError(f"variable {name}: lb {lb} > ub {ub}")
        self.variables.append(Variable(name, float(lb), float(ub), kind))
        return len(self.variables) - 1

    def add_constraint(self, coeffs: dict[int, float], sense: str, rhs: float,
                       name: str = "") -> int:
        if sense not in (LE, GE, EQ):
            raise ModelError(f"bad sense {sense!r}")
        nv = len(self.variables)
        clean = {}
        for j, v in coeffs.items():
            if j < 0 or j >= nv:
                raise ModelError(f"constraint {name!r} references unknown column {j}")
            if v != 0.0:
                clean[int(j)] = float(v)
        self.constraints.append(Constraint(clean, sense, float(rhs), name))
        return len(self.constraints) - 1

    def set_objective(self, coeffs: dict[int, float], constant: float = 0.0,
                      sense: str = "min") -> None:
        if sense not in ("min", "max"):
            raise ModelError(f"bad objective sense {sense!r}")
        nv = len(self.variables)
        for j in coeffs:
            if j < 0 or j >= nv:
                raise ModelError(f"objective references unknown column {j}")
        self.obj_coeffs = {int(j): float(v) for j, v in coeffs.items() if v != 0.0}
        self.obj_constant = float(constant)
        self.obj_sense = sense

    def add_cut(self, cut: Cut) -> int:
        cut.validate()
        return self.add_constraint(cut.coeffs, cut.sense, cut.rhs,
                                   name=f"cut_{cut.tag}_{len(self.constraints)}")

    @property
    def num_vars(self) -> int:
        return len(self.variables)

    @property
    def num_constraints(self) -> int:
        return len(self.constraints)

    def integer_indices(self) -> list[int]:
        return [j for j, v in enumerate(self.variables) if v.kind != CONTINUOUS]

    def validate(self) -> None:
        for j, v in enumerate(self.variables):
            if v.lb > v.ub + 1e-15:
                raise ModelError(f"variable {v.name}: lb > ub")
            if v.kind == BINARY and (v.lb < -1e-15 or v.ub > 1 + 1e-15):
                raise ModelError(f"binary {v.name} has bounds outside [0,1]")

    def copy(self) -> "LinearModel":
        m = LinearModel(self.name)
        m.variables = [Variable(v.name, v.lb, v.ub, v.kind) for v in self.variables]
        m.constraints = [Constraint(dict(c.coeffs), c.sense, c.rhs, c.name)
                         for c in self.constraints]
        m.obj_coeffs = dict(self.obj_coeffs)
        m.obj_constant = self.obj_constant
        m.obj_sense = self.obj_sense
        return m


@dataclass
class LpSolution:
    status: str                 # optimal | infeasible | unbounded
    objective: float | None
    x: np.ndarray | None
    basis: np.ndarray | None = None
    vstatus: np.ndarray | None = None
    is_vertex: bool = False

    def value(self, j: int) -> float:
        return float(self.x[j])


@dataclass
class MipSolution:
    status: str                 # optimal | feasible | infeasible | time_limit
    objective: float | None
    x: np.ndarray | None
    bound: float | None
    gap: float | None
    nodes: int
    wall_time: float
    cuts_added: int = 0
    root_bound: float | None = None

    def value(self, j: int) -> float:
        return float(self.x[j])


def _standard_form(model: LinearModel, bounds_override=None):
    """Rows to equalities with slacks; free/upper-only columns made lower-bounded.

    Returns (A, b, c, lo, hi, recover) where recover(x_internal) -> x_user.
    """
    nv = model.num_vars
    lo = np.array([v.lb for v in model.variables], dtype=float)
    hi = np.array([v.ub for v in model.variables], dtype=float)
    if bounds_override:
        for j, (l, u) in bounds_override.items():
            lo[j], hi[j] = max(lo[j], l), min(hi[j], u)
            if lo[j] > hi[j] + 1e-15:
                return None  # trivially infeasible
    c = np.zeros(nv)
    for j, v in model.obj_coeffs.items():
        c[j] = v
    sign = 1.0
    if model.obj_sense == "max":
        c = -c
        sign = -1.0

    rows, cols, vals = [], [], []
    b = np.zeros(model.num_constraints)
    ncols = nv
    slack_lo, slack_hi, slack_c = [], [], []
    for i, con in enumerate(model.constraints):
        for j, v in con.coeffs.items():
            rows.append(i)
            cols.append(j)
            vals.append(v)
        b[i] = con.rhs
        if con.sense == LE:
            rows.append(i); cols.append(ncols); vals.append(1.0)
            slack_lo.append(0.0); slack_hi.append(np.inf); slack_c.append(0.0)
            ncols += 1
        elif con.sense == GE:
            rows.append(i); cols.append(ncols); vals.append(-1.0)
            slack_lo.append(0.0); slack_hi.append(np.inf); slack_c.append(0.0)
            ncols += 1

    lo_full = np.concatenate([lo, slack_lo])
    hi_full = np.concatenate([hi, slack_hi])
    c_full = np.concatenate([c, slack_c])

    # Shift or split columns with infinite lower bound so every column has a
    # finite lower bound (the engine starts nonbasics at lo).
    negate = []   # lb=-inf, ub finite: x -> -x
    splits = []   # fully free: x -> x+ - x-
    extra_cols = []
    for j in range(ncols):
        if np.isinf(lo_full[j]) and lo_full[j] < 0:
            if np.isfinite(hi_full[j]):
                negate.append(j)
            else:
                splits.append(j)
    a = sp.coo_matrix((vals, (rows, cols)),
                      shape=(model.num_constraints, ncols)).tocsc()
    if negate:
        neg = np.ones(ncols)
        neg[negate] = -1.0
        a = a @ sp.diags(neg)
        new_lo = lo_full.copy()
        new_hi = hi_full.copy()
        new_lo[negate] = -hi_full[negate]
        new_hi[negate] = np.inf
        lo_full, hi_full = new_lo, new_hi
        c_full = c_full * neg
    if splits:
        a = sp.hstack([a, -a[:, splits]], format="csc")
        c_full = np.concatenate([c_full, -c_full[splits]])
        lo_full = np.concatenate([lo_full, np.zeros(len(splits))])
        hi_full = np.concatenate([hi_full, np.full(len(splits), np.inf)])
        lo_full[splits] = 0.0
        extra_cols = splits

    def recover(x_int: np.ndarray) -> np.ndarray:
        x = x_int[:ncols].copy()
        if negate:
            x[negate] = -x[negate]
        for k, j in enumerate(extra_cols):
            x[j] = x_int[j] - x_int[ncols + k]
        return x[:nv]

    return a.tocsc(), b, c_full, lo_full, hi_full, recover, sign, bool(splits or negate)


def solve_lp(model: LinearModel, bounds_override: dict | None = None,
             start=None) -> LpSolution:
    """Solve the LP relaxation (integrality ignored) to a basic solution."""
    model.validate()
    sf = _standard_form(model, bounds_override)
    if sf is None:
        return LpSolution("infeasible", None, None)
    a, b, c, lo, hi, recover, sign, reformed = sf
    res = simplex.solve(a, b, c, lo, hi, start=start)
    if res.status != "optimal":
        return LpSolution(res.status, None, None)
    x = recover(res.x)
    obj = sign * res.objective + model.obj_constant
    return LpSolution("optimal", obj, x, basis=res.basis, vstatus=res.vstatus,
                      is_vertex=not reformed)


def _fractional(x, int_idx):
    out = []
    for j in int_idx:
        f = x[j] - np.floor(x[j] + 0.5)
        if abs(f) > INT_TOL:
            out.append((j, x[j]))
    return out


def check_solution(model: LinearModel, x, tol: float = 1e-6) -> float:
    """Objective of ``x`` if it satisfies every row, bound, and integrality
    requirement; raises ModelError otherwise."""
    x = np.asarray(x, dtype=float)
    for j, v in enumerate(model.variables):
        if x[j] < v.lb - tol or x[j] > v.ub + tol:
            raise ModelError(f"value of {v.name} violates its bounds")
        if v.kind != CONTINUOUS and abs(x[j] - round(x[j])) > tol:
            raise ModelError(f"value of {v.name} not integral")
    for con in model.constraints:
        lhs = sum(c * x[j] for j, c in con.coeffs.items())
        if con.sense == LE and lhs > con.rhs + tol:
            raise ModelError(f"row {con.name!r} violated")
        if con.sense == GE and lhs < con.rhs - tol:
            raise ModelError(f"row {con.name!r} violated")
        if con.sense == EQ and abs(lhs - con.rhs) > tol:
            raise ModelError(f"row {con.name!r} violated")
    return sum(c * x[j] for j, c in model.obj_coeffs.items()) + model.obj_constant


def solve_mip(model: LinearModel, rel_gap: float = DEFAULT_REL_GAP,
              time_limit_s: float | None = None,
              node_limit: int | None = None,
              root_cut_hook=None,
              cut_rounds: int = DEFAULT_CUT_ROUNDS,
              initial_solution=None) -> MipSolution:
    """Branch and bound with best-bound node selection.

    ``root_cut_hook(lp_solution)`` may return a list of :class:`Cut`; it is
    invoked repeatedly on fractional root relaxations until it returns no
    cuts or ``cut_rounds`` rounds have run.  Cuts never fire below the root.
    ``initial_solution`` seeds the incumbent (it must be feasible).
    """
    model.validate()
    t0 = time.perf_counter()
    work = model.copy()
    int_idx = work.integer_indices()
    minimize = work.obj_sense == "min"
    better = (lambda a, b: a < b) if minimize else (lambda a, b: a > b)
    wall = lambda: time.perf_counter() - t0

    incumbent = None
    incumbent_x = None
    if initial_solution is not None:
        incumbent = check_solution(work, initial_solution)
        incumbent_x = np.asarray(initial_solution, dtype=float)

    cuts_added = 0
    root = solve_lp(work)
    rounds = 0
    while (root.status == "optimal" and root_cut_hook is not None
           and rounds < cut_rounds and _fractional(root.x, int_idx)):
        cuts = root_cut_hook(root)
        if not cuts:
            break
        for cut in cuts:
            work.add_cut(cut)
        cuts_added += len(cuts)
        rounds += 1
        root = solve_lp(work)

    if root.status in ("infeasible", "unbounded"):
        if incumbent is not None:
            return MipSolution("optimal", incumbent, incumbent_x, incumbent,
                               0.0, 1, wall(), cuts_added)
        return MipSolution("infeasible", None, None, None, None, 1, wall(),
                           cuts_added)
    root_bound = root.objective

    def slack(inc):
        return rel_gap * max(abs(inc), 1e-10)

    def cutoff(bound, inc):
        if inc is None:
            return False
        return (bound >= inc - slack(inc)) if minimize \
            else (bound <= inc + slack(inc))

    # Standard form is prepared once; nodes only patch variable bounds.
    sf = _standard_form(work)
    a_std, b_std, c_std, lo_std, hi_std, recover, sign, reformed = sf
    nv = work.num_vars

    def node_lp(overrides, start):
        lo = lo_std.copy()
        hi = hi_std.copy()
        for j, (l, u) in overrides.items():
            lo[j] = max(lo[j], l)
            hi[j] = min(hi[j], u)
            if lo[j] > hi[j] + 1e-15:
                return LpSolution("infeasible", None, None)
        res = simplex.solve(a_std, b_std, c_std, lo, hi, start=start)
        if res.status != "optimal":
            return LpSolution(res.status, None, None)
        return LpSolution("optimal", sign * res.objective + work.obj_constant,
                          recover(res.x), basis=res.basis, vstatus=res.vstatus,
                          is_vertex=not reformed)

    nodes = 1
    counter = 0
    heap: list = []
    pruned_bounds: list[float] = []

    def push(bound, overrides, start):
        nonlocal counter
        key = bound if minimize else -bound
        heapq.heappush(heap, (key, counter, bound, overrides, start))
        counter += 1

    frac = _fractional(root.x, int_idx)
    if not frac:
        if incumbent is None or better(root.objective, incumbent):
            incumbent, incumbent_x = root.objective, root.x.copy()
        return MipSolution("optimal", incumbent, incumbent_x, root.objective,
                           0.0, nodes, wall(), cuts_added, root_bound)
    if cutoff(root.objective, incumbent):
        return MipSolution("optimal", incumbent, incumbent_x, root.objective,
                           abs(incumbent - root.objective)
                           / max(abs(incumbent), 1e-10),
                           nodes, wall(), cuts_added, root_bound)
    push(root.objective, {}, None)
    first = True

    status = "optimal"
    while heap:
        if time_limit_s is not None and wall() > time_limit_s:
            status = "time_limit"
            break
        if node_limit is not None and nodes >= node_limit:
            status = "time_limit"
            break
        key, cnt, bound, overrides, start = heapq.heappop(heap)
        if cutoff(bound, incumbent):
            pruned_bounds.append(bound)
            continue
        if first:
            lp = root
            first = False
        else:
            lp = node_lp(overrides, start)
            nodes += 1
        if lp.status != "optimal":
            continue
        if cutoff(lp.objective, incumbent):
            pruned_bounds.append(lp.objective)
            continue
        frac = _fractional(lp.x, int_idx)
        if not frac:
            if incumbent is None or better(lp.objective, incumbent):
                incumbent, incumbent_x = lp.objective, lp.x.copy()
            continue
        # Most fractional, ties to lowest index.
        jbest, fbest = -1, -1.0
        for j, xj in frac:
            f = xj - np.floor(xj)
            score = min(f, 1.0 - f)
            if score > fbest + 1e-12:
                jbest, fbest = j, score
        xj = lp.x[jbest]
        down = dict(overrides)
        down[jbest] = (down.get(jbest, (work.variables[jbest].lb,
                                        work.variables[jbest].ub))[0],
                       float(np.floor(xj)))
        up = dict(overrides)
        up[jbest] = (float(np.ceil(xj)),
                     up.get(jbest, (work.variables[jbest].lb,
                                    work.variables[jbest].ub))[1])
        warm = (lp.basis, lp.vstatus) if lp.basis is not None else None
        push(lp.objective, down, warm)
        push(lp.objective, up, warm)

    # Final bound: best over open and cutoff-pruned nodes plus the incumbent.
    open_bounds = [entry[2] for entry in heap] + pruned_bounds
    if incumbent is None:
        if open_bounds:
            bnd = min(open_bounds) if minimize else max(open_bounds)
        else:
            bnd = root_bound
        st = "time_limit" if status == "time_limit" else "infeasible"
        return MipSolution(st, None, None, bnd, None, nodes, wall(),
                           cuts_added, root_bound)
    if open_bounds:
        bnd = min(open_bounds + [incumbent]) if minimize \
            else max(open_bounds + [incumbent])
    else:
        bnd = incumbent
    g = abs(incumbent - bnd) / max(abs(incumbent), 1e-10)
    st = "feasible" if (status == "time_limit" and g > rel_gap) else "optimal"
    return MipSolution(st, incumbent, incumbent_x, bnd, g, nodes, wall(),
                       cuts_added, root_bound)


# ---------------------------------------------------------------------------
# Model export
# ---------------------------------------------------------------------------

def _num(v: float) -> str:
    """Fixed-point decimal rendering, no exponents, trailing zeros trimmed."""
    if v == int(v) and abs(v) < 1e15:
        return str(int(v))
    s = f"{v:.12f}".rstrip("0")
    return s + "0" if s.endswith(".") else s


def _safe_names(items, prefix):
    out = []
    seen = set()
    for i, it in enumerate(items):
        nm = (it.name or "").strip().replace(" ", "_")
        if not nm or nm in seen or len(nm) > 60:
            nm = f"{prefix}{i}"
        seen.add(nm)
        out.append(nm)
    return out


def write_model(model: LinearModel, fmt: str, path: str) -> None:
    """Write the model as fixed-format MPS or CPLEX LP."""
    fmt = fmt.upper()
    if fmt not in ("MPS", "LP"):
        raise IoError(f"unknown format {fmt!r}")
    text = _to_mps(model) if fmt == "MPS" else _to_lp(model)
    try:
        with open(path, "w", encoding="utf-8") as fh:
            fh.write(text)
    except OSError as exc:
        raise IoError(str(exc)) from exc


def _to_mps(model: LinearModel) -> str:
    vnames = _safe_names(model.variables, "X")
    cnames = _safe_names(model.constraints, "R")
    sense_code = {LE: "L", GE: "G", EQ: "E"}
    lines = [f"NAME          {model.name.upper()[:8] or 'MODEL'}"]
    lines.append("ROWS")
    lines.append(" N  COST")
    for i, con in enumerate(model.constraints):
        lines.append(f" {sense_code[con.sense]}  {cnames[i]}")
    lines.append("COLUMNS")
    col_rows: list[list[tuple[str, float]]] = [[] for _ in model.variables]
    for i, con in enumerate(model.constraints):
        for j, v in sorted(con.coeffs.items()):
            col_rows[j].append((cnames[i], v))
    obj_sign = 1.0 if model.obj_sense == "min" else -1.0
    in_int = False
    marker = 0
    for j, var in enumerate(model.variables):
        entries = []
        oc = model.obj_coeffs.get(j, 0.0)
        if oc:
            entries.append(("COST", obj_sign * oc))
        entries.extend(col_rows[j])
        if not entries:
            entries.append(("COST", 0.0))
        integral = var.kind != CONTINUOUS
        if integral and not in_int:
            lines.append(f"    MARKER{marker:04d}  'MARKER'                 'INTORG'")
            marker += 1
            in_int = True
        if not integral and in_int:
            lines.append(f"    MARKER{marker:04d}  'MARKER'                 'INTEND'")
            marker += 1
            in_int = False
        for k in range(0, len(entries), 2):
            pair = entries[k:k + 2]
            row = f"    {vnames[j]:<10}{pair[0][0]:<10}{_num(pair[0][1]):>12}"
            if len(pair) == 2:
                row += f"   {pair[1][0]:<10}{_num(pair[1][1]):>12}"
            lines.append(row)
    if in_int:
        lines.append(f"    MARKER{marker:04d}  'MARKER'                 'INTEND'")
    lines.append("RHS")
    for i, con in enumerate(model.constraints):
        if con.rhs != 0.0:
            lines.append(f"    RHS       {cnames[i]:<10}{_num(con.rhs):>12}")
    lines.append("BOUNDS")
    for j, var in enumerate(model.variables):
        nm = vnames[j]
        if var.kind == BINARY:
            lines.append(f" BV BND       {nm}")
            continue
        if var.lb == 0.0 and np.isinf(var.ub):
            continue
        if np.isinf(var.lb) and var.lb < 0:
            lines.append(f" MI BND       {nm}")
        elif var.lb != 0.0:
            code = "LI" if var.kind == INTEGER else "LO"
            lines.append(f" {code} BND       {nm:<10}{_num(var.lb):>12}")
        if np.isfinite(var.ub):
            code = "UI" if var.kind == INTEGER else "UP"
            lines.append(f" {code} BND       {nm:<10}{_num(var.ub):>12}")
    lines.append("ENDATA")
    return "\n".join(lines) + "\n"


def _expr(coeffs: dict[int, float], vnames) -> str:
    parts = []
    for j, v in sorted(coeffs.items()):
        sign = "-" if v < 0 else "+"
        parts.append(f"{sign} {_num(abs(v))} {vnames[j]}")
    if not parts:
        return "0"
    s = " ".join(parts)
    return s[2:] if s.startswith("+ ") else s


def _to_lp(model: LinearModel) -> str:
    vnames = _safe_names(model.variables, "x")
    cnames = _safe_names(model.constraints, "c")
    lines = ["Minimize" if model.obj_sense == "min" else "Maximize"]
    lines.append(f" obj: {_expr(model.obj_coeffs, vnames)}")
    lines.append("Subject To")
    op = {LE: "<=", GE: ">=", EQ: "="}
    for i, con in enumerate(model.constraints):
        lines.append(f" {cnames[i]}: {_expr(con.coeffs, vnames)} "
                     f"{op[con.sense]} {_num(con.rhs)}")
    lines.append("Bounds")
    for j, var in enumerate(model.variables):
        if var.kind == BINARY:
            continue
        lb = "-inf" if np.isinf(var.lb) else _num(var.lb)
        ub = "+inf" if np.isinf(var.ub) else _num(var.ub)
        lines.append(f" {lb} <= {vnames[j]} <= {ub}")
    bins = [vnames[j] for j, v in enumerate(model.variables) if v.kind == BINARY]
    if bins:
        lines.append("Binaries")
        lines.append(" " + " ".join(bins))
    gens = [vnames[j] for j, v in enumerate(model.variables) if v.kind == INTEGER]
    if gens:
        lines.append("Generals")
        lines.append(" " + " ".join(gens))
    lines.append("End")
    return "\n".join(lines) + "\n"
