"""Cut families: star-partition rows, size facets, disjunctive separation."""

import itertools

import numpy as np
import pytest

from platoonopt import cuts, mip, oracle, scheduling as sched


def _row_holds(row, values):
    coeffs, sense, rhs = row
    lhs = sum(c * values.get(k, 0.0) for k, c in coeffs.items())
    return lhs <= rhs + 1e-9 if sense == "<=" else lhs >= rhs - 1e-9


def _vec_values(links, vehicles):
    vals = {}
    vs = sorted(vehicles)
    for a, v in enumerate(vs):
        for u in vs[a + 1:]:
            vals[(u, v)] = 1.0 if (u, v) in links else 0.0
    return vals


class TestStarPartitionRows:
    def test_two_vehicles_single_row(self):
        rows = cuts.star_partition_constraints([1, 2])
        assert len(rows) == 1
        assert rows[0] == ({(2, 1): 1.0}, "<=", 1.0)

    def test_row_count_formula(self):
        for n in (2, 3, 4, 5, 6):
            vs = list(range(1, n + 1))
            rows = cuts.star_partition_constraints(vs)
            pairs = [(u, v) for v in vs[1:] for u in vs if u > v]
            assert len(rows) == 1 + len(pairs)

    def test_chain_violates_some_row(self):
        # v3 follows v2 while v2 follows v1: a path of length two
        rows = cuts.star_partition_constraints([1, 2, 3])
        vals = _vec_values({(2, 1), (3, 2)}, [1, 2, 3])
        assert not all(_row_holds(r, vals) for r in rows)

    @pytest.mark.parametrize("n", [2, 3, 4, 5, 6])
    def test_integer_points_equal_star_partitions(self, n):
        vs = list(range(1, n + 1))
        rows = cuts.star_partition_constraints(vs)
        pairs = [(u, v) for a, v in enumerate(vs) for u in vs[a + 1:]]
        sat = set()
        for bits in itertools.product((0, 1), repeat=len(pairs)):
            vals = dict(zip(pairs, map(float, bits)))
            if all(_row_holds(r, vals) for r in rows):
                sat.add(frozenset(p for p, b in zip(pairs, bits) if b))
        expect = {frozenset((u, v) for u, v in links)
                  for links in oracle.enum_star_partitions(n)}
        assert sat == expect

    def test_random_objectives_hit_binary_vertices(self):
        rng = np.random.default_rng(5)
        for n in (3, 4, 5, 6):
            vs = list(range(1, n + 1))
            rows = cuts.star_partition_constraints(vs)
            pairs = sorted({k for r in rows for k in r[0]})
            for _ in range(50):
                m = mip.LinearModel()
                cols = {p: m.add_var(f"f{p}", 0, 1) for p in pairs}
                for coeffs, sense, rhs in rows:
                    m.add_constraint({cols[k]: c for k, c in coeffs.items()},
                                     sense, rhs)
                m.set_objective({cols[p]: float(c) for p, c in
                                 zip(pairs, rng.uniform(-1, 1, len(pairs)))},
                                sense="min")
                sol = mip.solve_lp(m)
                assert sol.status == "optimal"
                for p in pairs:
                    assert abs(sol.x[cols[p]] - round(sol.x[cols[p]])) < 1e-6


class TestSizeFacets:
    def test_no_subset_when_not_enough_vehicles(self):
        assert cuts.platoon_size_facets([1, 2, 3], 3) == []

    def test_oversized_star_infeasible(self):
        rows = cuts.platoon_size_facets([1, 2, 3, 4], 3)
        assert len(rows) == 1
        vals = _vec_values({(2, 1), (3, 1), (4, 1)}, [1, 2, 3, 4])
        lhs = sum(c * vals.get(k, 0.0) for k, c in rows[0][0].items())
        assert lhs == pytest.approx(3.0)
        assert not _row_holds(rows[0], vals)  # 3 > lambda-1 = 2

    def test_capped_partitions_satisfy_rows(self):
        rows = cuts.platoon_size_facets([1, 2, 3, 4], 3)
        for links in oracle.enum_star_partitions(4, max_platoon=3):
            vals = _vec_values(set(links), [1, 2, 3, 4])
            assert all(_row_holds(r, vals) for r in rows)

    def test_cap_and_greedy_ranking(self):
        vs = list(range(1, 7))
        all_rows = cuts.platoon_size_facets(vs, 2, cap=1000)
        assert len(all_rows) == 20  # C(6,3)
        point = {(2, 1): 1.0, (3, 1): 1.0}
        top = cuts.platoon_size_facets(vs, 2, cap=3, lp_point=point)
        assert len(top) == 3
        # the most violated subset {1,2,3} must rank first
        assert top[0][0] == {(2, 1): 1.0, (3, 1): 1.0, (3, 2): 1.0}


class TestActiveSets:
    def test_appendix_sets(self, appendix_example):
        ex = appendix_example
        act = cuts.collect_active_sets(ex["point"], ex["handle"])
        assert act is not None
        assert act.v1 == [2, 4] and act.v2 == [1, 3]
        n = ex["nodes"]
        assert act.star[:2] == (2, 1)
        assert act.star[2][:2] == (n["C"], n["D"])
        assert act.f_star == pytest.approx(0.75)
        assert act.u1 == [3] and act.u2 == [4]
        fs = {(u, v, k[:2]) for u, v, k in act.fset}
        assert fs == {(3, 1, (n["B"], n["C"])), (4, 2, (n["D"], n["G"]))}

    def test_integral_point_returns_none(self, appendix_example):
        ex = appendix_example
        h = ex["handle"]
        sol = mip.solve_mip(h.model)
        point = mip.LpSolution("optimal", sol.objective, sol.x)
        assert cuts.collect_active_sets(point, h) is None

    def test_slack_bigm_returns_none(self, appendix_example):
        # pulling the fractional pair's times together leaves slack in both
        # big-M rows, so no qualifying tuple exists
        ex = appendix_example
        h = ex["handle"]
        n = ex["nodes"]
        x = ex["point"].x.copy()
        x[h.dep_col[1]] = 3.0
        x[h.dep_col[2]] = 2.5   # entry gap at C becomes 0.5 < M(1-f) = 1
        x[h.f_col[(3, 1, (n["B"], n["C"], 0))]] = 0.0
        x[h.f_col[(4, 2, (n["D"], n["G"], 0))]] = 0.0
        point = mip.LpSolution("optimal", None, x)
        assert cuts.collect_active_sets(point, h) is None


class TestCglp:
    def test_feasible_bounded_on_appendix(self, appendix_example):
        ex = appendix_example
        act = cuts.collect_active_sets(ex["point"], ex["handle"])
        model, sys_, _layout = cuts.build_cglp(act, ex["point"], ex["handle"])
        sol = mip.solve_lp(model)
        assert sol.status == "optimal"
        assert sol.objective < -1e-7  # separating multipliers exist

    def test_duplicate_rows_leave_violation_unchanged(self, appendix_example):
        ex = appendix_example
        first = cuts.separate_disjunctive(ex["point"], ex["handle"])
        again = cuts.separate_disjunctive(ex["point"], ex["handle"])
        assert first.violation == pytest.approx(again.violation)


class TestSeparation:
    def test_appendix_cut_violated_and_valid(self, appendix_example):
        ex = appendix_example
        dc = cuts.separate_disjunctive(ex["point"], ex["handle"])
        assert dc is not None
        assert dc.violation > 1e-7
        # validity: every integral feasible point satisfies the cut
        h = ex["handle"]
        for fvals in itertools.product((0, 1), repeat=len(h.f_col)):
            model = h.model.copy()
            for (key, col), fv in zip(sorted(h.f_col.items()), fvals):
                model.variables[col].lb = model.variables[col].ub = float(fv)
            sol = mip.solve_mip(model)
            if sol.status != "optimal":
                continue
            lhs = sum(c * sol.x[j] for j, c in dc.cut.coeffs.items())
            assert lhs >= dc.cut.rhs - 1e-7

    def test_cut_never_raises_root_bound(self, appendix_example):
        ex = appendix_example
        model = ex["handle"].model.copy()
        lp0 = mip.solve_lp(model)
        dc = cuts.separate_disjunctive(lp0, ex["handle"])
        if dc is not None:
            model.add_cut(dc.cut)
            lp1 = mip.solve_lp(model)
            assert lp1.objective <= lp0.objective + 1e-9

    def test_bound_rounds_monotone(self, appendix_example):
        ex = appendix_example
        model = ex["handle"].model.copy()
        bounds = []
        lp = mip.solve_lp(model)
        for _ in range(6):
            bounds.append(lp.objective)
            dc = cuts.separate_disjunctive(lp, ex["handle"])
            if dc is None:
                break
            model.add_cut(dc.cut)
            lp = mip.solve_lp(model)
        assert all(b2 <= b1 + 1e-9 for b1, b2 in zip(bounds, bounds[1:]))

    def test_report_orders_bounds(self, appendix_example):
        ex = appendix_example
        rep = cuts.bound_improvement_report(ex["contracted"], ex["params"],
                                            ex["bounds"])
        assert rep["lp_bound_disj"] <= rep["lp_bound_plain"] + 1e-9
        assert rep["lp_bound_disj_star"] <= rep["lp_bound_disj"] + 1e-9
        assert rep["lp_bound_disj"] < rep["lp_bound_plain"] - 1e-9
        assert rep["n_disjunctive"] >= 1
