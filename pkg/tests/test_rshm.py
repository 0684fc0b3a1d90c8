"""Heuristic loop: platoon-cost algebra, similarity index, cost feedback,
termination, and the a-posteriori gap bound."""

import pytest

from platoonopt import mip, netmodel as nm, oracle, routing, rshm
from platoonopt.routing import EdgeCostTable, RouteAssignment
from platoonopt.rshm import (RshmOptions, RshmState, SavingsParams, c_plat,
                             c_plat_tilde, gap_bound, similarity_index,
                             update_cost_table)
from platoonopt.scheduling import PlatoonConfiguration

from conftest import shared_edge_instance

P = SavingsParams(0.02, 0.1, 10)


class TestPlatoonCost:
    def test_empty_and_single(self):
        assert c_plat(0, 7.0, P) == 0.0
        assert c_plat(1, 7.0, P) == 7.0

    def test_pair_on_hundred(self):
        assert c_plat(2, 100.0, P) == pytest.approx(188.0)  # 98 + 90

    def test_triple_on_ten(self):
        assert c_plat(3, 10.0, P) == pytest.approx(27.8)    # 9.8 + 18

    def test_tilde_single_prices_leader(self):
        assert c_plat_tilde(1, 10.0, P) == pytest.approx(9.8)
        assert c_plat_tilde(2, 10.0, P) == c_plat(2, 10.0, P)
        assert c_plat_tilde(0, 10.0, P) == 0.0


def _state_with_history(inst, records):
    state = RshmState(inst)
    for rec in records:
        state.record(rec)
    return state


def _mini_instance():
    return shared_edge_instance(edge_cost=10.0)


def _assignment(inst, via_shared):
    net = inst.network
    if via_shared:
        routes = {1: (1, 3, 4, 5), 2: (2, 3, 4, 6)}
    else:
        routes = {1: (1, 3, 4, 5), 2: (2, 3, 4, 6)}
    return RouteAssignment(routes, net.time_table(), net.fuel_table())


def _record(n, inst, pair_platooned, z=100.0):
    ra = _assignment(inst, True)
    shared = (3, 4)
    platoons = {e: [] for e in ra.all_edges()}
    for e, vs in ra.vehicles_by_edge().items():
        if e == shared and pair_platooned:
            platoons[e] = [(1, (2,))]
        else:
            platoons[e] = [(v, ()) for v in vs]
    cfg = PlatoonConfiguration(platoons, {1: 0.0, 2: 0.0})
    return rshm.IterationRecord(n, ra, cfg, z, z, 0.0)


class TestSimilarityIndex:
    def test_below_three_iterations_none(self):
        inst = _mini_instance()
        state = _state_with_history(inst, [_record(1, inst, True),
                                           _record(2, inst, True)])
        assert similarity_index(state, 2, 1, (3, 4)) is None

    def test_matching_history_found(self):
        inst = _mini_instance()
        recs = [_record(1, inst, True), _record(2, inst, True),
                _record(3, inst, True)]
        state = _state_with_history(inst, recs)
        # iteration 1's platoons equal iteration 3's, and vehicle 1 is on
        # the edge at iteration 2
        assert similarity_index(state, 3, 1, (3, 4)) == 1

    def test_membership_condition_fails(self):
        inst = _mini_instance()
        recs = [_record(1, inst, True), _record(2, inst, True),
                _record(3, inst, True)]
        state = _state_with_history(inst, recs)
        # vehicle 9 never appears on the edge at iteration 2
        assert similarity_index(state, 3, 9, (3, 4)) is None

    def test_configuration_mismatch_fails(self):
        inst = _mini_instance()
        recs = [_record(1, inst, False), _record(2, inst, True),
                _record(3, inst, True)]
        state = _state_with_history(inst, recs)
        assert similarity_index(state, 3, 1, (3, 4)) is None


class TestCostTable:
    def test_trivial_platoon_restores_base(self):
        inst = _mini_instance()
        state = _state_with_history(inst, [_record(1, inst, False)])
        table = update_cost_table(state, 1)
        assert table.cost(1, (1, 3)) == pytest.approx(
            inst.network.edge(1, 3).fuel)

    def test_pair_average_on_shared_edge(self):
        inst = _mini_instance()
        state = _state_with_history(inst, [_record(1, inst, True)])
        table = update_cost_table(state, 1)
        assert table.cost(1, (3, 4)) == pytest.approx(18.8 / 2)
        assert table.cost(2, (3, 4)) == pytest.approx(9.4)

    def test_explored_by_others_gets_follower_cost(self):
        inst = _mini_instance()
        state = _state_with_history(inst, [_record(1, inst, True)])
        table = update_cost_table(state, 1)
        # edge (1,3) is explored by vehicle 1 only; vehicle 2 gets 0.9 C
        c = inst.network.edge(1, 3).fuel
        assert table.cost(2, (1, 3)) == pytest.approx(0.9 * c)

    def test_similar_history_copies_price(self):
        inst = _mini_instance()
        recs = [_record(1, inst, True), _record(2, inst, True),
                _record(3, inst, True)]
        state = _state_with_history(inst, recs)
        state.tables[2] = update_cost_table(state, 1)
        state.tables[3] = update_cost_table(state, 2)
        table4 = update_cost_table(state, 3)
        # vehicle 9 is irrelevant; for vehicle 2 on an edge explored only
        # by vehicle 1 with I(3,2,(1,3)) nonexistent -> follower price;
        # for the shared edge case 1 applies.  Exercise case 3 with a
        # vehicle absent from the edge at iteration 3:
        # build a state where vehicle 2 leaves the shared edge at n=3
        assert table4.cost(2, (3, 4)) == pytest.approx(9.4)

    def test_case3_requires_stored_table(self):
        inst = _mini_instance()
        recs = [_record(1, inst, True), _record(2, inst, True),
                _record(3, inst, True)]
        state = _state_with_history(inst, recs)
        state.tables[2] = update_cost_table(state, 1)
        state.tables[3] = update_cost_table(state, 2)
        update_cost_table(state, 3)  # all history present: fine


class TestRun:
    def test_single_vehicle_terminates_quickly(self, triangle_net):
        inst = nm.ProblemInstance(triangle_net,
                                  [nm.VehicleMission(1, 1, 2, 0.0, 1.0)])
        inst.validate()
        res = rshm.run(inst, RshmOptions(iter_cap=10))
        assert res.termination == "repeat_consecutive"
        assert res.iterations == 2
        assert res.z_hat == pytest.approx(10.0)
        assert res.saving_rate() == pytest.approx(0.0)

    def test_two_vehicle_profitable_edge_matches_oracle(self):
        inst = shared_edge_instance(edge_cost=10.0)
        res = rshm.run(inst, RshmOptions(iter_cap=30))
        rep = oracle.brute_force_cvpp(inst)
        assert res.z_hat == pytest.approx(rep.z_star, abs=1e-9)
        fuel0 = res.fuel_baseline()
        assert res.z_hat == pytest.approx(fuel0 - 1.2)

    def test_incumbent_monotone_and_bounded(self, small_grid):
        for seed in (0, 1, 2, 3):
            inst = nm.generate_two_cluster(small_grid, 4, seed=seed)
            res = rshm.run(inst, RshmOptions(iter_cap=60))
            best = float("inf")
            for t in res.trace:
                best = min(best, t["z"])
                assert res.z_hat <= best + 1e-9
            fuel0 = res.fuel_baseline()
            assert res.z_hat <= fuel0 + 1e-6
            h = routing.build_rdp(inst, EdgeCostTable.initial(inst))
            lb = mip.solve_mip(
                h.model,
                initial_solution=routing.initial_solution(h)).objective
            assert res.z_hat >= lb - 1e-6

    def test_iter_cap_reported(self):
        inst = shared_edge_instance()
        res = rshm.run(inst, RshmOptions(iter_cap=1))
        assert res.termination in ("iter_cap", "repeat_consecutive",
                                   "freq_threshold")
        res2 = rshm.run(inst, RshmOptions(iter_cap=0))
        assert res2.termination == "iter_cap" if res2 else True

    def test_objective_self_consistency_on_repeat(self, small_grid):
        # when routes repeat, the next routing objective evaluated at those
        # routes equals the realized fuel cost (within tolerance)
        for seed in (0, 1, 4, 6):
            inst = nm.generate_two_cluster(small_grid, 3, seed=seed)
            res = rshm.run(inst, RshmOptions(iter_cap=60))
            if res.termination != "repeat_consecutive":
                continue
            state = res.state
            n = state.iterations
            rec = state.records[n]
            table_next = state.tables[n + 1]
            val = routing.presumed_objective(rec.routes, table_next,
                                             inst)
            assert val == pytest.approx(rec.z, abs=1e-6)


class TestGapBound:
    def test_all_full_platoons_zero_bound(self):
        inst = shared_edge_instance(edge_cost=10.0, max_platoon=2)
        state = RshmState(inst)
        ra = _assignment(inst, True)
        shared = (3, 4)
        platoons = {}
        for e, vs in ra.vehicles_by_edge().items():
            platoons[e] = [(1, (2,))] if e == shared else [(v, ()) for v in vs]
        # make every edge carry a full platoon: restrict to the shared edge
        routes = {1: (3, 4), 2: (3, 4)}
        net = inst.network
        ra2 = RouteAssignment(routes, net.time_table(), net.fuel_table())
        cfg = PlatoonConfiguration({shared: [(1, (2,))]}, {1: 0.0, 2: 0.0})
        state.record(rshm.IterationRecord(1, ra2, cfg, 18.8, 18.8, 0.0))
        state.record(rshm.IterationRecord(2, ra2, cfg, 18.8, 18.8, 0.0))
        assert gap_bound(state) == pytest.approx(0.0)

    def test_single_vehicle_bracket_value(self, two_node_net):
        inst = nm.ProblemInstance(
            two_node_net, [nm.VehicleMission(1, 1, 2, 0.0, 1.0)],
            sigma_l=0.02, sigma_f=0.1, max_platoon=10)
        # network edge cost is 5; scale to a cost-10 edge for the check
        net = nm.RoadNetwork(
            [nm.Node(1, 0, 0), nm.Node(2, 10, 0)],
            [nm.Edge(1, 2, 10.0, 10.0 / 80, 10.0)])
        inst = nm.ProblemInstance(net, [nm.VehicleMission(1, 1, 2, 0.0, 1.0)])
        inst.validate()
        res = rshm.run(inst, RshmOptions(iter_cap=10))
        bound = gap_bound(res.state)
        assert bound == pytest.approx(((1 - 1 / 10) * 0.08 + 0.02) * 10)

    def test_not_applicable_when_routes_differ(self):
        inst = _mini_instance()
        state = RshmState(inst)
        ra1 = _assignment(inst, True)
        routes2 = {1: (1, 3, 4, 5), 2: (2, 3, 4, 6)}
        state.record(_record(1, inst, True))
        rec2 = _record(2, inst, False)
        object.__setattr__(rec2, "routes", RouteAssignment(
            {1: (1, 3, 4, 5), 2: (2, 4)},
            dict(ra1.edge_times, **{(2, 4): 1.0}),
            dict(ra1.edge_costs, **{(2, 4): 1.0})))
        state.record(rec2)
        with pytest.raises(rshm.NotApplicableError):
            gap_bound(state)

    def test_bound_dominates_oracle_gap(self, small_grid):
        checked = 0
        for seed in range(10):
            inst = nm.generate_two_cluster(small_grid, 3, seed=seed)
            res = rshm.run(inst, RshmOptions(iter_cap=60))
            try:
                bound = gap_bound(res.state)
            except rshm.NotApplicableError:
                continue
            z_star = oracle.brute_force_cvpp(inst).z_star
            last_z = res.state.records[res.state.iterations].z
            assert last_z - z_star <= bound + 1e-9
            checked += 1
        assert checked >= 3
