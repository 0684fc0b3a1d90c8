"""Shared fixtures: tiny networks, the four-vehicle worked example, and
hand-built instances with known optima."""

import numpy as np
import pytest

from platoonopt import mip, netmodel as nm, scheduling as sched
from platoonopt.netmodel import Edge, Node, RoadNetwork, VehicleMission
from platoonopt.routing import RouteAssignment
from platoonopt.rshm import SavingsParams


def make_net(coords, edge_spec, speed=80.0, rate=1.0):
    """coords: {id: (x, y)}; edge_spec: [(i, j, length)] (directed)."""
    nodes = [Node(i, x, y) for i, (x, y) in coords.items()]
    edges = [Edge(i, j, ln, ln / speed, rate * ln) for i, j, ln in edge_spec]
    return RoadNetwork(nodes, edges)


@pytest.fixture
def triangle_net():
    return make_net({1: (0, 0), 2: (10, 0), 3: (5, 1)},
                    [(1, 2, 10.0), (1, 3, 6.0), (3, 2, 6.0)])


@pytest.fixture
def two_node_net():
    return make_net({1: (0, 0), 2: (5, 0)}, [(1, 2, 5.0)])


def shared_edge_instance(edge_cost=10.0, sigma_l=0.02, sigma_f=0.1,
                         max_platoon=10, windows=None):
    """Two vehicles whose routes overlap on exactly one edge of the given
    cost; wide (or supplied) time windows."""
    lengths = {(1, 3): 4.0, (2, 3): 4.0, (3, 4): edge_cost,
               (4, 5): 4.0, (4, 6): 4.0}
    coords = {1: (0, 2), 2: (0, -2), 3: (4, 0), 4: (4 + edge_cost, 0),
              5: (8 + edge_cost, 2), 6: (8 + edge_cost, -2)}
    net = make_net(coords, [(i, j, ln) for (i, j), ln in lengths.items()])
    sp1 = (4.0 + edge_cost + 4.0) / 80.0
    if windows is None:
        windows = [(0.0, 2 * sp1 + 1.0), (0.0, 2 * sp1 + 1.0)]
    missions = [VehicleMission(1, 1, 5, windows[0][0], windows[0][1]),
                VehicleMission(2, 2, 6, windows[1][0], windows[1][1])]
    inst = nm.ProblemInstance(net, missions, sigma_l, sigma_f, max_platoon)
    inst.validate()
    return inst


@pytest.fixture
def appendix_example():
    """The worked four-vehicle example: routes, missions, contracted
    scheduling model, and the fractional point with f = 3/4."""
    A, B, C, D, E, F, G, H, I, J, K, L = range(1, 13)
    routes = {1: (A, B, C, D, E), 2: (F, C, D, G, H),
              3: (I, B, C, J), 4: (L, D, G, K)}
    edges = set()
    for r in routes.values():
        for i in range(len(r) - 1):
            edges.add((r[i], r[i + 1]))
    times = {e: (2.0 if e == (C, J) else 1.0) for e in edges}
    costs = {e: 1.0 for e in edges}
    ra = RouteAssignment(routes, times, costs)
    missions = [VehicleMission(1, A, E, 0, 8), VehicleMission(2, F, H, 1, 9),
                VehicleMission(3, I, J, 3, 8), VehicleMission(4, L, K, 2, 7)]
    params = SavingsParams(0.02, 0.1, 10)
    contracted = sched.contract(ra, times, costs)
    bounds = sched.time_bounds(contracted, missions)
    handle = sched.build_sp(contracted, params, bounds)

    x = np.zeros(handle.model.num_vars)
    for v, dep in ((1, 3.0), (2, 3.0), (3, 3.0), (4, 4.0)):
        x[handle.dep_col[v]] = dep

    def fcol(u, v, i, j):
        for (uu, vv, kk), col in handle.f_col.items():
            if (uu, vv) == (u, v) and kk[0] == i and kk[1] == j:
                return col
        raise KeyError((u, v, i, j))

    x[fcol(3, 1, B, C)] = 1.0
    x[fcol(4, 2, D, G)] = 1.0
    x[fcol(2, 1, C, D)] = 0.75
    point = mip.LpSolution("optimal", None, x, is_vertex=True)
    return {"assignment": ra, "missions": missions, "params": params,
            "contracted": contracted, "bounds": bounds, "handle": handle,
            "point": point, "times": times, "costs": costs,
            "nodes": dict(zip("ABCDEFGHIJKL", range(1, 13))), "fcol": fcol}


@pytest.fixture
def small_grid():
    return nm.make_grid_network(4, 4, spacing_km=30, jitter=0.25, seed=9)


@pytest.fixture
def medium_grid():
    return nm.make_grid_network(7, 7, spacing_km=40, jitter=0.25, seed=5)
