"""Road network and problem instance layer.

Holds the directed highway graph (per-edge fuel cost and travel time),
vehicle missions with time windows, shortest paths with deterministic
tie-breaking, the detour-bounded candidate edge set, and the two synthetic
instance generators (distributed and two-cluster).
"""

from __future__ import annotations

import heapq
import json
import math
from dataclasses import dataclass, field

import numpy as np

REL_TOL = 1e-9


class NetworkError(Exception):
    pass


class Unreachable(NetworkError):
    def __init__(self, origin, dest):
        super().__init__(f"no directed path from {origin} to {dest}")
        self.origin = origin
        self.dest = dest


class ValidationError(Exception):
    pass


class ParseError(Exception):
    pass


class NoHubPair(Exception):
    """Two-cluster generator: percentile condition unsatisfiable."""


class NoNodeInRadius(Exception):
    """Generator could not place a vehicle after bounded retries."""


@dataclass(frozen=True)
class Node:
    id: int
    x: float
    y: float


@dataclass(frozen=True)
class Edge:
    tail: int
    head: int
    length: float   # km
    time: float     # hours
    fuel: float     # fuel units

    @property
    def key(self):
        return (self.tail, self.head)


class RoadNetwork:
    """Directed graph; immutable once built."""

    def __init__(self, nodes: list[Node], edges: list[Edge]):
        self.nodes: dict[int, Node] = {n.id: n for n in nodes}
        if len(self.nodes) != len(nodes):
            raise ValidationError("duplicate node ids")
        self.edges: dict[tuple, Edge] = {}
        self.out_adj: dict[int, list[Edge]] = {n.id: [] for n in nodes}
        self.in_adj: dict[int, list[Edge]] = {n.id: [] for n in nodes}
        for e in edges:
            if e.tail not in self.nodes or e.head not in self.nodes:
                raise ValidationError(f"edge {e.key} endpoint missing from node set")
            if e.tail == e.head:
                raise ValidationError(f"self-loop at node {e.tail}")
            if e.fuel <= 0 or e.time <= 0:
                raise ValidationError(f"edge {e.key} needs positive fuel and time")
            if e.key in self.edges:
                raise ValidationError(f"duplicate edge {e.key}")
            self.edges[e.key] = e
            self.out_adj[e.tail].append(e)
            self.in_adj[e.head].append(e)
        for adj in self.out_adj.values():
            adj.sort(key=lambda e: e.head)
        for adj in self.in_adj.values():
            adj.sort(key=lambda e: e.tail)

    def edge(self, i, j) -> Edge:
        return self.edges[(i, j)]

    def fuel_table(self) -> dict[tuple, float]:
        return {k: e.fuel for k, e in self.edges.items()}

    def time_table(self) -> dict[tuple, float]:
        return {k: e.time for k, e in self.edges.items()}

    def __eq__(self, other):
        return (isinstance(other, RoadNetwork)
                and self.nodes == other.nodes and self.edges == other.edges)


@dataclass(frozen=True)
class VehicleMission:
    id: int
    origin: int
    dest: int
    t_earliest: float   # T^O, hours
    t_latest: float     # T^D, hours


@dataclass
class ProblemInstance:
    network: RoadNetwork
    missions: list[VehicleMission]
    sigma_l: float = 0.02
    sigma_f: float = 0.1
    max_platoon: int = 10
    meta: dict = field(default_factory=dict)

    def validate(self) -> None:
        if not (0 < self.sigma_l < self.sigma_f < 1):
            raise ValidationError("sigma ordering: need 0 < sigma_l < sigma_f < 1")
        if self.max_platoon < 2:
            raise ValidationError("max platoon size must be >= 2")
        ids = sorted(m.id for m in self.missions)
        if ids != list(range(1, len(ids) + 1)):
            raise ValidationError("vehicle ids must be 1..n with no gaps")
        for m in self.missions:
            if m.origin == m.dest:
                raise ValidationError(f"vehicle {m.id}: origin equals destination")
            sp = shortest_path(self.network, m.origin, m.dest, weight="time")
            if m.t_latest < m.t_earliest + sp.time - 1e-9:
                raise ValidationError(
                    f"vehicle {m.id}: window shorter than shortest travel time")

    def mission(self, vid: int) -> VehicleMission:
        for m in self.missions:
            if m.id == vid:
                return m
        raise KeyError(vid)

    def __eq__(self, other):
        return (isinstance(other, ProblemInstance)
                and self.network == other.network
                and self.missions == other.missions
                and self.sigma_l == other.sigma_l
                and self.sigma_f == other.sigma_f
                and self.max_platoon == other.max_platoon
                and self.meta == other.meta)


@dataclass(frozen=True)
class Path:
    nodes: tuple
    edges: tuple         # edge keys
    length: float
    fuel: float
    time: float


_WEIGHT = {
    "fuel": lambda e: e.fuel,
    "time": lambda e: e.time,
    "length": lambda e: e.length,
}


def _dijkstra(net: RoadNetwork, source, weight: str, reverse=False) -> dict:
    wf = _WEIGHT[weight]
    adj = net.in_adj if reverse else net.out_adj
    dist = {source: 0.0}
    heap = [(0.0, source)]
    done = set()
    while heap:
        d, u = heapq.heappop(heap)
        if u in done:
            continue
        done.add(u)
        for e in adj[u]:
            v = e.tail if reverse else e.head
            nd = d + wf(e)
            if v not in done and (v not in dist or nd < dist[v]):
                dist[v] = nd
                heapq.heappush(heap, (nd, v))
    return dist


def shortest_path(net: RoadNetwork, o, d, weight: str = "fuel") -> Path:
    """Minimum-weight simple path; among ties, the lexicographically smallest
    node-id sequence."""
    if o not in net.nodes or d not in net.nodes:
        raise Unreachable(o, d)
    if o == d:
        return Path((o,), (), 0.0, 0.0, 0.0)
    wf = _WEIGHT[weight]
    dist_o = _dijkstra(net, o, weight)
    if d not in dist_o:
        raise Unreachable(o, d)
    dist_d = _dijkstra(net, d, weight, reverse=True)
    total = dist_o[d]
    tol = REL_TOL * max(1.0, abs(total))
    nodes = [o]
    u = o
    while u != d:
        best = None
        for e in net.out_adj[u]:
            k = e.head
            if k not in dist_d:
                continue
            if abs(dist_o[u] + wf(e) + dist_d[k] - total) <= tol:
                if best is None or k < best:
                    best = k
        if best is None:
            raise Unreachable(o, d)
        nodes.append(best)
        u = best
    edges = tuple((nodes[i], nodes[i + 1]) for i in range(len(nodes) - 1))
    es = [net.edge(*k) for k in edges]
    return Path(tuple(nodes), edges,
                sum(e.length for e in es), sum(e.fuel for e in es),
                sum(e.time for e in es))


def candidate_edge_set(net: RoadNetwork, m: VehicleMission,
                       sigma_f: float) -> set:
    """Edges that can appear on a route whose length stays within the
    1/(1 - sigma_f) detour bound of the shortest origin-destination length."""
    dist_o = _dijkstra(net, m.origin, "length")
    if m.dest not in dist_o:
        raise Unreachable(m.origin, m.dest)
    dist_d = _dijkstra(net, m.dest, "length", reverse=True)
    bound = dist_o[m.dest] / (1.0 - sigma_f)
    tol = REL_TOL * max(1.0, bound)
    out = set()
    for key, e in net.edges.items():
        i, j = key
        if i in dist_o and j in dist_d:
            if dist_o[i] + e.length + dist_d[j] <= bound + tol:
                out.add(key)
    return out


# ---------------------------------------------------------------------------
# Synthetic networks and instance generators
# ---------------------------------------------------------------------------

def make_grid_network(rows: int, cols: int, spacing_km: float = 40.0,
                      diagonals: bool = True, speed_kmh: float = 80.0,
                      fuel_per_km: float = 1.0, jitter: float = 0.0,
                      seed: int = 0) -> RoadNetwork:
    """Planar grid with optional cell diagonals; edge cost and time are
    proportional to Euclidean length (fuel = rate*len, time = len/speed)."""
    rng = np.random.default_rng([101, seed])
    nodes = []
    for r in range(rows):
        for c in range(cols):
            nid = r * cols + c + 1
            jx = jy = 0.0
            if jitter > 0:
                jx, jy = rng.uniform(-0.5, 0.5, 2) * jitter * spacing_km
            nodes.append(Node(nid, c * spacing_km + jx, r * spacing_km + jy))
    pos = {n.id: (n.x, n.y) for n in nodes}

    def both(i, j, acc):
        d = math.dist(pos[i], pos[j])
        acc.append(Edge(i, j, d, d / speed_kmh, fuel_per_km * d))
        acc.append(Edge(j, i, d, d / speed_kmh, fuel_per_km * d))

    edges: list[Edge] = []
    for r in range(rows):
        for c in range(cols):
            nid = r * cols + c + 1
            if c + 1 < cols:
                both(nid, nid + 1, edges)
            if r + 1 < rows:
                both(nid, nid + cols, edges)
            if diagonals and c + 1 < cols and r + 1 < rows:
                both(nid, nid + cols + 1, edges)
    return RoadNetwork(nodes, edges)


def default_cities(net: RoadNetwork, k: int = 14) -> list[int]:
    """Deterministic farthest-point sample of node ids to act as cities."""
    ids = sorted(net.nodes)
    k = min(k, len(ids))
    chosen = [ids[0]]
    while len(chosen) < k:
        best, best_d = None, -1.0
        for nid in ids:
            if nid in chosen:
                continue
            d = min(math.dist((net.nodes[nid].x, net.nodes[nid].y),
                              (net.nodes[c].x, net.nodes[c].y)) for c in chosen)
            if d > best_d:
                best, best_d = nid, d
        chosen.append(best)
    return sorted(chosen)


def _euclid(net, a, b):
    na, nb = net.nodes[a], net.nodes[b]
    return math.dist((na.x, na.y), (nb.x, nb.y))


def _nodes_within(net, center, radius):
    out = [nid for nid in sorted(net.nodes) if _euclid(net, center, nid) <= radius]
    return out or [center]


def _draw_od(rng, net, o_pool, d_pool, retries=60):
    for _ in range(retries):
        o = int(o_pool[rng.integers(len(o_pool))])
        d = int(d_pool[rng.integers(len(d_pool))])
        if o == d:
            continue
        try:
            sp = shortest_path(net, o, d, weight="time")
        except Unreachable:
            continue
        return o, d, sp.time
    raise NoNodeInRadius("could not draw a connected origin/destination pair")


def _finish_missions(rng, net, od_list, flexibility):
    missions = []
    for vid, (o, d, sp_time) in enumerate(od_list, start=1):
        t0 = float(rng.uniform(0.0, 24.0))
        missions.append(VehicleMission(vid, o, d, t0,
                                       t0 + (1.0 + flexibility) * sp_time))
    return missions


def generate_distributed(net: RoadNetwork, n_vehicles: int, seed: int,
                         cities: list[int] | None = None,
                         urban_radius_km: float = 50.0,
                         urban_share: float = 0.75,
                         flexibility: float = 1.0,
                         sigma_l: float = 0.02, sigma_f: float = 0.1,
                         max_platoon: int = 10) -> ProblemInstance:
    """Mostly-urban trips: origin near one city, destination near another;
    the rest drawn uniformly.  The arrival deadline leaves slack equal to
    ``flexibility`` times the shortest travel time."""
    rng = np.random.default_rng([11, seed])
    if cities is None:
        cities = default_cities(net)
    if len(cities) < 2:
        raise ValidationError("need at least two city nodes")
    pools = {c: _nodes_within(net, c, urban_radius_km) for c in cities}
    fallbacks = sum(1 for c in cities if pools[c] == [c])
    all_nodes = sorted(net.nodes)
    n_urban = int(round(urban_share * n_vehicles))
    od = []
    for i in range(n_vehicles):
        if i < n_urban:
            c1, c2 = rng.choice(len(cities), size=2, replace=False)
            od.append(_draw_od(rng, net, pools[cities[int(c1)]],
                               pools[cities[int(c2)]]))
        else:
            od.append(_draw_od(rng, net, all_nodes, all_nodes))
    inst = ProblemInstance(net, _finish_missions(rng, net, od, flexibility),
                           sigma_l, sigma_f, max_platoon,
                           meta={"model": "distributed", "seed": seed,
                                 "flexibility": flexibility,
                                 "radius_fallbacks": fallbacks})
    inst.validate()
    return inst


def generate_two_cluster(net: RoadNetwork, n_vehicles: int, seed: int,
                         flexibility: float = 1.0,
                         sigma_l: float = 0.02, sigma_f: float = 0.1,
                         max_platoon: int = 10) -> ProblemInstance:
    """Origins clustered around one distant hub, destinations around another.

    The hub pair distance exceeds the 70th percentile of all pairwise node
    distances; the cluster radius is the 20th percentile.
    """
    rng = np.random.default_rng([12, seed])
    ids = sorted(net.nodes)
    if len(ids) < 2:
        raise NoHubPair("network too small for hub selection")
    pair_d = [( _euclid(net, a, b), a, b)
              for ai, a in enumerate(ids) for b in ids[ai + 1:]]
    dists = np.array([p[0] for p in pair_d])
    thr70 = float(np.percentile(dists, 70, method="higher"))
    r0 = float(np.percentile(dists, 20, method="higher"))
    qual = [(a, b) for d, a, b in pair_d if d >= thr70]
    if not qual:
        raise NoHubPair("no node pair beyond the 70th distance percentile")
    h1, h2 = qual[int(rng.integers(len(qual)))]
    pool1 = _nodes_within(net, h1, r0)
    pool2 = _nodes_within(net, h2, r0)
    od = [_draw_od(rng, net, pool1, pool2) for _ in range(n_vehicles)]
    inst = ProblemInstance(net, _finish_missions(rng, net, od, flexibility),
                           sigma_l, sigma_f, max_platoon,
                           meta={"model": "two_cluster", "seed": seed,
                                 "flexibility": flexibility,
                                 "hubs": [h1, h2], "r0": r0})
    inst.validate()
    return inst


# ---------------------------------------------------------------------------
# Instance files
# ---------------------------------------------------------------------------

def instance_to_dict(inst: ProblemInstance) -> dict:
    net = inst.network
    doc = {
        "nodes": [{"id": n.id, "x": n.x, "y": n.y}
                  for n in sorted(net.nodes.values(), key=lambda n: n.id)],
        "edges": [{"from": e.tail, "to": e.head, "length": e.length,
                   "time": e.time, "fuel": e.fuel}
                  for e in sorted(net.edges.values(), key=lambda e: e.key)],
        "vehicles": [{"id": m.id, "origin": m.origin, "dest": m.dest,
                      "t_earliest": m.t_earliest, "t_latest": m.t_latest}
                     for m in sorted(inst.missions, key=lambda m: m.id)],
        "params": {"sigma_l": inst.sigma_l, "sigma_f": inst.sigma_f,
                   "lambda": inst.max_platoon},
    }
    if inst.meta:
        doc["meta"] = inst.meta
    return doc


def instance_from_dict(doc: dict) -> ProblemInstance:
    def need(obj, key, where):
        if key not in obj:
            raise ParseError(f"missing field {key!r} in {where}")
        return obj[key]

    try:
        nodes = [Node(int(need(n, "id", "node")), float(need(n, "x", "node")),
                      float(need(n, "y", "node")))
                 for n in need(doc, "nodes", "instance")]
        edges = [Edge(int(need(e, "from", "edge")), int(need(e, "to", "edge")),
                      float(need(e, "length", "edge")),
                      float(need(e, "time", "edge")),
                      float(need(e, "fuel", "edge")))
                 for e in need(doc, "edges", "instance")]
        vehicles = [VehicleMission(int(need(v, "id", "vehicle")),
                                   int(need(v, "origin", "vehicle")),
                                   int(need(v, "dest", "vehicle")),
                                   float(need(v, "t_earliest", "vehicle")),
                                   float(need(v, "t_latest", "vehicle")))
                    for v in need(doc, "vehicles", "instance")]
        params = need(doc, "params", "instance")
        inst = ProblemInstance(RoadNetwork(nodes, edges), vehicles,
                               float(need(params, "sigma_l", "params")),
                               float(need(params, "sigma_f", "params")),
                               int(need(params, "lambda", "params")),
                               meta=doc.get("meta", {}))
    except (TypeError, ValueError) as exc:
        raise ParseError(str(exc)) from exc
    if vehicles:
        inst.validate()
    else:
        # Network-only files skip the sigma/lambda mission checks.
        RoadNetwork(nodes, edges)
    return inst


def save_instance(inst: ProblemInstance, path: str) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(instance_to_dict(inst), fh, indent=1, sort_keys=True)
        fh.write("\n")


def load_instance(path: str) -> ProblemInstance:
    try:
        with open(path, "r", encoding="utf-8") as fh:
            doc = json.load(fh)
    except json.JSONDecodeError as exc:
        raise ParseError(f"{path}: line {exc.lineno}: {exc.msg}") from exc
    if not isinstance(doc, dict):
        raise ParseError(f"{path}: top level must be an object")
    return instance_from_dict(doc)
