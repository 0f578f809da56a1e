"""Route planning with refuelling, charging and drive-mode decisions.

A road network is expanded into an augmented graph whose nodes are
(road node, SoC level) pairs.  The weight of an augmented edge is the least
fuel needed to drive the road edge between two SoC levels, taken from the
trip-level dynamic program.  On top of that graph:

* with uniform prices the cheapest trip is a shortest path;
* with station-dependent prices a gas-station style dynamic program over
  (stop, SoC level, arrival fuel, stops left) gives the optimum among plans
  that either fill the tank or arrive empty at the next stop;
* a convex relaxation gives a lower bound and a rounded route.
"""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np
import scipy.sparse as sp
from scipy.sparse.csgraph import dijkstra

from .convex import ConvexInfeasible, ConvexProgram, Epigraph, LinearRows, solve_convex
from .dmop import (
    Infeasible,
    ModeSchedule,
    SocGrid,
    TripInstance,
    dp_cost_row,
    simulate_modes,
    solve_dmop_dp,
)
from .relax import solve_cdmop

DEFAULT_NODE_LEVELS = 21
DEFAULT_REFINE = 10
BRUTE_MAX_PATHS = 10
BRUTE_MAX_STOPS = 4
BRUTE_MAX_LEVELS = 5
_EPS_Y = 1e-6


class InstanceTooLarge(ValueError):
    pass


@dataclass(frozen=True)
class Station:
    """Road node with fuel price ``g``, charge price ``h`` per SoC unit and
    charge cap ``E`` per visit."""

    id: str
    g: float = 1.0
    h: float = 0.0
    E: float = 0.0

    def __post_init__(self):
        if self.g < 0 or self.h < 0 or self.E < 0:
            raise ValueError(f"station {self.id}: prices and charge cap must be >= 0")


@dataclass
class Edge:
    """Directed road edge; ``instance`` carries the per-slot inputs.

    The initial SoC, fuel and terminal requirement of ``instance`` are
    ignored: path planning sets them.
    """

    src: str
    dst: str
    instance: TripInstance
    name: str = ""

    @property
    def label(self) -> str:
        return self.name or f"{self.src}->{self.dst}"


@dataclass
class RoadNetwork:
    stations: dict
    edges: list
    source: str
    dest: str
    g_cap: float
    g0: float
    b0: float
    b_lo: float
    b_hi: float
    delta: Optional[int] = None

    def __post_init__(self):
        if isinstance(self.stations, (list, tuple)):
            self.stations = {s.id: s for s in self.stations}
        for name in (self.source, self.dest):
            if name not in self.stations:
                raise ValueError(f"unknown node {name!r}")
        if not self.g_cap > 0:
            raise ValueError("tank capacity must be > 0")
        if not 0 <= self.g0 <= self.g_cap:
            raise ValueError("initial fuel must lie in [0, tank capacity]")
        if not self.b_lo <= self.b0 <= self.b_hi:
            raise ValueError("initial SoC outside the battery range")
        if self.delta is not None and self.delta < 1:
            raise ValueError("stop budget must be >= 1")
        for e in self.edges:
            if e.src not in self.stations or e.dst not in self.stations:
                raise ValueError(f"edge {e.label} references an unknown node")
            if e.src == e.dst:
                raise ValueError(f"edge {e.label} is a self-loop")
            if (e.instance.b_lo, e.instance.b_hi) != (self.b_lo, self.b_hi):
                raise ValueError(f"edge {e.label}: battery range differs from the network's")

    @property
    def node_ids(self) -> list:
        return list(self.stations)

    @property
    def stop_budget(self) -> int:
        return self.delta if self.delta is not None else len(self.stations)

    @property
    def free_charging(self) -> bool:
        """All charge prices zero: charging needs no stop."""
        return all(s.h == 0 for s in self.stations.values())

    @property
    def uniform(self) -> bool:
        prices = {s.g for s in self.stations.values()}
        return len(prices) == 1 and self.free_charging

    def with_(self, **changes) -> "RoadNetwork":
        from dataclasses import replace

        return replace(self, **changes)

    def simple_paths(self, limit: Optional[int] = None) -> list:
        """Simple source-destination paths as lists of edge indices."""
        out_edges = {}
        for k, e in enumerate(self.edges):
            out_edges.setdefault(e.src, []).append(k)
        paths: list = []

        def walk(node, seen, acc):
            if limit is not None and len(paths) > limit:
                return
            if node == self.dest:
                paths.append(list(acc))
                return
            for k in out_edges.get(node, ()):
                nxt = self.edges[k].dst
                if nxt not in seen:
                    walk(nxt, seen | {nxt}, acc + [k])

        walk(self.source, {self.source}, [])
        return paths


def node_grid(network: RoadNetwork, n: int = DEFAULT_NODE_LEVELS) -> SocGrid:
    return SocGrid(network.b_lo, network.b_hi, n)


def _top(grid: SocGrid, j: int, cap: float) -> int:
    """Highest level reachable from level ``j`` by adding at most ``cap``."""
    return max(j, grid.floor(grid.levels[j] + cap))


# ---------------------------------------------------------------- edge costs


@dataclass
class EdgeCostTable:
    """Least fuel ``z[j, k]`` to drive an edge from SoC level ``j`` to at
    least level ``k``.

    A higher starting SoC never hurts: replaying a mode sequence from more
    charge uses no more fuel and ends no lower.  The table is therefore
    closed under starting higher, and ``origin[j, k]`` names the start level
    whose optimal mode sequence is replayed.
    """

    z: np.ndarray
    origin: np.ndarray
    grid: SocGrid
    refine: int

    def schedule(self, edge: Edge, j: int, k: int) -> ModeSchedule:
        """Concrete schedule from level ``j`` reaching level ``k``."""
        if not math.isfinite(self.z[j, k]):
            raise Infeasible(f"edge {edge.label} cannot go from level {j} to {k}")
        levels = self.grid.levels
        i = int(self.origin[j, k])
        base = _edge_instance(edge, levels[i]).with_(terminal_soc=float(levels[k]))
        modes = solve_dmop_dp(base, _fine_grid(self.grid, self.refine)).modes
        return simulate_modes(_edge_instance(edge, levels[j]), modes)


def _fine_grid(grid: SocGrid, refine: int) -> SocGrid:
    return SocGrid(grid.b_lo, grid.b_hi, (grid.n - 1) * refine + 1)


def _edge_instance(edge: Edge, b0: float) -> TripInstance:
    return edge.instance.with_(b0=float(b0), g0=math.inf, terminal_soc=None)


def edge_cost_table(
    edge: Edge, grid: SocGrid, refine: int = DEFAULT_REFINE
) -> EdgeCostTable:
    """Run the trip DP from every grid level; the inner DP uses a grid
    ``refine`` times finer whose every ``refine``-th level is a node level."""
    fine = _fine_grid(grid, refine)
    raw = np.array(
        [dp_cost_row(_edge_instance(edge, b), fine)[::refine] for b in grid.levels]
    )
    z = np.minimum.accumulate(raw, axis=0)
    origin = np.zeros(raw.shape, dtype=int)
    for j in range(grid.n):
        # latest start level attaining the running minimum
        prev = origin[j - 1] if j else np.zeros(grid.n, dtype=int)
        origin[j] = np.where(raw[j] <= z[j], j, prev)
    return EdgeCostTable(z, origin, grid, refine)


def network_cost_tables(
    network: RoadNetwork, grid: SocGrid, refine: int = DEFAULT_REFINE
) -> list:
    return [edge_cost_table(e, grid, refine) for e in network.edges]


# ----------------------------------------------------------- augmented graph


@dataclass
class AugmentedGraph:
    """(road node, SoC level) graph plus source ``s`` and sink ``t``.

    ``info[(a, b)]`` records which road edge and SoC levels an augmented
    edge stands for: ``(edge index, start level, arrival level before
    charging)``, or ``None`` for the ``s`` and ``t`` edges.
    """

    network: RoadNetwork
    grid: SocGrid
    matrix: sp.csr_matrix
    info: dict
    charging: bool

    @property
    def n_road(self) -> int:
        return len(self.network.stations)

    @property
    def s(self) -> int:
        return self.n_road * self.grid.n

    @property
    def t(self) -> int:
        return self.s + 1

    @property
    def n_nodes(self) -> int:
        return self.s + 2

    @property
    def n_edges(self) -> int:
        return self.matrix.nnz

    def node(self, road_id: str, level: int) -> int:
        return self.network.node_ids.index(road_id) * self.grid.n + level

    def label(self, idx: int):
        if idx == self.s:
            return ("s", None)
        if idx == self.t:
            return ("t", None)
        k, j = divmod(idx, self.grid.n)
        return (self.network.node_ids[k], j)

    def start_levels(self) -> list:
        """Levels at the source node after the free initial charge, if any."""
        return [b - self.network.node_ids.index(self.network.source) * self.grid.n
                for b in self.matrix[self.s].indices]


def _charge_targets(grid, j, station: Station, charging: bool) -> list:
    if not charging or station.E <= 0:
        return [j]
    top = _top(grid, j, station.E)
    if station.h == 0:
        # free charging: topping up dominates
        return [top]
    return list(range(j, top + 1))


def build_augmented_graph(
    network: RoadNetwork,
    grid: SocGrid,
    tables: Optional[Sequence[EdgeCostTable]] = None,
    charging: bool = True,
) -> AugmentedGraph:
    """Build the augmented graph; ``charging=False`` gives the no-charging
    subgraph in which the SoC only changes by driving."""
    tables = tables if tables is not None else network_cost_tables(network, grid)
    ids = network.node_ids
    n = grid.n
    base = {v: i * n for i, v in enumerate(ids)}
    s, t = len(ids) * n, len(ids) * n + 1
    best: dict = {}

    def add(a, b, w, info):
        cur = best.get((a, b))
        if cur is None or w < cur[0]:
            best[(a, b)] = (w, info)

    for k, (e, tab) in enumerate(zip(network.edges, tables)):
        head = network.stations[e.dst]
        for j in range(n):
            for jp in range(n):
                w = tab.z[j, jp]
                if not w <= network.g_cap:
                    continue
                for jpp in _charge_targets(grid, jp, head, charging):
                    add(base[e.src] + j, base[e.dst] + jpp, float(w), (k, j, jp))
    j0 = grid.floor(network.b0)
    for j in _charge_targets(grid, j0, network.stations[network.source], charging):
        add(s, base[network.source] + j, network.g_cap - network.g0, None)
    for j in range(n):
        add(base[network.dest] + j, t, 0.0, None)

    keys = list(best)
    rows = np.array([a for a, _ in keys], dtype=int)
    cols = np.array([b for _, b in keys], dtype=int)
    vals = np.array([best[key][0] for key in keys], dtype=float)
    mat = sp.csr_matrix((vals, (rows, cols)), shape=(t + 1, t + 1))
    return AugmentedGraph(network, grid, mat, {key: best[key][1] for key in keys}, charging)


def _path_from_predecessors(pred_row: np.ndarray, src: int, dst: int) -> list:
    path = [dst]
    while path[-1] != src:
        p = int(pred_row[path[-1]])
        if p < 0:
            raise Infeasible("no path in the augmented graph")
        path.append(p)
    return path[::-1]


# ------------------------------------------------------------------- plans


@dataclass(frozen=True)
class PlanLeg:
    edge: int
    src: str
    dst: str
    start_soc: float
    end_soc: float
    fuel_budget: float
    schedule: ModeSchedule

    @property
    def fuel_used(self) -> float:
        return self.schedule.total_fuel


@dataclass(frozen=True)
class PlanStop:
    node: str
    soc_before: float
    soc_after: float
    arrival_fuel: float
    refill: float
    cost: float


@dataclass(frozen=True)
class TripPlan:
    """A route with per-edge schedules and the refuelling and charging stops.

    Fuel bookkeeping uses each leg's ``fuel_budget``; the replayed schedule
    of a leg never burns more than its budget.
    """

    nodes: tuple
    legs: tuple
    stops: tuple
    cost: float
    g0: float
    g_cap: float
    lower_bound: float = -math.inf

    @property
    def stop_count(self) -> int:
        return len(self.stops)

    @property
    def route(self) -> str:
        return "-".join(self.nodes)

    @property
    def fuel_used(self) -> float:
        return float(sum(leg.fuel_used for leg in self.legs))

    @property
    def fuel_budget(self) -> float:
        return float(sum(leg.fuel_budget for leg in self.legs))

    def fuel_profile(self) -> list:
        """Planned fuel on arrival at each node of the route (first entry:
        departure state at the source before any stop)."""
        by_node = {}
        for st in self.stops:
            by_node.setdefault(st.node, []).append(st)
        fuel = self.g0
        out = [fuel]
        for i, leg in enumerate(self.legs):
            for st in by_node.get(leg.src, ()):
                fuel += st.refill
            fuel -= leg.fuel_budget
            out.append(fuel)
        return out


def _segment_graph(network, grid, tables):
    # Without charge prices the vehicle may charge at any node it passes;
    # otherwise it charges only where it stops, so segments between stops
    # use the no-charging subgraph.
    return build_augmented_graph(network, grid, tables, charging=network.free_charging)


def _legs_along(graph: AugmentedGraph, tables, path: list) -> list:
    legs = []
    levels = graph.grid.levels
    net = graph.network
    for a, b in zip(path, path[1:]):
        info = graph.info.get((a, b))
        if info is None:
            continue
        k, j, jp = info
        e = net.edges[k]
        legs.append(PlanLeg(
            k, e.src, e.dst, float(levels[j]), float(levels[jp]),
            float(tables[k].z[j, jp]), tables[k].schedule(e, j, jp),
        ))
    return legs


def _plan_nodes(network, legs) -> tuple:
    if not legs:
        return (network.source,)
    return (legs[0].src,) + tuple(leg.dst for leg in legs)


# -------------------------------------------------------------------- uPPDM


def solve_uppdm(
    network: RoadNetwork,
    grid: Optional[SocGrid] = None,
    tables: Optional[Sequence[EdgeCostTable]] = None,
) -> TripPlan:
    """Uniform prices: least total fuel burned, as a shortest s-t path.

    The plan's ``cost`` is the fuel burned (the constant initial-edge weight
    ``G_cap - G0`` is not included).
    """
    if not network.uniform:
        raise ValueError("solve_uppdm needs one fuel price everywhere and free charging")
    grid = grid or node_grid(network)
    tables = tables if tables is not None else network_cost_tables(network, grid)
    graph = build_augmented_graph(network, grid, tables, charging=True)
    dist, pred = dijkstra(graph.matrix, directed=True, indices=graph.s, return_predecessors=True)
    if not np.isfinite(dist[graph.t]):
        raise Infeasible("destination unreachable within the tank capacity")
    path = _path_from_predecessors(pred, graph.s, graph.t)
    legs = _legs_along(graph, tables, path)
    stops = []
    levels = grid.levels
    # record the free charges made along the way
    soc = float(levels[grid.floor(network.b0)])
    for leg in legs:
        if leg.start_soc > soc + 1e-12:
            stops.append(PlanStop(leg.src, soc, leg.start_soc, math.nan, 0.0, 0.0))
        soc = leg.end_soc
    fuel = float(sum(leg.fuel_budget for leg in legs))
    return TripPlan(_plan_nodes(network, legs), tuple(legs), tuple(stops), fuel,
                    network.g0, network.g_cap)


# ---------------------------------------------------------------- PPDM DP


@dataclass
class _DPContext:
    network: RoadNetwork
    grid: SocGrid
    tables: list
    graph: AugmentedGraph
    dist: np.ndarray
    pred: np.ndarray
    start_dist: np.ndarray
    start_row: np.ndarray

    @property
    def n(self):
        return self.grid.n

    def station(self, a) -> Station:
        return self.network.stations[self.network.node_ids[a // self.n]]

    def to_t(self, a) -> float:
        return float(self.dist[a, self.graph.t])


def _prepare(network, grid, tables) -> _DPContext:
    graph = _segment_graph(network, grid, tables)
    n_road = graph.s
    dist, pred = dijkstra(graph.matrix, directed=True, indices=np.arange(n_road),
                          return_predecessors=True)
    start = [graph.node(network.source, j) for j in graph.start_levels()]
    sub = dist[start]
    start_row = np.asarray(start)[np.argmin(sub, axis=0)]
    start_dist = sub.min(axis=0)
    return _DPContext(network, grid, tables, graph, dist, pred, start_dist, start_row)


def gas_levels(
    network: RoadNetwork,
    node: str,
    level: int,
    grid: Optional[SocGrid] = None,
    tables: Optional[Sequence[EdgeCostTable]] = None,
) -> list:
    """Fuel levels worth considering on arrival at ``node`` with SoC level
    ``level``.

    Arriving from a cheaper stop ``u`` that filled the tank leaves
    ``G_cap - w``, where ``w < G_cap`` is the no-charging distance from any
    level of ``u``; otherwise the vehicle arrives empty.
    """
    grid = grid or node_grid(network)
    tables = list(tables) if tables is not None else network_cost_tables(network, grid)
    graph = build_augmented_graph(network, grid, tables, charging=False)
    n = grid.n
    target = graph.node(node, level)
    gv = network.stations[node].g
    out = {0.0}
    for u_idx, u_id in enumerate(network.node_ids):
        if u_id == node or not network.stations[u_id].g < gv:
            continue
        rows = np.arange(u_idx * n, (u_idx + 1) * n)
        dist = dijkstra(graph.matrix, directed=True, indices=rows)[:, target]
        for w in dist[dist < network.g_cap]:
            out.add(float(network.g_cap - w))
    return sorted(out)


def _charge_options(ctx, a) -> list:
    """Post-charge levels available when stopping at ``a``."""
    st = ctx.station(a)
    if ctx.network.free_charging or st.E <= 0:
        # free charging already happened on arrival
        return [a]
    j = a % ctx.n
    top = _top(ctx.grid, j, st.E)
    return [a - j + jj for jj in range(j, top + 1)]


class _Recurrence:
    """Cost-to-go ``C(a, q, g)``: cheapest completion when stopping at
    augmented node ``a`` with fuel ``g`` and at most ``q`` stops left
    (this one included).

    At a stop the vehicle may charge, then either drives to the
    destination, or to a next stop ``b``.  If ``b`` is no dearer it buys
    just enough to reach ``b``; if ``b`` is dearer it fills the tank.  A
    tank already holding more than needed buys nothing and keeps the rest.
    """

    def __init__(self, ctx: _DPContext):
        self.ctx = ctx
        net = ctx.network
        n = ctx.n
        n_road = ctx.graph.s
        dest_idx = net.node_ids.index(net.dest)
        self.levels = ctx.grid.levels
        self.g_cap = net.g_cap
        self.stop_ok = np.array([a // n != dest_idx for a in range(n_road)])
        self.price = np.array([ctx.station(a).g for a in range(n_road)])
        self.node_of = np.arange(n_road) // n
        self.D = ctx.dist[:, :n_road]
        self.to_t = ctx.dist[:, ctx.graph.t]
        self.memo: dict = {}
        self._c0: dict = {}
        self._fill: dict = {}

    def c0(self, q) -> np.ndarray:
        if q not in self._c0:
            self._c0[q] = np.array([
                self(b, q, 0.0)[0] if self.stop_ok[b] else math.inf
                for b in range(len(self.stop_ok))
            ])
        return self._c0[q]

    def fill_best(self, ap, q):
        key = (ap, q)
        if key not in self._fill:
            row = self.D[ap]
            ok = (self.stop_ok & (self.price > self.price[ap])
                  & (self.node_of != self.node_of[ap]) & (row <= self.g_cap))
            best = (math.inf, None)
            for b in np.flatnonzero(ok):
                val = self(int(b), q, float(self.g_cap - row[b]))[0]
                if val < best[0]:
                    best = (val, int(b))
            self._fill[key] = best
        return self._fill[key]

    def __call__(self, a: int, q: int, g: float):
        key = (a, q, g)
        if key in self.memo:
            return self.memo[key]
        ctx, g_cap, levels = self.ctx, self.g_cap, self.levels
        st = ctx.station(a)
        n = ctx.n
        best = (math.inf, None)
        for ap in _charge_options(ctx, a):
            charge = st.h * (levels[ap % n] - levels[a % n])
            w = self.to_t[ap]
            if w <= g_cap:
                val = max(w - g, 0.0) * st.g + charge
                if val < best[0]:
                    best = (val, ("end", ap, None))
            if q < 2:
                continue
            row = self.D[ap]
            cand = self.stop_ok & (self.node_of != self.node_of[ap]) & (row <= g_cap)
            cheap = cand & (self.price <= st.g)
            short = cheap & (row >= g)
            if short.any():
                vals = np.where(short, self.c0(q - 1) + (row - g) * st.g, math.inf)
                b = int(np.argmin(vals))
                if vals[b] + charge < best[0]:
                    best = (float(vals[b] + charge), ("just", ap, b))
            for b in np.flatnonzero(cheap & (row < g)):
                val = self(int(b), q - 1, float(g - row[b]))[0] + charge
                if val < best[0]:
                    best = (val, ("just", ap, int(b)))
            fv, fb = self.fill_best(ap, q - 1)
            if fb is not None:
                val = fv + (g_cap - g) * st.g + charge
                if val < best[0]:
                    best = (val, ("fill", ap, fb))
        self.memo[key] = best
        return best


def solve_ppdm_dp(
    network: RoadNetwork,
    grid: Optional[SocGrid] = None,
    tables: Optional[Sequence[EdgeCostTable]] = None,
) -> TripPlan:
    """Cheapest plan with at most ``network.stop_budget`` stops.

    Stops follow the fill-up or buy-just-enough rule; charging happens only
    at stops unless every charge price is zero.  Raises ``Infeasible`` when
    no plan exists.
    """
    grid = grid or node_grid(network)
    tables = list(tables) if tables is not None else network_cost_tables(network, grid)
    if network.source == network.dest:
        return TripPlan((network.source,), (), (), 0.0, network.g0, network.g_cap)
    ctx = _prepare(network, grid, tables)
    rec = _Recurrence(ctx)
    g0 = network.g0
    t = ctx.graph.t

    best = (math.inf, None)
    start_rows = [ctx.graph.node(network.source, j) for j in ctx.graph.start_levels()]
    if min(float(ctx.dist[r, t]) for r in start_rows) <= g0:
        # the initial fuel reaches the destination without stopping
        best = (0.0, None)
    for a in range(ctx.graph.s):
        ws = ctx.start_dist[a]
        if not (ws <= g0 and rec.stop_ok[a]):
            continue
        val = rec(a, network.stop_budget, float(g0 - ws))[0]
        if val < best[0]:
            best = (val, a)
    if not math.isfinite(best[0]):
        raise Infeasible("no route satisfies the fuel, SoC and stop constraints")
    return _reconstruct(ctx, rec, best)


def _reconstruct(ctx: _DPContext, rec: _Recurrence, best) -> TripPlan:
    net, n, levels = ctx.network, ctx.n, ctx.grid.levels
    g_cap, t = net.g_cap, ctx.graph.t
    cost, a = best
    stops = []
    if a is None:
        rows = [ctx.graph.node(net.source, j) for j in ctx.graph.start_levels()]
        r = min(rows, key=lambda r: ctx.dist[r, t])
        path = _path_from_predecessors(ctx.pred[r], r, t)
    else:
        r = int(ctx.start_row[a])
        path = _path_from_predecessors(ctx.pred[r], r, a)
        g = float(net.g0 - ctx.start_dist[a])
        q = net.stop_budget
        while True:
            kind, ap, b = rec(a, q, g)[1]
            st = ctx.station(a)
            w = float(rec.to_t[ap]) if kind == "end" else float(ctx.dist[ap, b])
            refill = g_cap - g if kind == "fill" else max(w - g, 0.0)
            charge_cost = st.h * (levels[ap % n] - levels[a % n])
            stops.append(PlanStop(st.id, float(levels[a % n]), float(levels[ap % n]), g,
                                  float(refill), float(refill * st.g + charge_cost)))
            # keep the post-charge node when the stop charged
            seg = _path_from_predecessors(ctx.pred[ap], ap, t if kind == "end" else b)
            path += seg[1:] if ap == path[-1] else seg
            if kind == "end":
                break
            g = float(g_cap - w) if kind == "fill" else float(max(g - w, 0.0))
            a, q = b, q - 1
    legs = _legs_along(ctx.graph, ctx.tables, path)
    return TripPlan(_plan_nodes(net, legs), tuple(legs), tuple(stops), float(cost),
                    net.g0, g_cap)


# ------------------------------------------------------------ brute force


def brute_force_ppdm(
    network: RoadNetwork,
    grid: SocGrid,
    tables: Optional[Sequence[EdgeCostTable]] = None,
) -> float:
    """Exhaustive minimum over simple paths, stop sets and SoC levels.

    For every simple path, every set of at most ``stop_budget`` stops and
    every choice of arrival and post-charge SoC level at each stop, the fuel
    between consecutive stops is the cheapest drive along that path, and
    purchases are simulated forward with the fill-up or arrive-empty rule.
    Returns the optimal cost; raises ``Infeasible``.
    """
    if grid.n > BRUTE_MAX_LEVELS:
        raise InstanceTooLarge(f"at most {BRUTE_MAX_LEVELS} SoC levels, got {grid.n}")
    if network.stop_budget > BRUTE_MAX_STOPS:
        raise InstanceTooLarge(f"at most {BRUTE_MAX_STOPS} stops, got {network.stop_budget}")
    paths = network.simple_paths(limit=BRUTE_MAX_PATHS)
    if len(paths) > BRUTE_MAX_PATHS:
        raise InstanceTooLarge(f"more than {BRUTE_MAX_PATHS} simple paths")
    if network.source == network.dest:
        return 0.0
    tables = tables if tables is not None else network_cost_tables(network, grid)
    levels = grid.levels
    free = network.free_charging
    g_cap, g0 = network.g_cap, network.g0
    j0 = grid.floor(network.b0)
    src = network.stations[network.source]
    starts = range(j0, _top(grid, j0, src.E) + 1) if free else (j0,)
    best = math.inf

    for path in paths:
        nodes = [network.edges[path[0]].src] + [network.edges[k].dst for k in path]
        stations = [network.stations[v] for v in nodes]
        m = len(path)
        seg = _path_segments(network, path, stations, tables, grid)
        for jst in starts:
            if seg[0, jst, m].min() <= g0:
                best = min(best, 0.0)
        for r in range(1, min(network.stop_budget, m) + 1):
            for stop_set in itertools.combinations(range(m), r):
                for cost in _stop_plans(stop_set, stations, seg, starts, grid, free, g0, g_cap):
                    best = min(best, cost)
    if not math.isfinite(best):
        raise Infeasible("no feasible plan")
    return best


def _path_segments(network, path, stations, tables, grid) -> np.ndarray:
    """``seg[i, j, k][jj]``: least fuel from node ``i`` of the path, leaving
    at level ``j``, to node ``k`` arriving at level ``jj``.

    No intermediate edge may need more than a full tank.  With free charging
    the vehicle tops up at every node it passes, including on arrival at
    ``k``.
    """
    m, n = len(path), grid.n
    free = network.free_charging
    seg = np.full((m + 1, n, m + 1, n), math.inf)
    for i in range(m + 1):
        for j in range(n):
            cur = np.full(n, math.inf)
            cur[j] = 0.0
            seg[i, j, i] = cur
            for k in range(i, m):
                z = tables[path[k]].z
                z = np.where(z <= network.g_cap, z, math.inf)
                arrive = np.min(cur[:, None] + z, axis=0)
                if free:
                    arrive = _charge_min(arrive, stations[k + 1].E, grid)
                seg[i, j, k + 1] = arrive
                cur = arrive
    return seg


def _charge_min(cost: np.ndarray, cap: float, grid: SocGrid) -> np.ndarray:
    out = cost.copy()
    for j in range(grid.n):
        if math.isfinite(cost[j]):
            for jj in range(j, _top(grid, j, cap) + 1):
                out[jj] = min(out[jj], cost[j])
    return out


def _stop_plans(stop_set, stations, seg, starts, grid, free, g0, g_cap):
    """Yield the cost of every level assignment for a fixed stop set."""
    m = seg.shape[0] - 1
    levels = grid.levels

    def options(i, j):
        st = stations[i]
        if free or st.E <= 0:
            return [(j, 0.0)]
        return [(jj, st.h * (levels[jj] - levels[j])) for jj in range(j, _top(grid, j, st.E) + 1)]

    def rec(idx, node, j_out, dists, charge):
        nxt = stop_set[idx] if idx < len(stop_set) else None
        if nxt is None:
            w = seg[node, j_out, m].min()
            yield dists + [w], charge
            return
        row = seg[node, j_out, nxt]
        for ja in np.flatnonzero(np.isfinite(row)):
            for jo, extra in options(nxt, int(ja)):
                yield from rec(idx + 1, nxt, jo, dists + [float(row[ja])], charge + extra)

    for jst in starts:
        for dists, charge in rec(0, 0, jst, [], 0.0):
            cost = _refill_rule_purchase(stop_set, stations, dists, g0, g_cap)
            if math.isfinite(cost):
                yield cost + charge


def _refill_rule_purchase(stop_set, stations, dists, g0, g_cap) -> float:
    """Fuel cost of a stop sequence: fill the tank before a dearer stop,
    otherwise buy just enough (nothing if the tank already suffices).

    ``dists[0]`` is the drive from the start to the first stop and
    ``dists[i]`` the drive leaving stop ``i - 1``.
    """
    g = g0 - dists[0]
    if g < 0:
        return math.inf
    total = 0.0
    for i, cur in enumerate(stop_set):
        w = dists[i + 1]
        if w > g_cap:
            return math.inf
        price = stations[cur].g
        nxt = stop_set[i + 1] if i + 1 < len(stop_set) else None
        if nxt is None or stations[nxt].g <= price:
            total += max(w - g, 0.0) * price
            g = max(g - w, 0.0)
        else:
            total += (g_cap - g) * price
            g = g_cap - w
    return total


def path_dp_fuel(network: RoadNetwork, path: list, tables, grid: SocGrid) -> float:
    """Least fuel burned along one fixed path with free charging at every
    node and each leg within the tank capacity."""
    levels_n = grid.n
    cost = np.full(levels_n, math.inf)
    j0 = grid.floor(network.b0)
    cost[j0] = 0.0
    nodes = [network.edges[path[0]].src] + [network.edges[k].dst for k in path] if path else [network.source]
    for i, k in enumerate(path):
        cap = network.stations[nodes[i]].E
        charged = np.full(levels_n, math.inf)
        for j in range(levels_n):
            if math.isfinite(cost[j]):
                for jj in range(j, _top(grid, j, cap) + 1):
                    charged[jj] = min(charged[jj], cost[j])
        z = np.where(tables[k].z <= network.g_cap, tables[k].z, math.inf)
        cost = np.min(charged[:, None] + z, axis=0)
    return float(cost.min())


# ------------------------------------------------------------------ cPPDM


def _reachable(network) -> bool:
    seen, stack = {network.source}, [network.source]
    while stack:
        u = stack.pop()
        for e in network.edges:
            if e.src == u and e.dst not in seen:
                seen.add(e.dst)
                stack.append(e.dst)
    return network.dest in seen


def build_cppdm(network: RoadNetwork) -> ConvexProgram:
    """Relaxation of the joint route, stop and drive-mode problem.

    Every per-slot quantity of an edge is weighted by the edge's route
    indicator ``y`` (so an unused edge carries zeros).  Node balances allow
    dropping surplus SoC or fuel, refills and charges need a fractional stop
    indicator, and fuel burned uses the convex envelope of the fuel curve.
    """
    ids = network.node_ids
    edges = network.edges
    names: list = []
    index: dict = {}

    def var(key):
        index[key] = len(names)
        names.append(key)
        return index[key]

    for k, e in enumerate(edges):
        var(("y", k))
        var(("B0", k))
        var(("G0", k))
        for t in range(e.instance.horizon):
            for blk in ("x_ev", "x_ce", "x_cs", "x_ap", "r", "s", "u", "q", "w", "phi", "b", "G"):
                var((blk, k, t))
    for v in ids:
        if v != network.dest:
            var(("stop", v))
            var(("refill", v))
            var(("charge", v))

    n = len(names)
    c = np.zeros(n)
    p = np.zeros(n)
    lb = np.zeros(n)
    ub = np.zeros(n)
    eq, le = LinearRows(), LinearRows()
    epis = []
    g_cap, b_lo, b_hi = network.g_cap, network.b_lo, network.b_hi
    q_ub_all = 0.0

    for k, e in enumerate(edges):
        inst = e.instance
        y = index[("y", k)]
        ub[y] = 1.0
        ub[index[("B0", k)]] = b_hi
        ub[index[("G0", k)]] = g_cap
        le.add({index[("B0", k)]: 1.0, y: -b_hi}, 0.0)
        le.add({index[("B0", k)]: -1.0, y: b_lo}, 0.0)
        le.add({index[("G0", k)]: 1.0, y: -g_cap}, 0.0)
        curve = inst.curve
        qs = curve.tangent_point
        for t in range(inst.horizon):
            ix = {blk: index[(blk, k, t)] for blk in
                  ("x_ev", "x_ce", "x_cs", "x_ap", "r", "s", "u", "q", "w", "phi", "b", "G")}
            pp, pm = float(inst.p_plus[t]), float(inst.p_minus[t])
            cap, beta = float(inst.charge_cap[t]), float(inst.beta[t])
            qmax = pp + cap
            q_ub_all = max(q_ub_all, qmax)
            for mode_key, flag in (("x_ev", inst.modes.ev), ("x_ce", inst.modes.ce),
                                   ("x_cs", inst.modes.cs), ("x_ap", inst.modes.ap)):
                ub[ix[mode_key]] = 1.0 if flag else 0.0
            ub[ix["r"]], ub[ix["s"]], ub[ix["u"]], ub[ix["q"]] = pm, pp, cap, qmax
            ub[ix["b"]] = b_hi
            ub[ix["G"]] = g_cap
            eq.add({ix["x_ev"]: 1.0, ix["x_ce"]: 1.0, ix["x_cs"]: 1.0, ix["x_ap"]: 1.0, y: -1.0}, 0.0)
            eq.add({ix["q"]: 1.0, ix["s"]: 1.0, ix["u"]: -1.0, y: -pp}, 0.0)
            le.add({ix["r"]: 1.0, y: -pm}, 0.0)
            le.add({ix["x_ev"]: pp, ix["s"]: -1.0}, 0.0)
            le.add({ix["s"]: 1.0, ix["x_ev"]: -pp, ix["x_ap"]: -beta * pp}, 0.0)
            le.add({ix["u"]: 1.0, ix["x_cs"]: -cap}, 0.0)
            prev_b = index[("B0", k)] if t == 0 else index[("b", k, t - 1)]
            eq.add({ix["b"]: 1.0, prev_b: -1.0, ix["r"]: -float(inst.eta_r[t]),
                    ix["u"]: -float(inst.eta_e[t]), ix["s"]: float(inst.eta_d[t])}, 0.0)
            le.add({ix["b"]: 1.0, y: -b_hi}, 0.0)
            le.add({ix["b"]: -1.0, y: b_lo}, 0.0)
            # fuel: phi >= envelope(q); G_t <= G_{t-1} - phi
            ub[ix["phi"]] = float(curve.envelope(qmax))
            if math.isfinite(qs) and curve.gamma2 > 0:
                ub[ix["w"]] = qmax
                le.add({ix["q"]: 1.0, ix["w"]: -1.0}, qs)
                epis.append(Epigraph(ix["phi"], ix["w"], curve.gamma2,
                                     np.array([ix["q"]]), np.array([curve.min_per_unit])))
            else:
                le.add({ix["q"]: curve.min_per_unit, ix["phi"]: -1.0}, 0.0)
            prev_g = index[("G0", k)] if t == 0 else index[("G", k, t - 1)]
            le.add({ix["G"]: 1.0, prev_g: -1.0, ix["phi"]: 1.0}, 0.0)

    # flow conservation and node balances
    free = network.free_charging
    for v in ids:
        out_k = [k for k, e in enumerate(edges) if e.src == v]
        in_k = [k for k, e in enumerate(edges) if e.dst == v]
        rhs = (1.0 if v == network.source else 0.0) - (1.0 if v == network.dest else 0.0)
        flow = {index[("y", k)]: 1.0 for k in out_k}
        for k in in_k:
            flow[index[("y", k)]] = flow.get(index[("y", k)], 0.0) - 1.0
        eq.add(flow, rhs)
        if v == network.dest:
            continue
        st = network.stations[v]
        stop, refill, charge = index[("stop", v)], index[("refill", v)], index[("charge", v)]
        ub[stop], ub[refill], ub[charge] = 1.0, g_cap, st.E
        c[refill], c[charge] = st.g, st.h
        le.add({stop: 1.0, **{index[("y", k)]: -1.0 for k in out_k}}, 0.0)
        le.add({refill: 1.0, stop: -g_cap}, 0.0)
        if not free:
            le.add({charge: 1.0, stop: -st.E}, 0.0)
        else:
            le.add({charge: 1.0, **{index[("y", k)]: -st.E for k in out_k}}, 0.0)
        last = {k: edges[k].instance.horizon - 1 for k in in_k}
        soc_row = {index[("B0", k)]: 1.0 for k in out_k}
        soc_row[charge] = -1.0
        fuel_row = {index[("G0", k)]: 1.0 for k in out_k}
        fuel_row[refill] = -1.0
        for k in in_k:
            soc_row[index[("b", k, last[k])]] = -1.0
            fuel_row[index[("G", k, last[k])]] = -1.0
        init = v == network.source
        le.add(soc_row, network.b0 if init else 0.0)
        le.add(fuel_row, network.g0 if init else 0.0)
    stops = [index[("stop", v)] for v in ids if v != network.dest]
    if stops:
        le.add({s: 1.0 for s in stops}, float(network.stop_budget))

    a_eq, b_eq = eq.build(n)
    a_ub, b_ub = le.build(n)
    layout = {"names": names, "index": index}
    return ConvexProgram(c, p, a_eq, b_eq, a_ub, b_ub, lb, ub, epigraphs=epis, layout=layout)


def _round_route(network: RoadNetwork, y: np.ndarray) -> list:
    ids = network.node_ids
    pos = {v: i for i, v in enumerate(ids)}
    weights = np.clip(1.0 - y, _EPS_Y, 1.0)
    best: dict = {}
    for k, e in enumerate(network.edges):
        key = (pos[e.src], pos[e.dst])
        if key not in best or weights[k] < weights[best[key]]:
            best[key] = k
    rows = [a for a, _ in best]
    cols = [b for _, b in best]
    mat = sp.csr_matrix((weights[list(best.values())], (rows, cols)), shape=(len(ids),) * 2)
    _, pred = dijkstra(mat, directed=True, indices=pos[network.source], return_predecessors=True)
    nodes = _path_from_predecessors(pred, pos[network.source], pos[network.dest])
    return [best[(a, b)] for a, b in zip(nodes, nodes[1:])]


def solve_cppdm(network: RoadNetwork, **tolerances):
    """Relax, bound and round.

    Returns ``(lower_bound, plan)``.  The route follows the edges the
    relaxation loads most; each leg is then scheduled by the trip-level
    relaxation and fuel is bought greedily (cheapest station within reach).
    """
    if network.source == network.dest:
        plan = TripPlan((network.source,), (), (), 0.0, network.g0, network.g_cap, 0.0)
        return 0.0, plan
    if not _reachable(network):
        raise Infeasible("destination unreachable from the source")
    program = build_cppdm(network)
    try:
        frac = solve_convex(program, **tolerances)
    except ConvexInfeasible as exc:
        raise Infeasible(str(exc)) from exc
    index = program.layout["index"]
    y = np.array([frac.x[index[("y", k)]] for k in range(len(network.edges))])
    route = _round_route(network, y)
    bound = max(frac.lower_bound, 0.0)
    plan = _price_route(network, route, frac.x, index)
    return bound, TripPlan(plan.nodes, plan.legs, plan.stops, plan.cost, plan.g0,
                           plan.g_cap, bound)


def _price_route(network, route, x, index) -> TripPlan:
    """Schedule each leg by the trip relaxation and buy fuel greedily."""
    free = network.free_charging
    soc = network.b0
    legs, charges = [], []
    for k in route:
        e = network.edges[k]
        st = network.stations[e.src]
        out_y = sum(x[index[("y", kk)]] for kk, ee in enumerate(network.edges) if ee.src == e.src)
        want = x[index[("charge", e.src)]] / max(out_y, _EPS_Y)
        charge = float(np.clip(want, 0.0, min(st.E, network.b_hi - soc)))
        if charge < 1e-9:
            charge = 0.0
        charges.append(charge)
        inst = _edge_instance(e, soc + charge)
        try:
            _, sched = solve_cdmop(inst)
        except Exception:
            sched = solve_dmop_dp(inst)
        legs.append(PlanLeg(k, e.src, e.dst, soc + charge, sched.final_soc,
                            sched.total_fuel, sched))
        soc = sched.final_soc
    fuel = [leg.fuel_budget for leg in legs]
    nodes = [network.stations[network.edges[k].src] for k in route]
    forced = [c > 0 and not free for c in charges]
    buys = _greedy_purchases(nodes, fuel, network.g0, network.g_cap, forced)
    if buys is None:
        raise Infeasible("rounded route cannot be refuelled within the tank capacity")
    stops = []
    g = network.g0
    for i, (st, buy) in enumerate(zip(nodes, buys)):
        if buy > 0 or forced[i] or (free and charges[i] > 0):
            c = buy * st.g + (0.0 if free else st.h * charges[i])
            stops.append(PlanStop(st.id, legs[i].start_soc - charges[i], legs[i].start_soc,
                                  float(g), float(buy), float(c)))
        g = g + buy - fuel[i]
    counted = [s for i, s in enumerate(stops) if s.refill > 0 or not free]
    if len(counted) > network.stop_budget:
        raise Infeasible("rounded route needs more stops than allowed")
    cost = float(sum(s.cost for s in stops))
    return TripPlan(_plan_nodes(network, legs), tuple(legs), tuple(stops), cost,
                    network.g0, network.g_cap)


def _greedy_purchases(stations, fuel, g0, g_cap, forced):
    """Classic refuelling greedy on a fixed route.

    At each node: if a cheaper node lies within one tank, buy just enough to
    reach it; otherwise fill up, but only buy when the next leg needs it or
    the node is already a stop.
    """
    m = len(fuel)
    cum = np.concatenate([[0.0], np.cumsum(fuel)])
    g = g0
    buys = []
    for i in range(m):
        if fuel[i] > g_cap + 1e-12:
            return None
        target = None
        for j in range(i + 1, m + 1):
            if cum[j] - cum[i] > g_cap + 1e-12:
                break
            if j == m or stations[j].g < stations[i].g:
                target = j
                break
        if target is not None:
            buy = max(0.0, cum[target] - cum[i] - g)
        elif g < fuel[i] or forced[i]:
            buy = g_cap - g
        else:
            buy = 0.0
        buys.append(buy)
        g += buy - fuel[i]
        if g < -1e-9:
            return None
    return buys


__all__ = [
    "AugmentedGraph",
    "Edge",
    "EdgeCostTable",
    "InstanceTooLarge",
    "PlanLeg",
    "PlanStop",
    "RoadNetwork",
    "Station",
    "TripPlan",
    "brute_force_ppdm",
    "build_augmented_graph",
    "build_cppdm",
    "edge_cost_table",
    "gas_levels",
    "network_cost_tables",
    "node_grid",
    "path_dp_fuel",
    "solve_cppdm",
    "solve_ppdm_dp",
    "solve_uppdm",
]
