"""Marker lattice over the aerial view and objective-conditioned waypoint plans.

Edge cost is ``length * (1 + w * tau(worst label on the edge))`` where ``w`` is
the objective's hazard weight (zero for ``min_length``). Each edge stores the
set of labels its straight segment crosses; the worst one is resolved
against whichever traversability table is current.
"""

from __future__ import annotations

import heapq
import logging
import math
from collections import deque
from dataclasses import dataclass, field, replace
from typing import TYPE_CHECKING, Literal, Sequence

import numpy as np

from .world import NavigationObjective, WorldGrid

if TYPE_CHECKING:
    from PIL import Image

    from .backends import VlmBackend
    from .reasoning import TraversabilityTable

log = logging.getLogger(__name__)


class GraphConstructionError(ValueError):
    pass


@dataclass(frozen=True)
class Edge:
    length: float
    labels: tuple[str, ...]  # in class declaration order


@dataclass
class WaypointGraph:
    markers: dict[int, tuple[float, float]]
    edges: dict[int, dict[int, Edge]]
    spacing: float
    start_id: int
    goal_id: int
    class_order: tuple[str, ...] = ()
    margin: float = 0.0
    clearance: np.ndarray | None = field(default=None, repr=False)

    def neighbors(self, mid: int) -> list[int]:
        return sorted(self.edges.get(mid, {}))

    def adjacent(self, a: int, b: int) -> bool:
        return b in self.edges.get(a, {})

    def worst_label(self, a: int, b: int, table: "TraversabilityTable") -> str:
        labels = self.edges[a][b].labels
        return max(labels, key=lambda lab: (table[lab], -self.class_order.index(lab)))

    def edge_cost(self, a: int, b: int, table: "TraversabilityTable", weight: float) -> float:
        e = self.edges[a][b]
        if weight == 0.0:
            return e.length
        return e.length * (1.0 + weight * table[self.worst_label(a, b, table)])

    def connected(self, a: int, b: int) -> bool:
        seen = {a}
        todo = deque([a])
        while todo:
            n = todo.popleft()
            if n == b:
                return True
            for m in self.edges.get(n, {}):
                if m not in seen:
                    seen.add(m)
                    todo.append(m)
        return False


def _segment_labels(
    grid: WorldGrid,
    p: tuple[float, float],
    q: tuple[float, float],
    clearance: np.ndarray | None = None,
    margin: float = 0.0,
) -> tuple[str, ...] | None:
    """Labels crossed by segment p-q sampled every resolution/2; None if it hits an obstacle."""
    length = math.dist(p, q)
    n = max(int(math.ceil(length / (grid.resolution / 2.0))), 1)
    s = np.linspace(0.0, 1.0, n + 1)
    xs = p[0] + s * (q[0] - p[0])
    ys = p[1] + s * (q[1] - p[1])
    rows, cols, inside = grid.cell_indices(xs, ys)
    if not inside.all() or grid.obstacles[rows, cols].any():
        return None
    if clearance is not None and (clearance[rows, cols] < margin).any():
        return None
    present = np.unique(grid.cells[rows, cols])
    return tuple(grid.classes[i].label for i in sorted(present.tolist()))


def _lattice(extent: float, spacing: float) -> list[float]:
    n = int(math.floor(extent / spacing + 1e-9))
    return [i * spacing for i in range(n + 1)]


def _connect(graph: WaypointGraph, grid: WorldGrid, a: int, b: int) -> None:
    pa, pb = graph.markers[a], graph.markers[b]
    labels = _segment_labels(grid, pa, pb, graph.clearance, graph.margin)
    if labels is None:
        return
    e = Edge(math.dist(pa, pb), labels)
    graph.edges.setdefault(a, {})[b] = e
    graph.edges.setdefault(b, {})[a] = e


def _attach(graph: WaypointGraph, grid: WorldGrid, mid: int, reach: float) -> None:
    p = graph.markers[mid]
    for other, q in graph.markers.items():
        if other != mid and math.dist(p, q) <= reach + 1e-9:
            _connect(graph, grid, mid, other)


def build_waypoint_graph(
    grid: WorldGrid,
    spacing: float,
    start: tuple[float, float],
    goal: tuple[float, float],
    margin: float = 0.0,
) -> WaypointGraph:
    """Uniform marker lattice with 8-neighbour edges, plus start and goal markers.

    Lattice ids run 1..N row by row from the south-west corner; start is
    N+1 and goal N+2. Start and goal connect to every marker within
    ``spacing * sqrt(2)`` that they can see. With ``margin > 0`` lattice
    markers and edges closer than that to an obstacle or the map border
    are dropped.
    """
    if spacing < 2 * grid.resolution:
        raise ValueError("spacing must be >= 2 * resolution")
    clearance = None
    if margin > 0:
        from .local_planner import ClearanceMap

        clearance = ClearanceMap(grid).field
    w, h = grid.size_m
    xs, ys = _lattice(w, spacing), _lattice(h, spacing)
    markers: dict[int, tuple[float, float]] = {}
    index: dict[tuple[int, int], int] = {}
    next_id = 1
    for j, y in enumerate(ys):
        for i, x in enumerate(xs):
            if grid.is_obstacle(x, y):
                continue
            if clearance is not None and clearance[grid.cell_of(x, y)] < margin:
                continue
            markers[next_id] = (x, y)
            index[(i, j)] = next_id
            next_id += 1
    graph = WaypointGraph(
        markers=markers,
        edges={},
        spacing=spacing,
        start_id=next_id,
        goal_id=next_id + 1,
        class_order=tuple(grid.labels),
        margin=margin,
        clearance=clearance,
    )
    for (i, j), mid in index.items():
        for di, dj in ((1, 0), (0, 1), (1, 1), (-1, 1)):
            other = index.get((i + di, j + dj))
            if other is not None:
                _connect(graph, grid, mid, other)
    graph.markers[graph.start_id] = (float(start[0]), float(start[1]))
    graph.markers[graph.goal_id] = (float(goal[0]), float(goal[1]))
    reach = spacing * math.sqrt(2.0)
    _attach(graph, grid, graph.start_id, reach)
    _attach(graph, grid, graph.goal_id, reach)
    if not graph.connected(graph.start_id, graph.goal_id):
        raise GraphConstructionError("no obstacle-free marker path between start and goal")
    return graph


def reanchor_start(graph: WaypointGraph, grid: WorldGrid, position: tuple[float, float]) -> WaypointGraph:
    """Copy of the graph with the start marker moved to ``position`` and reconnected."""
    sid = graph.start_id
    edges = {a: {b: e for b, e in nbrs.items() if b != sid} for a, nbrs in graph.edges.items() if a != sid}
    markers = dict(graph.markers)
    markers[sid] = (float(position[0]), float(position[1]))
    g = replace(graph, markers=markers, edges=edges)
    reach = graph.spacing * math.sqrt(2.0)
    _attach(g, grid, sid, reach)
    if not g.edges.get(sid):
        _attach(g, grid, sid, 2 * reach)
    return g


def dijkstra_plan(
    graph: WaypointGraph,
    table: "TraversabilityTable",
    weight: float,
    start_id: int,
    goal_id: int,
) -> list[int] | None:
    """Cheapest marker path; equal costs resolve to the lexicographically smaller id sequence."""
    heap: list[tuple[float, tuple[int, ...]]] = [(0.0, (start_id,))]
    done: set[int] = set()
    while heap:
        cost, path = heapq.heappop(heap)
        node = path[-1]
        if node in done:
            continue
        done.add(node)
        if node == goal_id:
            return list(path)
        for nxt in graph.neighbors(node):
            if nxt not in done:
                heapq.heappush(heap, (cost + graph.edge_cost(node, nxt, table, weight), path + (nxt,)))
    return None


def plan_cost(graph: WaypointGraph, ids: Sequence[int], table: "TraversabilityTable", weight: float) -> float:
    cost = 0.0
    for a, b in zip(ids, ids[1:]):
        cost = cost + graph.edge_cost(a, b, table, weight)
    return cost


def plan_length(graph: WaypointGraph, ids: Sequence[int]) -> float:
    return sum(math.dist(graph.markers[a], graph.markers[b]) for a, b in zip(ids, ids[1:]))


@dataclass
class MarkedAerialImage:
    grid: WorldGrid
    graph: WaypointGraph
    table: "TraversabilityTable"
    start_id: int
    goal_id: int

    def marker_ids(self) -> list[int]:
        return sorted(self.graph.markers)

    def raster(self) -> "Image.Image":
        from .render import render_marked

        return render_marked(self.grid, self.graph, self.start_id, self.goal_id)


def mark_aerial(grid: WorldGrid, graph: WaypointGraph, table: "TraversabilityTable") -> MarkedAerialImage:
    return MarkedAerialImage(grid, graph, table.copy(), graph.start_id, graph.goal_id)


@dataclass
class WaypointPlan:
    ids: list[int]
    cursor: int = 0
    valid: bool = True
    source: Literal["mock", "remote", "fallback", "straight"] = "mock"
    violations: list[str] = field(default_factory=list)

    def remaining_edges(self) -> list[tuple[int, int]]:
        k = max(self.cursor - 1, 0)
        return list(zip(self.ids[k:], self.ids[k + 1 :]))

    @property
    def finished(self) -> bool:
        return self.cursor >= len(self.ids)


def validate_plan(
    ids: Sequence[int],
    graph: WaypointGraph,
    start: tuple[float, float],
    goal: tuple[float, float],
) -> list[str]:
    """Empty list means the id sequence is an acceptable plan."""
    if isinstance(ids, WaypointPlan):
        ids = ids.ids
    ids = list(ids)
    if not ids:
        return ["empty plan"]
    out = []
    unknown = [i for i in ids if i not in graph.markers]
    if unknown:
        out.append(f"unknown marker ids {unknown}")
    if len(set(ids)) != len(ids):
        out.append("repeated marker id")
    for a, b in zip(ids, ids[1:]):
        if a in graph.markers and b in graph.markers and not graph.adjacent(a, b):
            out.append(f"non-adjacent step {a}->{b}")
    if ids[0] in graph.markers and math.dist(graph.markers[ids[0]], start) > graph.spacing + 1e-9:
        out.append("start endpoint too far from robot")
    if ids[-1] in graph.markers and math.dist(graph.markers[ids[-1]], goal) > graph.spacing + 1e-9:
        out.append("endpoint too far from goal")
    return out


def plan_global(
    backend: "VlmBackend",
    marked: MarkedAerialImage,
    objective: NavigationObjective,
    table: "TraversabilityTable",
    start: tuple[float, float],
    goal: tuple[float, float],
    retries: int = 2,
) -> WaypointPlan:
    graph = marked.graph
    attempts = 1 + (retries if backend.kind == "remote" else 0)
    for attempt in range(attempts):
        try:
            ids = backend.select_waypoints(marked, objective, table)
        except Exception as exc:  # noqa: BLE001
            log.warning("waypoint selection failed: %s", exc)
            ids = None
        if ids is None:
            continue
        problems = validate_plan(ids, graph, start, goal)
        if not problems:
            return WaypointPlan(list(ids), source=backend.kind)
        log.warning("rejected plan (attempt %d): %s", attempt + 1, problems)
    ids = dijkstra_plan(graph, table, objective.effective_weight, marked.start_id, marked.goal_id)
    if ids is None:
        raise GraphConstructionError("graph is disconnected")
    return WaypointPlan(ids, source="fallback")


def should_replan(
    table_prev: "TraversabilityTable",
    table_now: "TraversabilityTable",
    plan: WaypointPlan,
    graph: WaypointGraph,
    threshold: float = 0.2,
) -> bool:
    changed = {lab for lab in table_now.values if abs(table_now[lab] - table_prev[lab]) > threshold}
    if not changed:
        return False
    for a, b in plan.remaining_edges():
        if graph.worst_label(a, b, table_prev) in changed or graph.worst_label(a, b, table_now) in changed:
            return True
    return False
