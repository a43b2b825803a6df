"""Max flow / min cut with per-edge flow lower bounds.

Capacities are integers (millijoules). Unbounded edges are stored with
``upper=None`` and replaced at solve time by a per-graph sentinel equal to
the sum of all finite bounds plus one, so any cut crossing an unbounded edge
forward costs more than every cut that does not.
"""

from __future__ import annotations

from collections import deque
from dataclasses import dataclass, field
from typing import Dict, FrozenSet, List, Mapping, Optional, Sequence, Tuple

from .costmodel import DurationDomain
from .dag import EdgeDag


@dataclass(frozen=True)
class FlowEdge:
    tail: int
    head: int
    lower: int
    upper: Optional[int]  # None = unbounded

    @property
    def bounded(self) -> bool:
        return self.upper is not None


class FlowGraph:
    def __init__(self, num_nodes: int, source: int, sink: int):
        if not (0 <= source < num_nodes and 0 <= sink < num_nodes) or source == sink:
            raise ValueError("source and sink must be distinct nodes of the graph")
        self.num_nodes = num_nodes
        self.source = source
        self.sink = sink
        self.edges: List[FlowEdge] = []

    def add_edge(self, tail: int, head: int, lower: int = 0, upper: Optional[int] = None) -> int:
        if not (0 <= tail < self.num_nodes and 0 <= head < self.num_nodes):
            raise ValueError(f"edge ({tail}, {head}) outside graph")
        if lower < 0:
            raise ValueError(f"negative lower bound on ({tail}, {head})")
        if upper is not None and upper < lower:
            raise ValueError(f"lower bound {lower} exceeds upper bound {upper} on ({tail}, {head})")
        self.edges.append(FlowEdge(tail, head, int(lower), None if upper is None else int(upper)))
        return len(self.edges) - 1

    @property
    def infinity(self) -> int:
        return sum(e.lower + (e.upper or 0) for e in self.edges) + 1

    def upper(self, i: int) -> int:
        e = self.edges[i]
        return self.infinity if e.upper is None else e.upper

    def to_dot(self) -> str:
        lines = [f"digraph flow {{  // source={self.source} sink={self.sink}"]
        for i, e in enumerate(self.edges):
            up = "inf" if e.upper is None else str(e.upper)
            lines.append(f'  {e.tail} -> {e.head} [label="e{i} [{e.lower}, {up}]"];')
        lines.append("}")
        return "\n".join(lines)


@dataclass(frozen=True)
class FlowAssignment:
    flows: Tuple[int, ...]
    value: int
    augmentations: int = 0


@dataclass(frozen=True)
class CutResult:
    source_side: FrozenSet[int]
    forward: Tuple[int, ...]   # edge ids S -> T (sped up)
    backward: Tuple[int, ...]  # edge ids T -> S (slowed down)
    cost: int
    infinite: bool


class _Residual:
    """Arc-pair residual network; arc ``a ^ 1`` is the reverse of arc ``a``."""

    def __init__(self, num_nodes: int):
        self.head: List[int] = []
        self.cap: List[int] = []
        self.adj: List[List[int]] = [[] for _ in range(num_nodes)]
        self.augmentations = 0

    def add_pair(self, u: int, v: int, forward: int, backward: int = 0) -> int:
        a = len(self.head)
        self.head += [v, u]
        self.cap += [forward, backward]
        self.adj[u].append(a)
        self.adj[v].append(a + 1)
        return a

    def max_flow(self, s: int, t: int) -> int:
        """Edmonds-Karp; BFS scans arcs in insertion order for determinism."""
        total = 0
        head, cap, adj = self.head, self.cap, self.adj
        while True:
            parent = [-1] * len(adj)
            parent[s] = -2
            queue = deque([s])
            while queue and parent[t] == -1:
                u = queue.popleft()
                for a in adj[u]:
                    v = head[a]
                    if cap[a] > 0 and parent[v] == -1:
                        parent[v] = a
                        queue.append(v)
            if parent[t] == -1:
                return total
            push, v = None, t
            while v != s:
                a = parent[v]
                push = cap[a] if push is None else min(push, cap[a])
                v = head[a ^ 1]
            v = t
            while v != s:
                a = parent[v]
                cap[a] -= push
                cap[a ^ 1] += push
                v = head[a ^ 1]
            total += push
            self.augmentations += 1


def max_flow_lower_bounds(g: FlowGraph) -> Optional[FlowAssignment]:
    """Maximum s-t flow respecting ``lower <= flow <= upper`` on every edge.

    Returns ``None`` when no feasible flow exists. A feasible flow is found on
    an auxiliary graph with a super source/sink that absorb the lower bounds
    and an unbounded ``t -> s`` edge; it is then pushed to a maximum flow
    with Edmonds-Karp on the residual graph of the original edges.
    """
    n, s, t = g.num_nodes, g.source, g.sink
    inf = g.infinity
    uppers = [inf if e.upper is None else e.upper for e in g.edges]

    aux = _Residual(n + 2)
    s_aux, t_aux = n, n + 1
    arcs = [aux.add_pair(e.tail, e.head, up - e.lower) for e, up in zip(g.edges, uppers)]
    demand_in = [0] * n
    demand_out = [0] * n
    for e in g.edges:
        demand_in[e.head] += e.lower
        demand_out[e.tail] += e.lower
    for v in range(n):
        aux.add_pair(s_aux, v, demand_in[v])
        aux.add_pair(v, t_aux, demand_out[v])
    aux.add_pair(t, s, inf)
    if aux.max_flow(s_aux, t_aux) != sum(demand_in):
        return None
    flows = [up - e.lower - aux.cap[a] + e.lower for e, up, a in zip(g.edges, uppers, arcs)]

    res = _Residual(n)
    arcs = [res.add_pair(e.tail, e.head, up - f, f - e.lower) for e, up, f in zip(g.edges, uppers, flows)]
    res.max_flow(s, t)
    flows = [up - res.cap[a] for up, a in zip(uppers, arcs)]
    value = sum(f for e, f in zip(g.edges, flows) if e.tail == s) - sum(
        f for e, f in zip(g.edges, flows) if e.head == s
    )
    return FlowAssignment(tuple(flows), value, aux.augmentations + res.augmentations)


def min_cut_from_flow(g: FlowGraph, flow: FlowAssignment) -> CutResult:
    """Source side = nodes reachable from ``s`` in the residual graph of a
    maximum flow. The cut cost equals the flow value."""
    inf = g.infinity
    out: List[List[Tuple[int, int]]] = [[] for _ in range(g.num_nodes)]
    for i, (e, f) in enumerate(zip(g.edges, flow.flows)):
        if f < (inf if e.upper is None else e.upper):
            out[e.tail].append((i, e.head))
        if f > e.lower:
            out[e.head].append((i, e.tail))
    seen = {g.source}
    queue = deque([g.source])
    while queue:
        u = queue.popleft()
        for _, v in out[u]:
            if v not in seen:
                seen.add(v)
                queue.append(v)
    forward = tuple(i for i, e in enumerate(g.edges) if e.tail in seen and e.head not in seen)
    backward = tuple(i for i, e in enumerate(g.edges) if e.tail not in seen and e.head in seen)
    cost = sum(inf if g.edges[i].upper is None else g.edges[i].upper for i in forward)
    cost -= sum(g.edges[i].lower for i in backward)
    infinite = any(g.edges[i].upper is None for i in forward)
    return CutResult(frozenset(seen), forward, backward, cost, infinite)


@dataclass
class CapacityDag:
    graph: FlowGraph
    payloads: List[Optional[int]]  # computation id (or None) per flow edge
    node_index: Dict[int, int] = field(default_factory=dict)  # edge-DAG node -> flow node


def build_capacity_dag(critical: EdgeDag, durations: Mapping[int, int], domains: Mapping[int, DurationDomain],
                       tau: int, p_blocking_w: float = 0.0, quantum_s: float = 1e-6) -> CapacityDag:
    """Annotate critical edges with (lower, upper) flow bounds.

    A computation that can still slow down by ``tau`` gets the effective
    energy saved by doing so as its lower bound (otherwise 0); one that can
    still speed up by ``tau`` gets the effective energy that costs as its
    upper bound (otherwise unbounded). Dependency edges and fixed-duration
    computations are ``(0, unbounded)``.
    """
    used = sorted({critical.source, critical.sink} | {u for u, _, _ in critical.edges} | {v for _, v, _ in critical.edges})
    index = {node: i for i, node in enumerate(used)}
    g = FlowGraph(len(used), index[critical.source], index[critical.sink])
    payloads: List[Optional[int]] = []
    for u, v, payload in critical.edges:
        lower, upper = 0, None
        if payload is not None:
            dom = domains[payload]
            t = durations[payload]
            if not dom.lo <= t <= dom.hi:
                raise ValueError(f"planned duration {t} of computation {payload} outside [{dom.lo}, {dom.hi}]")
            if not dom.is_fixed:
                upper = dom.speedup_cost(t, tau, p_blocking_w, quantum_s)
                lower = dom.slowdown_gain(t, tau, p_blocking_w, quantum_s) or 0
                if upper is not None and lower > upper:
                    raise ValueError(f"non-convex costs on computation {payload}: ({lower}, {upper})")
        g.add_edge(index[u], index[v], lower, upper)
        payloads.append(payload)
    return CapacityDag(g, payloads, index)
