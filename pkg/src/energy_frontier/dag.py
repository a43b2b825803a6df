"""Pipeline computation DAGs.

Node-centric DAGs hold one node per forward/backward/constant computation
with dependency edges. The edge-centric form (computations on edges,
dependency events on nodes) is what the slack annotation and the cut search
operate on.
"""

from __future__ import annotations

import enum
import itertools
from collections import deque
from dataclasses import dataclass
from functools import cached_property
from typing import Dict, Iterable, List, Mapping, Optional, Sequence, Tuple


class Kind(str, enum.Enum):
    FORWARD = "forward"
    BACKWARD = "backward"
    CONSTANT = "constant"


class MalformedDagError(ValueError):
    """The graph is cyclic, disconnected or otherwise not a pipeline DAG."""


@dataclass(frozen=True)
class Computation:
    id: int
    stage: int
    microbatch: Optional[int]
    kind: Kind
    # Only meaningful for constant-kind computations (e.g. data loading).
    duration_us: Optional[float] = None

    def __post_init__(self):
        object.__setattr__(self, "kind", Kind(self.kind))
        if self.kind is not Kind.CONSTANT and self.microbatch is None:
            raise ValueError(f"{self.kind.value} computation {self.id} needs a microbatch index")
        if self.stage < 0:
            raise ValueError(f"computation {self.id} has negative stage {self.stage}")

    @property
    def label(self) -> str:
        if self.kind is Kind.CONSTANT:
            return f"C{self.id}@{self.stage}"
        return f"{self.kind.value[0].upper()}{self.microbatch + 1}@{self.stage}"


@dataclass(frozen=True)
class NodeDag:
    """Node-centric computation DAG.

    ``source`` and ``sink`` are virtual zero-duration endpoints whose ids
    follow the computation ids (``n`` and ``n + 1``); they are not part of
    ``computations``.
    """

    computations: Tuple[Computation, ...]
    edges: Tuple[Tuple[int, int], ...]
    source: int
    sink: int

    @classmethod
    def from_dependencies(
        cls, computations: Sequence[Computation], edges: Iterable[Tuple[int, int]]
    ) -> "NodeDag":
        """Build a DAG, attaching the virtual source to every computation
        without predecessors and every computation without successors to the
        virtual sink."""
        comps = tuple(sorted(computations, key=lambda c: c.id))
        n = len(comps)
        if [c.id for c in comps] != list(range(n)):
            raise MalformedDagError("computation ids must be dense 0..n-1")
        deps = []
        seen = set()
        for u, v in edges:
            u, v = int(u), int(v)
            if not (0 <= u < n and 0 <= v < n):
                raise MalformedDagError(f"edge ({u}, {v}) references an unknown computation")
            if u == v:
                raise MalformedDagError(f"self-loop on computation {u}")
            if (u, v) not in seen:
                seen.add((u, v))
                deps.append((u, v))
        has_pred = {v for _, v in deps}
        has_succ = {u for u, _ in deps}
        source, sink = n, n + 1
        all_edges = [(source, c.id) for c in comps if c.id not in has_pred]
        all_edges += deps
        all_edges += [(c.id, sink) for c in comps if c.id not in has_succ]
        dag = cls(comps, tuple(all_edges), source, sink)
        dag.topological_order  # raises on cycles
        return dag

    @property
    def num_nodes(self) -> int:
        return len(self.computations) + 2

    @property
    def num_stages(self) -> int:
        return max((c.stage for c in self.computations), default=-1) + 1

    @cached_property
    def predecessors(self) -> List[List[int]]:
        preds: List[List[int]] = [[] for _ in range(self.num_nodes)]
        for u, v in self.edges:
            preds[v].append(u)
        return preds

    @cached_property
    def successors(self) -> List[List[int]]:
        succs: List[List[int]] = [[] for _ in range(self.num_nodes)]
        for u, v in self.edges:
            succs[u].append(v)
        return succs

    @cached_property
    def topological_order(self) -> List[int]:
        return _toposort(self.num_nodes, self.edges)

    def by_stage(self) -> Dict[int, List[Computation]]:
        out: Dict[int, List[Computation]] = {}
        for c in self.computations:
            out.setdefault(c.stage, []).append(c)
        return out


def _toposort(num_nodes: int, edges: Iterable[Tuple[int, int]]) -> List[int]:
    indeg = [0] * num_nodes
    succs: List[List[int]] = [[] for _ in range(num_nodes)]
    for u, v in edges:
        succs[u].append(v)
        indeg[v] += 1
    queue = deque(i for i in range(num_nodes) if indeg[i] == 0)
    order = []
    while queue:
        u = queue.popleft()
        order.append(u)
        for v in succs[u]:
            indeg[v] -= 1
            if indeg[v] == 0:
                queue.append(v)
    if len(order) != num_nodes:
        raise MalformedDagError("graph contains a cycle")
    return order


def iteration_time(dag: NodeDag, durations: Mapping[int, int]) -> int:
    """Longest source-to-sink path length with the given computation durations."""
    finish = [0] * dag.num_nodes
    preds = dag.predecessors
    for node in dag.topological_order:
        start = max((finish[p] for p in preds[node]), default=0)
        finish[node] = start + (durations[node] if node < len(dag.computations) else 0)
    return finish[dag.sink]


# -- schedule constructors --------------------------------------------------

Instruction = Tuple[Kind, int]


def one_f_one_b_order(num_stages: int, num_microbatches: int, stage: int) -> List[Instruction]:
    """Instruction stream of one stage under 1F1B (0-indexed microbatches)."""
    warmup = min(num_microbatches, num_stages - stage)
    order: List[Instruction] = [(Kind.FORWARD, m) for m in range(warmup)]
    next_f, next_b = warmup, 0
    while next_f < num_microbatches:
        order.append((Kind.BACKWARD, next_b))
        order.append((Kind.FORWARD, next_f))
        next_b += 1
        next_f += 1
    order.extend((Kind.BACKWARD, m) for m in range(next_b, num_microbatches))
    return order


def gpipe_order(num_stages: int, num_microbatches: int, stage: int) -> List[Instruction]:
    return [(Kind.FORWARD, m) for m in range(num_microbatches)] + [
        (Kind.BACKWARD, m) for m in range(num_microbatches)
    ]


def _build_pipeline(num_stages: int, num_microbatches: int, order_fn) -> NodeDag:
    if num_stages < 1 or num_microbatches < 1:
        raise ValueError("need at least one stage and one microbatch")
    n, m_count = num_stages, num_microbatches

    def cid(stage: int, kind: Kind, mb: int) -> int:
        return stage * 2 * m_count + (mb if kind is Kind.FORWARD else m_count + mb)

    comps = []
    for s in range(n):
        comps += [Computation(cid(s, Kind.FORWARD, m), s, m, Kind.FORWARD) for m in range(m_count)]
        comps += [Computation(cid(s, Kind.BACKWARD, m), s, m, Kind.BACKWARD) for m in range(m_count)]

    edges = []
    for s in range(n):
        stream = [cid(s, k, m) for k, m in order_fn(n, m_count, s)]
        edges += list(zip(stream, stream[1:]))
    for s in range(n - 1):
        for m in range(m_count):
            edges.append((cid(s, Kind.FORWARD, m), cid(s + 1, Kind.FORWARD, m)))
            edges.append((cid(s + 1, Kind.BACKWARD, m), cid(s, Kind.BACKWARD, m)))
    return NodeDag.from_dependencies(comps, edges)


def build_1f1b(num_stages: int, num_microbatches: int) -> NodeDag:
    """1F1B pipeline DAG: per stage, ``min(M, N - s)`` warm-up forwards, then
    alternating backward/forward pairs, then the remaining backwards."""
    return _build_pipeline(num_stages, num_microbatches, one_f_one_b_order)


def build_gpipe(num_stages: int, num_microbatches: int) -> NodeDag:
    """GPipe pipeline DAG: all forwards, then all backwards in ascending
    microbatch order."""
    return _build_pipeline(num_stages, num_microbatches, gpipe_order)


# -- edge-centric form ------------------------------------------------------


@dataclass(frozen=True)
class EdgeDag:
    """Edge-centric DAG. Node 0 is the source event and node 1 the sink.

    ``edges`` holds ``(tail, head, payload)``; payload is a computation id or
    ``None`` for a zero-duration dependency edge.
    """

    num_nodes: int
    edges: Tuple[Tuple[int, int, Optional[int]], ...]
    source: int = 0
    sink: int = 1

    @cached_property
    def topological_order(self) -> List[int]:
        return _toposort(self.num_nodes, ((u, v) for u, v, _ in self.edges))

    @cached_property
    def out_edges(self) -> List[List[int]]:
        out: List[List[int]] = [[] for _ in range(self.num_nodes)]
        for i, (u, _, _) in enumerate(self.edges):
            out[u].append(i)
        return out

    @cached_property
    def in_edges(self) -> List[List[int]]:
        inc: List[List[int]] = [[] for _ in range(self.num_nodes)]
        for i, (_, v, _) in enumerate(self.edges):
            inc[v].append(i)
        return inc

    @cached_property
    def payload_edge(self) -> Dict[int, int]:
        return {p: i for i, (_, _, p) in enumerate(self.edges) if p is not None}

    def with_edges(self, keep: Iterable[int]) -> "EdgeDag":
        return EdgeDag(self.num_nodes, tuple(self.edges[i] for i in sorted(keep)), self.source, self.sink)


def split_nodes(computation_id: int) -> Tuple[int, int]:
    """Event node ids (start, finish) of a computation in the edge-centric DAG."""
    return 2 + 2 * computation_id, 3 + 2 * computation_id


def to_edge_centric(dag: NodeDag) -> EdgeDag:
    n = len(dag.computations)

    def start_of(node: int) -> int:
        return 0 if node == dag.source else (1 if node == dag.sink else split_nodes(node)[0])

    def finish_of(node: int) -> int:
        return 0 if node == dag.source else (1 if node == dag.sink else split_nodes(node)[1])

    edges: List[Tuple[int, int, Optional[int]]] = [(*split_nodes(c.id), c.id) for c in dag.computations]
    edges += [(finish_of(u), start_of(v), None) for u, v in dag.edges]
    return EdgeDag(2 * n + 2, tuple(edges))


# -- slack ------------------------------------------------------------------


@dataclass(frozen=True)
class SlackAnnotation:
    earliest: Tuple[int, ...]
    latest: Tuple[int, ...]
    critical: Tuple[bool, ...]

    @property
    def iteration_time(self) -> int:
        return self.earliest[1]

    def node_slack(self, node: int) -> int:
        return self.latest[node] - self.earliest[node]


def edge_duration(edge: Tuple[int, int, Optional[int]], durations: Mapping[int, int]) -> int:
    payload = edge[2]
    return 0 if payload is None else durations[payload]


def annotate_slack(dag: EdgeDag, durations: Mapping[int, int]) -> SlackAnnotation:
    """Earliest/latest start of every event node and criticality of every edge.

    An edge is critical when both of its endpoints have zero slack and its
    duration spans exactly the gap between them.
    """
    order = dag.topological_order
    edges = dag.edges
    dur = [edge_duration(e, durations) for e in edges]
    if any(d < 0 for d in dur):
        raise ValueError("durations must be non-negative")
    es = [0] * dag.num_nodes
    for node in order:
        best = 0
        for i in dag.in_edges[node]:
            t = es[edges[i][0]] + dur[i]
            if t > best:
                best = t
        es[node] = best
    horizon = es[dag.sink]
    ls = [horizon] * dag.num_nodes
    for node in reversed(order):
        outs = dag.out_edges[node]
        if outs:
            ls[node] = min(ls[edges[i][1]] - dur[i] for i in outs)
    critical = tuple(
        es[u] == ls[u] and es[v] == ls[v] and es[u] + dur[i] == es[v]
        for i, (u, v, _) in enumerate(edges)
    )
    return SlackAnnotation(tuple(es), tuple(ls), critical)


def critical_subdag(dag: EdgeDag, annotation: SlackAnnotation) -> EdgeDag:
    """Keep only the critical edges. Node ids are preserved, so nodes off the
    critical paths simply become isolated."""
    return dag.with_edges(i for i, crit in enumerate(annotation.critical) if crit)


# -- stage partitioning -----------------------------------------------------


@dataclass(frozen=True)
class PartitionResult:
    boundaries: Tuple[int, ...]
    ratio: float

    def stage_sums(self, layer_latencies: Sequence[float]) -> List[float]:
        b = self.boundaries
        return [sum(layer_latencies[b[i]:b[i + 1]]) for i in range(len(b) - 1)]


_REL_EPS = 1e-12


def _ratio_le(num_a: float, den_a: float, num_b: float, den_b: float) -> bool:
    """num_a/den_a <= num_b/den_b, tolerant to float noise."""
    return num_a * den_b <= num_b * den_a * (1 + _REL_EPS)


def min_imbalance_partition(layer_latencies: Sequence[float], num_stages: int) -> PartitionResult:
    """Contiguous split of layers into stages minimizing max/min stage latency.

    For every candidate minimum stage sum ``L`` (a contiguous-range sum), a DP
    finds the smallest achievable maximum with all stages at least ``L``;
    candidates are visited from the largest down and pruned once even a
    perfectly balanced maximum could not beat the best ratio found. Among
    optimal partitions the lexicographically smallest boundary vector wins.
    """
    lat = [float(x) for x in layer_latencies]
    n, k = len(lat), int(num_stages)
    if k < 1:
        raise ValueError("need at least one stage")
    if k > n:
        raise ValueError(f"cannot split {n} layers into {k} stages")
    if any(x <= 0 for x in lat):
        raise ValueError("layer latencies must be positive")
    prefix = list(itertools.accumulate(lat, initial=0.0))

    def seg(i: int, j: int) -> float:
        return prefix[j] - prefix[i]

    total = prefix[n]
    average = total / k
    candidates = sorted({seg(i, j) for i in range(n) for j in range(i + 1, n + 1) if seg(i, j) <= average * (1 + _REL_EPS)}, reverse=True)

    best: Optional[Tuple[float, float]] = None  # (max, min) of the best ratio
    optimal_mins: List[float] = []
    for low in candidates:
        if best is not None and not _ratio_le(average, low, best[0], best[1]):
            break
        top = _min_max_with_floor(prefix, n, k, low)
        if top is None:
            continue
        if best is None or not _ratio_le(best[0], best[1], top, low):
            best = (top, low)
            optimal_mins = [low]
        elif _ratio_le(top, low, best[0], best[1]):
            optimal_mins.append(low)
    assert best is not None  # a single-layer floor is always feasible

    winner: Optional[List[int]] = None
    for low in optimal_mins:
        high = best[0] * low / best[1] * (1 + _REL_EPS)
        bounds = _lexmin_partition(prefix, n, k, low * (1 - _REL_EPS), high)
        if bounds is not None and (winner is None or bounds < winner):
            winner = bounds
    assert winner is not None
    sums = [seg(winner[i], winner[i + 1]) for i in range(k)]
    return PartitionResult(tuple(winner), max(sums) / min(sums))


def _min_max_with_floor(prefix: List[float], n: int, k: int, low: float) -> Optional[float]:
    inf = float("inf")
    floor = low * (1 - _REL_EPS)
    # best[j] = smallest max stage sum splitting layers [0, j) into `stages` stages
    best = [inf] * (n + 1)
    best[0] = 0.0
    for stages in range(1, k + 1):
        nxt = [inf] * (n + 1)
        for j in range(stages, n - (k - stages) + 1):
            val = inf
            for i in range(stages - 1, j):
                if best[i] == inf:
                    continue
                s = prefix[j] - prefix[i]
                if s < floor:
                    break
                cand = s if s > best[i] else best[i]
                if cand < val:
                    val = cand
            nxt[j] = val
        best = nxt
    return None if best[n] == inf else best[n]


def _lexmin_partition(prefix: List[float], n: int, k: int, low: float, high: float) -> Optional[List[int]]:
    # reach[r][i]: layers [i, n) split into r stages with every sum in [low, high]
    reach = [[False] * (n + 1) for _ in range(k + 1)]
    reach[0][n] = True
    for r in range(1, k + 1):
        for i in range(n - 1, -1, -1):
            for j in range(i + 1, n + 1):
                s = prefix[j] - prefix[i]
                if s > high:
                    break
                if s >= low and reach[r - 1][j]:
                    reach[r][i] = True
                    break
    if not reach[k][0]:
        return None
    bounds, pos = [0], 0
    for r in range(k, 0, -1):
        for j in range(pos + 1, n + 1):
            s = prefix[j] - prefix[pos]
            if low <= s <= high and reach[r - 1][j]:
                bounds.append(j)
                pos = j
                break
    return bounds
