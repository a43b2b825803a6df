import itertools
import random

import networkx as nx
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from energy_frontier.dag import (
    Computation,
    Kind,
    MalformedDagError,
    NodeDag,
    annotate_slack,
    build_1f1b,
    build_gpipe,
    critical_subdag,
    iteration_time,
    min_imbalance_partition,
    one_f_one_b_order,
    split_nodes,
    to_edge_centric,
)


def as_nx(dag: NodeDag, durations) -> nx.DiGraph:
    """Weighted graph where an edge carries the duration of its tail node."""
    g = nx.DiGraph()
    n = len(dag.computations)
    for u, v in dag.edges:
        g.add_edge(u, v, weight=durations[u] if u < n else 0)
    return g


@pytest.mark.parametrize("builder", [build_1f1b, build_gpipe])
@pytest.mark.parametrize("n,m", [(1, 1), (1, 4), (2, 3), (4, 4), (4, 8), (3, 1)])
def test_pipeline_dags_are_single_source_single_sink_dags(builder, n, m):
    dag = builder(n, m)
    g = as_nx(dag, [1] * len(dag.computations))
    assert nx.is_directed_acyclic_graph(g)
    assert [v for v in g if g.in_degree(v) == 0] == [dag.source]
    assert [v for v in g if g.out_degree(v) == 0] == [dag.sink]
    assert len(dag.computations) == 2 * n * m


def test_1f1b_stage_order_matches_warmup_rule():
    # 4 stages, 6 microbatches: stage 0 warms up with 4 forwards, stage 3 with 1.
    order = [(k.value[0], m + 1) for k, m in one_f_one_b_order(4, 6, 0)]
    assert order == [("f", 1), ("f", 2), ("f", 3), ("f", 4), ("b", 1), ("f", 5), ("b", 2), ("f", 6),
                     ("b", 3), ("b", 4), ("b", 5), ("b", 6)]
    last = [(k.value[0], m + 1) for k, m in one_f_one_b_order(4, 6, 3)]
    assert last == [("f", 1), ("b", 1), ("f", 2), ("b", 2), ("f", 3), ("b", 3), ("f", 4), ("b", 4),
                    ("f", 5), ("b", 5), ("f", 6), ("b", 6)]


def test_1f1b_fewer_microbatches_than_stages():
    order = one_f_one_b_order(4, 2, 0)
    assert [k for k, _ in order] == [Kind.FORWARD, Kind.FORWARD, Kind.BACKWARD, Kind.BACKWARD]


def test_unit_durations_give_textbook_iteration_times():
    # Forward 1, backward 2: 1F1B and GPipe both take (M + N - 1) * 3.
    for n, m in [(2, 3), (4, 8), (3, 3)]:
        for builder in (build_1f1b, build_gpipe):
            dag = builder(n, m)
            d = [1 if c.kind is Kind.FORWARD else 2 for c in dag.computations]
            assert iteration_time(dag, d) == (m + n - 1) * 3


def test_iteration_time_is_longest_path():
    rng = random.Random(3)
    for _ in range(30):
        dag = rng.choice([build_1f1b, build_gpipe])(rng.randint(1, 4), rng.randint(1, 6))
        d = [rng.randint(1, 50) for _ in dag.computations]
        assert iteration_time(dag, d) == nx.dag_longest_path_length(as_nx(dag, d))


def test_from_dependencies_rejects_bad_graphs():
    comps = [Computation(0, 0, 0, Kind.FORWARD), Computation(1, 0, 1, Kind.FORWARD)]
    with pytest.raises(MalformedDagError):
        NodeDag.from_dependencies(comps, [(0, 1), (1, 0)])
    with pytest.raises(MalformedDagError):
        NodeDag.from_dependencies(comps, [(0, 5)])
    with pytest.raises(MalformedDagError):
        NodeDag.from_dependencies([Computation(1, 0, 0, Kind.FORWARD)], [])
    with pytest.raises(ValueError):
        Computation(0, 0, None, Kind.FORWARD)


def test_edge_centric_form_is_a_bijection_over_computations():
    dag = build_1f1b(3, 4)
    edag = to_edge_centric(dag)
    payloads = [p for _, _, p in edag.edges if p is not None]
    assert sorted(payloads) == list(range(len(dag.computations)))
    for c in dag.computations:
        u, v, p = edag.edges[edag.payload_edge[c.id]]
        assert (u, v) == split_nodes(c.id) and p == c.id
    dummies = [e for e in edag.edges if e[2] is None]
    assert len(dummies) == len(dag.edges)


def test_slack_against_path_enumeration():
    # Small enough to enumerate every source-to-node path.
    rng = random.Random(11)
    dag = build_1f1b(2, 3)
    d = {i: rng.randint(1, 9) for i in range(len(dag.computations))}
    edag = to_edge_centric(dag)
    ann = annotate_slack(edag, d)
    g = nx.DiGraph()
    for u, v, p in edag.edges:
        g.add_edge(u, v, weight=0 if p is None else d[p])
    total = nx.dag_longest_path_length(g)
    assert ann.iteration_time == total
    for node in g:
        if node == 0:
            continue
        longest = max(nx.path_weight(g, path, "weight") for path in nx.all_simple_paths(g, 0, node))
        assert ann.earliest[node] == longest
    for i, (u, v, p) in enumerate(edag.edges):
        w = 0 if p is None else d[p]
        assert ann.critical[i] == (ann.earliest[u] + w + (total - ann.latest[v]) == total)


def test_critical_subdag_edges_lie_on_longest_paths():
    rng = random.Random(5)
    for _ in range(40):
        dag = rng.choice([build_1f1b, build_gpipe])(rng.randint(1, 4), rng.randint(1, 6))
        d = {i: rng.choice([2, 3, 5]) for i in range(len(dag.computations))}
        edag = to_edge_centric(dag)
        ann = annotate_slack(edag, d)
        crit = critical_subdag(edag, ann)
        g = nx.DiGraph()
        for u, v, p in edag.edges:
            g.add_edge(u, v, weight=0 if p is None else d[p])
        to_sink = {v: 0 for v in g}
        for v in reversed(list(nx.topological_sort(g))):
            to_sink[v] = max((g[v][w]["weight"] + to_sink[w] for w in g.successors(v)), default=0)
        for u, v, p in crit.edges:
            w = 0 if p is None else d[p]
            assert ann.earliest[u] + w + to_sink[v] == ann.iteration_time
        # every source-to-sink path of the critical sub-DAG has full length
        cg = nx.DiGraph()
        cg.add_weighted_edges_from((u, v, 0 if p is None else d[p]) for u, v, p in crit.edges)
        assert nx.dag_longest_path_length(cg) == ann.iteration_time


def brute_partition(lat, k):
    best = None
    for cuts in itertools.combinations(range(1, len(lat)), k - 1):
        b = (0, *cuts, len(lat))
        sums = [sum(lat[b[i]:b[i + 1]]) for i in range(k)]
        ratio = max(sums) / min(sums)
        if best is None or ratio < best[0] - 1e-12:
            best = (ratio, b)
    return best


def test_partition_examples():
    assert min_imbalance_partition([1, 1, 1, 1], 2).boundaries == (0, 2, 4)
    assert min_imbalance_partition([1, 1, 1, 1], 2).ratio == 1.0
    r = min_imbalance_partition([5, 1, 1, 1, 1, 1], 2)
    assert r.boundaries == (0, 1, 6) and r.ratio == 1.0
    with pytest.raises(ValueError):
        min_imbalance_partition([1, 2], 3)
    with pytest.raises(ValueError):
        min_imbalance_partition([1, -2], 1)


@settings(max_examples=150, deadline=None)
@given(st.lists(st.integers(1, 30), min_size=1, max_size=10), st.integers(1, 4))
def test_partition_matches_exhaustive_search(layers, k):
    if k > len(layers):
        return
    got = min_imbalance_partition(layers, k)
    ratio, bounds = brute_partition(layers, k)
    assert got.ratio == pytest.approx(ratio, rel=1e-12)
    assert got.boundaries == bounds
