import random

import networkx as nx
import pytest

from energy_frontier.costmodel import ProfileSet
from energy_frontier.dag import annotate_slack, build_1f1b, critical_subdag
from energy_frontier.flow import FlowGraph, build_capacity_dag, max_flow_lower_bounds, min_cut_from_flow
from energy_frontier.frontier import PlanningProblem, min_energy_schedule

from flow_oracles import brute_min_cut, check_flow, lp_feasible, random_flow_graph
from helpers import exp_instance


def test_plain_max_flow_matches_networkx():
    rng = random.Random(1)
    for _ in range(100):
        n = rng.randint(2, 10)
        g = FlowGraph(n, 0, n - 1)
        ng = nx.DiGraph()
        ng.add_nodes_from(range(n))
        for _ in range(rng.randint(1, 25)):
            u, v = rng.randrange(n), rng.randrange(n)
            if u == v or ng.has_edge(u, v):
                continue
            c = rng.randint(0, 20)
            g.add_edge(u, v, 0, c)
            ng.add_edge(u, v, capacity=c)
        flow = max_flow_lower_bounds(g)
        assert flow.value == nx.maximum_flow_value(ng, 0, n - 1)
        assert min_cut_from_flow(g, flow).cost == flow.value


def test_lower_bounds_force_flow():
    g = FlowGraph(3, 0, 2)
    g.add_edge(0, 1, 5, 10)
    g.add_edge(1, 2, 0, 7)
    flow = max_flow_lower_bounds(g)
    assert flow.value == 7 and flow.flows == (7, 7)
    # lower bound larger than what can leave node 1: infeasible
    h = FlowGraph(3, 0, 2)
    h.add_edge(0, 1, 8, 10)
    h.add_edge(1, 2, 0, 7)
    assert max_flow_lower_bounds(h) is None


def test_backward_edge_lower_bound_reduces_cut():
    # s -> a -> t plus t -> a with lower bound 2, which eats into a -> t.
    g = FlowGraph(3, 0, 2)
    g.add_edge(0, 1, 0, 5)
    g.add_edge(1, 2, 0, 4)
    g.add_edge(2, 1, 2, None)
    flow = max_flow_lower_bounds(g)
    cut = min_cut_from_flow(g, flow)
    assert flow.value == brute_min_cut(g) == cut.cost == 2
    assert cut.source_side == {0, 1} and cut.forward == (1,) and cut.backward == (2,)


def test_edge_validation():
    g = FlowGraph(2, 0, 1)
    with pytest.raises(ValueError):
        g.add_edge(0, 1, 3, 2)
    with pytest.raises(ValueError):
        g.add_edge(0, 1, -1, 2)
    with pytest.raises(ValueError):
        g.add_edge(0, 5)
    with pytest.raises(ValueError):
        FlowGraph(2, 0, 0)


def test_unbounded_cut_is_reported_infinite():
    g = FlowGraph(2, 0, 1)
    g.add_edge(0, 1, 0, None)
    cut = min_cut_from_flow(g, max_flow_lower_bounds(g))
    assert cut.infinite and cut.cost >= g.infinity


def test_dot_export():
    g = FlowGraph(2, 0, 1)
    g.add_edge(0, 1, 1, None)
    assert '0 -> 1 [label="e0 [1, inf]"]' in g.to_dot()


def test_random_graphs_against_oracles():
    rng = random.Random(42)
    for _ in range(300):
        g = random_flow_graph(rng, 9)
        flow = max_flow_lower_bounds(g)
        assert (flow is not None) == lp_feasible(g)
        if flow is None:
            continue
        assert check_flow(g, flow.flows) is None
        cut = min_cut_from_flow(g, flow)
        assert flow.value == cut.cost == brute_min_cut(g)


def test_capacity_dag_bounds_follow_domain_position():
    rng = random.Random(9)
    dag, profiles = exp_instance(rng, 2, 2, 4)
    problem = PlanningProblem.build(dag, profiles, 500)
    sched = min_energy_schedule(problem)
    d = dict(enumerate(sched.durations))
    crit = critical_subdag(problem.edag, annotate_slack(problem.edag, d))
    cap = build_capacity_dag(crit, d, dict(enumerate(problem.domains)), 500, problem.p_blocking_w)
    for edge, payload in zip(cap.graph.edges, cap.payloads):
        if payload is None:
            assert (edge.lower, edge.upper) == (0, None)
            continue
        dom = problem.domains[payload]
        # at the slow end nothing can be gained by slowing down further
        assert edge.lower == 0
        assert edge.upper == dom.speedup_cost(d[payload], 500, problem.p_blocking_w, 1e-6)
    with pytest.raises(ValueError):
        build_capacity_dag(crit, {k: v + 10 ** 6 for k, v in d.items()}, dict(enumerate(problem.domains)), 500)
