import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from fraudkit.errors import ContractError, DataError
from fraudkit.temporal_graph import TemporalGraph, undirected_projection

from oracles import build, random_digraph, simple_edges, visible_nodes


def test_add_node_counts():
    g = TemporalGraph()
    g.add_node(7, 3)
    assert g.node_count == 1


def test_duplicate_node_rejected():
    g = TemporalGraph()
    g.add_node(7, 3)
    with pytest.raises(ContractError, match="7"):
        g.add_node(7, 4)


def test_dense_indices_follow_insertion():
    g = TemporalGraph()
    ids = np.random.default_rng(0).permutation(10_000)[:1000]
    for i in ids.tolist():
        g.add_node(i, 1)
    g.finalize()
    assert g.node_count == 1000
    assert [g.index_of(i) for i in ids.tolist()] == list(range(1000))


def test_edge_time_is_later_endpoint():
    g = TemporalGraph()
    g.add_node(10, 2)
    g.add_node(11, 5)
    g.add_edge(10, 11)
    g.finalize()
    assert g.etime.tolist() == [5]
    assert g.edge_time(10, 11) == 5


@pytest.mark.parametrize("bad", ["a", -1, 1.5, True])
def test_node_id_must_be_nonnegative_int(bad):
    with pytest.raises(ContractError):
        TemporalGraph().add_node(bad, 1)


def test_duplicate_edge_collapsed():
    g = TemporalGraph()
    g.add_node(1, 1)
    g.add_node(2, 1)
    g.add_edge(1, 2)
    g.add_edge(1, 2)
    assert g.edge_count == 1
    assert g.duplicate_edges == 1


def test_self_loop_dropped_and_counted():
    g = TemporalGraph()
    g.add_node(1, 1)
    g.add_edge(1, 1)
    assert g.edge_count == 0
    assert g.self_loop_warnings == 1


def test_unknown_endpoint_named():
    g = TemporalGraph()
    g.add_node(1, 1)
    with pytest.raises(DataError, match="99"):
        g.add_edge(1, 99)


def test_frozen_after_finalize():
    g = TemporalGraph()
    g.add_node(1, 1)
    g.finalize()
    with pytest.raises(ContractError):
        g.add_node(2, 1)


def test_snapshot_filters_nodes():
    g = build({0: 1, 1: 2, 2: 3}, [(0, 1), (1, 2)])
    v = g.snapshot_at(2)
    assert v.node_ids.tolist() == [0, 1]
    assert v.edge_list() == [(0, 1)]
    assert 2 not in v


def test_snapshot_at_max_is_full_graph():
    g = build({0: 1, 1: 2, 2: 3}, [(0, 1), (1, 2), (2, 0)])
    assert g.snapshot_at(g.max_timestep).edge_count == g.edge_count
    assert g.snapshot_at(100).edge_count == g.edge_count


def test_snapshot_horizon_must_be_positive():
    g = build({0: 1}, [])
    with pytest.raises(ContractError):
        g.snapshot_at(0)


def test_edge_counts_match_filter_oracle(rng):
    for _ in range(20):
        times, edges = random_digraph(rng, 40, max_t=6)
        g = build(times, edges)
        counts = []
        for t in range(1, 8):
            want = simple_edges(times, edges, t)
            v = g.snapshot_at(t)
            assert sorted(v.edge_list()) == want
            assert v.node_ids.tolist() == visible_nodes(times, t)
            counts.append(v.edge_count)
        assert counts == sorted(counts)


def test_projection_dedups_reciprocal_edges():
    g = build({0: 1, 1: 1}, [(0, 1), (1, 0)])
    u = undirected_projection(g.full_view())
    assert u.degree(0) == 1


def test_projection_star():
    g = build({0: 1, 1: 1, 2: 1, 3: 1}, [(0, 1), (0, 2), (0, 3)])
    u = undirected_projection(g.full_view())
    assert u.degree(0) == 3
    assert u.degree(1) == 1


def test_projection_degree_is_union_of_directions(rng):
    times, edges = random_digraph(rng, 30)
    g = build(times, edges)
    u = undirected_projection(g.full_view())
    view = g.full_view()
    for v in range(30):
        outs = {b for a, b in edges if a == v and b != v}
        ins = {a for a, b in edges if b == v and a != v}
        assert u.degree(v) == len(outs | ins)
        assert set(view.out_neighbors(v).tolist()) == outs
        assert set(view.in_neighbors(v).tolist()) == ins


graphs = st.integers(0, 2**32 - 1).map(
    lambda s: random_digraph(np.random.default_rng(s), 25, max_t=5))


@settings(max_examples=40, deadline=None)
@given(graphs)
def test_snapshot_monotone_and_causally_closed(data):
    times, edges = data
    g = build(times, edges)
    prev_nodes, prev_edges = set(), set()
    for t in range(1, 6):
        v = g.snapshot_at(t)
        nodes, es = set(v.node_ids.tolist()), set(v.edge_list())
        assert prev_nodes <= nodes and prev_edges <= es
        assert all(g.etime[i] <= t for i in np.flatnonzero(v.edge_mask))
        prev_nodes, prev_edges = nodes, es


@settings(max_examples=40, deadline=None)
@given(graphs, st.integers(1, 5))
def test_projection_symmetric(data, t):
    g = build(*data)
    u = undirected_projection(g.snapshot_at(t))
    for v in u.node_ids.tolist():
        for w in u.neighbors(v).tolist():
            assert v in u.neighbors(w).tolist()
    a = u.adjacency()
    assert (a != a.T).nnz == 0


def test_identical_insertion_gives_identical_adjacency(rng):
    times, edges = random_digraph(rng, 30, max_t=3)
    g1, g2 = build(times, edges), build(times, edges)
    for name in ("_out", "_in", "_und"):
        for x, y in zip(getattr(g1, name), getattr(g2, name)):
            assert np.array_equal(x, y)
