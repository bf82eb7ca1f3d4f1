import numpy as np
import pytest
from scipy.sparse.csgraph import connected_components

from forumleak.graphs import (
    Strategy, betweenness_centrality, build_private_graph, build_public_graph, centrality_table,
    clustering_coefficient, degree_centrality, eigenvector_centrality, overlap_stats,
)

from oracles import brute_betweenness, dense_power_iteration, graph_from_edges, naive_clustering, random_graph


def test_strategies_on_tiny_forum(forum):
    same = build_public_graph(forum, "same-thread")
    owner = build_public_graph(forum, Strategy.THREAD_OWNER)
    reply = build_public_graph(forum, "direct_reply")
    assert set(same.edges) == {("alice", "bob"), ("alice", "carol"), ("bob", "carol")}
    assert set(owner.edges) == {("alice", "bob"), ("alice", "carol")}
    assert set(reply.edges) == {("alice", "bob"), ("bob", "carol")}


def test_unknown_strategy_rejected():
    with pytest.raises(ValueError):
        Strategy.parse("everyone")


def test_private_graph_and_overlap(forum):
    private = build_private_graph(forum)
    assert private.edges == {("alice", "bob"): 1, ("alice", "carol"): 2}
    rep = overlap_stats(build_public_graph(forum, "thread-owner"), private, forum)
    assert rep.public_only_edges == 0 and rep.private_only_edges == 0
    assert rep.private_messages_with_public_link == 3
    assert rep.tagged_threads == 1 and rep.tagged_thread_fraction == 0.5


def test_triangle_and_path():
    tri = graph_from_edges([("a", "b"), ("b", "c"), ("a", "c")])
    assert all(clustering_coefficient(tri, v) == 1.0 for v in "abc")
    assert set(betweenness_centrality(tri).values()) == {0.0}
    path = graph_from_edges([("a", "b"), ("b", "c")])
    assert betweenness_centrality(path) == {"a": 0.0, "b": 1.0, "c": 0.0}


@pytest.mark.parametrize("seed", range(10))
def test_betweenness_matches_brute_force(seed):
    rng = np.random.default_rng(seed)
    g = random_graph(rng, int(rng.integers(2, 31)), rng.uniform(0.05, 0.5))
    got = betweenness_centrality(g, block=7)
    want = brute_betweenness(g)
    for v in g.nodes:
        assert got[v] == pytest.approx(want[v], abs=1e-9)


def test_degree_and_clustering_match_naive():
    rng = np.random.default_rng(3)
    for _ in range(20):
        g = random_graph(rng, 25, 0.2)
        for v in g.nodes:
            assert degree_centrality(g, v) == len(g.adjacency[v])
            assert clustering_coefficient(g, v) == naive_clustering(g, v)


def test_eigenvector_matches_dense_iteration_on_connected_graph():
    rng = np.random.default_rng(5)
    checked = 0
    while checked < 10:
        g = random_graph(rng, 20, 0.3)
        if connected_components(g.sparse_adjacency(), directed=False)[0] != 1:
            continue
        res = eigenvector_centrality(g)
        ref = dense_power_iteration(g)
        assert res.converged
        assert max(abs(res.scores[v] - ref[v]) for v in g.nodes) < 1e-8
        checked += 1


def test_eigenvector_bipartite_converges():
    star = graph_from_edges([("hub", x) for x in "abcd"])
    res = eigenvector_centrality(star)
    assert res.converged
    assert res.scores["hub"] == pytest.approx(1 / np.sqrt(2))


def test_eigenvector_needs_edges():
    with pytest.raises(ValueError):
        eigenvector_centrality(graph_from_edges([], ["a"]))


def test_sampled_betweenness_is_seeded():
    g = random_graph(np.random.default_rng(1), 40, 0.15)
    a = betweenness_centrality(g, sample_size=10, seed=4, exact_limit=5)
    b = betweenness_centrality(g, sample_size=10, seed=4, exact_limit=5)
    assert a == b


def test_centrality_table_absent_user_is_zero(forum):
    table = centrality_table(build_public_graph(forum, "thread-owner"))
    assert table.lookup("nobody") == (0.0, 0.0, 0.0, 0.0)
    assert table.lookup("alice")[1] == 2.0


def test_edges_csv(tmp_path, forum):
    build_public_graph(forum, "same-thread").to_csv(tmp_path / "e.csv")
    lines = (tmp_path / "e.csv").read_text().splitlines()
    assert lines[0] == "user_a,user_b,weight" and len(lines) == 4
