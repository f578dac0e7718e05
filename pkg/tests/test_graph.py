from fractions import Fraction

import numpy as np
import pytest

from mfnet.graph import build_graph, complement_k_hop, k_hop, restrict


def line(n):
    return build_graph(list(range(n)), [(i, i + 1) for i in range(n - 1)])


def test_build_line3():
    g = line(3)
    assert g.n_states == 3
    assert g.adjacency == ((1,), (0, 2), (1,))


def test_build_singleton():
    g = build_graph([0], [])
    assert g.n_states == 1
    assert g.khop_members(0, 1) == (0,)


def test_build_rejects_duplicate_edge_given_both_ways():
    with pytest.raises(ValueError, match="duplicate edge"):
        build_graph([0, 1], [(0, 1), (1, 0)])


def test_build_rejects_duplicate_state():
    with pytest.raises(ValueError, match="duplicate state"):
        build_graph([0, 0, 1], [])


def test_build_rejects_unknown_endpoint():
    with pytest.raises(ValueError, match="unknown state"):
        build_graph([0, 1], [(0, 2)])


def test_build_rejects_self_loop():
    with pytest.raises(ValueError, match="self-loop"):
        build_graph([0, 1], [(0, 0)])


def test_k_hop_examples():
    g = line(3)
    assert k_hop(g, 1, 1).members == (0, 1, 2)
    assert k_hop(g, 0, 1).members == (0, 1)
    assert k_hop(g, 0, 2).members == (0, 1, 2)
    assert k_hop(g, 2, 0).members == (2,)


def test_k_hop_unknown_state():
    with pytest.raises(ValueError, match="unknown state"):
        k_hop(line(3), 7, 1)


def test_complement_examples():
    g = line(3)
    assert complement_k_hop(g, 0, 1).members == (2,)
    assert complement_k_hop(g, 1, 1).members == ()
    assert complement_k_hop(g, 0, 0).members == (1, 2)


def test_restrict_examples():
    g = line(3)
    mu = (Fraction(1, 2), Fraction(1, 4), Fraction(1, 4))
    assert restrict(mu, k_hop(g, 0, 1)) == (Fraction(1, 2), Fraction(1, 4))
    assert restrict(mu, k_hop(g, 1, 1)) == mu
    assert restrict(mu, complement_k_hop(g, 1, 1)) == ()


def _random_graph(rng, n):
    edges = []
    for i in range(1, n):  # random spanning tree keeps it connected
        edges.append((int(rng.integers(0, i)), i))
    extra = rng.integers(0, 2 * n)
    for _ in range(extra):
        a, b = rng.integers(0, n, size=2)
        if a != b and (min(a, b), max(a, b)) not in {tuple(sorted(e)) for e in edges}:
            edges.append((int(a), int(b)))
    return build_graph(list(range(n)), edges)


def test_nesting_partition_symmetry_properties():
    rng = np.random.default_rng(5)
    for _ in range(25):
        n = int(rng.integers(2, 9))
        g = _random_graph(rng, n)
        for s in range(n):
            for k in range(n):
                inner = set(k_hop(g, s, k).members)
                outer = set(k_hop(g, s, k + 1).members)
                assert inner <= outer
                comp = set(complement_k_hop(g, s, k).members)
                assert inner | comp == set(range(n))
                assert not inner & comp
        for s in range(n):
            for t in g.adjacency[s]:
                assert s in g.adjacency[t]


def test_k_hop_covers_graph_at_diameter():
    rng = np.random.default_rng(11)
    for _ in range(10):
        g = _random_graph(rng, int(rng.integers(2, 8)))
        d = g.diameter()
        for s in range(g.n_states):
            assert k_hop(g, s, d).members == tuple(range(g.n_states))


def test_cache_coherence():
    g = line(5)
    first = g.khop_members(2, 1)
    fresh = build_graph(list(range(5)), [(i, i + 1) for i in range(4)]).khop_members(2, 1)
    assert first == g.khop_members(2, 1)
    assert first == fresh


def test_diameter_requires_connectivity():
    g = build_graph([0, 1, 2], [(0, 1)])
    with pytest.raises(ValueError, match="not connected"):
        g.diameter()


def test_string_labels():
    g = build_graph(["a", "b"], [("a", "b")])
    assert g.index_of("b") == 1
    with pytest.raises(ValueError):
        g.index_of("c")
