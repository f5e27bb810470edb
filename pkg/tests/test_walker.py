import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from scipy.stats import chisquare

from tapem.errors import ConfigError, ContractError
from tapem.hetgraph import NodeType
from tapem.walker import (APA, MetaPath, PairPathInstances, WalkSet, cooccurrence_counts,
                          extract_pairs, extract_pairs_from, generate_walks, next_node)

from conftest import build_graph
from oracles import brute_force_pairs


def test_metapath_parse():
    assert MetaPath.parse("apvpa").name == "APVPA"
    assert APA.cycle == (NodeType.AUTHOR, NodeType.PAPER)
    with pytest.raises(ConfigError):
        MetaPath.parse("AVA")  # no author-venue edges
    with pytest.raises(ConfigError):
        MetaPath.parse("AP")
    with pytest.raises(ConfigError):
        MetaPath.parse("A")


def test_next_node_uniform_over_three_papers():
    g = build_graph(1, 3, 0, [(0, 0), (0, 1), (0, 2)])
    rng = np.random.default_rng(1)
    draws = [next_node(g, 0, APA, 0, rng) for _ in range(30000)]
    freq = np.bincount(draws, minlength=g.n_nodes)[g.papers] / len(draws)
    assert np.allclose(freq, 1 / 3, atol=0.015)


def test_next_node_never_picks_wrong_type(small_graph):
    g = small_graph
    rng = np.random.default_rng(0)
    p2 = g.node_id("p2")  # has author, venue and citation neighbours
    for _ in range(2000):
        assert g.node_type[next_node(g, p2, APA, 1, rng)] == NodeType.AUTHOR


def test_next_node_dead_end_and_contract(small_graph):
    g = small_graph
    rng = np.random.default_rng(0)
    assert next_node(g, g.node_id("a4"), APA, 0, rng) is None
    with pytest.raises(ContractError):
        next_node(g, g.node_id("p0"), APA, 0, rng)


def test_four_neighbour_frequencies_chi_square():
    g = build_graph(1, 4, 0, [(0, i) for i in range(4)])
    rng = np.random.default_rng(7)
    draws = np.array([next_node(g, 0, APA, 0, rng) for _ in range(10000)])
    counts = np.bincount(draws - 1, minlength=4)
    assert np.all((counts / 1e4 >= 0.22) & (counts / 1e4 <= 0.28))
    assert chisquare(counts).pvalue > 0.01


def test_generate_walks_counts_and_pattern(synthetic):
    g, _ = synthetic
    ws = generate_walks(g, APA, 5, 20, seed=0)
    assert len(ws) <= 5 * len(g.authors)
    for walk in ws:
        assert g.node_type[walk[0]] == NodeType.AUTHOR
        assert 2 <= len(walk) <= 20
        for pos, node in enumerate(walk):
            assert g.node_type[node] == APA.type_at(pos)
        for a, b in zip(walk, walk[1:]):
            assert b in g.walk_neighbors(a, g.node_type[b])


def test_isolated_author_walks_are_dropped(small_graph):
    g = small_graph
    ws = generate_walks(g, APA, 3, 6, seed=0)
    assert g.node_id("a4") not in {int(w[0]) for w in ws}
    assert len(ws) == 3 * 4


def test_apppa_style_walks_use_citations_both_ways(small_graph):
    g = small_graph
    ws = generate_walks(g, MetaPath.parse("APPA"), 20, 7, seed=1)
    for walk in ws:
        for pos, node in enumerate(walk):
            assert g.node_type[node] == MetaPath.parse("APPA").type_at(pos)


def test_walks_deterministic(synthetic):
    g, _ = synthetic
    a = generate_walks(g, APA, 2, 10, seed=4)
    b = generate_walks(g, APA, 2, 10, seed=4)
    c = generate_walks(g, APA, 2, 10, seed=5)
    assert np.array_equal(a.walks, b.walks)
    assert not np.array_equal(a.walks, c.walks)


def test_generate_walks_rejects_bad_sizes(small_graph):
    with pytest.raises(ConfigError):
        generate_walks(small_graph, APA, 0, 5, 0)
    with pytest.raises(ConfigError):
        generate_walks(small_graph, APA, 1, 1, 0)


def _walk_graph():
    # P1=p0, A1=a0, P2=p1, A2=a1; a0 wrote p0 and p1, a1 wrote p1
    return build_graph(2, 2, 0, [(0, 0), (0, 1), (1, 1)])


def _as_tuples(inst):
    return [(int(inst.v[i]), int(inst.u[i]), tuple(inst.path(i).tolist()), int(inst.y[i]))
            for i in range(len(inst))]


def test_extract_pairs_segment_tau3():
    g = _walk_graph()
    P1, A1, P2, A2 = g.node_id("p0"), g.node_id("a0"), g.node_id("p1"), g.node_id("a1")
    got = sorted(_as_tuples(extract_pairs([P1, A1, P2, A2], 3, g)))
    want = sorted([(P1, A1, (P1, A1), 1), (P1, A2, (P1, A1, P2, A2), 0),
                   (P2, A1, (P2, A1), 1), (P2, A2, (P2, A2), 1)])
    assert got == want


def test_extract_pairs_tau1_adjacent_only():
    g = _walk_graph()
    P1, A1, P2, A2 = g.node_id("p0"), g.node_id("a0"), g.node_id("p1"), g.node_id("a1")
    got = {(v, u) for v, u, _, _ in _as_tuples(extract_pairs([P1, A1, P2, A2], 1, g))}
    assert got == {(P1, A1), (P2, A1), (P2, A2)}


def test_extract_pairs_without_papers():
    g = _walk_graph()
    assert len(extract_pairs([0, 1], 3, g)) == 0
    with pytest.raises(ConfigError):
        extract_pairs([0], 0, g)


def test_extract_pairs_matches_brute_force(synthetic):
    g, _ = synthetic
    ws = generate_walks(g, APA, 1, 12, seed=3)
    for tau in (1, 2, 3, 5):
        inst = extract_pairs_from(ws, tau, g)
        got = sorted(_as_tuples(inst))
        want = sorted(t for walk in ws for t in brute_force_pairs(walk, tau, g))
        assert got == want
        assert np.all(inst.path_len <= 2 * tau + 1)


def test_reversed_walk_gives_same_pairs(synthetic):
    g, _ = synthetic
    ws = generate_walks(g, APA, 1, 9, seed=2)
    for walk in list(ws)[:40]:
        fwd = sorted(_as_tuples(extract_pairs(walk, 3, g)))
        rev = sorted(_as_tuples(extract_pairs(walk[::-1], 3, g)))
        assert fwd == rev


def test_walk_and_instance_files_round_trip(tmp_path, synthetic):
    g, _ = synthetic
    ws = generate_walks(g, APA, 1, 8, seed=0)
    ws.save(tmp_path / "walks.tsv")
    back = WalkSet.load(tmp_path / "walks.tsv")
    assert back.metapath == APA and back.seed == 0
    assert [w.tolist() for w in back] == [w.tolist() for w in ws]
    inst = extract_pairs_from(ws, 3, g)
    inst.save_jsonl(tmp_path / "pairs.jsonl")
    again = PairPathInstances.load_jsonl(tmp_path / "pairs.jsonl", 3)
    assert _as_tuples(again) == _as_tuples(inst)


def test_true_coauthors_cooccur_more_often(synthetic):
    # averaged over papers, true authors co-occur with a paper more than non-authors do
    g, _ = synthetic
    ws = generate_walks(g, APA, 5, 20, seed=0)
    cooc = cooccurrence_counts(extract_pairs_from(ws, 3, g), g.n_nodes)
    true_mean, false_mean = [], []
    for p, counts in cooc.items():
        t = [c for a, c in counts.items() if g.has_authorship(p, a)]
        f = [c for a, c in counts.items() if not g.has_authorship(p, a)]
        if t and f:
            true_mean.append(np.mean(t))
            false_mean.append(np.mean(f))
    assert np.mean(true_mean) > np.mean(false_mean)


@settings(max_examples=40, deadline=None)
@given(st.integers(0, 10**6), st.integers(1, 4), st.integers(2, 8))
def test_pair_invariants(seed, tau, length):
    g = build_graph(4, 4, 0, [(0, 0), (1, 0), (1, 1), (2, 1), (2, 2), (3, 3), (0, 3)])
    ws = generate_walks(g, APA, 2, length, seed)
    inst = extract_pairs_from(ws, tau, g)
    for i in range(len(inst)):
        path = inst.path(i)
        assert path[0] == inst.v[i] and path[-1] == inst.u[i]
        assert 2 <= len(path) <= 2 * tau + 1
        assert inst.y[i] == g.has_authorship(inst.v[i], inst.u[i])
        for a, b in zip(path, path[1:]):
            assert b in g.walk_neighbors(a, g.node_type[b])
