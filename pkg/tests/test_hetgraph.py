import json

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from tapem.errors import ConfigError, IntegrityError, NodeTypeError, ParseError, UnknownNodeError
from tapem.hetgraph import NodeType, load_dataset, load_graph, save_graph, temporal_split
from tapem.synth import SynthConfig, generate_synthetic, write_synthetic

from conftest import build_graph


def write_files(tmp_path, nodes, edges, abstracts):
    (tmp_path / "nodes.tsv").write_text("".join(f"{a}\t{b}\n" for a, b in nodes))
    (tmp_path / "edges.tsv").write_text("".join("\t".join(e) + "\n" for e in edges))
    (tmp_path / "abstracts.jsonl").write_text("".join(json.dumps(r) + "\n" for r in abstracts))
    return [tmp_path / n for n in ("nodes.tsv", "edges.tsv", "abstracts.jsonl")]


ABSTRACT = {"paper": "p", "year": 2010, "tokens": ["a", "b"]}


def test_load_two_authors_one_paper(tmp_path):
    files = write_files(tmp_path, [("x", "author"), ("y", "author"), ("p", "paper")],
                        [("x", "p", "writes"), ("p", "y", "writes")], [ABSTRACT])
    g = load_graph(*files)
    assert len(g.typed_neighbors(g.node_id("p"), NodeType.AUTHOR)) == 2
    assert g.has_authorship(g.node_id("p"), g.node_id("y"))


def test_unknown_edge_endpoint_is_named(tmp_path):
    files = write_files(tmp_path, [("x", "author"), ("p", "paper")],
                        [("x", "ghost", "writes")], [ABSTRACT])
    with pytest.raises(IntegrityError, match="ghost"):
        load_graph(*files)


def test_empty_edge_file(tmp_path):
    files = write_files(tmp_path, [("x", "author"), ("p", "paper")], [], [ABSTRACT])
    g = load_graph(*files)
    assert len(g.edges) == 0


def test_malformed_line_reports_line_number(tmp_path):
    files = write_files(tmp_path, [("x", "author"), ("p", "paper")], [], [ABSTRACT])
    files[1].write_text("x\tp\twrites\nbroken-line\n")
    with pytest.raises(ParseError, match=":2:"):
        load_graph(*files)


def test_unknown_node_type_is_parse_error(tmp_path):
    files = write_files(tmp_path, [("x", "wizard"), ("p", "paper")], [], [ABSTRACT])
    with pytest.raises(ParseError):
        load_graph(*files)


def test_paper_without_abstract(tmp_path):
    files = write_files(tmp_path, [("x", "author"), ("p", "paper"), ("q", "paper")], [], [ABSTRACT])
    with pytest.raises(IntegrityError, match="q"):
        load_graph(*files)


def test_rare_tokens_map_to_unknown(tmp_path):
    recs = [{"paper": f"p{i}", "year": 2000, "tokens": ["common", f"rare{i}"]} for i in range(3)]
    files = write_files(tmp_path, [(f"p{i}", "paper") for i in range(3)], [], recs)
    g = load_graph(*files)
    assert g.vocab == ["<unk>", "common"]
    assert g.paper_tokens(g.node_id("p1")).tolist() == [1, 0]


def test_min_venue_filter(tmp_path):
    nodes = [("a", "author"), ("p0", "paper"), ("p1", "paper"), ("p2", "paper"),
             ("big", "venue"), ("small", "venue")]
    edges = [("a", "p0", "writes"), ("p0", "big", "venue"), ("p1", "big", "venue"),
             ("p2", "small", "venue")]
    recs = [{"paper": p, "year": 2000, "tokens": ["t"]} for p in ("p0", "p1", "p2")]
    files = write_files(tmp_path, nodes, edges, recs)
    assert len(load_graph(*files).papers) == 3
    g = load_graph(*files, min_venue_papers=2)
    assert "p2" not in g.index and len(g.papers) == 2


def test_typed_neighbors_sorted(small_graph):
    g = small_graph
    papers = g.typed_neighbors(3, NodeType.PAPER)
    assert [g.names[p] for p in papers] == ["p0", "p2", "p3"]
    assert list(papers) == sorted(papers)


def test_typed_neighbors_author_order():
    # author with papers {3, 1, 7} -> [1, 3, 7]
    g = build_graph(1, 8, 0, [(0, 3), (0, 1), (0, 7)])
    assert [g.names[p] for p in g.typed_neighbors(0, NodeType.PAPER)] == ["p1", "p3", "p7"]


def test_typed_neighbors_empty_cases(small_graph):
    g = build_graph(1, 1, 1, [(0, 0)])
    assert len(g.typed_neighbors(g.node_id("p0"), NodeType.VENUE)) == 0
    venue = small_graph.node_id("v0")
    assert len(small_graph.typed_neighbors(venue, NodeType.AUTHOR)) == 0
    with pytest.raises(UnknownNodeError):
        small_graph.typed_neighbors(999, NodeType.AUTHOR)


def test_has_authorship(small_graph):
    g = small_graph
    p0 = g.node_id("p0")
    assert g.has_authorship(p0, g.node_id("a0"))
    assert not g.has_authorship(p0, g.node_id("a1"))
    with pytest.raises(NodeTypeError):
        g.has_authorship(p0, p0)


def test_citations_directed_but_walkable_both_ways(small_graph):
    g = small_graph
    p0, p1 = g.node_id("p0"), g.node_id("p1")
    assert p0 in g.typed_neighbors(p1, NodeType.PAPER)
    assert p1 not in g.typed_neighbors(p0, NodeType.PAPER)
    assert p1 in g.walk_neighbors(p0, NodeType.PAPER)


def test_adjacency_symmetry_and_type_consistency(synthetic):
    g, _ = synthetic
    for a in g.authors[:50]:
        for p in g.typed_neighbors(a, NodeType.PAPER):
            assert a in g.typed_neighbors(p, NodeType.AUTHOR)
    for v in range(0, g.n_nodes, 7):
        for t in NodeType:
            assert np.all(g.node_type[g.typed_neighbors(v, t)] == t)


def test_save_load_round_trip(tmp_path, synthetic):
    g, _ = synthetic
    save_graph(g, tmp_path)
    assert load_dataset(tmp_path) == g


def test_temporal_split_sizes():
    g = build_graph(1, 10, 0, [(0, i) for i in range(10)])  # years 2000..2009
    s = temporal_split(g, 2006, seed=3)
    assert len(s.train) == 6 and len(s.validation) == 2 and len(s.test) == 2
    with pytest.raises(ConfigError):
        temporal_split(g, 2020, seed=0)


def test_temporal_split_odd_is_deterministic():
    g = build_graph(1, 10, 0, [(0, i) for i in range(10)])
    sizes = {(len(s.validation), len(s.test)) for s in
             (temporal_split(g, 2005, seed) for seed in range(20))}
    assert sizes == {(2, 3), (3, 2)}
    a, b = temporal_split(g, 2005, 7), temporal_split(g, 2005, 7)
    assert np.array_equal(a.validation, b.validation) and np.array_equal(a.test, b.test)


@settings(max_examples=30, deadline=None)
@given(st.lists(st.integers(2000, 2010), min_size=3, max_size=40), st.integers(0, 10**6))
def test_split_partitions_papers(years, seed):
    n = len(years)
    g = build_graph(1, n, 0, [(0, i) for i in range(n)])
    g.years = {g.node_id(f"p{i}"): y for i, y in enumerate(years)}
    T = sorted(years)[len(years) // 2]
    try:
        s = temporal_split(g, T, seed)
    except ConfigError:
        return
    parts = [set(s.train.tolist()), set(s.validation.tolist()), set(s.test.tolist())]
    assert sum(map(len, parts)) == n and len(set.union(*parts)) == n
    assert abs(len(s.validation) - len(s.test)) <= 1
    assert all(g.years[p] < T for p in parts[0])


def test_synthetic_counts(synthetic):
    g, split = synthetic
    assert (len(g.authors), len(g.papers), len(g.venues)) == (200, 500, 18)
    assert all(len(g.paper_tokens(p)) for p in g.papers)


def test_synthetic_activity_skew(synthetic):
    # most authors are inactive: at least 85% have at most five papers
    g, _ = synthetic
    counts = g.paper_counts()[g.authors]
    assert np.mean(counts <= 5) >= 0.85


def test_synthetic_files_are_byte_identical(tmp_path):
    cfg = SynthConfig(n_authors=40, n_papers=80, n_venues=4, n_topics=2, vocab_size=300)
    for d in ("a", "b"):
        g, split = generate_synthetic(cfg, seed=5)
        write_synthetic(g, split, cfg, 5, tmp_path / d)
    for name in ("nodes.tsv", "edges.tsv", "abstracts.jsonl", "meta.json", "split.json"):
        assert (tmp_path / "a" / name).read_bytes() == (tmp_path / "b" / name).read_bytes()


def test_synthetic_infeasible_config():
    with pytest.raises(ConfigError):
        generate_synthetic(SynthConfig(n_authors=2, max_authors_per_paper=3, n_topics=1), seed=0)
