"""Typed academic network: authors, papers and venues.

Node ids are dense integers assigned in node-file order.  External string ids
are kept in ``graph.names`` and written back unchanged by :func:`save_graph`.
"""

from __future__ import annotations

import json
from collections import Counter
from dataclasses import dataclass
from enum import IntEnum
from pathlib import Path

import numpy as np

from .errors import (
    ConfigError,
    IntegrityError,
    NodeTypeError,
    ParseError,
    UnknownNodeError,
)

UNK = "<unk>"
MIN_TOKEN_COUNT = 3


class NodeType(IntEnum):
    AUTHOR = 0
    PAPER = 1
    VENUE = 2

    @classmethod
    def parse(cls, text: str) -> "NodeType":
        try:
            return cls[text.strip().upper()]
        except KeyError:
            raise ValueError(f"unknown node type {text!r}") from None

    @property
    def letter(self) -> str:
        return self.name[0]


class EdgeType(IntEnum):
    WRITES = 0
    CITES = 1
    PUBLISHES_IN = 2

    @property
    def label(self) -> str:
        return _EDGE_LABELS[self]

    @classmethod
    def parse(cls, text: str) -> "EdgeType":
        for etype, label in _EDGE_LABELS.items():
            if text.strip().lower() == label:
                return etype
        raise ValueError(f"unknown edge type {text!r}")


_EDGE_LABELS = {EdgeType.WRITES: "writes", EdgeType.CITES: "cites", EdgeType.PUBLISHES_IN: "venue"}

# endpoint types each edge type connects, in (src, dst) order
EDGE_SCHEMA = {
    EdgeType.WRITES: (NodeType.AUTHOR, NodeType.PAPER),
    EdgeType.CITES: (NodeType.PAPER, NodeType.PAPER),
    EdgeType.PUBLISHES_IN: (NodeType.PAPER, NodeType.VENUE),
}


def _csr(n_nodes, src, dst, node_type):
    """Per-target-type CSR adjacency, neighbours sorted ascending."""
    n_types = len(NodeType)
    indptr = np.zeros((n_types, n_nodes + 1), dtype=np.int64)
    if len(src):
        pairs = np.unique(np.stack([src, dst], axis=1), axis=0)
        src, dst = pairs[:, 0], pairs[:, 1]
    chunks = []
    offset = 0
    for t in range(n_types):
        sel = node_type[dst] == t
        s, d = src[sel], dst[sel]
        order = np.lexsort((d, s))
        s, d = s[order], d[order]
        counts = np.bincount(s, minlength=n_nodes)
        indptr[t, 1:] = offset + np.cumsum(counts)
        indptr[t, 0] = offset
        chunks.append(d)
        offset += len(d)
    indices = np.concatenate(chunks).astype(np.int64) if chunks else np.empty(0, np.int64)
    return indptr, indices


class HeteroGraph:
    """Immutable heterogeneous graph with typed adjacency.

    ``writes`` and ``venue`` edges are symmetric in the adjacency; ``cites``
    edges are directed (citing paper -> cited paper).  Walks that need a
    Paper -> Paper step use :meth:`walk_neighbors`, where citations are
    traversable in both directions.
    """

    def __init__(self, names, node_type, edges, tokens, years,
                 min_token_count=MIN_TOKEN_COUNT):
        self.names = list(names)
        self.node_type = np.asarray(node_type, dtype=np.int8)
        n = len(self.names)
        if self.node_type.shape != (n,):
            raise IntegrityError("node type map does not match node count")
        self.index = {name: i for i, name in enumerate(self.names)}
        if len(self.index) != n:
            dup = [k for k, c in Counter(self.names).items() if c > 1][0]
            raise IntegrityError(f"duplicate node id {dup!r}")

        e = np.asarray(edges, dtype=np.int64).reshape(-1, 3)
        self.edges = e
        src, dst, et = e[:, 0], e[:, 1], e[:, 2]
        if len(e) and (src.min() < 0 or dst.max() >= n or dst.min() < 0 or src.max() >= n):
            raise IntegrityError("edge endpoint out of range")
        for etype, (ts, td) in EDGE_SCHEMA.items():
            sel = et == etype
            if np.any(self.node_type[src[sel]] != ts) or np.any(self.node_type[dst[sel]] != td):
                raise IntegrityError(f"{etype.label} edge with wrong endpoint types")

        self.authors = np.flatnonzero(self.node_type == NodeType.AUTHOR)
        self.papers = np.flatnonzero(self.node_type == NodeType.PAPER)
        self.venues = np.flatnonzero(self.node_type == NodeType.VENUE)

        # raw abstracts and years, keyed by paper node id
        self.tokens = {int(p): list(t) for p, t in tokens.items()}
        self.years = {int(p): int(y) for p, y in years.items()}
        for p in self.papers:
            p = int(p)
            if p not in self.tokens:
                raise IntegrityError(f"paper {self.names[p]!r} has no abstract")
            if not self.tokens[p]:
                raise IntegrityError(f"paper {self.names[p]!r} has an empty abstract")
            if p not in self.years:
                raise IntegrityError(f"paper {self.names[p]!r} has no year")
        for p in self.tokens:
            if self.node_type[p] != NodeType.PAPER:
                raise IntegrityError(f"abstract given for non-paper {self.names[p]!r}")

        self.min_token_count = int(min_token_count)
        counts = Counter(tok for p in self.papers for tok in self.tokens[int(p)])
        kept = sorted(t for t, c in counts.items() if c >= self.min_token_count and t != UNK)
        self.vocab = [UNK] + kept
        self.token_index = {t: i for i, t in enumerate(self.vocab)}
        self.token_ids = {
            p: np.array([self.token_index.get(t, 0) for t in toks], dtype=np.int64)
            for p, toks in self.tokens.items()
        }

        sym = et != EdgeType.CITES
        a_src = np.concatenate([src, dst[sym]])
        a_dst = np.concatenate([dst, src[sym]])
        self.indptr, self.indices = _csr(n, a_src, a_dst, self.node_type)
        self.walk_indptr, self.walk_indices = _csr(
            n, np.concatenate([src, dst]), np.concatenate([dst, src]), self.node_type)

        w = et == EdgeType.WRITES
        self._authorship = set(zip(dst[w].tolist(), src[w].tolist()))
        self._authorship_keys = np.unique(dst[w] * n + src[w])

    # ------------------------------------------------------------------ queries

    @property
    def n_nodes(self) -> int:
        return len(self.names)

    def _check(self, node):
        if not 0 <= int(node) < self.n_nodes:
            raise UnknownNodeError(f"unknown node id {node!r}")
        return int(node)

    def type_of(self, node) -> NodeType:
        return NodeType(int(self.node_type[self._check(node)]))

    def node_id(self, name: str) -> int:
        try:
            return self.index[name]
        except KeyError:
            raise UnknownNodeError(f"unknown node id {name!r}") from None

    def typed_neighbors(self, node, node_type) -> np.ndarray:
        v = self._check(node)
        t = int(node_type)
        return self.indices[self.indptr[t, v]:self.indptr[t, v + 1]]

    def walk_neighbors(self, node, node_type) -> np.ndarray:
        v = self._check(node)
        t = int(node_type)
        return self.walk_indices[self.walk_indptr[t, v]:self.walk_indptr[t, v + 1]]

    def has_authorship(self, paper, author) -> bool:
        if self.type_of(paper) != NodeType.PAPER:
            raise NodeTypeError(f"{self.names[int(paper)]!r} is not a paper")
        if self.type_of(author) != NodeType.AUTHOR:
            raise NodeTypeError(f"{self.names[int(author)]!r} is not an author")
        return (int(paper), int(author)) in self._authorship

    def authorship_labels(self, papers, authors) -> np.ndarray:
        """Vectorised :meth:`has_authorship` without type checks."""
        keys = np.asarray(papers, dtype=np.int64) * self.n_nodes + np.asarray(authors, dtype=np.int64)
        return np.isin(keys, self._authorship_keys)

    def authors_of(self, paper) -> np.ndarray:
        return self.typed_neighbors(paper, NodeType.AUTHOR)

    def papers_of(self, author) -> np.ndarray:
        return self.typed_neighbors(author, NodeType.PAPER)

    def paper_tokens(self, paper) -> np.ndarray:
        p = self._check(paper)
        if p not in self.token_ids:
            raise NodeTypeError(f"{self.names[p]!r} is not a paper")
        return self.token_ids[p]

    def encode_tokens(self, words) -> np.ndarray:
        return np.array([self.token_index.get(w, 0) for w in words], dtype=np.int64)

    def restrict_papers(self, keep) -> "HeteroGraph":
        """Same node set, but only edges whose paper endpoints are all in ``keep``.

        Abstracts, years and the vocabulary are preserved so held-out papers
        can still be encoded.
        """
        keep_mask = np.zeros(self.n_nodes, dtype=bool)
        keep_mask[np.asarray(keep, dtype=np.int64)] = True
        keep_mask[self.node_type != NodeType.PAPER] = True
        e = self.edges
        sel = keep_mask[e[:, 0]] & keep_mask[e[:, 1]] if len(e) else np.zeros(0, bool)
        sub = HeteroGraph(self.names, self.node_type, e[sel], self.tokens, self.years,
                          self.min_token_count)
        # keep the parent's vocabulary so token ids stay comparable
        sub.vocab, sub.token_index, sub.token_ids = self.vocab, self.token_index, self.token_ids
        return sub

    def paper_counts(self, papers=None) -> np.ndarray:
        """Publications per node (indexed by node id), optionally within ``papers``."""
        e = self.edges
        w = e[e[:, 2] == EdgeType.WRITES] if len(e) else e
        if papers is not None:
            mask = np.zeros(self.n_nodes, dtype=bool)
            mask[np.asarray(papers, dtype=np.int64)] = True
            w = w[mask[w[:, 1]]]
        return np.bincount(w[:, 0], minlength=self.n_nodes) if len(w) else np.zeros(self.n_nodes, np.int64)

    def __eq__(self, other):
        if not isinstance(other, HeteroGraph):
            return NotImplemented
        return (
            self.names == other.names
            and np.array_equal(self.node_type, other.node_type)
            and np.array_equal(self.edges, other.edges)
            and self.tokens == other.tokens
            and self.years == other.years
            and self.vocab == other.vocab
        )

    def __repr__(self):
        return (f"HeteroGraph(authors={len(self.authors)}, papers={len(self.papers)}, "
                f"venues={len(self.venues)}, edges={len(self.edges)}, vocab={len(self.vocab)})")


@dataclass(frozen=True)
class CorpusSplit:
    train: np.ndarray
    validation: np.ndarray
    test: np.ndarray
    year: int

    def to_json(self, graph: HeteroGraph) -> dict:
        return {
            "T": self.year,
            "train": [graph.names[p] for p in self.train],
            "validation": [graph.names[p] for p in self.validation],
            "test": [graph.names[p] for p in self.test],
        }

    @classmethod
    def from_json(cls, graph: HeteroGraph, obj: dict) -> "CorpusSplit":
        ids = lambda key: np.array([graph.node_id(n) for n in obj[key]], dtype=np.int64)
        return cls(ids("train"), ids("validation"), ids("test"), int(obj["T"]))


def temporal_split(graph: HeteroGraph, T: int, seed: int) -> CorpusSplit:
    """Train on papers before ``T``; shuffle the rest and halve it into validation/test."""
    papers = graph.papers
    years = np.array([graph.years[int(p)] for p in papers])
    train = papers[years < T]
    later = papers[years >= T]
    if len(train) == 0 or len(later) < 2:
        raise ConfigError(
            f"split year {T} leaves {len(train)} training and {len(later)} held-out papers; "
            "need at least 1 and 2"
        )
    rng = np.random.default_rng([int(seed), 0x5E11])
    later = later[rng.permutation(len(later))]
    half = (len(later) + int(rng.integers(2))) // 2
    return CorpusSplit(np.sort(train), np.sort(later[:half]), np.sort(later[half:]), int(T))


# ---------------------------------------------------------------------- file IO


def _read_tsv(path, ncols):
    rows = []
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, 1):
            line = line.rstrip("\n").rstrip("\r")
            if not line.strip() or line.startswith("#"):
                continue
            parts = line.split("\t")
            if len(parts) != ncols:
                raise ParseError(path, lineno, f"expected {ncols} tab-separated fields, got {len(parts)}")
            rows.append((lineno, [p.strip() for p in parts]))
    return rows


def load_graph(node_file, edge_file, abstract_file, *, min_token_count=MIN_TOKEN_COUNT,
               min_venue_papers=0) -> HeteroGraph:
    """Parse the three corpus files into a validated :class:`HeteroGraph`.

    ``min_venue_papers`` drops papers whose venue has fewer papers than the
    threshold (0 disables the filter).
    """
    names, types = [], []
    for lineno, (name, tname) in _read_tsv(node_file, 2):
        try:
            types.append(NodeType.parse(tname))
        except ValueError as exc:
            raise ParseError(node_file, lineno, str(exc)) from None
        names.append(name)
    index = {}
    for i, name in enumerate(names):
        if name in index:
            raise IntegrityError(f"duplicate node id {name!r}")
        index[name] = i

    raw_edges = []
    for lineno, (s, d, tname) in _read_tsv(edge_file, 3):
        try:
            etype = EdgeType.parse(tname)
        except ValueError as exc:
            raise ParseError(edge_file, lineno, str(exc)) from None
        for endpoint in (s, d):
            if endpoint not in index:
                raise IntegrityError(f"{edge_file}:{lineno}: edge references unknown node id {endpoint!r}")
        si, di = index[s], index[d]
        want = EDGE_SCHEMA[etype]
        got = (types[si], types[di])
        if etype != EdgeType.CITES and got == want[::-1]:
            si, di = di, si
        elif got != want:
            raise IntegrityError(
                f"{edge_file}:{lineno}: {etype.label} edge joins {got[0].name.lower()} "
                f"and {got[1].name.lower()}"
            )
        raw_edges.append((si, di, int(etype)))

    tokens, years = {}, {}
    with open(abstract_file, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, 1):
            if not line.strip():
                continue
            try:
                obj = json.loads(line)
                name, year, toks = obj["paper"], int(obj["year"]), obj["tokens"]
            except (ValueError, KeyError, TypeError) as exc:
                raise ParseError(abstract_file, lineno, f"bad abstract record: {exc}") from None
            if not isinstance(toks, list) or not all(isinstance(t, str) for t in toks):
                raise ParseError(abstract_file, lineno, "tokens must be a list of strings")
            name = str(name)
            if name not in index:
                raise IntegrityError(f"{abstract_file}:{lineno}: abstract for unknown paper {name!r}")
            tokens[index[name]] = toks
            years[index[name]] = year

    if min_venue_papers > 0:
        names, types, raw_edges, tokens, years = _filter_small_venues(
            names, types, raw_edges, tokens, years, min_venue_papers)

    return HeteroGraph(names, np.array(types, dtype=np.int8), raw_edges, tokens, years,
                       min_token_count)


def _filter_small_venues(names, types, edges, tokens, years, threshold):
    venue_size = Counter(d for s, d, t in edges if t == EdgeType.PUBLISHES_IN)
    drop = {s for s, d, t in edges if t == EdgeType.PUBLISHES_IN and venue_size[d] < threshold}
    keep = [i for i in range(len(names)) if i not in drop]
    remap = {old: new for new, old in enumerate(keep)}
    edges = [(remap[s], remap[d], t) for s, d, t in edges if s in remap and d in remap]
    tokens = {remap[p]: t for p, t in tokens.items() if p in remap}
    years = {remap[p]: y for p, y in years.items() if p in remap}
    return [names[i] for i in keep], [types[i] for i in keep], edges, tokens, years


def save_graph(graph: HeteroGraph, out_dir) -> dict:
    """Write ``nodes.tsv``, ``edges.tsv`` and ``abstracts.jsonl``; return the paths."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    paths = {"nodes": out / "nodes.tsv", "edges": out / "edges.tsv", "abstracts": out / "abstracts.jsonl"}
    with open(paths["nodes"], "w", encoding="utf-8", newline="\n") as fh:
        for name, t in zip(graph.names, graph.node_type):
            fh.write(f"{name}\t{NodeType(int(t)).name.lower()}\n")
    with open(paths["edges"], "w", encoding="utf-8", newline="\n") as fh:
        for s, d, t in graph.edges.tolist():
            fh.write(f"{graph.names[s]}\t{graph.names[d]}\t{EdgeType(t).label}\n")
    with open(paths["abstracts"], "w", encoding="utf-8", newline="\n") as fh:
        for p in graph.papers.tolist():
            rec = {"paper": graph.names[p], "year": graph.years[p], "tokens": graph.tokens[p]}
            fh.write(json.dumps(rec, ensure_ascii=False) + "\n")
    return paths


def load_dataset(data_dir, **kwargs) -> HeteroGraph:
    d = Path(data_dir)
    return load_graph(d / "nodes.tsv", d / "edges.tsv", d / "abstracts.jsonl", **kwargs)
