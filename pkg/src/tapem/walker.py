"""Meta-path guided random walks and paper-author pair extraction."""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import kernels
from .errors import ConfigError, ContractError
from .hetgraph import EDGE_SCHEMA, HeteroGraph, NodeType

_LETTERS = {"A": NodeType.AUTHOR, "P": NodeType.PAPER, "V": NodeType.VENUE}


@dataclass(frozen=True)
class MetaPath:
    """Node-type pattern such as APA.  Walks repeat ``types[:-1]`` cyclically."""

    types: tuple

    def __post_init__(self):
        types = tuple(NodeType(int(t)) for t in self.types)
        object.__setattr__(self, "types", types)
        if len(types) < 2:
            raise ConfigError("a meta-path needs at least two node types")
        if types[0] != types[-1]:
            raise ConfigError(f"meta-path {self.name} must start and end with the same type")
        linked = {frozenset(pair) for pair in EDGE_SCHEMA.values()}
        for a, b in zip(types, types[1:]):
            if frozenset((a, b)) not in linked:
                raise ConfigError(f"meta-path {self.name}: no edge type joins {a.name} and {b.name}")

    @classmethod
    def parse(cls, text: str) -> "MetaPath":
        try:
            return cls(tuple(_LETTERS[c] for c in text.strip().upper()))
        except KeyError:
            raise ConfigError(f"bad meta-path {text!r}; use letters A, P, V") from None

    @property
    def name(self) -> str:
        return "".join(t.letter for t in self.types)

    @property
    def cycle(self) -> tuple:
        return self.types[:-1]

    def type_at(self, position: int) -> NodeType:
        return self.cycle[position % len(self.cycle)]


APA = MetaPath.parse("APA")


def node_rng(seed: int, node: int) -> np.random.Generator:
    """Independent stream per start node so walks do not depend on scheduling."""
    return np.random.default_rng([int(seed), 0x3A1C, int(node)])


def next_node(graph: HeteroGraph, current: int, metapath: MetaPath, step_index: int, rng):
    """One transition: uniform over neighbours of the next required type, or ``None``."""
    if graph.type_of(current) != metapath.type_at(step_index):
        raise ContractError(
            f"node {graph.names[current]!r} is {graph.type_of(current).name}, meta-path "
            f"{metapath.name} expects {metapath.type_at(step_index).name} at step {step_index}")
    nbrs = graph.walk_neighbors(current, metapath.type_at(step_index + 1))
    if len(nbrs) == 0:
        return None
    return int(nbrs[min(int(rng.random() * len(nbrs)), len(nbrs) - 1)])


class WalkSet:
    """Fixed-width walk matrix padded with ``-1`` plus per-walk lengths."""

    def __init__(self, walks, lengths, metapath: MetaPath, seed: int):
        self.walks = np.asarray(walks, dtype=np.int64)
        self.lengths = np.asarray(lengths, dtype=np.int64)
        self.metapath = metapath
        self.seed = seed

    def __len__(self):
        return len(self.lengths)

    def __iter__(self):
        for row, n in zip(self.walks, self.lengths):
            yield row[:n]

    def save(self, path):
        with open(path, "w", encoding="utf-8", newline="\n") as fh:
            fh.write(f"# metapath={self.metapath.name} seed={self.seed}\n")
            for walk in self:
                fh.write(" ".join(map(str, walk.tolist())) + "\n")

    @classmethod
    def load(cls, path):
        meta, rows = {}, []
        with open(path, encoding="utf-8") as fh:
            for line in fh:
                if line.startswith("#"):
                    meta.update(kv.split("=", 1) for kv in line[1:].split())
                elif line.strip():
                    rows.append([int(x) for x in line.split()])
        width = max((len(r) for r in rows), default=0)
        walks = np.full((len(rows), width), -1, dtype=np.int64)
        for i, r in enumerate(rows):
            walks[i, :len(r)] = r
        return cls(walks, [len(r) for r in rows], MetaPath.parse(meta.get("metapath", "APA")),
                   int(meta.get("seed", 0)))


def generate_walks(graph: HeteroGraph, metapath: MetaPath, walks_per_node: int,
                   walk_length: int, seed: int) -> WalkSet:
    """Launch ``walks_per_node`` walks from every node of the meta-path's first type.

    Walks that die before reaching two nodes are dropped.
    """
    if walks_per_node < 1 or walk_length < 2:
        raise ConfigError("walks_per_node must be >= 1 and walk_length >= 2")
    first = metapath.types[0]
    starts_by_node = np.flatnonzero(graph.node_type == first)
    starts = np.repeat(starts_by_node, walks_per_node)
    uniforms = np.empty((len(starts), walk_length - 1))
    for k, node in enumerate(starts_by_node):
        rows = slice(k * walks_per_node, (k + 1) * walks_per_node)
        uniforms[rows] = node_rng(seed, node).random((walks_per_node, walk_length - 1))
    cycle = np.array([int(t) for t in metapath.cycle], dtype=np.int64)
    walks, lengths = kernels.metapath_walks(graph.walk_indptr, graph.walk_indices,
                                            starts.astype(np.int64), cycle, uniforms)
    keep = lengths >= 2
    return WalkSet(walks[keep], lengths[keep], metapath, seed)


@dataclass
class PairPathInstances:
    """Column store of (paper, author, context path, label) instances.

    ``paths`` rows run from the paper to the author and are padded with -1;
    ``offsets`` holds the paper's position in its source walk.
    """

    v: np.ndarray
    u: np.ndarray
    paths: np.ndarray
    path_len: np.ndarray
    y: np.ndarray
    walk: np.ndarray
    offsets: np.ndarray

    def __len__(self):
        return len(self.v)

    def path(self, i) -> np.ndarray:
        return self.paths[i, :self.path_len[i]]

    def subset(self, index) -> "PairPathInstances":
        return PairPathInstances(*(getattr(self, f)[index] for f in
                                   ("v", "u", "paths", "path_len", "y", "walk", "offsets")))

    def save_jsonl(self, path):
        with open(path, "w", encoding="utf-8", newline="\n") as fh:
            for i in range(len(self)):
                rec = {"v": int(self.v[i]), "u": int(self.u[i]),
                       "path": self.path(i).tolist(), "y": int(self.y[i])}
                fh.write(json.dumps(rec) + "\n")

    @classmethod
    def load_jsonl(cls, path, tau):
        recs = [json.loads(line) for line in Path(path).read_text(encoding="utf-8").splitlines() if line]
        n = len(recs)
        paths = np.full((n, 2 * tau + 1), -1, dtype=np.int64)
        for i, r in enumerate(recs):
            paths[i, :len(r["path"])] = r["path"]
        return cls(
            np.array([r["v"] for r in recs], dtype=np.int64),
            np.array([r["u"] for r in recs], dtype=np.int64),
            paths,
            np.array([len(r["path"]) for r in recs], dtype=np.int64),
            np.array([r["y"] for r in recs], dtype=np.int8),
            np.full(n, -1, dtype=np.int64),
            np.full(n, -1, dtype=np.int64),
        )


def extract_pairs_from(walkset: WalkSet, tau: int, graph: HeteroGraph) -> PairPathInstances:
    """All paper-author pairs within ``tau`` positions, in walk/paper/author order.

    The window is closed: an author exactly ``tau`` steps away is included.
    """
    if tau < 1:
        raise ConfigError("tau must be >= 1")
    is_paper = graph.node_type == NodeType.PAPER
    is_author = graph.node_type == NodeType.AUTHOR
    w, i, j = kernels.pair_positions(walkset.walks, walkset.lengths, is_paper, is_author, int(tau))
    n = len(w)
    dist = np.abs(j - i)
    step = np.sign(j - i)
    k = np.arange(2 * tau + 1)
    valid = k[None, :] <= dist[:, None]
    pos = np.where(valid, i[:, None] + step[:, None] * k[None, :], 0)
    paths = np.where(valid, walkset.walks[w[:, None], pos], -1) if n else np.empty((0, 2 * tau + 1), np.int64)
    v = walkset.walks[w, i]
    u = walkset.walks[w, j]
    y = graph.authorship_labels(v, u).astype(np.int8)
    return PairPathInstances(v, u, paths.astype(np.int64), dist + 1, y, w, i)


def extract_pairs(walk, tau: int, graph: HeteroGraph) -> PairPathInstances:
    """Pairs of a single walk (node-id sequence)."""
    walk = np.asarray(walk, dtype=np.int64)
    ws = WalkSet(walk[None, :], [len(walk)], APA, 0)
    return extract_pairs_from(ws, tau, graph)


def cooccurrence_counts(instances: PairPathInstances, n_nodes: int) -> dict:
    """``{paper: {author: count}}`` over the extracted pairs."""
    keys, counts = np.unique(instances.v * n_nodes + instances.u, return_counts=True)
    out: dict = {}
    for key, c in zip(keys.tolist(), counts.tolist()):
        out.setdefault(key // n_nodes, {})[key % n_nodes] = c
    return out

