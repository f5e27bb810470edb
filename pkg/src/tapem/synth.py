"""Planted-topic academic network generator.

Authors belong to a topic and, inside it, to a research group led by one
prolific principal author; the remaining members publish occasionally, so most
authors are inactive.  Abstracts mix background words, topic words, group
words and a few signature words of the paper's own authors.  Co-authors come
mostly from the lead author's group, with a small cross-topic noise rate.
"""

from __future__ import annotations

import hashlib
import json
from dataclasses import asdict, dataclass, fields
from pathlib import Path

import numpy as np

from .errors import ConfigError
from .hetgraph import CorpusSplit, EdgeType, HeteroGraph, NodeType, save_graph, temporal_split


@dataclass(frozen=True)
class SynthConfig:
    n_authors: int = 200
    n_papers: int = 500
    n_venues: int = 18
    n_topics: int = 4
    vocab_size: int = 1000
    tokens_per_abstract: int = 24
    min_authors_per_paper: int = 1
    max_authors_per_paper: int = 3
    group_size: int = 12
    principal_share: float = 0.85
    principal_weight: float = 8.0
    activity_skew: float = 0.3
    cross_topic_noise: float = 0.1
    same_group_prob: float = 0.8
    words_per_author: int = 2
    # token mixture: background / topic / group / author-signature (remainder)
    background_word_share: float = 0.15
    topic_word_share: float = 0.25
    group_word_share: float = 0.3
    citations_per_paper: int = 2
    year_start: int = 2006
    year_end: int = 2015
    split_year: int = 2014

    @classmethod
    def from_dict(cls, obj: dict) -> "SynthConfig":
        names = {f.name for f in fields(cls)}
        for key in obj:
            if key not in names:
                raise ConfigError(f"unknown synthetic config field {key!r}")
        try:
            cfg = cls(**obj)
        except TypeError as exc:
            raise ConfigError(str(exc)) from None
        cfg.validate()
        return cfg

    @property
    def author_word_share(self) -> float:
        return 1.0 - self.background_word_share - self.topic_word_share - self.group_word_share

    def validate(self):
        ints = ["n_authors", "n_papers", "n_venues", "n_topics", "vocab_size",
                "tokens_per_abstract", "min_authors_per_paper", "max_authors_per_paper",
                "group_size"]
        for name in ints:
            value = getattr(self, name)
            if isinstance(value, bool) or not isinstance(value, int) or value < 1:
                raise ConfigError(f"{name} must be a positive integer, got {value!r}")
        if self.max_authors_per_paper < self.min_authors_per_paper:
            raise ConfigError("max_authors_per_paper must be >= min_authors_per_paper")
        if self.max_authors_per_paper > self.n_authors:
            raise ConfigError(
                f"max_authors_per_paper ({self.max_authors_per_paper}) exceeds n_authors ({self.n_authors})")
        if self.n_topics > min(self.n_authors, self.n_venues):
            raise ConfigError("n_topics must not exceed n_authors or n_venues")
        if self.activity_skew < 0 or self.principal_weight <= 0:
            raise ConfigError("activity_skew must be >= 0 and principal_weight > 0")
        for name in ("principal_share", "cross_topic_noise", "same_group_prob",
                     "background_word_share", "topic_word_share", "group_word_share"):
            value = getattr(self, name)
            if not 0.0 <= value <= 1.0:
                raise ConfigError(f"{name} must lie in [0, 1], got {value!r}")
        if self.author_word_share < -1e-12:
            raise ConfigError("background, topic and group word shares must sum to <= 1")
        if self.words_per_author < 0 or self.citations_per_paper < 0:
            raise ConfigError("words_per_author and citations_per_paper must be >= 0")
        free = self.vocab_size - self.n_authors * self.words_per_author
        if free < 2 * self.n_topics + 1:
            raise ConfigError(
                f"vocab_size {self.vocab_size} too small for {self.n_authors} authors x "
                f"{self.words_per_author} signature words and {self.n_topics} topics")
        if not self.year_start < self.split_year <= self.year_end:
            raise ConfigError("need year_start < split_year <= year_end")


def _weighted_pick(rng, pool, weights, exclude=()):
    pool = np.asarray(pool)
    if len(exclude):
        keep = ~np.isin(pool, list(exclude))
        pool, weights = pool[keep], weights[keep]
    if len(pool) == 0:
        return None
    return int(rng.choice(pool, p=weights / weights.sum()))


def generate_synthetic(config: SynthConfig | None = None, seed: int = 0):
    """Build a planted-topic network and its temporal split.

    Returns ``(graph, split)``.  The planted assignments are exposed on
    ``graph.planted`` (author topic/group/principal flag, paper group).
    """
    cfg = config or SynthConfig()
    cfg.validate()
    rng = np.random.default_rng([int(seed), 0x5A7])
    A, P, V, T = cfg.n_authors, cfg.n_papers, cfg.n_venues, cfg.n_topics

    author_topic = np.arange(A) % T
    author_group = np.empty(A, dtype=np.int64)
    group_topic = []
    for t in range(T):
        members = np.flatnonzero(author_topic == t)
        n_groups = max(1, round(len(members) / cfg.group_size))
        for chunk in np.array_split(members, n_groups):
            author_group[chunk] = len(group_topic)
            group_topic.append(t)
    group_topic = np.array(group_topic)
    G = len(group_topic)
    group_members = [np.flatnonzero(author_group == g) for g in range(G)]

    activity = np.empty(A)
    principal = np.empty(G, dtype=np.int64)
    for g, members in enumerate(group_members):
        order = rng.permutation(len(members))
        principal[g] = members[order == 0][0]
        activity[members] = 1.0 / np.maximum(order, 1) ** cfg.activity_skew
        activity[principal[g]] = cfg.principal_weight
    venue_topic = np.arange(V) % T

    # vocabulary: author signature words | background | per topic (shared half, group half)
    n_sig = A * cfg.words_per_author
    author_words = np.arange(n_sig).reshape(A, cfg.words_per_author)
    n_bg = max(1, int((cfg.vocab_size - n_sig) * 0.2))
    background = np.arange(n_sig, n_sig + n_bg)
    per_topic = (cfg.vocab_size - n_sig - n_bg) // T
    words = [f"w{i:04d}" for i in range(cfg.vocab_size)]
    topic_words, group_words = [], [None] * G
    for t in range(T):
        start = n_sig + n_bg + t * per_topic
        block = np.arange(start, start + per_topic)
        n_shared = max(1, len(block) // 2)
        topic_words.append(block[:n_shared])
        groups = np.flatnonzero(group_topic == t)
        for g, chunk in zip(groups, np.array_split(block[n_shared:], len(groups))):
            group_words[g] = chunk if len(chunk) else block[:n_shared]

    years = np.sort(rng.integers(cfg.year_start, cfg.year_end + 1, size=P))
    paper_authors, paper_group = [], np.empty(P, dtype=np.int64)
    sizes = np.array([len(m) for m in group_members], dtype=float)
    for p in range(P):
        g = int(rng.choice(G, p=sizes / sizes.sum()))
        paper_group[p] = g
        members = group_members[g]
        others = members[members != principal[g]]
        if rng.random() < cfg.principal_share or len(others) == 0:
            lead = int(principal[g])
        else:
            lead = _weighted_pick(rng, others, activity[others])
        n_auth = int(rng.integers(cfg.min_authors_per_paper, cfg.max_authors_per_paper + 1))
        chosen = [lead]
        for _ in range(n_auth - 1):
            u = rng.random()
            if u < cfg.cross_topic_noise:
                pool = np.arange(A)
            elif u < cfg.cross_topic_noise + (1 - cfg.cross_topic_noise) * cfg.same_group_prob:
                pool = members
            else:
                pool = np.flatnonzero(author_topic == group_topic[g])
            pick = _weighted_pick(rng, pool, activity[pool], exclude=chosen)
            if pick is None:
                pick = _weighted_pick(rng, np.arange(A), activity, exclude=chosen)
            chosen.append(pick)
        paper_authors.append(chosen)

    # every author gets at least one training-period paper
    train_papers = np.flatnonzero(years < cfg.split_year)
    counts = np.zeros(A, dtype=np.int64)
    for p in train_papers:
        counts[paper_authors[p]] += 1
    for a in np.flatnonzero(counts == 0):
        same = train_papers[paper_group[train_papers] == author_group[a]]
        pool = same if len(same) else train_papers
        if len(pool):
            paper_authors[int(rng.choice(pool))].append(int(a))

    paper_venue = np.empty(P, dtype=np.int64)
    for p in range(P):
        t = group_topic[paper_group[p]]
        pool = np.arange(V) if rng.random() < cfg.cross_topic_noise else np.flatnonzero(venue_topic == t)
        paper_venue[p] = int(rng.choice(pool))
    citations = []
    for p in range(P):
        earlier = np.flatnonzero(years < years[p])
        if len(earlier) == 0 or cfg.citations_per_paper == 0:
            continue
        topic = group_topic[paper_group[p]]
        same = earlier[group_topic[paper_group[earlier]] == topic]
        n_cite = min(cfg.citations_per_paper, len(earlier))
        pool = same if len(same) >= n_cite and rng.random() > cfg.cross_topic_noise else earlier
        for q in rng.choice(pool, size=n_cite, replace=False):
            citations.append((p, int(q)))

    mix = np.array([cfg.background_word_share, cfg.topic_word_share, cfg.group_word_share,
                    max(cfg.author_word_share, 0.0)])
    if cfg.words_per_author == 0:
        mix[3] = 0.0
    mix = mix / mix.sum()
    tokens = {}
    for p in range(P):
        g = paper_group[p]
        source = rng.choice(4, size=cfg.tokens_per_abstract, p=mix)
        toks = []
        for s in source:
            if s == 0:
                w = rng.choice(background)
            elif s == 1:
                w = rng.choice(topic_words[group_topic[g]])
            elif s == 2:
                w = rng.choice(group_words[g])
            else:
                w = rng.choice(author_words[paper_authors[p][int(rng.integers(len(paper_authors[p])))]])
            toks.append(words[int(w)])
        tokens[p] = toks

    names = [f"a{i}" for i in range(A)] + [f"p{i}" for i in range(P)] + [f"v{i}" for i in range(V)]
    node_type = np.array([NodeType.AUTHOR] * A + [NodeType.PAPER] * P + [NodeType.VENUE] * V,
                         dtype=np.int8)
    edges = []
    for p in range(P):
        for a in sorted(paper_authors[p]):
            edges.append((a, A + p, int(EdgeType.WRITES)))
    for p, q in citations:
        edges.append((A + p, A + q, int(EdgeType.CITES)))
    for p in range(P):
        edges.append((A + p, A + P + int(paper_venue[p]), int(EdgeType.PUBLISHES_IN)))
    graph = HeteroGraph(
        names, node_type, edges,
        {A + p: tokens[p] for p in range(P)},
        {A + p: int(years[p]) for p in range(P)},
    )
    is_principal = np.zeros(A, dtype=bool)
    is_principal[principal] = True
    graph.planted = {
        "author_topic": author_topic,
        "author_group": author_group,
        "is_principal": is_principal,
        "paper_group": paper_group,
        "venue_topic": venue_topic,
    }
    split = temporal_split(graph, cfg.split_year, seed)
    return graph, split


def write_synthetic(graph: HeteroGraph, split: CorpusSplit, config: SynthConfig, seed: int,
                    out_dir) -> dict:
    """Write the corpus files plus ``meta.json`` and ``split.json``; return ``{name: path}``."""
    out = Path(out_dir)
    paths = save_graph(graph, out)
    meta = {
        "generator": "planted-topic",
        "seed": int(seed),
        "config": asdict(config),
        "split_year": split.year,
        "counts": {
            "authors": int(len(graph.authors)),
            "papers": int(len(graph.papers)),
            "venues": int(len(graph.venues)),
            "edges": int(len(graph.edges)),
        },
        "planted": {k: [int(x) for x in v] for k, v in graph.planted.items()},
    }
    paths["meta"] = out / "meta.json"
    paths["split"] = out / "split.json"
    for key, obj in (("meta", meta), ("split", split.to_json(graph))):
        with open(paths[key], "w", encoding="utf-8", newline="\n") as fh:
            json.dump(obj, fh, indent=2, sort_keys=True)
            fh.write("\n")
    return paths


def file_digest(path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for block in iter(lambda: fh.read(1 << 16), b""):
            h.update(block)
    return h.hexdigest()
