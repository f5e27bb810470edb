"""Author-identification ranking evaluation."""

from __future__ import annotations

import json
import logging
from dataclasses import dataclass, field

import numpy as np
from scipy.stats import rankdata

from .errors import ConfigError, ContractError, InputError
from .hetgraph import HeteroGraph

log = logging.getLogger(__name__)

SAMPLED_N = (1, 2, 5, 10)
WHOLE_N = (10, 30, 50, 100, 200)


@dataclass
class CandidateSet:
    paper: int
    authors: np.ndarray  # ascending ids
    truth: np.ndarray  # bool, aligned with ``authors``


@dataclass
class RankedList:
    paper: int
    authors: np.ndarray  # best first
    scores: np.ndarray
    truth: np.ndarray

    @property
    def n_true(self) -> int:
        return int(self.truth.sum())


def sample_candidates(graph: HeteroGraph, paper, pool_size=100, seed=0) -> CandidateSet:
    """True authors plus uniformly drawn non-authors, ``pool_size`` in total.

    ``pool_size=None`` (or anything at least the author count) yields every
    author.  The draw depends only on ``(seed, paper)``.
    """
    paper = int(paper)
    truth = np.sort(graph.authors_of(paper))
    if len(truth) == 0:
        raise ContractError(f"paper {graph.names[paper]!r} has no authors")
    n_all = len(graph.authors)
    size = n_all if pool_size is None else min(int(pool_size), n_all)
    if size < len(truth):
        raise ConfigError(f"pool size {size} is smaller than the {len(truth)} true authors")
    if size == n_all:
        authors = graph.authors.copy()
    else:
        others = np.setdiff1d(graph.authors, truth, assume_unique=True)
        rng = np.random.default_rng([int(seed), 0xCA9D, paper])
        picked = rng.choice(others, size=size - len(truth), replace=False)
        authors = np.sort(np.concatenate([truth, picked]))
    return CandidateSet(paper, authors, np.isin(authors, truth))


def rank(paper, authors, scores, truth) -> RankedList:
    """Sort by descending score, ties by ascending author id."""
    authors = np.asarray(authors, dtype=np.int64)
    scores = np.asarray(scores, dtype=float)
    order = np.lexsort((authors, -scores))
    return RankedList(int(paper), authors[order], scores[order], np.asarray(truth, bool)[order])


def rank_authors(model, candidate_sets, mode=None, batch=256) -> list:
    """Score and rank each candidate set with ``model`` in inference mode."""
    out = []
    for start in range(0, len(candidate_sets), batch):
        chunk = candidate_sets[start:start + batch]
        papers = [c.paper for c in chunk]
        kw = {} if mode is None else {"mode": mode}
        scores = model.score(papers, [c.authors for c in chunk], **kw)
        out.extend(rank(c.paper, c.authors, s, c.truth) for c, s in zip(chunk, scores))
    return out


def auc(scores, truth) -> float:
    """P(positive scored above negative), ties counting one half."""
    truth = np.asarray(truth, bool)
    n_pos, n_neg = int(truth.sum()), int((~truth).sum())
    if n_pos == 0 or n_neg == 0:
        raise ContractError("AUC needs at least one positive and one negative")
    ranks = rankdata(np.asarray(scores, float))  # average ranks for ties
    u = ranks[truth].sum() - n_pos * (n_pos + 1) / 2.0
    return u / (n_pos * n_neg)


@dataclass
class MetricsReport:
    N: tuple
    recall: dict
    precision: dict
    f1: dict
    auc: float | None
    n_papers: int
    candidates: str = "sampled"
    slice: str = "all"
    rank_violations: float | None = None
    extra: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        key = lambda d: {str(n): d[n] for n in self.N}
        out = {
            "candidates": self.candidates, "slice": self.slice, "n_papers": self.n_papers,
            "N": list(self.N), "recall": key(self.recall), "precision": key(self.precision),
            "f1": key(self.f1), "auc": self.auc,
        }
        if self.rank_violations is not None:
            out["rank_violations"] = self.rank_violations
        out.update(self.extra)
        return out

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True) + "\n"

    def table(self) -> str:
        lines = [f"{'N':>5} {'Recall':>8} {'Prec':>8} {'F1':>8}"]
        for n in self.N:
            lines.append(f"{n:>5} {self.recall[n]:8.4f} {self.precision[n]:8.4f} {self.f1[n]:8.4f}")
        lines.append(f"AUC {self.auc:.4f}" if self.auc is not None else "AUC n/a")
        lines.append(f"papers {self.n_papers} ({self.candidates}, {self.slice})")
        if self.rank_violations is not None:
            lines.append(f"rank violations {self.rank_violations:.4f}")
        return "\n".join(lines)


def f1(p, r) -> float:
    return 0.0 if p + r == 0 else 2.0 * p * r / (p + r)


def metrics(ranked_lists, N_values=SAMPLED_N, **labels) -> MetricsReport:
    """Macro-averaged Recall/Precision@N, F1 from the averaged P and R, and mean AUC."""
    N_values = tuple(int(n) for n in N_values)
    lists = []
    for rl in ranked_lists:
        if rl.n_true == 0:
            log.warning("paper %d has no true authors; excluded", rl.paper)
            continue
        lists.append(rl)
    recall = {n: 0.0 for n in N_values}
    precision = {n: 0.0 for n in N_values}
    aucs = []
    for rl in lists:
        hits = np.cumsum(rl.truth)
        for n in N_values:
            h = int(hits[min(n, len(hits)) - 1])
            recall[n] += h / rl.n_true
            precision[n] += h / n
        if rl.n_true < len(rl.truth):
            aucs.append(auc(rl.scores, rl.truth))
    m = len(lists)
    if m:
        recall = {n: v / m for n, v in recall.items()}
        precision = {n: v / m for n, v in precision.items()}
    return MetricsReport(N_values, recall, precision,
                         {n: f1(precision[n], recall[n]) for n in N_values},
                         float(np.mean(aucs)) if aucs else None, m, **labels)


def slice_inactive(ranked_lists, paper_counts, threshold=5) -> list:
    """Keep only true authors with at most ``threshold`` training papers.

    Filtered-out true authors leave the list entirely (they count neither as
    hits nor as negatives); papers left without true authors are dropped.
    """
    if threshold < 1:
        raise ConfigError(f"inactive threshold must be >= 1, got {threshold}")
    out = []
    for rl in ranked_lists:
        active = rl.truth & (paper_counts[rl.authors] > threshold)
        if np.all(~rl.truth | active):
            continue
        keep = ~active
        out.append(RankedList(rl.paper, rl.authors[keep], rl.scores[keep], rl.truth[keep]))
    return out


def frequent_false_authors(graph: HeteroGraph, paper, cooccurrence, n):
    """The ``n`` non-authors co-occurring most often with ``paper`` (ties by id)."""
    counts = cooccurrence.get(int(paper))
    if counts is None:
        raise ContractError(f"no co-occurrence data for paper {graph.names[int(paper)]!r}")
    false = [(-c, a) for a, c in counts.items() if not graph.authorship_labels([paper], [a])[0]]
    return np.array([a for _, a in sorted(false)[:n]], dtype=np.int64)


def rank_violations(ranked_lists, frequent_false) -> float:
    """Mean number of (frequent false author, true author) pairs ranked the wrong way.

    ``frequent_false`` maps paper id to the false authors to check; each must
    appear in that paper's ranked list.
    """
    total = 0
    for rl in ranked_lists:
        ff = frequent_false.get(rl.paper)
        if ff is None:
            raise ContractError(f"no frequent false authors supplied for paper {rl.paper}")
        pos = {int(a): i for i, a in enumerate(rl.authors)}
        true_pos = np.flatnonzero(rl.truth)
        for a in ff:
            if int(a) not in pos:
                raise ContractError(f"frequent false author {a} missing from paper {rl.paper}'s list")
            total += int(np.sum(true_pos > pos[int(a)]))
    return total / len(ranked_lists) if ranked_lists else 0.0


def evaluate(model, graph: HeteroGraph, papers, *, pool_size=100, seed=0, N_values=None,
             slice_counts=None, threshold=5, mode=None):
    """Candidate sampling, ranking and metrics in one call.

    ``pool_size=None`` evaluates against the whole author set.  When
    ``slice_counts`` (training papers per node) is given, the report covers the
    inactive-author slice.  Returns ``(report, ranked_lists)``.
    """
    whole = pool_size is None or pool_size >= len(graph.authors)
    if N_values is None:
        N_values = WHOLE_N if whole else SAMPLED_N
    papers = [int(p) for p in papers if len(graph.authors_of(p))]
    if not papers:
        raise InputError("no evaluable papers (none has an author)")
    cands = [sample_candidates(graph, p, pool_size, seed) for p in papers]
    ranked = rank_authors(model, cands, mode)
    label = "all"
    if slice_counts is not None:
        ranked = slice_inactive(ranked, slice_counts, threshold)
        label = f"inactive<={threshold}"
    report = metrics(ranked, N_values, candidates="whole" if whole else "sampled", slice=label)
    return report, ranked


def violation_report(model, graph: HeteroGraph, papers, cooccurrence, mode=None) -> float:
    """Average rank violations, ranking each paper's true and frequent false authors."""
    cands, ff = [], {}
    for p in papers:
        p = int(p)
        truth = np.sort(graph.authors_of(p))
        if len(truth) == 0 or p not in cooccurrence:
            continue
        ff[p] = frequent_false_authors(graph, p, cooccurrence, len(truth))
        authors = np.union1d(truth, ff[p])
        cands.append(CandidateSet(p, authors, np.isin(authors, truth)))
    if not cands:
        raise ContractError("no paper has co-occurrence data")
    return rank_violations(rank_authors(model, cands, mode), ff)


def write_rankings(path, ranked_lists, graph: HeteroGraph):
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write("paper\trank\tauthor\tscore\tis_true\n")
        for rl in ranked_lists:
            for i, (a, s, t) in enumerate(zip(rl.authors, rl.scores, rl.truth), 1):
                fh.write(f"{graph.names[rl.paper]}\t{i}\t{graph.names[a]}\t{s:.10g}\t{int(t)}\n")

