"""Losses, training configuration and the training loops."""

from __future__ import annotations

import json
import logging
import time
from dataclasses import asdict, dataclass, field, fields

import numpy as np

from .errors import ConfigError, ContractError, NumericError, ShapeError
from .hetgraph import CorpusSplit, HeteroGraph, NodeType
from .model import Corpus, SkipGram, TaPEm, scatter_rows
from .numerics import adam_step, rng_stream, sigmoid, softplus
from .walker import MetaPath, PairPathInstances, extract_pairs_from, generate_walks

log = logging.getLogger(__name__)

MODELS = ("tapem", "tapem-npv", "tapem-no-attn", "baseline")


@dataclass
class TrainingConfig:
    K: int = 128
    d: int = 100
    tau: int = 3
    dropout: float = 0.15
    negative_contexts: int = 1
    margin: float = 0.1
    walks_per_node: int = 5
    walk_length: int = 20
    metapaths: list = field(default_factory=lambda: ["APA"])
    baseline_metapaths: list = field(default_factory=lambda: ["APA", "APPA", "APVPA"])
    batch_size: int = 64
    epochs: int = 50
    patience: int = 5
    learning_rate: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    adam_epsilon: float = 1e-8
    metric_weight: float = 1.0
    metric_negatives: int = 1
    pv_weight: float = 1.0
    pv_random_negatives: int = 0
    mlp_hidden: int = 100
    classifier_hidden: int = 100
    pooling: str = "mean"
    model: str = "tapem"
    candidates: int = 100
    seed: int = 0

    @classmethod
    def from_dict(cls, obj: dict) -> "TrainingConfig":
        known = {f.name for f in fields(cls)}
        for key in obj:
            if key not in known:
                raise ConfigError(f"unknown training config field {key!r}")
        cfg = cls(**obj)
        cfg.validate()
        return cfg

    @classmethod
    def load(cls, path) -> "TrainingConfig":
        try:
            with open(path, encoding="utf-8") as fh:
                obj = json.load(fh)
        except json.JSONDecodeError as exc:
            raise ConfigError(f"{path}: invalid JSON ({exc})") from None
        if not isinstance(obj, dict):
            raise ConfigError(f"{path}: expected a JSON object")
        return cls.from_dict(obj)

    def to_dict(self) -> dict:
        return asdict(self)

    def validate(self):
        positive = ("K", "d", "tau", "walks_per_node", "batch_size", "epochs", "patience",
                    "mlp_hidden", "classifier_hidden", "candidates", "metric_negatives")
        for name in positive:
            v = getattr(self, name)
            if not isinstance(v, int) or isinstance(v, bool) or v < 1:
                raise ConfigError(f"{name} must be a positive integer, got {v!r}")
        for name in ("negative_contexts", "pv_random_negatives"):
            v = getattr(self, name)
            if not isinstance(v, int) or isinstance(v, bool) or v < 0:
                raise ConfigError(f"{name} must be a non-negative integer, got {v!r}")
        if self.walk_length < 2:
            raise ConfigError("walk_length must be >= 2")
        if not 0.0 <= self.dropout < 1.0:
            raise ConfigError(f"dropout must lie in [0, 1), got {self.dropout!r}")
        for name in ("margin", "adam_epsilon"):
            if not getattr(self, name) > 0:
                raise ConfigError(f"{name} must be positive")
        if not self.learning_rate >= 0:  # zero freezes the parameters, which tests rely on
            raise ConfigError("learning_rate must be >= 0")
        for name in ("beta1", "beta2"):
            if not 0.0 <= getattr(self, name) < 1.0:
                raise ConfigError(f"{name} must lie in [0, 1)")
        for name in ("metric_weight", "pv_weight"):
            if getattr(self, name) < 0:
                raise ConfigError(f"{name} must be >= 0")
        if self.pooling not in ("mean", "last"):
            raise ConfigError(f"pooling must be 'mean' or 'last', got {self.pooling!r}")
        if self.model not in MODELS:
            raise ConfigError(f"model must be one of {', '.join(MODELS)}; got {self.model!r}")
        for mp in list(self.metapaths) + list(self.baseline_metapaths):
            MetaPath.parse(mp)
        if not self.metapaths:
            raise ConfigError("metapaths must not be empty")


# ------------------------------------------------------------------ losses


def loss_ctx(g, f_pos, f_negs=()):
    """``-log s(g.f(c)) - sum_j log s(-g.f(c_j))`` for one pair."""
    g, f_pos = np.asarray(g, float), np.asarray(f_pos, float)
    f_negs = np.asarray(f_negs, float).reshape(-1, g.shape[-1]) if len(f_negs) else np.zeros((0, g.shape[-1]))
    if g.shape != f_pos.shape or f_negs.shape[1] != g.shape[0]:
        raise ShapeError(f"loss_ctx: shapes {g.shape}, {f_pos.shape}, {f_negs.shape}")
    return float(softplus(-(g @ f_pos)) + softplus(f_negs @ g).sum())


def loss_pv(logit, label):
    """Binary cross-entropy on a raw logit."""
    if label not in (0, 1):
        raise ContractError(f"label must be 0 or 1, got {label!r}")
    return float(softplus(logit) - label * logit)


def loss_metric(p, q_true, q_negative, xi=0.1):
    """Hinge on squared distances: ``max(0, xi + |p-q_true|^2 - |p-q_negative|^2)``."""
    p, qt, qn = (np.asarray(x, float) for x in (p, q_true, q_negative))
    if not p.shape == qt.shape == qn.shape:
        raise ShapeError(f"loss_metric: shapes {p.shape}, {qt.shape}, {qn.shape}")
    if xi <= 0:
        raise ContractError("margin must be positive")
    return float(max(0.0, xi + np.sum((p - qt) ** 2) - np.sum((p - qn) ** 2)))


# --------------------------------------------------------------- sampling


class ContextPathPool:
    """Every extracted context path; negatives are drawn uniformly from it."""

    def __init__(self, paths, lengths, v, u):
        self.paths = np.asarray(paths, dtype=np.int64)
        self.lengths = np.asarray(lengths, dtype=np.int64)
        self.v = np.asarray(v, dtype=np.int64)
        self.u = np.asarray(u, dtype=np.int64)

    @classmethod
    def from_instances(cls, inst: PairPathInstances) -> "ContextPathPool":
        return cls(inst.paths, inst.path_len, inst.v, inst.u)

    def __len__(self):
        return len(self.lengths)

    def sample(self, v, u, k, rng, max_attempts=100):
        """Pool indices of shape (len(v), k), redrawing paths that join the same pair.

        After ``max_attempts`` redraws a clashing path is accepted as is.
        """
        if len(self) == 0:
            raise ContractError("cannot sample negative paths from an empty pool")
        v = np.asarray(v, dtype=np.int64)[:, None]
        u = np.asarray(u, dtype=np.int64)[:, None]
        idx = rng.integers(0, len(self), size=(len(v), k))
        for _ in range(max_attempts):
            clash = (self.v[idx] == v) & (self.u[idx] == u)
            n = int(clash.sum())
            if n == 0:
                break
            idx[clash] = rng.integers(0, len(self), size=n)
        return idx


def sample_negative_paths(pool: ContextPathPool, k, exclude_pair, rng, max_attempts=100):
    """``k`` paths (node-id arrays) drawn uniformly, avoiding ``exclude_pair`` endpoints."""
    idx = pool.sample([exclude_pair[0]], [exclude_pair[1]], k, rng, max_attempts)[0]
    return [pool.paths[i, :pool.lengths[i]] for i in idx]


def sample_non_authors(graph: HeteroGraph, papers, rng, max_attempts=100):
    """One uniformly drawn author per paper who did not write it."""
    papers = np.asarray(papers, dtype=np.int64)
    out = graph.authors[rng.integers(0, len(graph.authors), size=len(papers))]
    for _ in range(max_attempts):
        bad = graph.authorship_labels(papers, out)
        n = int(bad.sum())
        if n == 0:
            break
        out[bad] = graph.authors[rng.integers(0, len(graph.authors), size=n)]
    return out


# ---------------------------------------------------------------- batches


@dataclass
class Batch:
    v: np.ndarray
    u: np.ndarray
    y: np.ndarray
    paths: np.ndarray
    path_len: np.ndarray
    neg_paths: np.ndarray  # (B * k, T)
    neg_len: np.ndarray
    metric_neg: np.ndarray  # (B, m) negative authors; -1 where no metric term applies
    pv_neg: np.ndarray = None  # (B, r) extra random non-authors for L_pv; -1 where unused

    def __len__(self):
        return len(self.v)


def make_batch(inst: PairPathInstances, index, pool, graph, config, rng) -> Batch:
    sub = inst.subset(index)
    k = config.negative_contexts
    if k:
        neg = pool.sample(sub.v, sub.u, k, rng).ravel()
        neg_paths, neg_len = pool.paths[neg], pool.lengths[neg]
    else:
        neg_paths = np.zeros((0, inst.paths.shape[1]), dtype=np.int64)
        neg_len = np.zeros(0, dtype=np.int64)
    m = config.metric_negatives
    metric_neg = np.full((len(sub.v), m), -1, dtype=np.int64)
    if config.metric_weight > 0:
        pos = np.flatnonzero(sub.y == 1)
        metric_neg[pos] = sample_non_authors(graph, np.repeat(sub.v[pos], m), rng).reshape(-1, m)
    r = config.pv_random_negatives
    pv_neg = np.full((len(sub.v), r), -1, dtype=np.int64)
    if r:
        pos = np.flatnonzero(sub.y == 1)
        pv_neg[pos] = sample_non_authors(graph, np.repeat(sub.v[pos], r), rng).reshape(-1, r)
    return Batch(sub.v, sub.u, sub.y.astype(float), sub.paths, sub.path_len,
                 neg_paths, neg_len, metric_neg, pv_neg)


@dataclass
class BatchLoss:
    total: float
    ctx: float
    pv: float
    metric: float
    per_instance: np.ndarray
    signature: tuple


def tapem_loss_and_grads(model: TaPEm, batch: Batch, config: TrainingConfig,
                         training=False, rng=None, backward=True) -> BatchLoss:
    """Mean joint loss over the batch; gradients accumulate into ``model.store.grads``."""
    s = model.store
    corpus = model.corpus
    B = len(batch)
    k = len(batch.neg_len) // B if B else 0
    all_paths = np.concatenate([batch.paths, batch.neg_paths])
    all_len = np.concatenate([batch.path_len, batch.neg_len])
    T = all_paths.shape[1]
    in_path = all_paths[np.arange(T)[None, :] < all_len[:, None]]
    path_papers = in_path[corpus.node_type[in_path] == NodeType.PAPER]
    papers = np.unique(np.concatenate([batch.v, path_papers]))

    P, enc_cache = model.encode_papers(papers, training, rng)
    vi = np.searchsorted(papers, batch.v)
    pv = P[vi]
    q_rows = corpus.row[batch.u]
    q = s["author_emb"][q_rows]
    G, pair_cache = model.pair_forward(pv, q, training, rng)
    X, x_cache = model.path_inputs(all_paths, all_len, papers, P)
    F, path_cache = model.path_forward(X, all_len)
    f_pos, f_neg = F[:B], F[B:].reshape(B, k, model.d)

    s_pos = np.einsum("bd,bd->b", G, f_pos)
    s_neg = np.einsum("bd,bkd->bk", G, f_neg)
    l_ctx = softplus(-s_pos) + softplus(s_neg).sum(axis=1)

    y = batch.y
    if model.variant == "tapem-npv":
        logit = np.einsum("bd,bd->b", pv, q)
        cls_cache = None
    else:
        logit, cls_cache = model.cls_forward(G)
    l_pv = softplus(logit) - y * logit

    # optional random non-authors, scored with label 0 against the same paper
    extra_b = extra_rows = None
    pv_neg = batch.pv_neg if batch.pv_neg is not None else np.zeros((B, 0), np.int64)
    if pv_neg.size and np.any(pv_neg >= 0):
        extra_b, j = np.nonzero(pv_neg >= 0)
        extra_rows = corpus.row[pv_neg[extra_b, j]]
        p_x, q_x = pv[extra_b], s["author_emb"][extra_rows]
        if model.variant == "tapem-npv":
            logit_x, x_pair, x_cls = np.einsum("bd,bd->b", p_x, q_x), None, None
        else:
            G_x, x_pair = model.pair_forward(p_x, q_x, training, rng)
            logit_x, x_cls = model.cls_forward(G_x)
        l_pv = l_pv + np.bincount(extra_b, softplus(logit_x), minlength=B)

    has_m = batch.metric_neg >= 0
    qn_rows = corpus.row[np.where(has_m, batch.metric_neg, corpus.authors[0])]
    qn = s["author_emb"][qn_rows]  # (B, m, K)
    hinge = (config.margin + ((pv - q) ** 2).sum(axis=1)[:, None]
             - ((pv[:, None, :] - qn) ** 2).sum(axis=2))
    active = has_m & (hinge > 0)
    l_m = np.where(active, hinge, 0.0).sum(axis=1)

    per = l_ctx + config.pv_weight * l_pv + config.metric_weight * l_m
    if not np.all(np.isfinite(per)):
        i = int(np.flatnonzero(~np.isfinite(per))[0])
        names = corpus.graph.names
        raise NumericError(f"non-finite loss for instance (paper {names[batch.v[i]]!r}, "
                           f"author {names[batch.u[i]]!r})")
    signature = (pair_cache[4] > 0, None if cls_cache is None else cls_cache[1] > 0, active)
    if extra_b is not None and x_pair is not None:
        signature += (x_pair[4] > 0, x_cls[1] > 0)
    result = BatchLoss(float(per.mean()), float(l_ctx.mean()), float(l_pv.mean()),
                       float(l_m.mean()), per, signature)
    if not backward:
        return result

    # backward, everything scaled by 1/B for the batch mean
    g_pos = -sigmoid(-s_pos) / B
    g_neg = sigmoid(s_neg) / B
    dG = g_pos[:, None] * f_pos + np.einsum("bk,bkd->bd", g_neg, f_neg)
    dF = np.concatenate([g_pos[:, None] * G,
                         (g_neg[:, :, None] * G[:, None, :]).reshape(B * k, model.d)])
    dlogit = config.pv_weight * (sigmoid(logit) - y) / B
    d_pv = np.zeros_like(pv)
    d_q = np.zeros_like(q)
    if cls_cache is None:
        d_pv += dlogit[:, None] * q
        d_q += dlogit[:, None] * pv
    else:
        dG += model.cls_backward(dlogit, cls_cache)
    a = (config.metric_weight / B) * active
    d_pv += 2.0 * (a[:, :, None] * (qn - q[:, None, :])).sum(axis=1)
    d_q += -2.0 * a.sum(axis=1)[:, None] * (pv - q)
    d_qn = 2.0 * a[:, :, None] * (pv[:, None, :] - qn)

    dp2, dq2 = model.pair_backward(dG, pair_cache)
    d_pv += dp2
    d_q += dq2
    if extra_b is not None:
        dlogit_x = config.pv_weight * sigmoid(logit_x) / B
        if x_pair is None:
            dp_x, dq_x = dlogit_x[:, None] * q_x, dlogit_x[:, None] * p_x
        else:
            dp_x, dq_x = model.pair_backward(model.cls_backward(dlogit_x, x_cls), x_pair)
        np.add.at(d_pv, extra_b, dp_x)
        scatter_rows(s, "author_emb", extra_rows, dq_x)
    dX = model.path_backward(dF, path_cache)
    dP = np.zeros_like(P)
    model.path_inputs_backward(dX, x_cache, dP)
    np.add.at(dP, vi, d_pv)
    model.encoder.backward(dP, enc_cache)
    scatter_rows(s, "author_emb", q_rows, d_q)
    scatter_rows(s, "author_emb", qn_rows[active], d_qn[active])
    return result


# ----------------------------------------------------------- training data


@dataclass
class TrainingData:
    """Walk-derived training material for one graph."""

    instances: PairPathInstances
    pool: ContextPathPool
    n_walks: int


def build_training_data(graph: HeteroGraph, config: TrainingConfig, seed: int) -> TrainingData:
    parts, n_walks = [], 0
    for i, name in enumerate(config.metapaths):
        ws = generate_walks(graph, MetaPath.parse(name), config.walks_per_node, config.walk_length,
                            seed + 7919 * i)
        n_walks += len(ws)
        parts.append(extract_pairs_from(ws, config.tau, graph))
    inst = parts[0] if len(parts) == 1 else PairPathInstances(
        *(np.concatenate([getattr(p, f) for p in parts])
          for f in ("v", "u", "paths", "path_len", "y", "walk", "offsets")))
    if len(inst) == 0:
        raise ContractError("walks produced no paper-author pairs; the graph has no authorship edges")
    return TrainingData(inst, ContextPathPool.from_instances(inst), n_walks)


def skipgram_pairs(graph: HeteroGraph, config: TrainingConfig, seed: int):
    """(centre, context) node pairs within ``tau`` over the baseline's walks."""
    centers, contexts = [], []
    for i, name in enumerate(config.baseline_metapaths):
        ws = generate_walks(graph, MetaPath.parse(name), config.walks_per_node, config.walk_length,
                            seed + 7919 * i)
        W, L = ws.walks, ws.lengths
        width = W.shape[1]
        for delta in range(-config.tau, config.tau + 1):
            if delta == 0:
                continue
            pos = np.arange(width)
            ok = (pos[None, :] < L[:, None]) & (pos[None, :] + delta >= 0) & \
                 (pos[None, :] + delta < L[:, None])
            w, j = np.nonzero(ok)
            centers.append(W[w, j])
            contexts.append(W[w, j + delta])
    if not centers:
        return np.zeros(0, np.int64), np.zeros(0, np.int64)
    return np.concatenate(centers), np.concatenate(contexts)


# ---------------------------------------------------------------- epochs


@dataclass
class TrainStats:
    epoch: int
    loss_ctx: float
    loss_pv: float
    loss_metric: float
    loss_total: float
    instances: int
    batches: int
    seconds: float
    val_recall5: float | None = None

    def to_json(self) -> str:
        return json.dumps(asdict(self), sort_keys=True)


def _step(store, config):
    adam_step(store, config.learning_rate, config.beta1, config.beta2, config.adam_epsilon)
    store.zero_grads()


def train_epoch(model: TaPEm, data: TrainingData, graph: HeteroGraph, config: TrainingConfig,
                rng, epoch=0) -> TrainStats:
    """One shuffled pass over the instances with an Adam step per mini-batch."""
    t0 = time.perf_counter()
    inst = data.instances
    order = rng.permutation(len(inst))
    sums = np.zeros(4)
    n_batches = 0
    model.store.zero_grads()
    for start in range(0, len(order), config.batch_size):
        index = order[start:start + config.batch_size]
        batch = make_batch(inst, index, data.pool, graph, config, rng)
        try:
            res = tapem_loss_and_grads(model, batch, config, training=True, rng=rng)
        except NumericError as exc:
            raise NumericError(f"epoch {epoch}, batch {n_batches}: {exc}") from None
        sums += len(index) * np.array([res.ctx, res.pv, res.metric, res.total])
        n_batches += 1
        try:
            _step(model.store, config)
        except NumericError as exc:
            raise NumericError(f"epoch {epoch}, batch {n_batches - 1}: {exc}") from None
    n = max(len(order), 1)
    ctx, pv, metric, total = (sums / n).tolist()
    return TrainStats(epoch, ctx, pv, metric, total, len(order), n_batches,
                      time.perf_counter() - t0)


def train_baseline_epoch(model: SkipGram, pairs, graph: HeteroGraph, config: TrainingConfig,
                         rng, epoch=0, negative_pools=None) -> TrainStats:
    """Skip-gram pass; each context gets ``negative_contexts`` negatives of its own type."""
    t0 = time.perf_counter()
    centers, contexts = pairs
    k = max(config.negative_contexts, 1)
    pools = negative_pools or {t: np.flatnonzero(graph.node_type == t) for t in NodeType}
    order = rng.permutation(len(centers))
    total, n_batches = 0.0, 0
    model.store.zero_grads()
    ctx_types = graph.node_type[contexts] if len(contexts) else np.zeros(0, np.int8)
    for start in range(0, len(order), config.batch_size):
        index = order[start:start + config.batch_size]
        negs = np.empty((len(index), k), dtype=np.int64)
        for t, pool in pools.items():
            sel = ctx_types[index] == t
            if np.any(sel):
                negs[sel] = pool[rng.integers(0, len(pool), size=(int(sel.sum()), k))]
        loss, _ = model.loss_and_grads(centers[index], contexts[index], negs, True, rng)
        if not np.isfinite(loss):
            raise NumericError(f"epoch {epoch}, batch {n_batches}: non-finite skip-gram loss")
        total += loss * len(index)
        n_batches += 1
        _step(model.store, config)
    n = max(len(order), 1)
    return TrainStats(epoch, total / n, 0.0, 0.0, total / n, len(order), n_batches,
                      time.perf_counter() - t0)


# ------------------------------------------------------------------- fit


def create_model(corpus: Corpus, config: TrainingConfig, rng=None, store=None):
    """Fresh (or checkpoint-backed when ``store`` is given) model for ``config.model``."""
    rng = rng if rng is not None else rng_stream(config.seed, "init")
    if config.model == "baseline":
        if store is not None:
            return SkipGram(store, corpus, K=config.K, pooling=config.pooling)
        return SkipGram.create(corpus, rng, K=config.K, pooling=config.pooling)
    kw = dict(K=config.K, d=config.d, hidden=config.mlp_hidden, cls_hidden=config.classifier_hidden,
              dropout=config.dropout, pooling=config.pooling, variant=config.model)
    if store is not None:
        return TaPEm(store, corpus, **kw)
    return TaPEm.create(corpus, rng, **kw)


@dataclass
class FitResult:
    model: object
    history: list
    best_epoch: int
    best_score: float


def fit(graph: HeteroGraph, split: CorpusSplit, config: TrainingConfig, *, model=None,
        start_epoch=0, on_epoch=None) -> FitResult:
    """Train on the papers before the split year; keep the best validation Recall@5.

    ``on_epoch(stats, is_best, model)`` is called after every epoch.
    """
    from .evaluation import evaluate  # deferred: evaluation imports this module's config

    config.validate()
    seed = config.seed
    train_graph = graph.restrict_papers(split.train)
    corpus = Corpus(graph)
    if model is None:
        model = create_model(corpus, config)
    if config.model == "baseline":
        data = skipgram_pairs(train_graph, config, seed)
        pools = {NodeType.AUTHOR: graph.authors, NodeType.PAPER: np.sort(split.train),
                 NodeType.VENUE: graph.venues}
    else:
        data = build_training_data(train_graph, config, seed)

    best_store, best_score, best_epoch, stale = None, -np.inf, start_epoch - 1, 0
    history = []
    for epoch in range(start_epoch, start_epoch + config.epochs):
        rng = rng_stream(seed, f"epoch:{epoch}")
        if config.model == "baseline":
            stats = train_baseline_epoch(model, data, train_graph, config, rng, epoch, pools)
        else:
            stats = train_epoch(model, data, train_graph, config, rng, epoch)
        report, _ = evaluate(model, graph, split.validation, pool_size=config.candidates,
                             seed=seed, N_values=(5,))
        stats.val_recall5 = report.recall[5]
        history.append(stats)
        improved = stats.val_recall5 > best_score
        if improved:
            best_score, best_epoch, stale = stats.val_recall5, epoch, 0
            best_store = model.store.copy()
        else:
            stale += 1
        log.info("epoch %d  loss %.4f  val R@5 %.4f%s", epoch, stats.loss_total,
                 stats.val_recall5, "  *" if improved else "")
        if on_epoch is not None:
            on_epoch(stats, improved, model)
        if stale >= config.patience:
            break
    if best_store is not None:
        model = create_model(corpus, config, store=best_store)
    return FitResult(model, history, best_epoch, float(best_score))
