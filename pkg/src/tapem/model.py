"""TaPEm network components and the heterogeneous skip-gram baseline.

Every component works on batches and has a hand-written backward pass that
accumulates into the owning :class:`~tapem.numerics.ParamStore`.  Forward
functions return ``(output, cache)``; backward functions take the cache.
Single-vector helpers (``encode_paper``, ``embed_pair`` ...) wrap the batched
code for interactive use and tests.
"""

from __future__ import annotations

import numpy as np

from . import kernels
from .errors import ContractError, InputError, NodeTypeError, ShapeError
from .hetgraph import HeteroGraph, NodeType
from .layers import gru_backward, gru_forward, masked_softmax, reverse_index
from .numerics import (DTYPE, ParamStore, dropout_mask, init_embedding, init_matrix,
                       sigmoid, softplus)

VARIANTS = ("tapem", "tapem-npv", "tapem-no-attn", "baseline")


class Corpus:
    """Maps graph node ids to embedding-table rows and token sequences."""

    def __init__(self, graph: HeteroGraph):
        self.graph = graph
        self.node_type = graph.node_type
        self.row = np.full(graph.n_nodes, -1, dtype=np.int64)
        for ids in (graph.authors, graph.papers, graph.venues):
            self.row[ids] = np.arange(len(ids))
        self.authors = graph.authors
        self.n_authors = len(graph.authors)
        self.n_venues = len(graph.venues)
        self.n_vocab = len(graph.vocab)
        self.tokens = [graph.token_ids[int(p)] for p in graph.papers]

    def paper_tokens(self, papers):
        if np.any(self.node_type[papers] != NodeType.PAPER):
            bad = int(np.asarray(papers)[self.node_type[papers] != NodeType.PAPER][0])
            raise NodeTypeError(f"{self.graph.names[bad]!r} is not a paper")
        return [self.tokens[r] for r in self.row[papers]]


def pad_tokens(seqs):
    """Right-pad id sequences into ``(ids, mask)``; empty sequences are an input error."""
    lengths = np.array([len(s) for s in seqs], dtype=np.int64)
    if np.any(lengths == 0):
        raise InputError("cannot encode an empty token sequence")
    ids = np.zeros((len(seqs), int(lengths.max()) if len(seqs) else 0), dtype=np.int64)
    for i, s in enumerate(seqs):
        ids[i, :len(s)] = s
    mask = (np.arange(ids.shape[1])[None, :] < lengths[:, None]).astype(DTYPE)
    return ids, mask, lengths


def comb(p, q):
    """``[p; q; p*q; p-q]`` along the last axis."""
    p, q = np.asarray(p, DTYPE), np.asarray(q, DTYPE)
    if p.shape != q.shape:
        raise ShapeError(f"comb: shapes {p.shape} and {q.shape} differ")
    return np.concatenate([p, q, p * q, p - q], axis=-1)


def _add_gru(store, prefix, rng, n_in, n_hidden, group):
    store.add(prefix + ".W", init_matrix(rng, 3 * n_hidden, n_in), group)
    store.add(prefix + ".U", init_matrix(rng, 3 * n_hidden, n_hidden), group)
    store.add(prefix + ".b", np.zeros(3 * n_hidden), group)


def _gru(store, prefix, X, mask):
    return gru_forward(X, mask, store[prefix + ".W"], store[prefix + ".U"], store[prefix + ".b"])


def _gru_back(store, prefix, d_hs, cache):
    dX, dW, dU, db = gru_backward(d_hs, cache, store[prefix + ".W"], store[prefix + ".U"])
    store.grads[prefix + ".W"] += dW
    store.grads[prefix + ".U"] += dU
    store.grads[prefix + ".b"] += db
    return dX


def scatter_rows(store, name, rows, grads):
    """Add ``grads`` into rows ``rows`` of parameter ``name`` and mark them touched."""
    if len(rows) == 0:
        return
    kernels.scatter_add_rows(store.grads[name], np.ascontiguousarray(rows, dtype=np.int64),
                             np.ascontiguousarray(grads, dtype=DTYPE))
    store.touch(name, rows)


class PaperEncoder:
    """GRU over word vectors, pooled to one K-vector per paper."""

    def __init__(self, store: ParamStore, prefix: str, pooling="mean", dropout=0.0):
        if pooling not in ("mean", "last"):
            raise ContractError(f"unknown pooling mode {pooling!r}")
        self.store, self.prefix, self.pooling, self.dropout = store, prefix, pooling, dropout

    @staticmethod
    def build(store, prefix, rng, n_vocab, K, group, **kwargs):
        store.add(prefix + ".words", init_embedding(rng, n_vocab, K), "embeddings", sparse=True)
        _add_gru(store, prefix + ".gru", rng, K, K, group)
        return PaperEncoder(store, prefix, **kwargs)

    def forward(self, seqs, training=False, rng=None):
        ids, mask, lengths = pad_tokens(seqs)
        X = self.store[self.prefix + ".words"][ids]
        drop = dropout_mask(X.shape, self.dropout, training, rng)
        if drop is not None:
            X = X * drop
        hs, gcache = _gru(self.store, self.prefix + ".gru", X, mask)
        if self.pooling == "mean":
            P = (hs * mask[:, :, None]).sum(axis=1) / lengths[:, None]
        else:
            P = hs[:, -1].copy()  # padded steps carry the last real state forward
        return P, (ids, mask, lengths, drop, gcache)

    def backward(self, dP, cache):
        ids, mask, lengths, drop, gcache = cache
        if self.pooling == "mean":
            d_hs = mask[:, :, None] * (dP / lengths[:, None])[:, None, :]
        else:
            d_hs = np.zeros(ids.shape + (dP.shape[1],))
            d_hs[:, -1] = dP
        dX = _gru_back(self.store, self.prefix + ".gru", d_hs, gcache)
        if drop is not None:
            dX = dX * drop
        valid = mask > 0
        scatter_rows(self.store, self.prefix + ".words", ids[valid], dX[valid])


class TaPEm:
    """Pair embedder, context-path embedder and validity classifier sharing one store.

    ``variant`` selects the ablations: ``tapem-npv`` trains the validity loss
    on ``sigmoid(p.q)`` instead of the classifier, ``tapem-no-attn`` pools
    path states by their mean.
    """

    def __init__(self, store: ParamStore, corpus: Corpus, *, K, d, hidden=100,
                 cls_hidden=100, dropout=0.15, pooling="mean", variant="tapem"):
        if variant not in VARIANTS[:3]:
            raise ContractError(f"unknown TaPEm variant {variant!r}")
        self.store, self.corpus = store, corpus
        self.K, self.d, self.dropout, self.variant = K, d, dropout, variant
        self.hidden, self.cls_hidden = hidden, cls_hidden
        self.attention = variant != "tapem-no-attn"
        self.encoder = PaperEncoder(store, "enc", pooling=pooling, dropout=dropout)

    @classmethod
    def create(cls, corpus: Corpus, rng, *, K, d, hidden=100, cls_hidden=100, **kwargs):
        s = ParamStore()
        PaperEncoder.build(s, "enc", rng, corpus.n_vocab, K, "paper_encoder")
        s.add("author_emb", init_embedding(rng, corpus.n_authors, K), "embeddings", sparse=True)
        s.add("venue_emb", init_embedding(rng, max(corpus.n_venues, 1), K), "embeddings", sparse=True)
        s.add("pair.W1", init_matrix(rng, hidden, 4 * K), "pair_mlp")
        s.add("pair.b1", np.zeros(hidden), "pair_mlp")
        s.add("pair.W2", init_matrix(rng, d, hidden), "pair_mlp")
        s.add("pair.b2", np.zeros(d), "pair_mlp")
        _add_gru(s, "path.fw", rng, K, d, "bigru")
        _add_gru(s, "path.bw", rng, K, d, "bigru")
        s.add("path.proj.W", init_matrix(rng, d, 2 * d), "bigru")
        s.add("path.proj.b", np.zeros(d), "bigru")
        s.add("attn.k", rng.uniform(-1, 1, size=d) / np.sqrt(d), "attention")
        s.add("attn.W", init_matrix(rng, d, d), "attention")
        s.add("cls.W1", init_matrix(rng, cls_hidden, d), "classifier")
        s.add("cls.b1", np.zeros(cls_hidden), "classifier")
        s.add("cls.w2", init_matrix(rng, 1, cls_hidden)[0], "classifier")
        s.add("cls.b2", np.zeros(1), "classifier")
        return cls(s, corpus, K=K, d=d, hidden=hidden, cls_hidden=cls_hidden, **kwargs)

    # ---------------------------------------------------------------- pieces

    def encode_papers(self, papers, training=False, rng=None):
        return self.encoder.forward(self.corpus.paper_tokens(papers), training, rng)

    def author_vectors(self, authors):
        rows = self.corpus.row[authors]
        if np.any(self.corpus.node_type[authors] != NodeType.AUTHOR):
            raise NodeTypeError("author vectors requested for a non-author node")
        return self.store["author_emb"][rows]

    def pair_forward(self, P, Q, training=False, rng=None):
        s = self.store
        C = comb(P, Q)
        m0 = dropout_mask(C.shape, self.dropout, training, rng)
        x0 = C if m0 is None else C * m0
        a1 = x0 @ s["pair.W1"].T + s["pair.b1"]
        h1 = np.maximum(a1, 0.0)
        m1 = dropout_mask(h1.shape, self.dropout, training, rng)
        x1 = h1 if m1 is None else h1 * m1
        G = x1 @ s["pair.W2"].T + s["pair.b2"]
        return G, (P, Q, m0, x0, a1, m1, x1)

    def pair_backward(self, dG, cache):
        s, g = self.store, self.store.grads
        P, Q, m0, x0, a1, m1, x1 = cache
        g["pair.W2"] += dG.T @ x1
        g["pair.b2"] += dG.sum(axis=0)
        dh1 = dG @ s["pair.W2"]
        if m1 is not None:
            dh1 = dh1 * m1
        da1 = dh1 * (a1 > 0)
        g["pair.W1"] += da1.T @ x0
        g["pair.b1"] += da1.sum(axis=0)
        dC = da1 @ s["pair.W1"]
        if m0 is not None:
            dC = dC * m0
        K = P.shape[1]
        d_p, d_q, d_pq, d_diff = (dC[:, i * K:(i + 1) * K] for i in range(4))
        return d_p + d_pq * Q + d_diff, d_q + d_pq * P - d_diff

    def path_forward(self, X, lengths):
        """Embed right-padded node-vector sequences ``X`` (M, T, K) into (M, d)."""
        s = self.store
        lengths = np.asarray(lengths, dtype=np.int64)
        if np.any(lengths < 2):
            raise InputError("context paths need at least two nodes")
        M, T, _ = X.shape
        mask = (np.arange(T)[None, :] < lengths[:, None]).astype(DTYPE)
        rows = np.arange(M)[:, None]
        ridx = reverse_index(lengths, T)
        fw, fw_cache = _gru(s, "path.fw", X, mask)
        bw_rev, bw_cache = _gru(s, "path.bw", X[rows, ridx], mask)
        Hcat = np.concatenate([fw, bw_rev[rows, ridx]], axis=2)
        Hp = Hcat @ s["path.proj.W"].T + s["path.proj.b"]
        if self.attention:
            w = masked_softmax(Hp @ s["attn.k"], mask)
        else:
            w = mask / lengths[:, None]
        hbar = np.einsum("mt,mtd->md", w, Hp)
        F = hbar @ s["attn.W"].T
        return F, (mask, ridx, fw_cache, bw_cache, Hcat, Hp, w, hbar)

    def path_backward(self, dF, cache):
        s, g = self.store, self.store.grads
        mask, ridx, fw_cache, bw_cache, Hcat, Hp, w, hbar = cache
        d = self.d
        rows = np.arange(len(dF))[:, None]
        g["attn.W"] += dF.T @ hbar
        dhbar = dF @ s["attn.W"]
        dHp = w[:, :, None] * dhbar[:, None, :]
        if self.attention:
            dw = Hp @ dhbar[:, :, None]
            dw = dw[:, :, 0]
            ds = w * (dw - (w * dw).sum(axis=1, keepdims=True))
            dHp += ds[:, :, None] * s["attn.k"]
            g["attn.k"] += np.einsum("mt,mtd->d", ds, Hp)
        g["path.proj.W"] += dHp.reshape(-1, d).T @ Hcat.reshape(-1, 2 * d)
        g["path.proj.b"] += dHp.sum(axis=(0, 1))
        dHcat = dHp @ s["path.proj.W"]
        dX = _gru_back(s, "path.fw", dHcat[:, :, :d], fw_cache)
        dX += _gru_back(s, "path.bw", dHcat[:, :, d:][rows, ridx], bw_cache)[rows, ridx]
        return dX

    def cls_forward(self, G):
        s = self.store
        a = G @ s["cls.W1"].T + s["cls.b1"]
        h = np.maximum(a, 0.0)
        return h @ s["cls.w2"] + s["cls.b2"][0], (G, a, h)

    def cls_backward(self, dlogit, cache):
        s, g = self.store, self.store.grads
        G, a, h = cache
        g["cls.w2"] += h.T @ dlogit
        g["cls.b2"] += dlogit.sum()
        da = np.outer(dlogit, s["cls.w2"]) * (a > 0)
        g["cls.W1"] += da.T @ G
        g["cls.b1"] += da.sum(axis=0)
        return da @ s["cls.W1"]

    # ------------------------------------------------------- path node inputs

    def path_inputs(self, paths, lengths, papers, P):
        """Node vectors for padded ``paths``; paper nodes take rows of ``P``.

        ``papers`` is the sorted array of paper ids whose encodings are ``P``.
        """
        M, T = paths.shape
        valid = np.arange(T)[None, :] < np.asarray(lengths)[:, None]
        nodes = paths[valid]
        types = self.corpus.node_type[nodes]
        rows = self.corpus.row[nodes]
        vecs = np.empty((len(nodes), self.K))
        is_p = types == NodeType.PAPER
        is_a = types == NodeType.AUTHOR
        is_v = types == NodeType.VENUE
        p_idx = np.searchsorted(papers, nodes[is_p])
        if np.any(papers[np.minimum(p_idx, len(papers) - 1)] != nodes[is_p]):
            raise ContractError("path paper missing from the encoded paper set")
        vecs[is_p] = P[p_idx]
        vecs[is_a] = self.store["author_emb"][rows[is_a]]
        vecs[is_v] = self.store["venue_emb"][rows[is_v]]
        X = np.zeros((M, T, self.K))
        X[valid] = vecs
        return X, (valid, is_p, is_a, is_v, p_idx, rows)

    def path_inputs_backward(self, dX, cache, dP):
        valid, is_p, is_a, is_v, p_idx, rows = cache
        dv = dX[valid]
        if np.any(is_p):
            kernels.scatter_add_rows(dP, p_idx, np.ascontiguousarray(dv[is_p]))
        scatter_rows(self.store, "author_emb", rows[is_a], dv[is_a])
        scatter_rows(self.store, "venue_emb", rows[is_v], dv[is_v])

    # ---------------------------------------------------------------- scoring

    def score(self, papers, candidates, mode=None, P=None):
        """Scores for ``candidates[i]`` (array of author ids) against ``papers[i]``.

        ``mode`` is ``"classifier"`` (sigmoid of the validity logit) or ``"dot"``
        (``p.q``); the default follows the variant.  Returns a list of arrays.
        """
        mode = mode or ("dot" if self.variant == "tapem-npv" else "classifier")
        papers = np.asarray(papers, dtype=np.int64)
        if P is None:
            P, _ = self.encode_papers(papers)
        sizes = [len(c) for c in candidates]
        flat = np.concatenate([np.asarray(c, dtype=np.int64) for c in candidates]) if sizes else np.zeros(0, np.int64)
        Pv = np.repeat(P, sizes, axis=0)
        Q = self.author_vectors(flat)
        if mode == "dot":
            raw = (Pv * Q).sum(axis=1)
        elif mode == "classifier":
            G, _ = self.pair_forward(Pv, Q)
            raw = sigmoid(self.cls_forward(G)[0])
        else:
            raise ContractError(f"unknown scoring mode {mode!r}")
        return np.split(raw, np.cumsum(sizes)[:-1])


class SkipGram:
    """Heterogeneous skip-gram with separate centre and context tables.

    Papers on either side are represented by the baseline's own paper encoder,
    so unseen papers can be scored from their abstracts.
    """

    variant = "baseline"

    def __init__(self, store: ParamStore, corpus: Corpus, *, K, pooling="mean", dropout=0.0):
        self.store, self.corpus, self.K = store, corpus, K
        self.encoder = PaperEncoder(store, "base.enc", pooling=pooling, dropout=dropout)

    @classmethod
    def create(cls, corpus: Corpus, rng, *, K, **kwargs):
        s = ParamStore()
        PaperEncoder.build(s, "base.enc", rng, corpus.n_vocab, K, "baseline")
        s.groups["base.enc.words"] = "baseline"
        for side in ("center", "context"):
            s.add(f"base.author_{side}", init_embedding(rng, corpus.n_authors, K), "baseline", sparse=True)
            s.add(f"base.venue_{side}", init_embedding(rng, max(corpus.n_venues, 1), K), "baseline",
                  sparse=True)
        return cls(s, corpus, K=K, **kwargs)

    def encode_papers(self, papers, training=False, rng=None):
        return self.encoder.forward(self.corpus.paper_tokens(papers), training, rng)

    def lookup(self, nodes, side, papers, P):
        nodes = np.asarray(nodes, dtype=np.int64).ravel()
        types = self.corpus.node_type[nodes]
        rows = self.corpus.row[nodes]
        out = np.empty((len(nodes), self.K))
        is_p = types == NodeType.PAPER
        p_idx = np.searchsorted(papers, nodes[is_p])
        out[is_p] = P[p_idx]
        for t, name in ((NodeType.AUTHOR, f"base.author_{side}"), (NodeType.VENUE, f"base.venue_{side}")):
            sel = types == t
            out[sel] = self.store[name][rows[sel]]
        return out, (types, rows, is_p, p_idx, side)

    def lookup_backward(self, d, cache, dP):
        types, rows, is_p, p_idx, side = cache
        if np.any(is_p):
            kernels.scatter_add_rows(dP, p_idx, np.ascontiguousarray(d[is_p]))
        for t, name in ((NodeType.AUTHOR, f"base.author_{side}"), (NodeType.VENUE, f"base.venue_{side}")):
            sel = types == t
            scatter_rows(self.store, name, rows[sel], d[sel])

    def loss_and_grads(self, center, context, negatives, training=False, rng=None):
        """Mean skip-gram negative-sampling loss over a batch; grads accumulate in the store.

        ``negatives`` has shape (B, k) and must match the context node's type.
        """
        center = np.asarray(center, dtype=np.int64)
        context = np.asarray(context, dtype=np.int64)
        negatives = np.asarray(negatives, dtype=np.int64).reshape(len(center), -1)
        nt = self.corpus.node_type
        if np.any(nt[negatives] != nt[context][:, None]):
            raise ContractError("negative nodes must share the context node's type")
        B, k = negatives.shape
        if B == 0:
            return 0.0, np.zeros(0)
        every = np.concatenate([center, context, negatives.ravel()])
        papers = np.unique(every[nt[every] == NodeType.PAPER])
        if len(papers):
            P, enc_cache = self.encode_papers(papers, training, rng)
        else:
            P, enc_cache = np.zeros((0, self.K)), None
        c, c_cache = self.lookup(center, "center", papers, P)
        x, x_cache = self.lookup(context, "context", papers, P)
        n, n_cache = self.lookup(negatives, "context", papers, P)
        n3 = n.reshape(B, k, self.K)
        s_pos = (c * x).sum(axis=1)
        s_neg = np.einsum("bd,bkd->bk", c, n3)
        per = softplus(-s_pos) + softplus(s_neg).sum(axis=1)
        g_pos = -sigmoid(-s_pos) / B
        g_neg = sigmoid(s_neg) / B
        dc = g_pos[:, None] * x + np.einsum("bk,bkd->bd", g_neg, n3)
        dx = g_pos[:, None] * c
        dn = (g_neg[:, :, None] * c[:, None, :]).reshape(B * k, self.K)
        dP = np.zeros_like(P)
        self.lookup_backward(dc, c_cache, dP)
        self.lookup_backward(dx, x_cache, dP)
        self.lookup_backward(dn, n_cache, dP)
        if enc_cache is not None:
            self.encoder.backward(dP, enc_cache)
        return float(per.mean()), per

    def score(self, papers, candidates, mode="dot", P=None):
        if mode != "dot":
            raise ContractError("the skip-gram baseline only scores by dot product")
        papers = np.asarray(papers, dtype=np.int64)
        if P is None:
            P, _ = self.encode_papers(papers)
        out = []
        for p, cand in zip(P, candidates):
            rows = self.corpus.row[np.asarray(cand, dtype=np.int64)]
            out.append(self.store["base.author_center"][rows] @ p)
        return out


# ----------------------------------------------------- single-item helpers


def encode_paper(model, token_ids, training=False, rng=None):
    """K-vector for one token-id sequence."""
    P, _ = model.encoder.forward([np.asarray(token_ids, dtype=np.int64)], training, rng)
    return P[0]


def embed_pair(model: TaPEm, p, q, training=False, rng=None):
    G, _ = model.pair_forward(np.atleast_2d(p), np.atleast_2d(q), training, rng)
    return G[0]


def embed_context_path(model: TaPEm, node_vectors):
    X = np.asarray(node_vectors, dtype=DTYPE)
    if X.ndim != 2 or X.shape[1] != model.K:
        raise ShapeError(f"expected a (length, {model.K}) array of node vectors, got {X.shape}")
    F, _ = model.path_forward(X[None], [len(X)])
    return F[0]


def attention_weights(model: TaPEm, node_vectors):
    X = np.asarray(node_vectors, dtype=DTYPE)
    _, cache = model.path_forward(X[None], [len(X)])
    return cache[6][0]


def validity_logit(model: TaPEm, pair_embedding):
    g = np.asarray(pair_embedding, dtype=DTYPE)
    if g.shape != (model.d,):
        raise ShapeError(f"expected a {model.d}-vector, got shape {g.shape}")
    return float(model.cls_forward(g[None])[0][0])


def baseline_skipgram_loss(model: SkipGram, center, context, negatives):
    """Skip-gram loss for one (centre, context) pair with its negatives (no gradient)."""
    store = model.store
    saved = {n: g.copy() for n, g in store.grads.items()}
    touched = dict(store.touched)
    loss, _ = model.loss_and_grads([center], [context], [list(negatives)])
    for n, g in saved.items():
        store.grads[n][...] = g
    store.touched = touched
    return loss
