"""Finite-difference verification of every parameter group on a tiny network."""

from __future__ import annotations

import numpy as np

from .hetgraph import EdgeType, HeteroGraph, NodeType
from .model import Corpus
from .numerics import grad_check, rng_stream
from .objective import (TrainingConfig, build_training_data, create_model, make_batch,
                        skipgram_pairs, tapem_loss_and_grads)

TAPEM_GROUPS = ("paper_encoder", "pair_mlp", "bigru", "attention", "classifier", "embeddings")

# Small widths keep the check fast; they are overridden by an explicit config.
TOY_CONFIG = dict(K=6, d=5, mlp_hidden=8, classifier_hidden=4, walks_per_node=2, walk_length=9,
                  negative_contexts=2, metric_negatives=2, margin=1.0, tau=3)


def toy_graph() -> HeteroGraph:
    """Three papers, four authors, two venues and one citation."""
    names = ["a0", "a1", "a2", "a3", "p0", "p1", "p2", "v0", "v1"]
    types = [NodeType.AUTHOR] * 4 + [NodeType.PAPER] * 3 + [NodeType.VENUE] * 2
    W, C, V = EdgeType.WRITES, EdgeType.CITES, EdgeType.PUBLISHES_IN
    edges = [(0, 4, W), (1, 4, W), (1, 5, W), (2, 5, W), (2, 6, W), (3, 6, W),
             (5, 4, C), (4, 7, V), (5, 7, V), (6, 8, V)]
    tokens = {4: "graph walk embedding graph".split(),
              5: "author pair embedding walk".split(),
              6: "abstract encoder author graph pair".split()}
    years = {4: 2010, 5: 2011, 6: 2012}
    return HeteroGraph(names, types, edges, tokens, years, min_token_count=1)


def _randomise(store, rng):
    # Uniform(-1, 1) everywhere so every gradient sits far above the
    # finite-difference noise floor (the training init makes many of them ~1e-8).
    for p in store.params.values():
        p[...] = rng.uniform(-1.0, 1.0, size=p.shape)


def check_gradients(config: TrainingConfig | None = None, seed=0, probes=40, epsilon=1e-5,
                    corrupt=None):
    """``{group: max relative error}`` for TaPEm's groups plus ``baseline``.

    ``corrupt`` names a group whose analytic gradients get a deliberate error
    (a negative control for the checker itself).
    """
    cfg = config or TrainingConfig(**TOY_CONFIG)
    graph = toy_graph()
    corpus = Corpus(graph)
    rng = rng_stream(seed, "gradcheck")
    results = {}

    def wrap(compute, group_of):
        def loss_function(store):
            store.zero_grads()
            loss, sig = compute()
            grads = {k: v.copy() for k, v in store.grads.items()}
            if corrupt is not None:
                for name, g in grads.items():
                    if group_of(name) == corrupt:
                        g += 1e-2 * (1.0 + np.abs(g))
            return loss, grads, sig
        return loss_function

    tcfg = TrainingConfig(**{**cfg.to_dict(), "model": "tapem", "dropout": 0.0})
    model = create_model(corpus, tcfg, rng=rng)
    _randomise(model.store, rng)
    data = build_training_data(graph, tcfg, seed)
    batch = make_batch(data.instances, np.arange(len(data.instances))[:8], data.pool, graph, tcfg, rng)

    def tapem_loss():
        r = tapem_loss_and_grads(model, batch, tcfg)
        return r.total, r.signature

    fn = wrap(tapem_loss, model.store.groups.get)
    for group in TAPEM_GROUPS:
        err, _ = grad_check(fn, model.store, probes, epsilon, rng_stream(seed, group),
                            names=model.store.group_names(group))
        results[group] = err

    bcfg = TrainingConfig(**{**tcfg.to_dict(), "model": "baseline"})
    base = create_model(corpus, bcfg, rng=rng)
    _randomise(base.store, rng)
    centers, contexts = skipgram_pairs(graph, bcfg, seed)
    pick = np.arange(len(centers))[:: max(1, len(centers) // 8)][:8]
    k = max(bcfg.negative_contexts, 1)
    negs = np.stack([rng.choice(np.flatnonzero(graph.node_type == graph.node_type[c]), size=k)
                     for c in contexts[pick]])

    def base_loss():
        loss, _ = base.loss_and_grads(centers[pick], contexts[pick], negs)
        return loss, None

    fn = wrap(base_loss, base.store.groups.get)
    results["baseline"], _ = grad_check(fn, base.store, probes, epsilon, rng_stream(seed, "baseline"))
    return results
