"""Independent reference implementations used by the tests."""

import numpy as np

from tapem.hetgraph import NodeType


def brute_force_pairs(walk, tau, graph):
    """Every (paper position, author position) within ``tau``, path oriented paper -> author."""
    out = []
    walk = [int(x) for x in walk]
    for i, v in enumerate(walk):
        if graph.node_type[v] != NodeType.PAPER:
            continue
        for j, u in enumerate(walk):
            if graph.node_type[u] != NodeType.AUTHOR or abs(i - j) > tau:
                continue
            path = walk[i:j + 1] if j >= i else walk[j:i + 1][::-1]
            out.append((v, u, tuple(path), int(graph.has_authorship(v, u))))
    return out


def brute_force_metrics(truth_in_rank_order, scores, n):
    """Recall@n, Precision@n and AUC by direct counting over all pairs."""
    truth = list(truth_in_rank_order)
    n_true = sum(truth)
    hits = sum(truth[:n])
    pos = [s for s, t in zip(scores, truth) if t]
    neg = [s for s, t in zip(scores, truth) if not t]
    wins = 0.0
    for a in pos:
        for b in neg:
            wins += 1.0 if a > b else 0.5 if a == b else 0.0
    auc = wins / (len(pos) * len(neg)) if pos and neg else None
    return hits / n_true, hits / n, auc


def adam_reference(theta, grads, lr=1e-3, b1=0.9, b2=0.999, eps=1e-8):
    """Scalar Adam written out from the textbook update rule."""
    m = v = 0.0
    for t, g in enumerate(grads, 1):
        m = b1 * m + (1 - b1) * g
        v = b2 * v + (1 - b2) * g * g
        m_hat = m / (1 - b1 ** t)
        v_hat = v / (1 - b2 ** t)
        theta = theta - lr * m_hat / (np.sqrt(v_hat) + eps)
    return theta
