"""Batched building blocks with hand-written backward passes.

Sequences are right-padded; ``mask`` is 1.0 on real steps and 0.0 on padding.
A padded step carries the previous hidden state through unchanged.
"""

import numpy as np

from . import kernels


def gru_forward(X, mask, W, U, b):
    """Run a GRU over ``X`` (B, T, I); gates stacked as [update, reset, candidate].

    Update rule: ``h_t = z * h_{t-1} + (1 - z) * candidate`` (the update gate
    keeps the old state).  Returns hidden states (B, T, H) and a cache.
    """
    A = np.ascontiguousarray((X @ W.T + b).transpose(1, 0, 2))
    mask_t = np.ascontiguousarray(mask.T)
    hs, h_prev, gates = kernels.gru_scan(A, mask_t, np.ascontiguousarray(U))
    return hs.transpose(1, 0, 2), (X, mask_t, h_prev, gates)


def gru_backward(d_hs, cache, W, U):
    """Gradients of a GRU run given d(loss)/d(hidden states).

    Returns ``(dX, dW, dU, db)``.
    """
    X, mask_t, h_prev, gates = cache
    H = U.shape[1]
    d_hs = np.ascontiguousarray(d_hs.transpose(1, 0, 2))
    dA = kernels.gru_scan_backward(d_hs, mask_t, h_prev, gates, np.ascontiguousarray(U))
    flat = dA.reshape(-1, 3 * H)
    hp = h_prev.reshape(-1, H)
    dU = np.empty_like(U)
    dU[:2 * H] = flat[:, :2 * H].T @ hp
    dU[2 * H:] = flat[:, 2 * H:].T @ (gates[:, :, H:2 * H].reshape(-1, H) * hp)
    dA = dA.transpose(1, 0, 2)
    dW = dA.reshape(-1, 3 * H).T @ X.reshape(-1, X.shape[2])
    db = flat.sum(axis=0)
    dX = dA @ W
    return dX, dW, dU, db


def reverse_index(lengths, T):
    """Per-row index that reverses the valid prefix and leaves padding in place."""
    t = np.arange(T)[None, :]
    L = np.asarray(lengths)[:, None]
    return np.where(t < L, L - 1 - t, t)


def masked_softmax(scores, mask):
    s = np.where(mask > 0, scores, -np.inf)
    s = s - s.max(axis=1, keepdims=True)
    e = np.exp(s) * (mask > 0)
    return e / e.sum(axis=1, keepdims=True)
