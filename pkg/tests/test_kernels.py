"""The numba loop kernels and the numpy fallbacks must agree."""

import numpy as np
import pytest

from tapem import kernels
from tapem._accel import HAVE_NUMBA
from tapem.hetgraph import NodeType
from tapem.layers import gru_backward, gru_forward, masked_softmax, reverse_index
from tapem.walker import APA


def _walk_inputs(graph, n=60, length=11, seed=0):
    rng = np.random.default_rng(seed)
    starts = rng.choice(graph.authors, size=n).astype(np.int64)
    cycle = np.array([int(t) for t in APA.cycle], dtype=np.int64)
    return graph.walk_indptr, graph.walk_indices, starts, cycle, rng.random((n, length - 1))


def _gru_inputs(seed=0, B=5, T=6, H=4):
    rng = np.random.default_rng(seed)
    lengths = rng.integers(1, T + 1, size=B)
    mask = (np.arange(T)[None, :] < lengths[:, None]).astype(float)
    A = rng.normal(size=(T, B, 3 * H))
    U = rng.normal(size=(3 * H, H)) * 0.5
    hs, h_prev, gates = kernels.gru_scan(A, np.ascontiguousarray(mask.T), U)
    return rng.normal(size=(T, B, H)), np.ascontiguousarray(mask.T), h_prev, gates, U


def _compiled(name):
    loop, _ = kernels.KERNELS[name]
    return getattr(kernels, name) if HAVE_NUMBA else loop


@pytest.mark.parametrize("impl", ["loop", "numpy", "active"])
def test_metapath_walks_agree(impl, synthetic):
    g, _ = synthetic
    args = _walk_inputs(g)
    loop, vec = kernels.KERNELS["metapath_walks"]
    fn = {"loop": loop, "numpy": vec, "active": kernels.metapath_walks}[impl]
    ref_w, ref_l = loop(*args)
    w, l = fn(*args)
    assert np.array_equal(w, ref_w) and np.array_equal(l, ref_l)


def test_pair_positions_agree(synthetic):
    g, _ = synthetic
    walks, lengths = kernels.metapath_walks(*_walk_inputs(g, n=80, length=15, seed=2))
    args = (walks, lengths, g.node_type == NodeType.PAPER, g.node_type == NodeType.AUTHOR, 3)
    loop, vec = kernels.KERNELS["pair_positions"]
    ref = loop(*args)
    for fn in (vec, _compiled("pair_positions")):
        out = fn(*args)
        assert all(np.array_equal(a, b) for a, b in zip(out, ref))


def test_scatter_add_rows_agree():
    rng = np.random.default_rng(0)
    index = rng.integers(0, 6, size=40)
    rows = rng.normal(size=(40, 3))
    loop, vec = kernels.KERNELS["scatter_add_rows"]
    outs = []
    for fn in (loop, vec, _compiled("scatter_add_rows")):
        out = np.zeros((6, 3))
        fn(out, index, rows)
        outs.append(out)
    ref = np.zeros((6, 3))
    np.add.at(ref, index, rows)
    for out in outs:
        assert np.allclose(out, ref, rtol=0, atol=1e-12)


def test_gru_backward_kernels_agree():
    args = _gru_inputs()
    loop, vec = kernels.KERNELS["gru_scan_backward"]
    ref = loop(*args)
    for fn in (vec, _compiled("gru_scan_backward")):
        assert np.allclose(fn(*args), ref, rtol=1e-12, atol=1e-13)


def test_gru_padding_carries_state():
    rng = np.random.default_rng(1)
    B, T, I, H = 3, 5, 2, 4
    X = rng.normal(size=(B, T, I))
    mask = np.ones((B, T))
    mask[0, 2:] = 0
    W, U, b = rng.normal(size=(3 * H, I)), rng.normal(size=(3 * H, H)), rng.normal(size=3 * H)
    hs, _ = gru_forward(X, mask, W, U, b)
    assert np.array_equal(hs[0, 1], hs[0, 4])
    short, _ = gru_forward(X[:1, :2], np.ones((1, 2)), W, U, b)
    assert np.allclose(short[0, -1], hs[0, -1])


def test_gru_zero_parameters():
    # all-zero weights: gates are 0.5 and the candidate is 0, so h halves each step
    H = 2
    X = np.ones((1, 3, 2))
    hs, _ = gru_forward(X, np.ones((1, 3)), np.zeros((3 * H, 2)), np.zeros((3 * H, H)), np.zeros(3 * H))
    assert np.all(hs == 0.0)


def test_gru_gradients_finite_difference():
    rng = np.random.default_rng(2)
    B, T, I, H = 3, 4, 3, 2
    X = rng.normal(size=(B, T, I))
    mask = (np.arange(T)[None, :] < np.array([[4], [2], [3]])).astype(float)
    W, U, b = rng.normal(size=(3 * H, I)), rng.normal(size=(3 * H, H)), rng.normal(size=3 * H)
    R = rng.normal(size=(B, T, H))
    loss = lambda: float((gru_forward(X, mask, W, U, b)[0] * R).sum())
    _, cache = gru_forward(X, mask, W, U, b)
    dX, dW, dU, db = gru_backward(R, cache, W, U)
    for arr, grad in ((X, dX), (W, dW), (U, dU), (b, db)):
        num = np.zeros_like(arr)
        for idx in np.ndindex(arr.shape):
            old = arr[idx]
            arr[idx] = old + 1e-6
            fp = loss()
            arr[idx] = old - 1e-6
            fm = loss()
            arr[idx] = old
            num[idx] = (fp - fm) / 2e-6
        assert np.allclose(grad, num, rtol=1e-6, atol=1e-8)


def test_reverse_index_is_an_involution():
    lengths = np.array([1, 3, 5])
    r = reverse_index(lengths, 5)
    assert r[1].tolist() == [2, 1, 0, 3, 4]
    rows = np.arange(3)[:, None]
    assert np.array_equal(r[rows, r], np.broadcast_to(np.arange(5), (3, 5)))


def test_masked_softmax_ignores_padding():
    s = np.array([[1.0, 2.0, 50.0]])
    w = masked_softmax(s, np.array([[1.0, 1.0, 0.0]]))
    assert w[0, 2] == 0.0 and abs(w.sum() - 1) < 1e-12
