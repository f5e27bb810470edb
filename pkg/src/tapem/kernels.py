"""Hot inner loops.

Every kernel exists twice: a loop form written in the numba-compatible subset
(compiled with ``@njit`` when numba is importable) and a vectorised numpy form
used when acceleration is disabled.  Integer kernels agree exactly and the
floating-point ones to rounding; the test suite and
``benchmarks/bench_kernels.py`` run both.
"""

import numpy as np

from ._accel import HAVE_NUMBA, jit


# --------------------------------------------------------------------------
# meta-path guided walks


def _metapath_walks_loop(indptr, indices, starts, cycle, uniforms):
    n_walks = starts.shape[0]
    length = uniforms.shape[1] + 1
    period = cycle.shape[0]
    walks = np.full((n_walks, length), -1, dtype=np.int64)
    lengths = np.ones(n_walks, dtype=np.int64)
    for w in range(n_walks):
        cur = starts[w]
        walks[w, 0] = cur
        for i in range(length - 1):
            t = cycle[(i + 1) % period]
            lo = indptr[t, cur]
            hi = indptr[t, cur + 1]
            deg = hi - lo
            if deg == 0:
                break
            j = int(uniforms[w, i] * deg)
            if j >= deg:
                j = deg - 1
            cur = indices[lo + j]
            walks[w, i + 1] = cur
            lengths[w] = i + 2
    return walks, lengths


def _metapath_walks_numpy(indptr, indices, starts, cycle, uniforms):
    n_walks = starts.shape[0]
    length = uniforms.shape[1] + 1
    period = cycle.shape[0]
    walks = np.full((n_walks, length), -1, dtype=np.int64)
    lengths = np.ones(n_walks, dtype=np.int64)
    walks[:, 0] = starts
    alive = np.ones(n_walks, dtype=bool)
    cur = starts.astype(np.int64).copy()
    for i in range(length - 1):
        t = cycle[(i + 1) % period]
        lo = indptr[t, cur]
        deg = indptr[t, cur + 1] - lo
        alive &= deg > 0
        if not alive.any():
            break
        rows = np.flatnonzero(alive)
        j = np.minimum((uniforms[rows, i] * deg[rows]).astype(np.int64), deg[rows] - 1)
        cur[rows] = indices[lo[rows] + j]
        walks[rows, i + 1] = cur[rows]
        lengths[rows] = i + 2
    return walks, lengths


# --------------------------------------------------------------------------
# paper-author pair positions inside walks


def _pair_positions_loop(walks, lengths, is_paper, is_author, tau):
    n_walks = walks.shape[0]
    count = 0
    for w in range(n_walks):
        n = lengths[w]
        for i in range(n):
            if not is_paper[walks[w, i]]:
                continue
            lo = max(0, i - tau)
            hi = min(n - 1, i + tau)
            for j in range(lo, hi + 1):
                if j != i and is_author[walks[w, j]]:
                    count += 1
    out_w = np.empty(count, dtype=np.int64)
    out_i = np.empty(count, dtype=np.int64)
    out_j = np.empty(count, dtype=np.int64)
    k = 0
    for w in range(n_walks):
        n = lengths[w]
        for i in range(n):
            if not is_paper[walks[w, i]]:
                continue
            lo = max(0, i - tau)
            hi = min(n - 1, i + tau)
            for j in range(lo, hi + 1):
                if j != i and is_author[walks[w, j]]:
                    out_w[k] = w
                    out_i[k] = i
                    out_j[k] = j
                    k += 1
    return out_w, out_i, out_j


def _pair_positions_numpy(walks, lengths, is_paper, is_author, tau):
    n_walks, length = walks.shape
    pos = np.arange(length)
    valid = pos[None, :] < lengths[:, None]
    safe = np.where(valid, walks, 0)
    paper_at = valid & is_paper[safe]
    author_at = valid & is_author[safe]
    ws, iss, js = [], [], []
    for delta in range(-tau, tau + 1):
        if delta == 0:
            continue
        lo, hi = max(0, -delta), min(length, length - delta)
        if lo >= hi:
            continue
        hit = paper_at[:, lo:hi] & author_at[:, lo + delta:hi + delta]
        w, i = np.nonzero(hit)
        ws.append(w)
        iss.append(i + lo)
        js.append(i + lo + delta)
    if not ws:
        empty = np.empty(0, dtype=np.int64)
        return empty, empty.copy(), empty.copy()
    w = np.concatenate(ws).astype(np.int64)
    i = np.concatenate(iss).astype(np.int64)
    j = np.concatenate(js).astype(np.int64)
    order = np.lexsort((j, i, w))
    return w[order], i[order], j[order]


# --------------------------------------------------------------------------
# row scatter-add (embedding gradients)


def _scatter_add_rows_loop(out, index, rows):
    n, k = rows.shape
    for a in range(n):
        r = index[a]
        for b in range(k):
            out[r, b] += rows[a, b]
    return out


def _scatter_add_rows_numpy(out, index, rows):
    np.add.at(out, index, rows)
    return out


# --------------------------------------------------------------------------
# GRU time loop.  Arrays are time-major: A (T, B, 3H) holds the input
# projections X W^T + b, gates are stacked [update, reset, candidate].
# The forward scan is numpy-only: it is dominated by tanh, where numpy's
# vectorised ufunc beats a compiled scalar loop several times over.  The
# backward scan has no transcendentals and gains from fusion.


def gru_scan(A, mask, U):
    T, B, H3 = A.shape
    H = H3 // 3
    U_zr_T, U_h_T = U[:2 * H].T, U[2 * H:].T
    hs = np.empty((T, B, H))
    h_prev = np.empty((T, B, H))
    gates = np.empty((T, B, H3))
    h = np.zeros((B, H))
    for t in range(T):
        zr = 0.5 * (1.0 + np.tanh(0.5 * (A[t, :, :2 * H] + h @ U_zr_T)))
        z, r = zr[:, :H], zr[:, H:]
        cand = np.tanh(A[t, :, 2 * H:] + (r * h) @ U_h_T)
        m = mask[t][:, None]
        h_prev[t] = h
        gates[t, :, :2 * H] = zr
        gates[t, :, 2 * H:] = cand
        h = m * (z * h + (1.0 - z) * cand) + (1.0 - m) * h
        hs[t] = h
    return hs, h_prev, gates


def _gru_scan_backward_loop(d_hs, mask, h_prev, gates, U):
    T, B, H = d_hs.shape
    U_zr = np.ascontiguousarray(U[:2 * H])
    U_h = np.ascontiguousarray(U[2 * H:])
    dA = np.zeros((T, B, 3 * H))
    dh = np.zeros((B, H))
    dhn = np.empty((B, H))
    d_cand = np.empty((B, H))
    d_zr = np.empty((B, 2 * H))
    for t in range(T - 1, -1, -1):
        for b in range(B):
            m = mask[t, b]
            for j in range(H):
                g = dh[b, j] + d_hs[t, b, j]
                dh[b, j] = g * (1.0 - m)
                g = g * m
                dhn[b, j] = g
                z = gates[t, b, j]
                cand = gates[t, b, 2 * H + j]
                d_cand[b, j] = g * (1.0 - z) * (1.0 - cand * cand)
                d_zr[b, j] = g * (h_prev[t, b, j] - cand) * z * (1.0 - z)
        d_rh = np.dot(d_cand, U_h)
        for b in range(B):
            for j in range(H):
                r = gates[t, b, H + j]
                d_zr[b, H + j] = d_rh[b, j] * h_prev[t, b, j] * r * (1.0 - r)
        back = np.dot(d_zr, U_zr)
        for b in range(B):
            for j in range(H):
                z = gates[t, b, j]
                r = gates[t, b, H + j]
                dh[b, j] += dhn[b, j] * z + d_rh[b, j] * r + back[b, j]
                dA[t, b, 2 * H + j] = d_cand[b, j]
            for j in range(2 * H):
                dA[t, b, j] = d_zr[b, j]
    return dA


def _gru_scan_backward_numpy(d_hs, mask, h_prev, gates, U):
    T, B, H = d_hs.shape
    U_zr, U_h = U[:2 * H], U[2 * H:]
    dA = np.zeros((T, B, 3 * H))
    dh = np.zeros((B, H))
    for t in range(T - 1, -1, -1):
        dh = dh + d_hs[t]
        m = mask[t][:, None]
        hp = h_prev[t]
        z, r, cand = gates[t, :, :H], gates[t, :, H:2 * H], gates[t, :, 2 * H:]
        dhn = dh * m
        d_cand = dhn * (1.0 - z) * (1.0 - cand * cand)
        d_rh = d_cand @ U_h
        d_zr = np.concatenate([dhn * (hp - cand) * z * (1.0 - z),
                               d_rh * hp * r * (1.0 - r)], axis=1)
        dA[t, :, :2 * H] = d_zr
        dA[t, :, 2 * H:] = d_cand
        dh = dhn * z + d_rh * r + d_zr @ U_zr + dh * (1.0 - m)
    return dA


KERNELS = {
    "metapath_walks": (_metapath_walks_loop, _metapath_walks_numpy),
    "pair_positions": (_pair_positions_loop, _pair_positions_numpy),
    "scatter_add_rows": (_scatter_add_rows_loop, _scatter_add_rows_numpy),
    "gru_scan_backward": (_gru_scan_backward_loop, _gru_scan_backward_numpy),
}

if HAVE_NUMBA:
    metapath_walks = jit(_metapath_walks_loop)
    pair_positions = jit(_pair_positions_loop)
    scatter_add_rows = jit(_scatter_add_rows_loop)
    gru_scan_backward = jit(_gru_scan_backward_loop)
else:
    metapath_walks = _metapath_walks_numpy
    pair_positions = _pair_positions_numpy
    scatter_add_rows = _scatter_add_rows_numpy
    gru_scan_backward = _gru_scan_backward_numpy
