"""Hot numeric kernels with a numba path and a pure-numpy path.

numba is used when importable unless ``LOWRATING_DISABLE_NUMBA`` is set to a
non-empty value other than ``0``. Both paths are always importable under
``*_numpy`` / ``*_numba`` names so tests and benchmarks can compare them.
"""

from __future__ import annotations

import os

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

try:
    import numba

    HAS_NUMBA = True
except ImportError:  # pragma: no cover - numba is an optional speedup
    numba = None
    HAS_NUMBA = False

_flag = os.environ.get("LOWRATING_DISABLE_NUMBA", "")
USE_NUMBA = HAS_NUMBA and _flag in ("", "0")


def _njit(fn, fastmath=False):
    if not HAS_NUMBA:
        return fn
    return numba.njit(cache=True, fastmath=fastmath)(fn)


# ---------------------------------------------------------------- branch counts


def branch_counts_numpy(n_instr, indptr, indices, topo, starts, ends):
    """Per-instruction count of branch regions that contain it.

    The graph is a DAG in CSR form over ``len(topo)`` nodes (instructions are
    nodes ``0..n_instr-1``); ``topo`` is a topological order. Region ``r`` holds
    every node on a path ``starts[r] ~> ends[r]``, endpoints excluded.
    """
    n = len(topo)
    counts = np.zeros(n_instr, dtype=np.int64)
    if len(starts) == 0:
        return counts
    reach = np.zeros((n, n), dtype=bool)
    for u in topo[::-1]:
        row = reach[u]
        row[u] = True
        for v in indices[indptr[u]:indptr[u + 1]]:
            row |= reach[v]
    starts = np.asarray(starts)
    ends = np.asarray(ends)
    inside = reach[starts] & reach[:, ends].T
    k = np.arange(len(starts))
    inside[k, starts] = False
    inside[k, ends] = False
    counts += inside[:, :n_instr].sum(axis=0)
    return counts


def _branch_counts_loops(n_instr, indptr, indices, topo, starts, ends):
    n = len(topo)
    counts = np.zeros(n_instr, dtype=np.int64)
    # reverse adjacency
    rdeg = np.zeros(n + 1, dtype=np.int64)
    for u in range(n):
        for p in range(indptr[u], indptr[u + 1]):
            rdeg[indices[p] + 1] += 1
    rptr = np.cumsum(rdeg)
    fill = rptr[:-1].copy()
    ridx = np.empty(indptr[n], dtype=np.int64)
    for u in range(n):
        for p in range(indptr[u], indptr[u + 1]):
            v = indices[p]
            ridx[fill[v]] = u
            fill[v] += 1
    fwd = np.zeros(n, dtype=np.int64)
    bwd = np.zeros(n, dtype=np.int64)
    stack = np.empty(n, dtype=np.int64)
    for r in range(len(starts)):
        stamp = r + 1
        s = starts[r]
        e = ends[r]
        top = 0
        stack[top] = s
        top += 1
        fwd[s] = stamp
        while top > 0:
            top -= 1
            u = stack[top]
            if u == e:
                continue
            for p in range(indptr[u], indptr[u + 1]):
                v = indices[p]
                if fwd[v] != stamp:
                    fwd[v] = stamp
                    stack[top] = v
                    top += 1
        top = 0
        stack[top] = e
        top += 1
        bwd[e] = stamp
        while top > 0:
            top -= 1
            u = stack[top]
            for p in range(rptr[u], rptr[u + 1]):
                v = ridx[p]
                if bwd[v] != stamp:
                    bwd[v] = stamp
                    stack[top] = v
                    top += 1
        for i in range(n_instr):
            if fwd[i] == stamp and bwd[i] == stamp and i != s and i != e:
                counts[i] += 1
    return counts


branch_counts_numba = _njit(_branch_counts_loops)


def branch_counts(n_instr, indptr, indices, topo, starts, ends):
    args = (
        int(n_instr),
        np.asarray(indptr, dtype=np.int64),
        np.asarray(indices, dtype=np.int64),
        np.asarray(topo, dtype=np.int64),
        np.asarray(starts, dtype=np.int64),
        np.asarray(ends, dtype=np.int64),
    )
    if USE_NUMBA:
        return branch_counts_numba(*args)
    return branch_counts_numpy(*args)


# ---------------------------------------------------------------- convolution
# x: (B, H, W), w: (F, H, K), b: (F,) -> out: (B, F, W - K + 1); valid, stride 1


def conv_forward_numpy(x, w, b):
    B, H, W = x.shape
    F, _, K = w.shape
    win = sliding_window_view(x, K, axis=2)  # (B, H, W', K)
    Wp = W - K + 1
    cols = win.transpose(0, 2, 1, 3).reshape(B * Wp, H * K)
    out = cols @ w.reshape(F, H * K).T + b
    return np.ascontiguousarray(out.reshape(B, Wp, F).transpose(0, 2, 1))


def conv_backward_numpy(x, w, dout):
    B, H, W = x.shape
    F, _, K = w.shape
    Wp = W - K + 1
    win = sliding_window_view(x, K, axis=2)
    cols = win.transpose(0, 2, 1, 3).reshape(B * Wp, H * K)
    d2 = dout.transpose(0, 2, 1).reshape(B * Wp, F)
    dw = (d2.T @ cols).reshape(F, H, K)
    db = dout.sum(axis=(0, 2))
    dcols = (d2 @ w.reshape(F, H * K)).reshape(B, Wp, H, K)
    dx = np.zeros_like(x)
    for k in range(K):
        dx[:, :, k:k + Wp] += dcols[:, :, :, k].transpose(0, 2, 1)
    return dx, dw, db


def _conv_forward_loops(x, w, b):
    B, H, W = x.shape
    F, _, K = w.shape
    Wp = W - K + 1
    out = np.empty((B, F, Wp))
    for n in range(B):
        for f in range(F):
            for j in range(Wp):
                acc = b[f]
                for h in range(H):
                    for k in range(K):
                        acc += x[n, h, j + k] * w[f, h, k]
                out[n, f, j] = acc
    return out


def _conv_backward_loops(x, w, dout):
    B, H, W = x.shape
    F, _, K = w.shape
    Wp = W - K + 1
    dx = np.zeros_like(x)
    dw = np.zeros_like(w)
    db = np.zeros(F)
    for n in range(B):
        for f in range(F):
            for j in range(Wp):
                g = dout[n, f, j]
                db[f] += g
                for h in range(H):
                    for k in range(K):
                        dw[f, h, k] += g * x[n, h, j + k]
                        dx[n, h, j + k] += g * w[f, h, k]
    return dx, dw, db


# fastmath lets the inner reductions vectorize; without it the loops trail BLAS
conv_forward_numba = _njit(_conv_forward_loops, fastmath=True)
conv_backward_numba = _njit(_conv_backward_loops, fastmath=True)


def conv_forward(x, w, b):
    if USE_NUMBA:
        return conv_forward_numba(np.ascontiguousarray(x), w, b)
    return conv_forward_numpy(x, w, b)


def conv_backward(x, w, dout):
    if USE_NUMBA:
        return conv_backward_numba(np.ascontiguousarray(x), w, np.ascontiguousarray(dout))
    return conv_backward_numpy(x, w, dout)
