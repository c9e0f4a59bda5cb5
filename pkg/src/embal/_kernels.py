"""Hot inner loops, compiled with numba when available.

Every kernel exists twice: a numba ``@njit`` version written as explicit
loops, and a pure numpy version with identical semantics. The numpy path is
used when numba cannot be imported or when ``EMBAL_DISABLE_NUMBA`` is set to
a truthy value before import. Both are always reachable through
:data:`numpy_impl` / :data:`numba_impl` for benchmarking and cross-checks.

Kernels mutate their output arguments in place and return nothing useful.
Within one backend results are deterministic; across backends they agree to
floating-point summation order.
"""
from __future__ import annotations

import os
from types import SimpleNamespace

import numpy as np

_FLAG = os.environ.get("EMBAL_DISABLE_NUMBA", "").strip().lower()
DISABLED_BY_ENV = _FLAG not in ("", "0", "false", "no")

try:
    import numba

    HAVE_NUMBA = True
except ImportError:  # pragma: no cover - numba is a declared dependency
    HAVE_NUMBA = False

USE_NUMBA = HAVE_NUMBA and not DISABLED_BY_ENV


# ---------------------------------------------------------------------------
# numpy reference path


def _softmax_rows(z):
    z = z - z.max(axis=1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=1, keepdims=True)


def _live_rows(X, y, w, lo, hi):
    # zero-weight rows contribute nothing; dropping them keeps BLAS blocking
    # (and therefore rounding) independent of how many such rows exist
    keep = w[lo:hi] != 0.0
    if keep.all():
        return X[lo:hi], y[lo:hi], w[lo:hi]
    return X[lo:hi][keep], y[lo:hi][keep], w[lo:hi][keep]


def sgd_linear_epoch_np(W, b, vW, vb, X, y, w, offsets, lr, momentum, wd):
    for s in range(offsets.shape[0] - 1):
        xb, yb, wb = _live_rows(X, y, w, offsets[s], offsets[s + 1])
        p = _softmax_rows(xb @ W.T + b)
        p[np.arange(yb.size), yb] -= 1.0
        dz = p * wb[:, None]
        gW = dz.T @ xb + wd * W
        gb = dz.sum(axis=0) + wd * b
        vW *= momentum
        vW += gW
        vb *= momentum
        vb += gb
        W -= lr * vW
        b -= lr * vb


def sgd_shallow_epoch_np(W1, b1, W2, b2, v1, vb1, v2, vb2, X, y, w, offsets, lr, momentum, wd):
    for s in range(offsets.shape[0] - 1):
        xb, yb, wb = _live_rows(X, y, w, offsets[s], offsets[s + 1])
        pre = xb @ W1.T + b1
        h = np.maximum(pre, 0.0)
        p = _softmax_rows(h @ W2.T + b2)
        p[np.arange(yb.size), yb] -= 1.0
        dz = p * wb[:, None]
        gW2 = dz.T @ h + wd * W2
        gb2 = dz.sum(axis=0) + wd * b2
        dh = (dz @ W2) * (pre > 0.0)
        gW1 = dh.T @ xb + wd * W1
        gb1 = dh.sum(axis=0) + wd * b1
        for vel, g, par in ((v1, gW1, W1), (vb1, gb1, b1), (v2, gW2, W2), (vb2, gb2, b2)):
            vel *= momentum
            vel += g
            par -= lr * vel


def factored_min_update_np(Q, V, sqnorm, c, mind):
    """mind <- min(mind, ||g_i - g_c||^2) using the rank-one factorisation."""
    d2 = sqnorm + sqnorm[c] - 2.0 * (Q @ Q[c]) * (V @ V[c])
    np.maximum(d2, 0.0, out=d2)
    np.minimum(mind, d2, out=mind)


def euclid_min_update_np(X, row, mind):
    diff = X - row
    d2 = np.einsum("ij,ij->i", diff, diff)
    np.minimum(mind, d2, out=mind)


numpy_impl = SimpleNamespace(
    name="numpy",
    sgd_linear_epoch=sgd_linear_epoch_np,
    sgd_shallow_epoch=sgd_shallow_epoch_np,
    factored_min_update=factored_min_update_np,
    euclid_min_update=euclid_min_update_np,
)


# ---------------------------------------------------------------------------
# numba path

if HAVE_NUMBA:
    _jit = numba.njit(cache=True, nogil=True)

    @_jit
    def _softmax_inplace(z):
        m = z[0]
        for j in range(1, z.shape[0]):
            if z[j] > m:
                m = z[j]
        tot = 0.0
        for j in range(z.shape[0]):
            z[j] = np.exp(z[j] - m)
            tot += z[j]
        for j in range(z.shape[0]):
            z[j] /= tot

    @_jit
    def sgd_linear_epoch_nb(W, b, vW, vb, X, y, w, offsets, lr, momentum, wd):
        k, d = W.shape
        gW = np.empty_like(W)
        gb = np.empty_like(b)
        z = np.empty(k)
        for s in range(offsets.shape[0] - 1):
            gW[:, :] = 0.0
            gb[:] = 0.0
            for i in range(offsets[s], offsets[s + 1]):
                if w[i] == 0.0:
                    continue
                for c in range(k):
                    acc = b[c]
                    for j in range(d):
                        acc += W[c, j] * X[i, j]
                    z[c] = acc
                _softmax_inplace(z)
                z[y[i]] -= 1.0
                for c in range(k):
                    g = z[c] * w[i]
                    gb[c] += g
                    for j in range(d):
                        gW[c, j] += g * X[i, j]
            for c in range(k):
                vb[c] = momentum * vb[c] + gb[c] + wd * b[c]
                b[c] -= lr * vb[c]
                for j in range(d):
                    vW[c, j] = momentum * vW[c, j] + gW[c, j] + wd * W[c, j]
                    W[c, j] -= lr * vW[c, j]

    @_jit
    def sgd_shallow_epoch_nb(W1, b1, W2, b2, v1, vb1, v2, vb2, X, y, w, offsets, lr, momentum, wd):
        hdim, d = W1.shape
        k = W2.shape[0]
        gW1 = np.empty_like(W1)
        gb1 = np.empty_like(b1)
        gW2 = np.empty_like(W2)
        gb2 = np.empty_like(b2)
        pre = np.empty(hdim)
        h = np.empty(hdim)
        z = np.empty(k)
        dh = np.empty(hdim)
        for s in range(offsets.shape[0] - 1):
            gW1[:, :] = 0.0
            gb1[:] = 0.0
            gW2[:, :] = 0.0
            gb2[:] = 0.0
            for i in range(offsets[s], offsets[s + 1]):
                if w[i] == 0.0:
                    continue
                for u in range(hdim):
                    acc = b1[u]
                    for j in range(d):
                        acc += W1[u, j] * X[i, j]
                    pre[u] = acc
                    h[u] = acc if acc > 0.0 else 0.0
                for c in range(k):
                    acc = b2[c]
                    for u in range(hdim):
                        acc += W2[c, u] * h[u]
                    z[c] = acc
                _softmax_inplace(z)
                z[y[i]] -= 1.0
                for u in range(hdim):
                    dh[u] = 0.0
                for c in range(k):
                    g = z[c] * w[i]
                    gb2[c] += g
                    for u in range(hdim):
                        gW2[c, u] += g * h[u]
                        dh[u] += g * W2[c, u]
                for u in range(hdim):
                    if pre[u] > 0.0:
                        g = dh[u]
                        gb1[u] += g
                        for j in range(d):
                            gW1[u, j] += g * X[i, j]
            for c in range(k):
                vb2[c] = momentum * vb2[c] + gb2[c] + wd * b2[c]
                for u in range(hdim):
                    v2[c, u] = momentum * v2[c, u] + gW2[c, u] + wd * W2[c, u]
            for u in range(hdim):
                vb1[u] = momentum * vb1[u] + gb1[u] + wd * b1[u]
                for j in range(d):
                    v1[u, j] = momentum * v1[u, j] + gW1[u, j] + wd * W1[u, j]
            for c in range(k):
                b2[c] -= lr * vb2[c]
                for u in range(hdim):
                    W2[c, u] -= lr * v2[c, u]
            for u in range(hdim):
                b1[u] -= lr * vb1[u]
                for j in range(d):
                    W1[u, j] -= lr * v1[u, j]

    @_jit
    def factored_min_update_nb(Q, V, sqnorm, c, mind):
        n, k = Q.shape
        d = V.shape[1]
        sc = sqnorm[c]
        for i in range(n):
            qq = 0.0
            for j in range(k):
                qq += Q[i, j] * Q[c, j]
            vv = 0.0
            for j in range(d):
                vv += V[i, j] * V[c, j]
            d2 = sqnorm[i] + sc - 2.0 * qq * vv
            if d2 < 0.0:
                d2 = 0.0
            if d2 < mind[i]:
                mind[i] = d2

    @_jit
    def euclid_min_update_nb(X, row, mind):
        n, d = X.shape
        for i in range(n):
            acc = 0.0
            for j in range(d):
                t = X[i, j] - row[j]
                acc += t * t
            if acc < mind[i]:
                mind[i] = acc

    numba_impl = SimpleNamespace(
        name="numba",
        sgd_linear_epoch=sgd_linear_epoch_nb,
        sgd_shallow_epoch=sgd_shallow_epoch_nb,
        factored_min_update=factored_min_update_nb,
        euclid_min_update=euclid_min_update_nb,
    )
else:  # pragma: no cover
    numba_impl = None


active = numba_impl if USE_NUMBA else numpy_impl
BACKEND = active.name

sgd_linear_epoch = active.sgd_linear_epoch
sgd_shallow_epoch = active.sgd_shallow_epoch
factored_min_update = active.factored_min_update
euclid_min_update = active.euclid_min_update
