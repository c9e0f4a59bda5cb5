"""Greedy k-center (farthest-first traversal) batch selection."""
from __future__ import annotations

import numpy as np

from .. import _kernels
from .base import SelectionResult, check_batch


def select_coreset(features, labeled, B: int, impl=None) -> SelectionResult:
    """Pick ``B`` unlabeled rows, each farthest from its nearest center.

    Centers start as the labeled rows and grow with every pick. Without any
    labeled row the first pick is the row farthest from the centroid.
    ``labeled`` may be a boolean mask or an index array. Audit scores are the
    Euclidean distances at the moment of each pick.
    """
    impl = impl or _kernels.active
    X = np.ascontiguousarray(features, dtype=np.float64)
    n = X.shape[0]
    lab = np.asarray(labeled)
    mask = lab.astype(bool) if lab.dtype == bool else np.isin(np.arange(n), lab)
    check_batch(B, n - int(mask.sum()))

    mind = np.full(n, np.inf)
    centers = np.flatnonzero(mask)
    for c in centers:
        impl.euclid_min_update(X, X[c], mind)
    taken = mask.copy()
    picked = np.empty(B, dtype=np.int64)
    dist = np.empty(B)
    start = 0
    if centers.size == 0:
        centroid = X.mean(axis=0)
        d0 = np.einsum("ij,ij->i", X - centroid, X - centroid)
        c = int(np.argmax(d0))
        picked[0], dist[0] = c, np.sqrt(d0[c])
        taken[c] = True
        impl.euclid_min_update(X, X[c], mind)
        start = 1
    for t in range(start, B):
        cand = np.where(taken, -1.0, mind)
        c = int(np.argmax(cand))
        picked[t], dist[t] = c, np.sqrt(cand[c])
        taken[c] = True
        impl.euclid_min_update(X, X[c], mind)
    return SelectionResult(indices=picked, scores=dist, strategy="coreset")


def covering_radius(X, centers) -> float:
    """Max over rows of the distance to the nearest center."""
    X = np.asarray(X, dtype=np.float64)
    C = X[np.asarray(centers)]
    d2 = ((X[:, None, :] - C[None, :, :]) ** 2).sum(-1)
    return float(np.sqrt(d2.min(axis=1).max()))
