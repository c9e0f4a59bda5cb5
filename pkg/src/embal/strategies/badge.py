"""k-means++ seeding over last-layer gradient embeddings without materialising them.

A gradient embedding is ``g_i = vec(outer(q_i, v_i))`` with ``q_i`` in R^K and
``v_i`` in R^d. Squared distances factor as

    ||g_i - g_j||^2 = |q_i|^2 |v_i|^2 + |q_j|^2 |v_j|^2 - 2 (q_i . q_j)(v_i . v_j)

so each costs O(K + d) instead of O(K d).
"""
from __future__ import annotations

import logging
import warnings
from dataclasses import dataclass

import numpy as np

from .. import _kernels
from ..models import grad_embedding_factors
from .base import SelectionResult, check_batch

log = logging.getLogger(__name__)


class DegenerateAllZero(UserWarning):
    """Every gradient embedding is zero; selection fell back to uniform sampling."""


@dataclass
class GradFactors:
    q: np.ndarray  # (n, K)
    v: np.ndarray  # (n, d)
    indices: np.ndarray  # pool index of each row

    def __post_init__(self):
        self.q = np.ascontiguousarray(self.q, dtype=np.float64)
        self.v = np.ascontiguousarray(self.v, dtype=np.float64)
        self.indices = np.asarray(self.indices, dtype=np.int64)
        self.q_sqnorm = np.einsum("ij,ij->i", self.q, self.q)
        self.v_sqnorm = np.einsum("ij,ij->i", self.v, self.v)
        self.g_sqnorm = self.q_sqnorm * self.v_sqnorm

    @classmethod
    def from_model(cls, model, X, indices=None) -> "GradFactors":
        q, v = grad_embedding_factors(model, X)
        idx = np.arange(q.shape[0]) if indices is None else indices
        return cls(q=q, v=v, indices=idx)

    def __len__(self) -> int:
        return self.q.shape[0]

    def materialize(self) -> np.ndarray:
        """Explicit (n, K*d) gradient embeddings, row-major ``vec(q v^T)``."""
        return (self.q[:, :, None] * self.v[:, None, :]).reshape(len(self), -1)


def factored_sq_dist(i: int, j: int, f: GradFactors) -> float:
    if i == j:
        return 0.0
    d2 = (
        f.g_sqnorm[i]
        + f.g_sqnorm[j]
        - 2.0 * float(f.q[i] @ f.q[j]) * float(f.v[i] @ f.v[j])
    )
    return max(d2, 0.0)


def d2_sample(weights: np.ndarray, rng: np.random.Generator) -> int:
    """Index drawn with probability proportional to nonnegative ``weights``."""
    cs = np.cumsum(weights)
    u = rng.random() * cs[-1]
    i = int(np.searchsorted(cs, u, side="right"))
    if i >= cs.size:
        i = int(np.flatnonzero(weights > 0)[-1])
    return i


def select_badge(
    factors: GradFactors,
    B: int,
    rng: np.random.Generator,
    first: str = "norm",
    impl=None,
) -> SelectionResult:
    """k-means++ seeding of ``B`` centers in gradient-embedding space.

    ``first="norm"`` draws the first center proportional to ``|g_i|^2``
    (the squared distance to the origin); ``"uniform"`` draws it uniformly.
    Later centers are drawn proportional to the squared distance to the
    nearest chosen center. When every remaining weight is zero the rest of
    the batch is filled uniformly at random. Audit scores are the sampling
    weights at the time of each pick.
    """
    impl = impl or _kernels.active
    n = len(factors)
    check_batch(B, n)
    if not factors.g_sqnorm.any():
        warnings.warn("all gradient embeddings are zero; sampling uniformly", DegenerateAllZero, stacklevel=2)
        pos = rng.choice(n, size=B, replace=False)
        return SelectionResult(
            indices=factors.indices[pos], scores=np.zeros(B), strategy="badge", info={"fallback": B}
        )

    picked = np.empty(B, dtype=np.int64)
    score = np.zeros(B)
    taken = np.zeros(n, dtype=bool)
    if first == "norm":
        w = factors.g_sqnorm.copy()
    elif first == "uniform":
        w = np.ones(n)
    else:
        raise ValueError(f"first must be 'norm' or 'uniform', got {first!r}")
    mind = np.full(n, np.inf)
    fallback = 0
    for t in range(B):
        if t > 0:
            w = mind.copy()
            w[taken] = 0.0
        if w.sum() > 0.0:
            c = d2_sample(w, rng)
            score[t] = w[c]
        else:
            fallback = B - t
            log.warning("badge: %d picks left with zero distance mass; filling uniformly", fallback)
            rest = rng.choice(np.flatnonzero(~taken), size=fallback, replace=False)
            picked[t:] = rest
            break
        picked[t] = c
        taken[c] = True
        impl.factored_min_update(factors.q, factors.v, factors.g_sqnorm, c, mind)
        mind[c] = 0.0
    info = {"fallback": fallback} if fallback else {}
    return SelectionResult(indices=factors.indices[picked], scores=score, strategy="badge", info=info)


def select_badge_naive(G: np.ndarray, B: int, rng: np.random.Generator, first: str = "norm") -> np.ndarray:
    """Reference k-means++ over explicit gradient vectors ``G`` (n, K*d).

    Returns row positions. Exists to cross-check :func:`select_badge`.
    """
    G = np.asarray(G, dtype=np.float64)
    n = G.shape[0]
    mind = np.full(n, np.inf)
    out = []
    for t in range(B):
        if t == 0:
            w = (G * G).sum(axis=1) if first == "norm" else np.ones(n)
        else:
            w = mind.copy()
            w[out] = 0.0
        cs = np.cumsum(w)
        u = rng.random() * cs[-1]
        c = min(int(np.searchsorted(cs, u, side="right")), n - 1)
        out.append(c)
        diff = G - G[c]
        mind = np.minimum(mind, (diff * diff).sum(axis=1))
    return np.asarray(out, dtype=np.int64)


def naive_min_update_chunked(q, v, c, mind, chunk: int = 256) -> None:
    """``mind <- min(mind, ||g_i - g_c||^2)`` forming each g_i explicitly, O(K d) per row.

    Used by the benchmark when materialising all of G at once would not fit
    in memory.
    """
    gc = np.outer(q[c], v[c])
    for lo in range(0, q.shape[0], chunk):
        g = q[lo : lo + chunk, :, None] * v[lo : lo + chunk, None, :]
        g -= gc
        np.minimum(mind[lo : lo + chunk], np.einsum("ikd,ikd->i", g, g), out=mind[lo : lo + chunk])
