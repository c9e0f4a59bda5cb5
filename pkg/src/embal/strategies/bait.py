"""Fisher-information batch selection with swap-based local search.

Per-example Fisher information of the last layer is written as ``U_i U_i^T``
with ``U_i = x_i kron P_i^{1/2}``, where ``x_i`` is the PCA-projected
penultimate feature and ``P_i = T^T (diag(pi) - pi pi^T) T`` the softmax
covariance with the all-ones direction removed by an orthonormal ``T``.
Each ``U_i`` has only ``K - 1`` columns, so adding or removing an example is
a rank-(K-1) Woodbury update of the maintained inverse.

The batch minimises ``J(S) = tr((lam I + sum_{i in S} U_i U_i^T)^{-1} F_pool)``
with ``F_pool`` the mean Fisher information over the pool.
"""
from __future__ import annotations

import logging
import warnings
from dataclasses import dataclass

import numpy as np
import scipy.linalg

from ..core import InvalidParam
from .base import SelectionResult, check_batch

log = logging.getLogger(__name__)

# condition number above which a Woodbury inner solve is not trusted
COND_LIMIT = 1e10


class RankDeficiency(UserWarning):
    pass


class SingularUpdate(UserWarning):
    pass


def helmert_basis(k: int) -> np.ndarray:
    """(k, k-1) orthonormal basis of the complement of the all-ones vector.

    Column ``j`` (1-based) is ``(1, ..., 1, -j, 0, ..., 0) / sqrt(j (j + 1))``
    with ``j`` leading ones.
    """
    if k < 2:
        raise InvalidParam(f"need k >= 2, got {k}")
    T = np.zeros((k, k - 1))
    for j in range(1, k):
        T[:j, j - 1] = 1.0
        T[j, j - 1] = -float(j)
        T[:, j - 1] /= np.sqrt(j * (j + 1.0))
    return T


def reduced_covariance(probs: np.ndarray, T: np.ndarray) -> np.ndarray:
    """``T^T (diag(pi) - pi pi^T) T`` for every row of ``probs`` -> (n, k-1, k-1)."""
    probs = np.atleast_2d(np.asarray(probs, dtype=np.float64))
    PT = probs[:, :, None] * T[None]  # diag(pi) T
    piT = probs @ T  # pi^T T
    P = np.einsum("ka,nkb->nab", T, PT) - piT[:, :, None] * piT[:, None, :]
    return 0.5 * (P + P.transpose(0, 2, 1))


def psd_sqrt(P: np.ndarray) -> np.ndarray:
    """Symmetric square root(s) with negative eigenvalues clamped to zero."""
    w, V = np.linalg.eigh(P)
    w = np.sqrt(np.clip(w, 0.0, None))
    return (V * w[..., None, :]) @ np.swapaxes(V, -1, -2)


def pca_basis(features: np.ndarray, dim: int) -> tuple[np.ndarray, int]:
    """Top-``dim`` principal directions (d, dim) and the covariance rank."""
    X = np.asarray(features, dtype=np.float64)
    cov = np.cov(X, rowvar=False, bias=True).reshape(X.shape[1], X.shape[1])
    w, V = np.linalg.eigh(cov)
    order = np.argsort(w)[::-1]
    w, V = w[order], V[:, order]
    tol = max(X.shape) * np.finfo(float).eps * max(float(w[0]), 0.0)
    rank = int((w > tol).sum())
    # fix sign so the basis is deterministic across LAPACK builds
    V = V * np.where(V[np.argmax(np.abs(V), axis=0), np.arange(V.shape[1])] < 0, -1.0, 1.0)
    return V[:, :dim], rank


def fisher_factor(x: np.ndarray, sqrtP: np.ndarray) -> np.ndarray:
    """``x kron P^{1/2}`` -> (d' (k-1), k-1)."""
    return np.kron(np.asarray(x, dtype=np.float64)[:, None], sqrtP)


def fisher_sum(X: np.ndarray, P: np.ndarray) -> np.ndarray:
    """``sum_i kron(x_i x_i^T, P_i)`` via one matmul, never forming each term."""
    n, dp = X.shape
    r = P.shape[1]
    outer = (X[:, :, None] * X[:, None, :]).reshape(n, dp * dp)
    M = outer.T @ P.reshape(n, r * r)  # [(a,b), (p,q)]
    return M.reshape(dp, dp, r, r).transpose(0, 2, 1, 3).reshape(dp * r, dp * r)


@dataclass
class FisherContext:
    T: np.ndarray
    basis: np.ndarray
    lam: float
    x: np.ndarray  # (n, d') projected features, pool order
    P: np.ndarray  # (n, r, r)
    sqrtP: np.ndarray  # (n, r, r)
    F_mean: np.ndarray  # (D, D)
    prior: np.ndarray | None = None  # sum of Fisher over rows always included
    A_inv: np.ndarray | None = None
    rank: int = 0

    @property
    def r(self) -> int:
        return self.T.shape[1]

    @property
    def dim(self) -> int:
        return self.x.shape[1] * self.r

    def U(self, i: int) -> np.ndarray:
        return fisher_factor(self.x[i], self.sqrtP[i])

    def regularized(self, S) -> np.ndarray:
        """Dense ``lam I + prior + sum_{i in S} U_i U_i^T``."""
        S = np.asarray(S, dtype=np.int64)
        A = self.lam * np.eye(self.dim)
        if self.prior is not None:
            A += self.prior
        if S.size:
            A += fisher_sum(self.x[S], self.P[S])
        return A

    def objective_dense(self, S) -> float:
        """``J(S)`` by a direct solve; the reference for the incremental path."""
        A = self.regularized(S)
        return float(np.trace(np.linalg.solve(A, self.F_mean)))


def build_fisher_context(
    probs,
    features,
    pca_dim: int | None = None,
    lam: float = 1.0,
    include: np.ndarray | None = None,
) -> FisherContext:
    """Precompute Fisher factors for every pool row.

    ``probs``/``features`` cover the whole pool (view 0). ``include`` lists
    rows whose Fisher information is always part of the regularised matrix
    (for example the already-labeled set); default none.
    """
    probs = np.asarray(probs, dtype=np.float64)
    feats = np.asarray(features, dtype=np.float64)
    d = feats.shape[1]
    pca_dim = min(64, d) if pca_dim is None else int(pca_dim)
    if not 1 <= pca_dim <= d:
        raise InvalidParam(f"pca_dim must lie in [1, {d}], got {pca_dim}")
    if not lam > 0:
        raise InvalidParam(f"lambda must be positive, got {lam}")
    basis, rank = pca_basis(feats, pca_dim)
    if rank < pca_dim:
        warnings.warn(f"pool feature covariance has rank {rank} < pca_dim {pca_dim}", RankDeficiency, stacklevel=2)
    T = helmert_basis(probs.shape[1])
    x = feats @ basis
    P = reduced_covariance(probs, T)
    F_mean = fisher_sum(x, P) / x.shape[0]
    prior = None
    if include is not None and np.asarray(include).size:
        inc = np.asarray(include, dtype=np.int64)
        prior = fisher_sum(x[inc], P[inc])
    return FisherContext(
        T=T, basis=basis, lam=float(lam), x=x, P=P, sqrtP=psd_sqrt(P), F_mean=F_mean, prior=prior, rank=rank
    )


def _sym(A):
    return 0.5 * (A + A.T)


def woodbury_add(A_inv: np.ndarray, U: np.ndarray, sign: float = 1.0):
    """Inverse of ``A + sign * U U^T`` given ``A_inv``; None if ill-conditioned."""
    W = A_inv @ U
    UW = U.T @ W
    K = np.eye(U.shape[1]) + sign * UW
    if not np.all(np.isfinite(K)):
        return None
    # judge K against the scale of the terms it was formed from, so that
    # cancellation (e.g. removing a direction A barely has) is caught
    sv = np.linalg.svd(K, compute_uv=False)
    scale = max(1.0, float(np.abs(UW).max()))
    if sv[-1] * COND_LIMIT <= scale:
        return None
    return _sym(A_inv - sign * W @ np.linalg.solve(K, W.T))


def _trace_prod(A: np.ndarray, F: np.ndarray) -> float:
    # tr(A F) for symmetric A, F
    return float(np.einsum("ij,ij->", A, F))


def _inverse(A: np.ndarray) -> np.ndarray:
    c = scipy.linalg.cho_factor(A)
    return _sym(scipy.linalg.cho_solve(c, np.eye(A.shape[0])))


def select_bait(
    ctx: FisherContext,
    unlabeled,
    B: int,
    sweeps: int = 1,
    candidate_pool_size: int = 10,
    rng: np.random.Generator | None = None,
    record: bool = False,
) -> SelectionResult:
    """Swap-based minimisation of ``J`` over size-``B`` subsets of ``unlabeled``.

    Start from a uniformly random subset. In each sweep every member in turn
    is tentatively removed and the best of ``candidate_pool_size`` random
    outside candidates is tried in its place; the swap is kept only when
    ``J`` strictly decreases. The inverse is maintained by Woodbury
    updates and rebuilt from scratch if an update is ill-conditioned.

    With ``record=True`` ``info["trace"]`` lists ``(J_before, J_after,
    members_after)`` for every accepted swap.
    """
    rng = rng or np.random.default_rng()
    unl = np.asarray(unlabeled, dtype=np.int64)
    check_batch(B, unl.size)
    S = rng.choice(unl, size=B, replace=False)
    in_S = np.zeros(ctx.x.shape[0], dtype=bool)
    in_S[S] = True
    is_unl = np.zeros(ctx.x.shape[0], dtype=bool)
    is_unl[unl] = True

    A_inv = _inverse(ctx.regularized(S))
    J = _trace_prod(A_inv, ctx.F_mean)
    trace, refactors, accepted = [], 0, 0

    for _ in range(sweeps):
        for pos in range(B):
            m = S[pos]
            A_minus = woodbury_add(A_inv, ctx.U(m), sign=-1.0)
            if A_minus is None:
                warnings.warn("ill-conditioned downdate; refactorizing", SingularUpdate, stacklevel=2)
                refactors += 1
                A_minus = _inverse(ctx.regularized(np.delete(S, pos)))
            pool = np.flatnonzero(is_unl & ~in_S)
            if pool.size == 0:
                break
            cands = rng.choice(pool, size=min(candidate_pool_size, pool.size), replace=False)
            J_minus = _trace_prod(A_minus, ctx.F_mean)
            best, best_J = -1, np.inf
            for c in cands:
                U = ctx.U(c)
                W = A_minus @ U
                K = np.eye(ctx.r) + U.T @ W
                gain = float(np.einsum("ij,ij->", np.linalg.solve(K, W.T), W.T @ ctx.F_mean))
                if J_minus - gain < best_J:
                    best, best_J = int(c), J_minus - gain
            if not best_J < J:
                continue
            A_new = woodbury_add(A_minus, ctx.U(best))
            if A_new is None:
                warnings.warn("ill-conditioned update; refactorizing", SingularUpdate, stacklevel=2)
                refactors += 1
                trial = S.copy()
                trial[pos] = best
                A_new = _inverse(ctx.regularized(trial))
            J_new = _trace_prod(A_new, ctx.F_mean)
            if not J_new < J:
                continue
            in_S[m], in_S[best] = False, True
            S[pos] = best
            if record:
                trace.append((J, J_new, S.copy()))
            A_inv, J = A_new, J_new
            accepted += 1

    ctx.A_inv = A_inv
    # audit: how much J would rise if each member were dropped
    loo = np.empty(B)
    for pos in range(B):
        A_minus = woodbury_add(A_inv, ctx.U(S[pos]), sign=-1.0)
        loo[pos] = (_trace_prod(A_minus, ctx.F_mean) - J) if A_minus is not None else np.inf
    info = {"objective": J, "accepted_swaps": accepted, "refactorizations": refactors}
    if record:
        info["trace"] = trace
    return SelectionResult(indices=S, scores=np.where(np.isfinite(loo), loo, 0.0), strategy="bait", info=info)
