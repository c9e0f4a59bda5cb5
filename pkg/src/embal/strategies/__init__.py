"""Active-learning selection strategies and the registry the engine dispatches on."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ..core import EmbalError, InvalidParam, LabelState
from .badge import DegenerateAllZero, GradFactors, factored_sq_dist, select_badge, select_badge_naive
from .bait import FisherContext, build_fisher_context, helmert_basis, select_bait
from .base import PoolScores, SelectionResult, check_batch, select_random, select_top
from .coreset import covering_radius, select_coreset
from .uncertainty import uncertainty_scores

STRATEGIES = ("random", "confidence", "entropy", "margin", "coreset", "badge", "bait")
RESERVED_STRATEGIES = ("galaxy",)


class ReservedStrategy(EmbalError, NotImplementedError):
    pass


@dataclass(frozen=True)
class StrategyParams:
    bait_lambda: float = 1.0
    pca_dim: int = 64
    sweeps: int = 1
    candidate_pool_size: int = 10
    include_labeled: bool = False
    badge_first: str = "norm"

    def __post_init__(self):
        if not self.bait_lambda > 0 or self.pca_dim < 1 or self.sweeps < 0 or self.candidate_pool_size < 1:
            raise InvalidParam(f"invalid strategy parameters: {self}")
        if self.badge_first not in ("norm", "uniform"):
            raise InvalidParam(f"badge_first must be 'norm' or 'uniform', got {self.badge_first!r}")


def check_strategy(strategy: str) -> None:
    if strategy in RESERVED_STRATEGIES:
        raise ReservedStrategy(f"strategy {strategy!r} is reserved but not implemented")
    if strategy not in STRATEGIES:
        raise InvalidParam(f"unknown strategy {strategy!r}; expected one of {STRATEGIES}")


def select(
    strategy: str,
    model,
    X_pool: np.ndarray,
    state: LabelState,
    B: int,
    rng: np.random.Generator,
    params: StrategyParams | None = None,
) -> SelectionResult:
    """Run ``strategy`` on the pool and return ``B`` pool-local indices.

    ``X_pool`` holds the view-0 embeddings of every pool example in pool
    order; ``model`` is the classifier trained this round.
    """
    check_strategy(strategy)
    params = params or StrategyParams()
    if strategy == "random":
        return select_random(state, B, rng)
    unl = state.unlabeled_indices
    check_batch(B, unl.size)
    if strategy in ("confidence", "entropy", "margin"):
        probs = model.predict_proba(X_pool[unl])
        return select_top(uncertainty_scores(strategy, probs, unl), B, strategy=strategy)
    if strategy == "coreset":
        return select_coreset(model.penultimate(X_pool), state.labeled, B)
    if strategy == "badge":
        return select_badge(GradFactors.from_model(model, X_pool[unl], unl), B, rng, first=params.badge_first)
    # bait
    feats = model.penultimate(X_pool)
    ctx = build_fisher_context(
        model.predict_proba(X_pool),
        feats,
        pca_dim=min(params.pca_dim, feats.shape[1]),
        lam=params.bait_lambda,
        include=state.labeled_indices if params.include_labeled else None,
    )
    return select_bait(ctx, unl, B, sweeps=params.sweeps, candidate_pool_size=params.candidate_pool_size, rng=rng)


__all__ = [
    "STRATEGIES",
    "DegenerateAllZero",
    "FisherContext",
    "GradFactors",
    "PoolScores",
    "SelectionResult",
    "StrategyParams",
    "build_fisher_context",
    "covering_radius",
    "factored_sq_dist",
    "helmert_basis",
    "select",
    "select_badge",
    "select_badge_naive",
    "select_bait",
    "select_coreset",
    "select_random",
    "select_top",
    "uncertainty_scores",
]
