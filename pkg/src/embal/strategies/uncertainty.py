"""Confidence, entropy and margin scores from predicted class probabilities."""
from __future__ import annotations

import numpy as np

from .base import PoolScores

KINDS = ("confidence", "entropy", "margin")


def uncertainty_scores(kind: str, probs, indices=None) -> PoolScores:
    """Score every row of ``probs``.

    confidence: top probability (select lowest)
    entropy: ``-sum p ln p`` with ``0 ln 0 = 0`` (select highest)
    margin: top-1 minus top-2 probability (select lowest)
    """
    p = np.asarray(probs, dtype=np.float64)
    idx = np.arange(p.shape[0]) if indices is None else np.asarray(indices)
    if kind == "confidence":
        return PoolScores(idx, p.max(axis=1), lower_is_better=True)
    if kind == "entropy":
        with np.errstate(divide="ignore", invalid="ignore"):
            terms = np.where(p > 0.0, p * np.log(p), 0.0)
        return PoolScores(idx, -terms.sum(axis=1), lower_is_better=False)
    if kind == "margin":
        if p.shape[1] < 2:
            return PoolScores(idx, np.ones(p.shape[0]), lower_is_better=True)
        top2 = np.partition(p, p.shape[1] - 2, axis=1)[:, -2:]
        return PoolScores(idx, top2[:, 1] - top2[:, 0], lower_is_better=True)
    raise ValueError(f"unknown uncertainty kind {kind!r}; expected one of {KINDS}")
