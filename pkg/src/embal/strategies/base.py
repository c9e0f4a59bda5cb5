from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from ..core import BatchTooLarge, LabelState


@dataclass
class PoolScores:
    """Informativeness score per candidate pool index.

    ``lower_is_better`` says which end of the ordering gets selected.
    """

    indices: np.ndarray
    scores: np.ndarray
    lower_is_better: bool

    def __post_init__(self):
        self.indices = np.asarray(self.indices, dtype=np.int64)
        self.scores = np.asarray(self.scores, dtype=np.float64)
        if self.indices.shape != self.scores.shape:
            raise ValueError("one score per index required")
        if not np.isfinite(self.scores).all():
            raise ValueError("scores must be finite")


@dataclass
class SelectionResult:
    indices: np.ndarray
    scores: np.ndarray
    strategy: str
    stream: str = ""
    info: dict = field(default_factory=dict)

    def __post_init__(self):
        self.indices = np.asarray(self.indices, dtype=np.int64)
        self.scores = np.asarray(self.scores, dtype=np.float64)

    def __len__(self) -> int:
        return int(self.indices.size)


def check_batch(B: int, available: int) -> None:
    if B < 1:
        raise ValueError(f"batch size must be >= 1, got {B}")
    if B > available:
        raise BatchTooLarge(f"batch of {B} requested from {available} unlabeled examples")


def select_random(state: LabelState, B: int, rng: np.random.Generator, stream: str = "") -> SelectionResult:
    unl = state.unlabeled_indices
    check_batch(B, unl.size)
    picked = rng.choice(unl, size=B, replace=False)
    return SelectionResult(indices=picked, scores=np.zeros(B), strategy="random", stream=stream)


def select_top(scores: PoolScores, B: int, strategy: str = "top") -> SelectionResult:
    """Best ``B`` entries of ``scores``; ties go to the lower pool index."""
    check_batch(B, scores.indices.size)
    key = scores.scores if scores.lower_is_better else -scores.scores
    order = np.lexsort((scores.indices, key))[:B]
    return SelectionResult(indices=scores.indices[order], scores=scores.scores[order], strategy=strategy)
