"""Label-state bookkeeping, error types and seeded random streams."""
from __future__ import annotations

import zlib
from dataclasses import dataclass
from typing import Sequence

import numpy as np


class EmbalError(Exception):
    """Base class for all errors raised by this package."""


class InvalidParam(EmbalError, ValueError):
    pass


class BudgetExceedsPool(InvalidParam):
    pass


class EmptySchedule(InvalidParam):
    pass


class DuplicateIndex(EmbalError):
    pass


class AlreadyLabeled(EmbalError):
    pass


class WrongBatchSize(EmbalError):
    pass


class IndexOutOfRange(EmbalError, IndexError):
    pass


class ScheduleExhausted(EmbalError):
    pass


class BatchTooLarge(EmbalError):
    pass


class EmptyLabelSet(EmbalError):
    pass


def stream(seed: int, *names) -> np.random.Generator:
    """Independent generator for the named consumer under ``seed``.

    Built on Philox (counter based) keyed by a SeedSequence whose spawn key
    is the CRC32 of every name component, so two consumers never share draws
    and adding a new consumer leaves existing ones untouched.
    """
    key = tuple(zlib.crc32(str(n).encode("utf-8")) for n in names)
    ss = np.random.SeedSequence(entropy=int(seed) & (2**64 - 1), spawn_key=key)
    return np.random.Generator(np.random.Philox(ss))


def derive_seed(seed: int, *names) -> int:
    return int(stream(seed, "derive", *names).integers(0, 2**63 - 1))


def validate_schedule(schedule: Sequence[int], n_pool: int | None = None) -> tuple[int, ...]:
    sched = tuple(int(s) for s in schedule)
    if not sched:
        raise EmptySchedule("budget schedule must contain at least one round")
    if any(s < 1 for s in sched):
        raise InvalidParam(f"budget schedule entries must be >= 1, got {list(sched)}")
    if n_pool is not None and sum(sched) > n_pool:
        raise BudgetExceedsPool(
            f"total budget {sum(sched)} exceeds pool size {n_pool}"
        )
    return sched


@dataclass(frozen=True)
class LabelState:
    n_pool: int
    labeled: np.ndarray
    round_of: np.ndarray
    budget_schedule: tuple[int, ...]
    current_round: int = 0

    @property
    def n_labeled(self) -> int:
        return int(self.labeled.sum())

    @property
    def labeled_indices(self) -> np.ndarray:
        # ordered by annotation round, then index
        idx = np.flatnonzero(self.labeled)
        return idx[np.argsort(self.round_of[idx], kind="stable")]

    @property
    def unlabeled_indices(self) -> np.ndarray:
        return np.flatnonzero(~self.labeled)

    @property
    def done(self) -> bool:
        return self.current_round >= len(self.budget_schedule)

    @property
    def next_batch_size(self) -> int:
        if self.done:
            raise ScheduleExhausted("all rounds of the budget schedule are consumed")
        return self.budget_schedule[self.current_round]

    def check(self) -> None:
        """Raise AssertionError if any structural invariant is broken."""
        assert self.labeled.shape == (self.n_pool,)
        assert self.round_of.shape == (self.n_pool,)
        assert np.array_equal(self.round_of >= 0, self.labeled)
        assert 0 <= self.current_round <= len(self.budget_schedule)
        assert self.n_labeled == sum(self.budget_schedule[: self.current_round])

    def to_dict(self) -> dict:
        return {
            "n_pool": self.n_pool,
            "budget_schedule": list(self.budget_schedule),
            "current_round": self.current_round,
            "round_of": self.round_of.tolist(),
        }

    @classmethod
    def from_dict(cls, d: dict) -> "LabelState":
        round_of = np.asarray(d["round_of"], dtype=np.int64)
        state = cls(
            n_pool=int(d["n_pool"]),
            labeled=round_of >= 0,
            round_of=round_of,
            budget_schedule=tuple(int(s) for s in d["budget_schedule"]),
            current_round=int(d["current_round"]),
        )
        state.check()
        return state

    def __eq__(self, other) -> bool:
        if not isinstance(other, LabelState):
            return NotImplemented
        return (
            self.n_pool == other.n_pool
            and self.budget_schedule == other.budget_schedule
            and self.current_round == other.current_round
            and np.array_equal(self.labeled, other.labeled)
            and np.array_equal(self.round_of, other.round_of)
        )


def init_label_state(n_pool: int, schedule: Sequence[int]) -> LabelState:
    if n_pool < 1:
        raise InvalidParam(f"pool must be nonempty, got n_pool={n_pool}")
    sched = validate_schedule(schedule, n_pool)
    return LabelState(
        n_pool=int(n_pool),
        labeled=np.zeros(n_pool, dtype=bool),
        round_of=np.full(n_pool, -1, dtype=np.int64),
        budget_schedule=sched,
        current_round=0,
    )


def apply_annotations(state: LabelState, indices: Sequence[int]) -> LabelState:
    """Reveal labels for ``indices`` and advance to the next round.

    Returns a new state; ``state`` is left untouched.
    """
    idx = np.asarray(indices, dtype=np.int64).ravel()
    expected = state.next_batch_size
    if idx.size != expected:
        raise WrongBatchSize(
            f"round {state.current_round} expects {expected} indices, got {idx.size}"
        )
    if idx.size and (idx.min() < 0 or idx.max() >= state.n_pool):
        bad = idx[(idx < 0) | (idx >= state.n_pool)]
        raise IndexOutOfRange(f"indices {bad.tolist()} outside [0, {state.n_pool})")
    if np.unique(idx).size != idx.size:
        vals, counts = np.unique(idx, return_counts=True)
        raise DuplicateIndex(f"duplicate indices {vals[counts > 1].tolist()}")
    already = idx[state.labeled[idx]]
    if already.size:
        raise AlreadyLabeled(f"indices {already.tolist()} are already labeled")

    labeled = state.labeled.copy()
    round_of = state.round_of.copy()
    labeled[idx] = True
    round_of[idx] = state.current_round
    return LabelState(
        n_pool=state.n_pool,
        labeled=labeled,
        round_of=round_of,
        budget_schedule=state.budget_schedule,
        current_round=state.current_round + 1,
    )
