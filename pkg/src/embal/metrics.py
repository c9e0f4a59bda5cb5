"""Accuracy-type scores computed from integer confusion counts."""
from __future__ import annotations

from fractions import Fraction

import numpy as np

from .core import EmbalError, LabelState


class LabelOutOfRange(EmbalError, ValueError):
    pass


def confusion(y_true, y_pred, k: int) -> np.ndarray:
    """``C[i, j]`` = number of examples of true class ``i`` predicted as ``j``."""
    y_true = np.asarray(y_true, dtype=np.int64).ravel()
    y_pred = np.asarray(y_pred, dtype=np.int64).ravel()
    if y_true.shape != y_pred.shape:
        raise ValueError(f"length mismatch: {y_true.size} true vs {y_pred.size} predicted")
    for name, arr in (("y_true", y_true), ("y_pred", y_pred)):
        if arr.size and (arr.min() < 0 or arr.max() >= k):
            raise LabelOutOfRange(f"{name} has labels outside [0, {k})")
    return np.bincount(y_true * k + y_pred, minlength=k * k).reshape(k, k)


def accuracy(C) -> float:
    C = np.asarray(C)
    total = C.sum()
    return float(np.trace(C) / total) if total else 0.0


def per_class_recall(C) -> np.ndarray:
    C = np.asarray(C, dtype=np.int64)
    rows = C.sum(axis=1)
    out = np.zeros(C.shape[0])
    nz = rows > 0
    out[nz] = np.diag(C)[nz] / rows[nz]
    return out


def per_class_precision(C) -> np.ndarray:
    C = np.asarray(C, dtype=np.int64)
    cols = C.sum(axis=0)
    out = np.zeros(C.shape[0])
    nz = cols > 0
    out[nz] = np.diag(C)[nz] / cols[nz]
    return out


def balanced_accuracy(C) -> float:
    """Mean per-class recall over all ``K`` classes; absent classes score 0."""
    C = np.asarray(C, dtype=np.int64)
    rows = C.sum(axis=1)
    terms = [Fraction(int(C[i, i]), int(rows[i])) for i in range(C.shape[0]) if rows[i]]
    return float(sum(terms, Fraction(0)) / C.shape[0])


def macro_f1(C) -> float:
    """Mean per-class F1 (harmonic mean of precision and recall).

    A class with ``P + R == 0`` contributes 0. Computed as ``2 TP / (2 TP + FP + FN)``,
    which equals ``2 / (1/P + 1/R)`` whenever both are nonzero. Averaging is
    done in exact rationals so the result is the correctly rounded mean.
    """
    C = np.asarray(C, dtype=np.int64)
    tp = np.diag(C)
    denom = C.sum(axis=0) + C.sum(axis=1)
    terms = [Fraction(2 * int(tp[i]), int(denom[i])) for i in range(C.shape[0]) if tp[i]]
    return float(sum(terms, Fraction(0)) / C.shape[0])


def pool_accuracy(ground_truth, label_state: LabelState, predictions) -> float:
    """Fraction of the pool whose final label is right.

    Annotated examples count as correct; the rest take the model's prediction.
    """
    truth = np.asarray(ground_truth)
    pred = np.asarray(predictions)
    if truth.shape != (label_state.n_pool,) or pred.shape != (label_state.n_pool,):
        raise ValueError("ground truth and predictions must cover every pool index")
    unl = ~label_state.labeled
    correct = label_state.n_labeled + int((pred[unl] == truth[unl]).sum())
    return correct / label_state.n_pool


def summarize(y_true, y_pred, k: int) -> dict:
    C = confusion(y_true, y_pred, k)
    return {
        "accuracy": accuracy(C),
        "balanced_accuracy": balanced_accuracy(C),
        "macro_f1": macro_f1(C),
    }
