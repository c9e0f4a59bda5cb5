"""Semi-supervised training on top of the SGD trainers.

Three unlabeled-loss variants are provided, all using hard pseudo-labels
that are recomputed from the current model at the start of every epoch:

* ``pseudolabel``: fixed confidence threshold; targets from view 0, loss on
  the epoch's view (``epoch % v``).
* ``consistency``: fixed threshold; targets from view 0, loss on an
  augmented view (``1 + epoch % (v - 1)``). A single-view store makes this
  identical to ``pseudolabel``.
* ``flexmatch``: like ``consistency`` but with per-class thresholds scaled by
  how many unlabeled examples each class currently claims confidently.
"""
from __future__ import annotations

import warnings
from dataclasses import dataclass

import numpy as np

from .core import EmbalError, EmptyLabelSet, InvalidParam, LabelState, stream
from .models import EpochPlan, TrainConfig, init_model, run_epochs, supervised_batches, train_supervised

METHODS = ("supervised_only", "pseudolabel", "flexmatch", "consistency")
RESERVED_METHODS = ("freematch", "softmatch")


class ReservedMethod(EmbalError, NotImplementedError):
    pass


class ConsistencyDegradedWarning(UserWarning):
    pass


@dataclass(frozen=True)
class SemiConfig:
    lambda_u: float = 1.0
    tau: float = 0.95
    unlabeled_ratio: int = 7

    def __post_init__(self):
        if self.lambda_u < 0:
            raise InvalidParam(f"lambda_u must be >= 0, got {self.lambda_u}")
        if not 0.0 <= self.tau <= 1.0:
            raise InvalidParam(f"tau must lie in [0, 1], got {self.tau}")
        if self.unlabeled_ratio < 1:
            raise InvalidParam(f"unlabeled_ratio must be >= 1, got {self.unlabeled_ratio}")


@dataclass
class ThresholdState:
    base_tau: float
    per_class_tau: np.ndarray
    sigma: np.ndarray
    unused: int

    def to_dict(self) -> dict:
        return {
            "base_tau": self.base_tau,
            "per_class_tau": self.per_class_tau.tolist(),
            "sigma": self.sigma.tolist(),
            "unused": self.unused,
        }


@dataclass
class PseudoBatch:
    indices: np.ndarray
    labels: np.ndarray
    weights: np.ndarray

    def __len__(self) -> int:
        return int(self.indices.size)


def assign_pseudolabels(probs, unlabeled_mask, thresholds) -> PseudoBatch:
    """Rows whose top probability reaches the threshold of their top class."""
    probs = np.asarray(probs, dtype=np.float64)
    thresholds = np.asarray(thresholds, dtype=np.float64)
    yhat = np.argmax(probs, axis=1)
    conf = probs[np.arange(probs.shape[0]), yhat]
    keep = np.asarray(unlabeled_mask, dtype=bool) & (conf >= thresholds[yhat])
    idx = np.flatnonzero(keep)
    return PseudoBatch(indices=idx, labels=yhat[idx], weights=np.ones(idx.size))


def update_flexmatch_thresholds(probs, unlabeled_mask, base_tau: float) -> ThresholdState:
    """Class-wise thresholds ``beta_c * base_tau``.

    ``beta_c = sigma_c / max(max(sigma), unused)`` where ``sigma_c`` counts
    unlabeled rows confidently predicted as ``c`` and ``unused`` counts the
    rest. With no confident rows at all every class gets ``base_tau``.
    """
    if not 0.0 < base_tau < 1.0:
        raise InvalidParam(f"base_tau must lie in (0, 1), got {base_tau}")
    probs = np.asarray(probs, dtype=np.float64)[np.asarray(unlabeled_mask, dtype=bool)]
    k = probs.shape[1]
    yhat = np.argmax(probs, axis=1)
    confident = probs[np.arange(probs.shape[0]), yhat] >= base_tau
    sigma = np.bincount(yhat[confident], minlength=k)
    unused = int((~confident).sum())
    if sigma.sum() == 0:
        tau = np.full(k, float(base_tau))
    else:
        beta = sigma / max(int(sigma.max()), unused)
        tau = beta * base_tau
    return ThresholdState(base_tau=float(base_tau), per_class_tau=tau, sigma=sigma, unused=unused)


def _unlabeled_view(method: str, epoch: int, v: int) -> int:
    if method == "pseudolabel" or v == 1:
        return epoch % v
    return 1 + epoch % (v - 1)


def train_semi_supervised(
    store,
    label_state: LabelState,
    method: str,
    tier: str,
    cfg: TrainConfig,
    semi: SemiConfig | None = None,
    pool_rows: np.ndarray | None = None,
    on_epoch=None,
    on_thresholds=None,
    impl=None,
):
    """Fit a fresh model on the labeled pool plus pseudo-labeled unlabeled rows.

    ``label_state`` indexes the pool; ``pool_rows`` maps pool positions to
    store rows (defaults to ``store.pool_indices``). Each SGD step pairs a
    labeled mini-batch with ``unlabeled_ratio`` times as many unlabeled rows;
    those whose pseudo-label clears its threshold get weight
    ``lambda_u / n_unlabeled_in_step``.
    """
    semi = semi or SemiConfig()
    if method in RESERVED_METHODS:
        raise ReservedMethod(f"semi-supervised method {method!r} is reserved but not implemented")
    if method not in METHODS:
        raise InvalidParam(f"unknown semi-supervised method {method!r}; expected one of {METHODS}")
    pool_rows = store.pool_indices if pool_rows is None else np.asarray(pool_rows, dtype=np.int64)
    lab_rows = pool_rows[label_state.labeled_indices]
    if lab_rows.size == 0:
        raise EmptyLabelSet("cannot train on an empty labeled set")
    if method == "supervised_only":
        return train_supervised(store, lab_rows, tier, cfg, on_epoch=on_epoch, impl=impl)
    if method == "consistency" and store.v == 1:
        warnings.warn(
            "consistency training needs a second view; single-view store falls back to pseudolabel",
            ConsistencyDegradedWarning,
            stacklevel=2,
        )

    unl_rows = pool_rows[label_state.unlabeled_indices]
    y_lab = store.labels[lab_rows]
    model = init_model(tier, store.d, store.k, stream(cfg.seed, "train", "init"))
    batch_rng = stream(cfg.seed, "train", "batches")
    unl_rng = stream(cfg.seed, "train", "unlabeled")
    n_u = min(unl_rows.size, semi.unlabeled_ratio * cfg.batch_size)
    view0_unl = store.view(0, unl_rows)
    all_unl = np.ones(unl_rows.size, dtype=bool)

    def make_plan(epoch, cur):
        sup_view = store.features[epoch % store.v]
        batches = supervised_batches(lab_rows.size, cfg.batch_size, batch_rng)
        if n_u == 0:
            # every pool example is labeled: nothing to pseudo-label
            xs = [sup_view[lab_rows[b]] for b in batches]
            ys = [y_lab[b] for b in batches]
            ws = [np.full(b.size, 1.0 / b.size) for b in batches]
        else:
            probs = cur.predict_proba(view0_unl)
            if method == "flexmatch" and 0.0 < semi.tau < 1.0:
                state = update_flexmatch_thresholds(probs, all_unl, semi.tau)
                thresholds = state.per_class_tau
                if on_thresholds is not None:
                    on_thresholds(epoch, state)
            else:
                # fixed threshold; also the degenerate flexmatch case tau in {0, 1}
                thresholds = np.full(store.k, semi.tau)
            yhat = np.argmax(probs, axis=1)
            conf = probs[np.arange(yhat.size), yhat]
            mask = conf >= thresholds[yhat]
            unl_view = store.features[_unlabeled_view(method, epoch, store.v)]
            perm = unl_rng.permutation(unl_rows.size)
            xs, ys, ws = [], [], []
            for s, b in enumerate(batches):
                pos = perm[np.arange(s * n_u, (s + 1) * n_u) % perm.size]
                xs += [sup_view[lab_rows[b]], unl_view[unl_rows[pos]]]
                ys += [y_lab[b], yhat[pos]]
                ws += [np.full(b.size, 1.0 / b.size), semi.lambda_u * mask[pos] / n_u]
        sizes = [x.shape[0] for x in xs]
        step_sizes = np.add.reduceat(sizes, np.arange(0, len(sizes), len(sizes) // len(batches)))
        offsets = np.zeros(len(batches) + 1, dtype=np.int64)
        offsets[1:] = np.cumsum(step_sizes)
        return EpochPlan(X=np.concatenate(xs), y=np.concatenate(ys), w=np.concatenate(ws), offsets=offsets)

    return run_epochs(model, cfg, make_plan, on_epoch=on_epoch, impl=impl)
