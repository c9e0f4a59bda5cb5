"""Linear probe and one-hidden-layer network over frozen embeddings."""
from __future__ import annotations

import struct
import warnings
import zlib
from dataclasses import dataclass, replace
from pathlib import Path
from typing import Callable

import numpy as np

from . import _kernels
from .core import EmbalError, EmptyLabelSet, InvalidParam, stream

TIERS = ("linear", "shallow")


class CorruptCheckpoint(EmbalError):
    pass


class DegenerateBatchWarning(UserWarning):
    pass


@dataclass(frozen=True)
class TrainConfig:
    epochs: int = 200
    batch_size: int = 64
    lr: float = 1e-2
    weight_decay: float = 1e-4
    momentum: float = 0.9
    seed: int = 0

    def __post_init__(self):
        if self.epochs < 1 or self.batch_size < 1 or not self.lr > 0:
            raise InvalidParam(f"epochs, batch_size and lr must be positive: {self}")
        if self.weight_decay < 0 or not 0 <= self.momentum < 1:
            raise InvalidParam(f"weight_decay must be >= 0 and momentum in [0, 1): {self}")


def default_train_config(tier: str, **overrides) -> TrainConfig:
    lr = {"linear": 1e-2, "shallow": 1e-3}[tier]
    return replace(TrainConfig(lr=lr), **overrides)


def softmax(logits: np.ndarray) -> np.ndarray:
    z = np.asarray(logits, dtype=np.float64)
    z = z - z.max(axis=-1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=-1, keepdims=True)


class _Model:
    tier: str

    def logits(self, X: np.ndarray) -> np.ndarray:
        raise NotImplementedError

    def penultimate(self, X: np.ndarray) -> np.ndarray:
        raise NotImplementedError

    def params(self) -> list[np.ndarray]:
        raise NotImplementedError

    @property
    def head(self) -> tuple[np.ndarray, np.ndarray]:
        raise NotImplementedError

    def predict_proba(self, X: np.ndarray) -> np.ndarray:
        return softmax(self.logits(X))

    def predict(self, X: np.ndarray) -> np.ndarray:
        # argmax takes the lowest index on ties
        return np.argmax(self.logits(X), axis=-1)

    def copy(self):
        return type(self)(*[p.copy() for p in self.params()])

    def equals(self, other) -> bool:
        return type(self) is type(other) and all(
            np.array_equal(a, b) for a, b in zip(self.params(), other.params())
        )


class LinearProbe(_Model):
    tier = "linear"

    def __init__(self, W: np.ndarray, b: np.ndarray):
        self.W = np.ascontiguousarray(W, dtype=np.float64)
        self.b = np.ascontiguousarray(b, dtype=np.float64)

    @property
    def d(self) -> int:
        return self.W.shape[1]

    @property
    def k(self) -> int:
        return self.W.shape[0]

    def logits(self, X):
        return np.asarray(X, dtype=np.float64) @ self.W.T + self.b

    def penultimate(self, X):
        return np.array(X, dtype=np.float64)

    def params(self):
        return [self.W, self.b]

    @property
    def head(self):
        return self.W, self.b


class ShallowNet(_Model):
    tier = "shallow"

    def __init__(self, W1, b1, W2, b2):
        self.W1 = np.ascontiguousarray(W1, dtype=np.float64)
        self.b1 = np.ascontiguousarray(b1, dtype=np.float64)
        self.W2 = np.ascontiguousarray(W2, dtype=np.float64)
        self.b2 = np.ascontiguousarray(b2, dtype=np.float64)

    @property
    def d(self) -> int:
        return self.W1.shape[1]

    @property
    def k(self) -> int:
        return self.W2.shape[0]

    def penultimate(self, X):
        return np.maximum(np.asarray(X, dtype=np.float64) @ self.W1.T + self.b1, 0.0)

    def logits(self, X):
        return self.penultimate(X) @ self.W2.T + self.b2

    def params(self):
        return [self.W1, self.b1, self.W2, self.b2]

    @property
    def head(self):
        return self.W2, self.b2


def init_model(tier: str, d: int, k: int, rng: np.random.Generator) -> _Model:
    """Uniform(-1/sqrt(fan_in), 1/sqrt(fan_in)) for every weight and bias."""
    if tier == "linear":
        a = 1.0 / np.sqrt(d)
        return LinearProbe(rng.uniform(-a, a, (k, d)), rng.uniform(-a, a, k))
    if tier == "shallow":
        a = 1.0 / np.sqrt(d)
        W1 = rng.uniform(-a, a, (d, d))
        b1 = rng.uniform(-a, a, d)
        W2 = rng.uniform(-a, a, (k, d))
        b2 = rng.uniform(-a, a, k)
        return ShallowNet(W1, b1, W2, b2)
    raise InvalidParam(f"unknown tier {tier!r}; expected one of {TIERS}")


def predict_proba(model: _Model, x: np.ndarray) -> np.ndarray:
    return model.predict_proba(x)


def penultimate(model: _Model, x: np.ndarray) -> np.ndarray:
    return model.penultimate(x)


def grad_embedding_factors(model: _Model, x: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Factors ``(q, v)`` of the last-layer gradient at the predicted label.

    ``vec(outer(q, v))`` is the cross-entropy gradient with respect to the
    last weight matrix when the model's own argmax is used as the target.
    Works row-wise on 2-D input.
    """
    v = model.penultimate(x)
    p = model.predict_proba(x)
    q = -p
    yhat = np.argmax(p, axis=-1)
    if q.ndim == 1:
        q[yhat] += 1.0
    else:
        q[np.arange(q.shape[0]), yhat] += 1.0
    return q, v


def loss_and_grad(model: _Model, X, y, w=None, weight_decay: float = 0.0):
    """Weighted cross-entropy ``sum_i w_i CE_i + wd/2 ||theta||^2`` and its gradient.

    ``w`` defaults to ``1/n`` (mean loss). Gradients are returned in the
    order of ``model.params()``. This is the reference the SGD kernels are
    checked against.
    """
    X = np.asarray(X, dtype=np.float64)
    y = np.asarray(y, dtype=np.int64)
    n = X.shape[0]
    w = np.full(n, 1.0 / n) if w is None else np.asarray(w, dtype=np.float64)
    rows = np.arange(n)
    reg = 0.5 * weight_decay * sum(float((p * p).sum()) for p in model.params())

    if isinstance(model, LinearProbe):
        z = X @ model.W.T + model.b
        h = X
    else:
        pre = X @ model.W1.T + model.b1
        h = np.maximum(pre, 0.0)
        z = h @ model.W2.T + model.b2
    zs = z - z.max(axis=1, keepdims=True)
    logp = zs - np.log(np.exp(zs).sum(axis=1, keepdims=True))
    loss = float(-(w * logp[rows, y]).sum()) + reg

    dz = np.exp(logp)
    dz[rows, y] -= 1.0
    dz *= w[:, None]
    W_last, b_last = model.head
    gW = dz.T @ h + weight_decay * W_last
    gb = dz.sum(axis=0) + weight_decay * b_last
    if isinstance(model, LinearProbe):
        return loss, [gW, gb]
    dh = (dz @ model.W2) * (pre > 0.0)
    gW1 = dh.T @ X + weight_decay * model.W1
    gb1 = dh.sum(axis=0) + weight_decay * model.b1
    return loss, [gW1, gb1, gW, gb]


# ---------------------------------------------------------------------------
# training


@dataclass
class EpochPlan:
    """Rows consumed by one epoch of SGD, step by step.

    Step ``s`` uses rows ``offsets[s]:offsets[s+1]`` of ``X``/``y``/``w``;
    the loss for that step is ``sum(w * CE)``.
    """

    X: np.ndarray
    y: np.ndarray
    w: np.ndarray
    offsets: np.ndarray


def supervised_batches(n_lab: int, batch_size: int, rng: np.random.Generator) -> list[np.ndarray]:
    """Shuffled mini-batches of positions ``0..n_lab-1`` (last one may be short)."""
    perm = rng.permutation(n_lab)
    return [perm[i : i + batch_size] for i in range(0, n_lab, batch_size)]


def run_epochs(
    model: _Model,
    cfg: TrainConfig,
    make_plan: Callable[[int, _Model], EpochPlan],
    on_epoch: Callable[[int, _Model], None] | None = None,
    impl=None,
) -> _Model:
    """SGD with momentum over ``cfg.epochs`` plans; updates ``model`` in place."""
    impl = impl or _kernels.active
    vel = [np.zeros_like(p) for p in model.params()]
    for epoch in range(cfg.epochs):
        plan = make_plan(epoch, model)
        X = np.ascontiguousarray(plan.X, dtype=np.float64)
        y = np.ascontiguousarray(plan.y, dtype=np.int64)
        w = np.ascontiguousarray(plan.w, dtype=np.float64)
        offsets = np.ascontiguousarray(plan.offsets, dtype=np.int64)
        args = (X, y, w, offsets, float(cfg.lr), float(cfg.momentum), float(cfg.weight_decay))
        if isinstance(model, LinearProbe):
            impl.sgd_linear_epoch(model.W, model.b, vel[0], vel[1], *args)
        else:
            impl.sgd_shallow_epoch(
                model.W1, model.b1, model.W2, model.b2, vel[0], vel[1], vel[2], vel[3], *args
            )
        if on_epoch is not None:
            on_epoch(epoch, model)
    return model


def supervised_plan(store, rows: np.ndarray, y: np.ndarray, epoch: int, batch_size: int, rng) -> EpochPlan:
    """One epoch over labeled ``rows`` using view ``epoch % v``."""
    view = store.features[epoch % store.v]
    batches = supervised_batches(rows.size, batch_size, rng)
    order = np.concatenate(batches)
    w = np.concatenate([np.full(b.size, 1.0 / b.size) for b in batches])
    offsets = np.zeros(len(batches) + 1, dtype=np.int64)
    offsets[1:] = np.cumsum([b.size for b in batches])
    return EpochPlan(X=view[rows[order]], y=y[order], w=w, offsets=offsets)


def train_supervised(
    store,
    labeled_indices,
    tier: str,
    cfg: TrainConfig,
    labels: np.ndarray | None = None,
    on_epoch=None,
    impl=None,
) -> _Model:
    """Fresh model fit to the labeled rows of ``store`` by mini-batch SGD.

    ``labeled_indices`` are row indices into the store; ``labels`` overrides
    the store's ground truth for those rows if given. Epoch ``e`` trains on
    view ``e % store.v``.
    """
    rows = np.asarray(labeled_indices, dtype=np.int64)
    if rows.size == 0:
        raise EmptyLabelSet("cannot train on an empty labeled set")
    y = store.labels[rows] if labels is None else np.asarray(labels, dtype=np.int64)
    if rows.size % cfg.batch_size == 1 and rows.size > 1:
        warnings.warn(
            f"{rows.size} labels with batch size {cfg.batch_size} leaves a single-example batch",
            DegenerateBatchWarning,
            stacklevel=2,
        )
    model = init_model(tier, store.d, store.k, stream(cfg.seed, "train", "init"))
    batch_rng = stream(cfg.seed, "train", "batches")

    def make_plan(epoch, _model):
        return supervised_plan(store, rows, y, epoch, cfg.batch_size, batch_rng)

    return run_epochs(model, cfg, make_plan, on_epoch=on_epoch, impl=impl)


# ---------------------------------------------------------------------------
# checkpoints: magic | u32 version | u8 tier | u32 d | u32 k | f64 params | u32 crc

_CKPT_MAGIC = b"EMCK"
_CKPT_HEAD = struct.Struct("<4sIBII")


def save_checkpoint(model: _Model, path) -> None:
    tier = TIERS.index(model.tier)
    blob = _CKPT_HEAD.pack(_CKPT_MAGIC, 1, tier, model.d, model.k)
    blob += b"".join(np.ascontiguousarray(p, dtype="<f8").tobytes() for p in model.params())
    blob += struct.pack("<I", zlib.crc32(blob))
    path = Path(path)
    tmp = path.with_name(path.name + ".tmp")
    tmp.write_bytes(blob)
    tmp.replace(path)


def load_checkpoint(path) -> _Model:
    blob = Path(path).read_bytes()
    if len(blob) < _CKPT_HEAD.size + 4:
        raise CorruptCheckpoint(f"{path}: too short")
    body, (crc,) = blob[:-4], struct.unpack("<I", blob[-4:])
    if zlib.crc32(body) != crc:
        raise CorruptCheckpoint(f"{path}: checksum mismatch")
    magic, version, tier, d, k = _CKPT_HEAD.unpack(body[: _CKPT_HEAD.size])
    if magic != _CKPT_MAGIC or version != 1 or tier >= len(TIERS):
        raise CorruptCheckpoint(f"{path}: bad header")
    shapes = [(k, d), (k,)] if TIERS[tier] == "linear" else [(d, d), (d,), (k, d), (k,)]
    flat = np.frombuffer(body, dtype="<f8", offset=_CKPT_HEAD.size)
    if flat.size != sum(int(np.prod(s)) for s in shapes):
        raise CorruptCheckpoint(f"{path}: parameter block has {flat.size} values")
    params, off = [], 0
    for s in shapes:
        m = int(np.prod(s))
        params.append(flat[off : off + m].reshape(s).astype(np.float64))
        off += m
    return (LinearProbe if TIERS[tier] == "linear" else ShallowNet)(*params)
