"""Embedding stores: the binary on-disk format, synthetic generation and splits.

On-disk layout (all little endian)::

    b"LEBM" | u32 version | u64 n | u32 d | u32 v | u32 k
    labels   : n x u32
    split    : n x u8      (0 = pool, 1 = val, 2 = test)
    features : v blocks of n x d f32, row major

A JSON manifest sidecar (``<path>.manifest.json``) repeats the counts so a
damaged header is caught even when the payload length still matches.
"""
from __future__ import annotations

import json
import os
import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .core import EmbalError, InvalidParam, stream

MAGIC = b"LEBM"
FORMAT_VERSION = 1
_HEADER = struct.Struct("<4sIQIII")

POOL, VAL, TEST = 0, 1, 2
SPLIT_NAMES = {POOL: "pool", VAL: "val", TEST: "test"}


class CorruptStore(EmbalError):
    pass


class BadMagic(CorruptStore):
    pass


class VersionMismatch(CorruptStore):
    pass


class TruncatedPayload(CorruptStore):
    pass


class ManifestMismatch(CorruptStore):
    pass


class ClassTooSmall(EmbalError):
    pass


@dataclass(eq=False)
class EmbeddingStore:
    features: np.ndarray  # (v, n, d) float32
    labels: np.ndarray  # (n,) int64
    split: np.ndarray  # (n,) uint8
    k: int
    name: str = "dataset"
    class_names: list[str] | None = None
    generator_seed: int | None = None

    def __post_init__(self):
        self.features = np.asarray(self.features, dtype=np.float32)
        if self.features.ndim == 2:
            self.features = self.features[None]
        self.labels = np.asarray(self.labels, dtype=np.int64)
        self.split = np.asarray(self.split, dtype=np.uint8)
        if self.class_names is None:
            self.class_names = [f"class_{c}" for c in range(self.k)]

    @property
    def v(self) -> int:
        return self.features.shape[0]

    @property
    def n(self) -> int:
        return self.features.shape[1]

    @property
    def d(self) -> int:
        return self.features.shape[2]

    def indices(self, which: int) -> np.ndarray:
        return np.flatnonzero(self.split == which)

    @property
    def pool_indices(self) -> np.ndarray:
        return self.indices(POOL)

    @property
    def val_indices(self) -> np.ndarray:
        return self.indices(VAL)

    @property
    def test_indices(self) -> np.ndarray:
        return self.indices(TEST)

    def view(self, i: int = 0, rows: np.ndarray | None = None) -> np.ndarray:
        """Float64 copy of view ``i`` (optionally restricted to ``rows``)."""
        x = self.features[i] if rows is None else self.features[i][rows]
        return np.asarray(x, dtype=np.float64)

    def validate(self) -> None:
        if self.features.ndim != 3 or self.features.shape[0] < 1:
            raise InvalidParam(f"features must be (v, n, d) with v >= 1, got {self.features.shape}")
        n = self.n
        if self.labels.shape != (n,) or self.split.shape != (n,):
            raise InvalidParam("labels and split must have one entry per example")
        if self.k < 1 or (n and (self.labels.min() < 0 or self.labels.max() >= self.k)):
            raise InvalidParam(f"labels must lie in [0, {self.k})")
        if not np.isin(self.split, list(SPLIT_NAMES)).all():
            raise InvalidParam("split tags must be 0 (pool), 1 (val) or 2 (test)")
        if not np.isfinite(self.features).all():
            raise InvalidParam("features contain non-finite values")
        train = self.labels[self.split != TEST]
        missing = np.setdiff1d(np.arange(self.k), train)
        if missing.size:
            raise InvalidParam(f"classes {missing.tolist()} absent from pool and val")

    def manifest(self) -> dict:
        return {
            "name": self.name,
            "format_version": FORMAT_VERSION,
            "n": self.n,
            "d": self.d,
            "v": self.v,
            "k": self.k,
            "split_sizes": {nm: int((self.split == t).sum()) for t, nm in SPLIT_NAMES.items()},
            "class_names": list(self.class_names),
            "generator_seed": self.generator_seed,
        }

    def equals(self, other: "EmbeddingStore") -> bool:
        return (
            self.k == other.k
            and np.array_equal(self.labels, other.labels)
            and np.array_equal(self.split, other.split)
            and self.features.shape == other.features.shape
            and self.features.tobytes() == other.features.tobytes()
        )


def manifest_path(path) -> Path:
    path = Path(path)
    return path.with_name(path.name + ".manifest.json")


def write_store(store: EmbeddingStore, path) -> None:
    store.validate()
    path = Path(path)
    header = _HEADER.pack(MAGIC, FORMAT_VERSION, store.n, store.d, store.v, store.k)
    tmp = path.with_name(path.name + ".tmp")
    with open(tmp, "wb") as f:
        f.write(header)
        f.write(store.labels.astype("<u4").tobytes())
        f.write(store.split.astype("u1").tobytes())
        f.write(np.ascontiguousarray(store.features, dtype="<f4").tobytes())
    os.replace(tmp, path)
    with open(manifest_path(path), "w") as f:
        json.dump(store.manifest(), f, indent=2, sort_keys=True)
        f.write("\n")


def read_store(path, mmap: bool = False, require_manifest: bool = True) -> EmbeddingStore:
    """Load a store written by :func:`write_store`.

    With ``mmap=True`` the feature tensor is a read-only memory map.
    """
    path = Path(path)
    size = path.stat().st_size
    with open(path, "rb") as f:
        raw = f.read(_HEADER.size)
    if len(raw) < _HEADER.size:
        raise TruncatedPayload(f"{path}: file shorter than the {_HEADER.size}-byte header")
    magic, version, n, d, v, k = _HEADER.unpack(raw)
    if magic != MAGIC:
        raise BadMagic(f"{path}: bad magic {magic!r}")
    if version != FORMAT_VERSION:
        raise VersionMismatch(f"{path}: format version {version}, expected {FORMAT_VERSION}")
    expected = _HEADER.size + n * 4 + n + v * n * d * 4
    if size < expected:
        raise TruncatedPayload(f"{path}: {size} bytes, header implies {expected}")
    if size > expected:
        raise CorruptStore(f"{path}: {size - expected} trailing bytes after payload")

    mpath = manifest_path(path)
    manifest = None
    if mpath.exists():
        with open(mpath) as f:
            manifest = json.load(f)
        for key, val in (("n", n), ("d", d), ("v", v), ("k", k), ("format_version", version)):
            if manifest.get(key) != val:
                raise ManifestMismatch(
                    f"{path}: manifest {key}={manifest.get(key)} but payload has {val}"
                )
    elif require_manifest:
        raise ManifestMismatch(f"{path}: manifest sidecar {mpath.name} is missing")

    off = _HEADER.size
    labels = np.fromfile(path, dtype="<u4", count=n, offset=off).astype(np.int64)
    off += 4 * n
    split = np.fromfile(path, dtype="u1", count=n, offset=off)
    off += n
    if mmap:
        feats = np.memmap(path, dtype="<f4", mode="r", offset=off, shape=(v, n, d))
    else:
        feats = np.fromfile(path, dtype="<f4", count=v * n * d, offset=off).reshape(v, n, d)

    if n and labels.max() >= k:
        raise CorruptStore(f"{path}: label {labels.max()} outside [0, {k})")
    if not np.isin(split, list(SPLIT_NAMES)).all():
        raise CorruptStore(f"{path}: unknown split tag")
    store = EmbeddingStore.__new__(EmbeddingStore)
    store.features = feats
    store.labels = labels
    store.split = split
    store.k = int(k)
    store.name = manifest.get("name", path.stem) if manifest else path.stem
    store.class_names = (
        manifest.get("class_names") if manifest else None
    ) or [f"class_{c}" for c in range(k)]
    store.generator_seed = manifest.get("generator_seed") if manifest else None
    if manifest is not None:
        sizes = {nm: int((split == t).sum()) for t, nm in SPLIT_NAMES.items()}
        if manifest.get("split_sizes", sizes) != sizes:
            raise ManifestMismatch(f"{path}: manifest split sizes {manifest['split_sizes']} != {sizes}")
    return store


def class_directions(k: int, d: int, rng: np.random.Generator) -> np.ndarray:
    """(k, d) unit vectors; exactly orthonormal when k <= d."""
    g = rng.standard_normal((d, k))
    if k <= d:
        q, r = np.linalg.qr(g)
        return (q * np.sign(np.diag(r))).T
    return (g / np.linalg.norm(g, axis=0)).T


def generate_synthetic(
    k: int,
    n: int,
    d: int,
    v: int = 1,
    separation: float = 3.0,
    noise: float = 0.1,
    seed: int = 0,
    name: str = "synthetic",
) -> EmbeddingStore:
    """Gaussian mixture stand-in for frozen-encoder embeddings.

    Class ``c`` is ``separation * u_c + N(0, I)`` with ``u_c`` random unit
    directions. Views ``1..v-1`` add ``noise * N(0, I)`` on top of view 0 to
    mimic embeddings of augmented copies. All examples are tagged pool.
    """
    if k < 2:
        raise InvalidParam(f"need k >= 2 classes, got {k}")
    if d < 1 or v < 1 or n < k:
        raise InvalidParam(f"invalid shape n={n}, d={d}, v={v} for k={k}")
    if separation < 0:
        raise InvalidParam(f"separation must be nonnegative, got {separation}")
    if not noise > 0:
        raise InvalidParam(f"noise must be positive, got {noise}")

    dirs = class_directions(k, d, stream(seed, "synthetic", "directions"))
    labels = stream(seed, "synthetic", "labels").permutation(np.arange(n) % k)
    base = separation * dirs[labels] + stream(seed, "synthetic", "within").standard_normal((n, d))
    feats = np.empty((v, n, d), dtype=np.float32)
    feats[0] = base
    aug = stream(seed, "synthetic", "augment")
    for i in range(1, v):
        feats[i] = base + noise * aug.standard_normal((n, d))
    return EmbeddingStore(
        features=feats,
        labels=labels,
        split=np.zeros(n, dtype=np.uint8),
        k=k,
        name=name,
        generator_seed=int(seed),
    )


def _largest_remainder(total: int, weights: np.ndarray) -> np.ndarray:
    quota = total * weights / weights.sum()
    out = np.floor(quota).astype(np.int64)
    rem = quota - out
    order = np.lexsort((np.arange(len(rem)), -rem))
    out[order[: total - out.sum()]] += 1
    return out


def split_dataset(store: EmbeddingStore, val_fraction: float, test_fraction: float, seed: int) -> EmbeddingStore:
    """Stratified pool/val/test split; returns a new store sharing features.

    Split sizes are ``round(fraction * n)`` overall, spread across classes by
    largest remainder so every class keeps at least one pool example.
    """
    for nm, fr in (("val_fraction", val_fraction), ("test_fraction", test_fraction)):
        if not 0.0 < fr < 1.0:
            raise InvalidParam(f"{nm} must lie in (0, 1), got {fr}")
    if val_fraction + test_fraction >= 1.0:
        raise InvalidParam(f"val_fraction + test_fraction must be < 1, got {val_fraction + test_fraction}")

    n, k = store.n, store.k
    counts = np.bincount(store.labels, minlength=k)
    present = counts > 0
    n_val = _largest_remainder(int(round(val_fraction * n)), counts.astype(float))
    n_test = _largest_remainder(int(round(test_fraction * n)), counts.astype(float))
    short = np.flatnonzero(present & (counts - n_val - n_test < 1))
    if short.size:
        raise ClassTooSmall(f"classes {short.tolist()} would have no pool examples")

    rng = stream(seed, "split")
    split = np.full(n, POOL, dtype=np.uint8)
    for c in np.flatnonzero(present):
        members = rng.permutation(np.flatnonzero(store.labels == c))
        split[members[: n_val[c]]] = VAL
        split[members[n_val[c] : n_val[c] + n_test[c]]] = TEST
    return EmbeddingStore(
        features=store.features,
        labels=store.labels,
        split=split,
        k=k,
        name=store.name,
        class_names=list(store.class_names),
        generator_seed=store.generator_seed,
    )
