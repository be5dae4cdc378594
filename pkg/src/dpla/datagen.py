"""Long-tailed open-world dataset construction.

Three partitions are materialized from per-class sample pools: a labeled
known-class set, an unlabeled known-class set and an unlabeled novel-class set
whose profile follows one of three regimes. Ground truth for the unlabeled
pool is kept behind :meth:`RolsslSplits.hidden_truth_for_eval`.
"""

from __future__ import annotations

import enum
import hashlib
import math
import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

CIFAR_RECORD = 3073
CIFAR_PIXELS = 3072


class DatasetFormatError(ValueError):
    pass


class CapacityError(ValueError):
    pass


class Regime(str, enum.Enum):
    CONSISTENT = "consistent"
    UNIFORM = "uniform"
    REVERSED = "reversed"


@dataclass(frozen=True)
class DatasetSpec:
    c_k: int
    c_n: int
    N_1: int
    H_1: int
    M_1: int
    gamma_l: float
    gamma_u: float
    gamma_n: float | None = None  # None: same as gamma_l
    regime: Regime = Regime.CONSISTENT
    input_dim: int = 2
    seed: int = 0

    def __post_init__(self):
        object.__setattr__(self, "regime", Regime(self.regime))
        if self.c_k < 1 or self.c_n < 0:
            raise ValueError("need c_k >= 1 and c_n >= 0")
        if self.N_1 < 1 or self.H_1 < 1 or (self.c_n > 0 and self.M_1 < 1):
            raise ValueError("head-class counts must be >= 1")
        for name in ("gamma_l", "gamma_u", "gamma_n"):
            g = getattr(self, name)
            if g is not None and g < 1:
                raise ValueError(f"{name} must be >= 1, got {g}")
        if self.input_dim < 1:
            raise ValueError("input_dim must be >= 1")

    @property
    def c_t(self) -> int:
        return self.c_k + self.c_n

    @property
    def novel_gamma(self) -> float:
        if self.regime is Regime.UNIFORM:
            return 1.0
        return self.gamma_l if self.gamma_n is None else self.gamma_n

    def labeled_counts(self) -> np.ndarray:
        return long_tail_counts(self.N_1, self.gamma_l, self.c_k, "descending")

    def unlabeled_known_counts(self) -> np.ndarray:
        return long_tail_counts(self.H_1, self.gamma_u, self.c_k, "descending")

    def novel_counts(self) -> np.ndarray:
        if self.c_n == 0:
            return np.zeros(0, dtype=np.int64)
        direction = {
            Regime.CONSISTENT: "descending",
            Regime.UNIFORM: "uniform",
            Regime.REVERSED: "ascending",
        }[self.regime]
        gamma = self.novel_gamma if self.c_n > 1 else 1.0
        return long_tail_counts(self.M_1, gamma, self.c_n, direction)


def long_tail_counts(n_max: int, gamma: float, num_classes: int, direction: str = "descending") -> np.ndarray:
    """Per-class counts on an exponential profile from ``n_max`` down to ``n_max / gamma``.

    ``direction`` is ``"descending"``, ``"ascending"`` (mirror image) or
    ``"uniform"``. Counts are rounded half-up with a floor of one.
    """
    if n_max < 1 or num_classes < 1:
        raise ValueError("n_max and num_classes must be >= 1")
    if direction not in ("descending", "ascending", "uniform"):
        raise ValueError(f"unknown direction {direction!r}")
    if direction == "uniform":
        return np.full(num_classes, int(n_max), dtype=np.int64)
    if gamma < 1:
        raise ValueError(f"imbalance ratio must be >= 1, got {gamma}")
    if num_classes == 1:
        if gamma > 1:
            raise ValueError("a single class cannot express an imbalance ratio > 1")
        return np.array([int(n_max)], dtype=np.int64)
    idx = np.arange(num_classes)
    raw = n_max * gamma ** (-idx / (num_classes - 1))
    counts = np.maximum(np.floor(raw + 0.5).astype(np.int64), 1)
    return counts[::-1].copy() if direction == "ascending" else counts


@dataclass(frozen=True, eq=False)
class RolsslSplits:
    """Materialized partitions. Unlabeled features are a shuffled union of the
    known and novel unlabeled sets; their labels are private to evaluation."""

    c_k: int
    c_n: int
    labeled_x: np.ndarray
    labeled_y: np.ndarray
    unlabeled_x: np.ndarray
    _hidden_truth: np.ndarray = field(repr=False)

    @property
    def c_t(self) -> int:
        return self.c_k + self.c_n

    @property
    def input_dim(self) -> int:
        return self.labeled_x.shape[1]

    def labeled_counts(self) -> np.ndarray:
        return np.bincount(self.labeled_y, minlength=self.c_k)

    def hidden_truth_for_eval(self) -> np.ndarray:
        return self._hidden_truth.copy()

    def with_hidden_truth(self, truth) -> "RolsslSplits":
        truth = np.asarray(truth, dtype=np.int64)
        if truth.shape != self._hidden_truth.shape:
            raise ValueError("replacement truth has the wrong shape")
        return RolsslSplits(self.c_k, self.c_n, self.labeled_x, self.labeled_y, self.unlabeled_x, truth)


def build_splits(spec: DatasetSpec, source) -> RolsslSplits:
    """Draw the labeled/unlabeled partitions from ``source[c]`` (one array per class)."""
    if len(source) < spec.c_t:
        raise CapacityError(f"source has {len(source)} classes, spec needs {spec.c_t}")
    rng = np.random.default_rng(spec.seed)
    n_lab = spec.labeled_counts()
    n_unl = spec.unlabeled_known_counts()
    n_nov = spec.novel_counts()

    lab_x, lab_y, unl_x, unl_y = [], [], [], []
    for c in range(spec.c_t):
        pool = np.asarray(source[c], dtype=np.float64)
        if pool.ndim != 2 or pool.shape[1] != spec.input_dim:
            raise ValueError(f"class {c} pool has shape {pool.shape}, expected (*, {spec.input_dim})")
        if c < spec.c_k:
            need_l, need_u = int(n_lab[c]), int(n_unl[c])
        else:
            need_l, need_u = 0, int(n_nov[c - spec.c_k])
        if pool.shape[0] < need_l + need_u:
            raise CapacityError(
                f"class {c} has {pool.shape[0]} samples, needs {need_l + need_u}"
            )
        order = rng.permutation(pool.shape[0])
        lab_x.append(pool[order[:need_l]])
        lab_y.append(np.full(need_l, c, dtype=np.int64))
        unl_x.append(pool[order[need_l:need_l + need_u]])
        unl_y.append(np.full(need_u, c, dtype=np.int64))

    labeled_x = np.concatenate(lab_x)
    labeled_y = np.concatenate(lab_y)
    unlabeled_x = np.concatenate(unl_x)
    truth = np.concatenate(unl_y)
    if labeled_y.size >= truth[truth < spec.c_k].size:
        raise CapacityError("labeled known-class set must be smaller than the unlabeled known-class set")
    perm = rng.permutation(unlabeled_x.shape[0])
    return RolsslSplits(spec.c_k, spec.c_n, labeled_x, labeled_y, unlabeled_x[perm], truth[perm])


def gen_synthetic_gaussian(c_t: int, input_dim: int, separation: float, seed: int, per_class_cap: int) -> list[np.ndarray]:
    """Unit-variance isotropic Gaussian pools, one per class.

    Class means are seed-determined unit directions scaled by ``separation``.
    In two dimensions the directions are evenly spaced on the circle with a
    random phase, so that adjacent means sit ``2 * separation * sin(pi/c_t)`` apart.
    """
    if c_t < 2 or input_dim < 2:
        raise ValueError("need c_t >= 2 and input_dim >= 2")
    if separation < 0:
        raise ValueError("separation must be nonnegative")
    if per_class_cap < 1:
        raise ValueError("per_class_cap must be >= 1")
    means = class_means(c_t, input_dim, separation, seed)
    rng = np.random.default_rng([seed, 1])
    return [means[c] + rng.standard_normal((per_class_cap, input_dim)) for c in range(c_t)]


def class_means(c_t: int, input_dim: int, separation: float, seed: int) -> np.ndarray:
    rng = np.random.default_rng([seed, 0])
    if input_dim == 2:
        theta = rng.uniform(0, 2 * np.pi) + 2 * np.pi * np.arange(c_t) / c_t
        dirs = np.stack([np.cos(theta), np.sin(theta)], axis=1)
    else:
        dirs = rng.standard_normal((c_t, input_dim))
        dirs /= np.linalg.norm(dirs, axis=1, keepdims=True)
    return separation * dirs


def split_off_test(source, per_class: int):
    """Reserve the last ``per_class`` samples of each pool as a balanced test set.

    Returns ``(train_source, test_x, test_y)``.
    """
    train, xs, ys = [], [], []
    for c, pool in enumerate(source):
        pool = np.asarray(pool, dtype=np.float64)
        if pool.shape[0] <= per_class:
            raise CapacityError(f"class {c} has {pool.shape[0]} samples, cannot reserve {per_class} for testing")
        train.append(pool[:-per_class])
        xs.append(pool[-per_class:])
        ys.append(np.full(per_class, c, dtype=np.int64))
    return train, np.concatenate(xs), np.concatenate(ys)


def load_cifar_binary(path, num_classes: int = 10) -> list[np.ndarray]:
    """Read 3073-byte records (label byte + 3072 pixel bytes) into per-class pools.

    Pixels are scaled to [0, 1] and keep their on-disk order.
    """
    raw = Path(path).read_bytes()
    n_full, rem = divmod(len(raw), CIFAR_RECORD)
    if rem:
        raise DatasetFormatError(
            f"{path}: truncated record at byte offset {n_full * CIFAR_RECORD} "
            f"(file length {len(raw)} is not a multiple of {CIFAR_RECORD})"
        )
    records = np.frombuffer(raw, dtype=np.uint8).reshape(n_full, CIFAR_RECORD)
    labels = records[:, 0].astype(np.int64)
    bad = np.flatnonzero(labels >= num_classes)
    if bad.size:
        i = int(bad[0])
        raise DatasetFormatError(
            f"{path}: label byte {labels[i]} out of range at byte offset {i * CIFAR_RECORD}"
        )
    pixels = records[:, 1:].astype(np.float64) / 255.0
    return [pixels[labels == c] for c in range(num_classes)]


# Cache layout, all little-endian:
#   magic b"RLSS", u32 version, u32 c_k, u32 c_n, u32 input_dim,
#   u32 n_labeled, u32 n_unlabeled, u32 n_test,
#   u32[c_k] labeled per-class counts, u32[c_t] unlabeled per-class counts,
#   then per block (labeled, unlabeled, test): f64[n * input_dim] features, u16[n] labels.
_MAGIC = b"RLSS"
_VERSION = 1


def save_splits(path, splits: RolsslSplits, test_x=None, test_y=None) -> None:
    if test_x is None:
        test_x = np.zeros((0, splits.input_dim))
        test_y = np.zeros(0, dtype=np.int64)
    truth = splits.hidden_truth_for_eval()
    header = struct.pack(
        "<4s7I", _MAGIC, _VERSION, splits.c_k, splits.c_n, splits.input_dim,
        splits.labeled_y.size, truth.size, len(test_y),
    )
    parts = [
        header,
        splits.labeled_counts().astype("<u4").tobytes(),
        np.bincount(truth, minlength=splits.c_t).astype("<u4").tobytes(),
    ]
    for x, y in ((splits.labeled_x, splits.labeled_y), (splits.unlabeled_x, truth), (test_x, test_y)):
        parts.append(np.ascontiguousarray(x, dtype="<f8").tobytes())
        parts.append(np.asarray(y).astype("<u2").tobytes())
    Path(path).write_bytes(b"".join(parts))


def load_splits(path):
    """Inverse of :func:`save_splits`; returns ``(splits, test_x, test_y)``."""
    raw = Path(path).read_bytes()
    hsize = struct.calcsize("<4s7I")
    if len(raw) < hsize:
        raise DatasetFormatError(f"{path}: file too short for header")
    magic, version, c_k, c_n, dim, n_l, n_u, n_t = struct.unpack_from("<4s7I", raw)
    if magic != _MAGIC or version != _VERSION:
        raise DatasetFormatError(f"{path}: not a split cache (magic {magic!r}, version {version})")
    off = hsize + 4 * (c_k + c_k + c_n)
    blocks = []
    for n in (n_l, n_u, n_t):
        nbytes = 8 * n * dim
        x = np.frombuffer(raw, dtype="<f8", count=n * dim, offset=off).reshape(n, dim).astype(np.float64)
        off += nbytes
        y = np.frombuffer(raw, dtype="<u2", count=n, offset=off).astype(np.int64)
        off += 2 * n
        blocks.append((x, y))
    if off != len(raw):
        raise DatasetFormatError(f"{path}: expected {off} bytes, found {len(raw)}")
    (lx, ly), (ux, uy), (tx, ty) = blocks
    return RolsslSplits(c_k, c_n, lx, ly, ux, uy), tx, ty


def content_hash(path) -> str:
    """Git-style blob hash of a file."""
    data = Path(path).read_bytes()
    h = hashlib.sha1(b"blob %d\0" % len(data))
    h.update(data)
    return h.hexdigest()


def default_test_per_class(spec: DatasetSpec) -> int:
    return max(10, int(math.ceil(spec.M_1 / 5)))
