"""Dataset handling: synthesis, non-iid partitioning, noise, splits, file I/O.

Node data is produced in three seeded stages: a per-class Dirichlet
partition assigns sample indices to nodes, each node perturbs its features
with its own Gaussian noise stream, and a stratified shuffle cuts the result
into train/val/test. Every stage is a pure function of its seed.

On-disk format (little-endian): magic ``SFD1`` | u32 n | u32 d | u32 K |
n*d float32 features row-major | n uint16 labels. Features are quantized to
float32 at dataset creation so save/load round-trips are bit-exact.
"""

from __future__ import annotations

import struct
import warnings
from dataclasses import dataclass

import numpy as np

from .errors import ConfigurationError, FormatError

_MAGIC = b"SFD1"
_HEADER = struct.Struct("<4sIII")


@dataclass
class Dataset:
    """Feature matrix in [0,1], integer labels in [0, n_classes)."""

    features: np.ndarray
    labels: np.ndarray
    n_classes: int

    def __post_init__(self) -> None:
        self.features = np.asarray(self.features, dtype=np.float64)
        self.labels = np.asarray(self.labels, dtype=np.int64)
        self.n_classes = int(self.n_classes)
        if self.features.ndim != 2 or self.features.shape[0] < 1:
            raise ConfigurationError("features must be a non-empty 2-d matrix")
        if self.labels.shape != (self.features.shape[0],):
            raise ConfigurationError("labels length must match the feature rows")
        if not np.all(np.isfinite(self.features)):
            raise ConfigurationError("features contain NaN or Inf")
        if self.labels.size and (self.labels.min() < 0 or self.labels.max() >= self.n_classes):
            raise ConfigurationError(f"labels must lie in [0, {self.n_classes})")

    def __len__(self) -> int:
        return int(self.features.shape[0])

    def subset(self, indices: np.ndarray) -> "Dataset":
        idx = np.asarray(indices, dtype=np.int64)
        return Dataset(self.features[idx], self.labels[idx], self.n_classes)


@dataclass
class Partition:
    """Disjoint per-node index lists into one dataset."""

    node_indices: list[np.ndarray]

    def __post_init__(self) -> None:
        self.node_indices = [np.asarray(ix, dtype=np.int64) for ix in self.node_indices]

    @property
    def n_nodes(self) -> int:
        return len(self.node_indices)

    def sizes(self) -> list[int]:
        return [int(ix.size) for ix in self.node_indices]


def dirichlet_proportions(
    rng: np.random.Generator, alpha: float, base: np.ndarray
) -> np.ndarray:
    """One per-class node-proportion draw p ~ Dirichlet(alpha * base)."""
    concentration = alpha * np.asarray(base, dtype=np.float64)
    p = rng.dirichlet(concentration)
    return p / p.sum()


def dirichlet_partition(
    labels: np.ndarray,
    n_nodes: int,
    alpha: float,
    target_sizes: np.ndarray | None = None,
    rng_seed: int = 0,
    min_samples: int = 10,
    max_retries: int = 100,
) -> Partition:
    """Label-skewed partition: each class is split by a Dirichlet draw.

    The base measure folds the node-size targets in (``alpha * target_sizes``),
    so realized node fractions approach the targets in expectation while small
    alpha yields strong per-node class skew. A draw leaving any node with
    fewer than two classes or fewer than ``min_samples`` samples is redrawn,
    up to ``max_retries`` times.
    """
    labels = np.asarray(labels, dtype=np.int64)
    if labels.size == 0:
        raise ConfigurationError("labels must not be empty")
    if n_nodes < 2:
        raise ConfigurationError("need at least 2 nodes")
    if alpha <= 0:
        raise ConfigurationError("alpha must be > 0")
    if target_sizes is None:
        base = np.full(n_nodes, 1.0 / n_nodes)
    else:
        base = np.asarray(target_sizes, dtype=np.float64)
        if base.shape != (n_nodes,):
            raise ConfigurationError("target_sizes length must equal n_nodes")
        if np.any(base <= 0) or abs(base.sum() - 1.0) > 1e-6:
            raise ConfigurationError("target_sizes must be positive and sum to 1")

    classes = np.unique(labels)
    rng = np.random.default_rng(rng_seed)
    for _ in range(max_retries):
        buckets: list[list[np.ndarray]] = [[] for _ in range(n_nodes)]
        for c in classes:
            idx_c = np.flatnonzero(labels == c)
            rng.shuffle(idx_c)
            p = dirichlet_proportions(rng, alpha, base)
            cuts = (np.cumsum(p) * idx_c.size).astype(np.int64)[:-1]
            for node_id, chunk in enumerate(np.split(idx_c, cuts)):
                buckets[node_id].append(chunk)
        node_indices = [
            np.sort(np.concatenate(parts)) if parts else np.empty(0, dtype=np.int64)
            for parts in buckets
        ]
        ok = all(
            ix.size >= min_samples and np.unique(labels[ix]).size >= 2
            for ix in node_indices
        )
        if ok:
            return Partition(node_indices)
    raise ConfigurationError(
        f"could not draw a partition giving every node >= {min_samples} samples "
        f"of >= 2 classes within {max_retries} attempts"
    )


def add_gaussian_noise(
    features: np.ndarray, sigma: float, node_seed: int
) -> np.ndarray:
    """Add a node-specific N(0, sigma^2) stream and clip back into [0, 1]."""
    if sigma < 0:
        raise ConfigurationError("sigma must be >= 0")
    features = np.asarray(features, dtype=np.float64)
    if sigma == 0:
        return features.copy()
    rng = np.random.default_rng(node_seed)
    noisy = features + rng.normal(0.0, sigma, size=features.shape)
    return np.clip(noisy, 0.0, 1.0)


def synthetic_dataset(
    n: int, d: int, n_classes: int, class_sep: float, seed: int
) -> Dataset:
    """Gaussian blobs with unit feature variance, min-max scaled to [0, 1].

    Class centers are standard-normal draws rescaled so their mean pairwise
    distance equals ``class_sep``. Class sizes are as equal as possible and
    rows are shuffled, all deterministically per seed.
    """
    if n_classes < 2 or n < n_classes or d < 2:
        raise ConfigurationError(
            f"need n >= n_classes >= 2 and d >= 2, got n={n}, K={n_classes}, d={d}"
        )
    rng = np.random.default_rng(seed)
    centers = rng.normal(size=(n_classes, d))
    diffs = centers[:, None, :] - centers[None, :, :]
    dists = np.sqrt((diffs**2).sum(axis=2))
    mean_dist = dists[np.triu_indices(n_classes, k=1)].mean()
    centers *= class_sep / mean_dist

    counts = np.full(n_classes, n // n_classes)
    counts[: n % n_classes] += 1
    labels = np.repeat(np.arange(n_classes), counts)
    features = centers[labels] + rng.normal(size=(n, d))
    perm = rng.permutation(n)
    features, labels = features[perm], labels[perm]

    lo = features.min(axis=0)
    span = features.max(axis=0) - lo
    span[span < 1e-12] = 1.0
    features = (features - lo) / span
    # float32 quantization keeps the on-disk round-trip bit-exact
    features = features.astype(np.float32).astype(np.float64)
    return Dataset(features, labels, n_classes)


def save_dataset(dataset: Dataset, path) -> None:
    """Write the binary format described in the module docstring."""
    n, d = dataset.features.shape
    if dataset.n_classes > np.iinfo(np.uint16).max:
        raise ConfigurationError("label width exceeds uint16 storage")
    with open(path, "wb") as fh:
        fh.write(_HEADER.pack(_MAGIC, n, d, dataset.n_classes))
        fh.write(np.ascontiguousarray(dataset.features, dtype="<f4").tobytes())
        fh.write(np.ascontiguousarray(dataset.labels, dtype="<u2").tobytes())


def load_dataset(path) -> Dataset:
    """Read the binary format; malformed files raise FormatError."""
    with open(path, "rb") as fh:
        raw = fh.read()
    if len(raw) < _HEADER.size:
        raise FormatError("file too small to hold a header")
    magic, n, d, k = _HEADER.unpack_from(raw)
    if magic != _MAGIC:
        raise FormatError(f"bad magic {magic!r}, expected {_MAGIC!r}")
    expected = _HEADER.size + n * d * 4 + n * 2
    if len(raw) != expected:
        raise FormatError(f"payload is {len(raw)} bytes, header implies {expected}")
    features = np.frombuffer(raw, dtype="<f4", count=n * d, offset=_HEADER.size)
    labels = np.frombuffer(raw, dtype="<u2", count=n, offset=_HEADER.size + n * d * 4)
    if labels.size and labels.max() >= k:
        raise FormatError("label outside the declared class count")
    return Dataset(
        features.astype(np.float64).reshape(n, d), labels.astype(np.int64), k
    )


def _cut_sizes(n: int, fractions: tuple[float, ...]) -> np.ndarray:
    """Largest-remainder rounding of n * fractions so the parts sum to n."""
    raw = np.asarray(fractions, dtype=np.float64) * n
    sizes = np.floor(raw).astype(np.int64)
    remainder = raw - sizes
    for i in np.argsort(-remainder)[: n - sizes.sum()]:
        sizes[i] += 1
    return sizes


def split(
    dataset: Dataset,
    fractions: tuple[float, float, float] = (0.7, 0.1, 0.2),
    seed: int = 0,
) -> tuple[Dataset, Dataset, Dataset]:
    """Seeded shuffle then contiguous cut into train/val/test.

    Stratified per class; a class with fewer than 3 samples triggers a
    warning and a plain non-stratified split.
    """
    fractions = tuple(float(f) for f in fractions)
    if len(fractions) != 3 or any(f < 0 for f in fractions):
        raise ConfigurationError("fractions must be three non-negative values")
    if abs(sum(fractions) - 1.0) > 1e-9:
        raise ConfigurationError("fractions must sum to 1")
    rng = np.random.default_rng(seed)
    n = len(dataset)
    class_counts = np.bincount(dataset.labels, minlength=dataset.n_classes)
    stratify = bool(np.all(class_counts[class_counts > 0] >= 3))
    if not stratify:
        warnings.warn(
            "a class has fewer than 3 samples; falling back to a non-stratified split",
            stacklevel=2,
        )
        order = rng.permutation(n)
        cuts = np.cumsum(_cut_sizes(n, fractions))[:-1]
        parts = np.split(order, cuts)
    else:
        parts = [[], [], []]
        for c in np.flatnonzero(class_counts):
            idx_c = np.flatnonzero(dataset.labels == c)
            rng.shuffle(idx_c)
            cuts = np.cumsum(_cut_sizes(idx_c.size, fractions))[:-1]
            for bucket, chunk in zip(parts, np.split(idx_c, cuts)):
                bucket.append(chunk)
        parts = [np.concatenate(p) for p in parts]
    return tuple(dataset.subset(np.sort(p)) for p in parts)
