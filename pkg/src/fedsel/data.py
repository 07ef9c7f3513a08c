"""Datasets (synthetic, IDX, CIFAR-10 binary) and client partitioners."""

from __future__ import annotations

import gzip
import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np

IDX_IMAGES_MAGIC = 0x00000803
IDX_LABELS_MAGIC = 0x00000801
CIFAR_RECORD = 3073


class DataError(ValueError):
    pass


class BadMagic(DataError):
    pass


class DimensionMismatch(DataError):
    pass


class Truncated(DataError):
    pass


class LabelOutOfRange(DataError):
    pass


class TooFewSamples(DataError):
    pass


class InfeasibleAssignment(DataError):
    pass


@dataclass(frozen=True)
class Dataset:
    features: np.ndarray
    labels: np.ndarray
    n_classes: int

    def __post_init__(self):
        x = np.ascontiguousarray(self.features, dtype=np.float64)
        y = np.ascontiguousarray(self.labels, dtype=np.int64)
        if x.ndim != 2 or y.ndim != 1 or len(x) != len(y):
            raise DimensionMismatch(f"features {x.shape} and labels {y.shape} disagree")
        if len(y) < 1:
            raise DataError("dataset is empty")
        if y.min() < 0 or y.max() >= self.n_classes:
            raise LabelOutOfRange(f"labels must lie in [0, {self.n_classes})")
        if not np.isfinite(x).all():
            raise DataError("non-finite feature values")
        object.__setattr__(self, "features", x)
        object.__setattr__(self, "labels", y)

    def __len__(self):
        return len(self.labels)

    @property
    def n_features(self) -> int:
        return self.features.shape[1]

    def subset(self, indices) -> "Dataset":
        indices = np.asarray(indices, dtype=np.int64)
        return Dataset(self.features[indices], self.labels[indices], self.n_classes)


# ---------------------------------------------------------------------------
# Synthetic
# ---------------------------------------------------------------------------

def generate_synthetic(n_samples, n_features, n_classes, class_separation, rng,
                       noise_std=0.7):
    """Isotropic Gaussian blobs, one per class.

    Class means sit at ``class_separation`` from the origin along random unit
    directions; labels are balanced to within one sample.
    """
    if n_samples < n_classes:
        raise DataError("need at least one sample per class")
    directions = rng.standard_normal((n_classes, n_features))
    directions /= np.linalg.norm(directions, axis=1, keepdims=True)
    means = class_separation * directions
    labels = rng.permutation(np.arange(n_samples) % n_classes)
    noise = noise_std * rng.standard_normal((n_samples, n_features))
    return Dataset(means[labels] + noise, labels, n_classes)


def train_test_split(dataset, test_fraction, rng):
    n = len(dataset)
    n_test = int(round(test_fraction * n))
    if not 1 <= n_test < n:
        raise TooFewSamples(f"cannot hold out {n_test} of {n} samples")
    order = rng.permutation(n)
    return dataset.subset(np.sort(order[n_test:])), dataset.subset(np.sort(order[:n_test]))


# ---------------------------------------------------------------------------
# File formats
# ---------------------------------------------------------------------------

def _read_bytes(path) -> bytes:
    raw = Path(path).read_bytes()
    if raw[:2] == b"\x1f\x8b":
        raw = gzip.decompress(raw)
    return raw


def _parse_idx(raw: bytes, expected_magic: int, what: str) -> np.ndarray:
    if len(raw) < 4:
        raise Truncated(f"{what}: file shorter than the magic number")
    (magic,) = struct.unpack(">I", raw[:4])
    if magic != expected_magic:
        raise BadMagic(f"{what}: magic 0x{magic:08X}, expected 0x{expected_magic:08X}")
    ndim = magic & 0xFF
    header = 4 + 4 * ndim
    if len(raw) < header:
        raise Truncated(f"{what}: header needs {header} bytes, got {len(raw)}")
    dims = struct.unpack(f">{ndim}I", raw[4:header])
    count = int(np.prod(dims, dtype=np.int64))
    if len(raw) - header < count:
        raise Truncated(f"{what}: header promises {count} data bytes, got {len(raw) - header}")
    return np.frombuffer(raw, dtype=np.uint8, count=count, offset=header).reshape(dims)


def parse_idx_pair(image_bytes: bytes, label_bytes: bytes) -> Dataset:
    images = _parse_idx(image_bytes, IDX_IMAGES_MAGIC, "images")
    labels = _parse_idx(label_bytes, IDX_LABELS_MAGIC, "labels")
    if len(images) != len(labels):
        raise DimensionMismatch(f"{len(images)} images but {len(labels)} labels")
    features = images.reshape(len(images), -1).astype(np.float64) / 255.0
    labels = labels.astype(np.int64)
    n_classes = max(int(labels.max()) + 1, 2) if len(labels) else 2
    return Dataset(features, labels, n_classes)


def load_idx(image_path, label_path) -> Dataset:
    return parse_idx_pair(_read_bytes(image_path), _read_bytes(label_path))


def idx_bytes(array: np.ndarray, magic: int) -> bytes:
    array = np.ascontiguousarray(array, dtype=np.uint8)
    if magic & 0xFF != array.ndim:
        raise DimensionMismatch("magic dimension byte does not match array rank")
    return struct.pack(f">I{array.ndim}I", magic, *array.shape) + array.tobytes()


def dataset_to_idx(dataset: Dataset, image_shape=None) -> tuple[bytes, bytes]:
    """Encode a dataset as (images, labels) IDX bytes; features are quantized to uint8."""
    n = len(dataset)
    shape = tuple(image_shape) if image_shape else (dataset.n_features, 1)
    pixels = np.clip(np.rint(dataset.features * 255.0), 0, 255).astype(np.uint8)
    return (idx_bytes(pixels.reshape((n, *shape)), IDX_IMAGES_MAGIC),
            idx_bytes(dataset.labels.astype(np.uint8), IDX_LABELS_MAGIC))


def parse_cifar10(chunks) -> Dataset:
    chunks = list(chunks)
    if not chunks:
        raise DataError("at least one CIFAR-10 file is required")
    records = []
    for i, raw in enumerate(chunks):
        if len(raw) % CIFAR_RECORD:
            raise Truncated(f"file {i}: {len(raw)} bytes is not a multiple of {CIFAR_RECORD}")
        records.append(np.frombuffer(raw, dtype=np.uint8).reshape(-1, CIFAR_RECORD))
    table = np.concatenate(records)
    if len(table) == 0:
        raise Truncated("no CIFAR-10 records found")
    labels = table[:, 0].astype(np.int64)
    if labels.max() > 9:
        raise LabelOutOfRange(f"label byte {labels.max()} exceeds 9")
    return Dataset(table[:, 1:].astype(np.float64) / 255.0, labels, 10)


def load_cifar10_binary(paths) -> Dataset:
    return parse_cifar10(Path(p).read_bytes() for p in paths)


# ---------------------------------------------------------------------------
# Partitioners
# ---------------------------------------------------------------------------

def partition_iid(dataset, n_clients, rng) -> list[np.ndarray]:
    n = len(dataset)
    if n < n_clients:
        raise TooFewSamples(f"{n} samples for {n_clients} clients")
    return [np.sort(s) for s in np.array_split(rng.permutation(n), n_clients)]


def assign_classes(classes, n_clients, classes_per_client, rng) -> list[list[int]]:
    """Round-robin classes over a shuffled client order.

    Client at shuffled position q takes slots ``q*cpc .. q*cpc+cpc-1`` of the
    repeating class sequence, so its classes are distinct and every class
    is held by the same number of clients up to one.
    """
    classes = list(classes)
    n_cls = len(classes)
    if classes_per_client > n_cls:
        raise InfeasibleAssignment(
            f"{classes_per_client} classes per client but only {n_cls} classes")
    if classes_per_client * n_clients < n_cls:
        raise InfeasibleAssignment(
            f"{classes_per_client * n_clients} class slots cannot cover {n_cls} classes")
    order = rng.permutation(n_clients)
    assigned: list[list[int]] = [[] for _ in range(n_clients)]
    for q, client in enumerate(order):
        for m in range(classes_per_client):
            assigned[client].append(classes[(q * classes_per_client + m) % n_cls])
    return assigned


def partition_class_noniid(dataset, n_clients, classes_per_client, rng) -> list[np.ndarray]:
    present = np.unique(dataset.labels)
    assigned = assign_classes(present.tolist(), n_clients, classes_per_client, rng)
    holders = {c: [i for i, cls in enumerate(assigned) if c in cls] for c in present.tolist()}
    shards: list[list[np.ndarray]] = [[] for _ in range(n_clients)]
    for c in present.tolist():
        idx = rng.permutation(np.flatnonzero(dataset.labels == c))
        owners = holders[c]
        if len(idx) < len(owners):
            raise InfeasibleAssignment(
                f"class {c} has {len(idx)} samples for {len(owners)} clients")
        for owner, piece in zip(owners, np.array_split(idx, len(owners))):
            shards[owner].append(piece)
    return [np.sort(np.concatenate(parts)) for parts in shards]


def largest_remainder(proportions, total: int) -> np.ndarray:
    raw = np.asarray(proportions, dtype=np.float64) * total
    sizes = np.floor(raw).astype(np.int64)
    short = total - int(sizes.sum())
    if short > 0:
        order = np.argsort(-(raw - sizes), kind="stable")
        sizes[order[:short]] += 1
    return sizes


def quantity_skew_sizes(n_samples, n_clients, dirichlet_alpha, rng) -> np.ndarray:
    if n_samples < n_clients:
        raise TooFewSamples(f"{n_samples} samples for {n_clients} clients")
    proportions = rng.dirichlet(np.full(n_clients, float(dirichlet_alpha)))
    sizes = largest_remainder(proportions, n_samples)
    for i in np.flatnonzero(sizes == 0):
        sizes[int(np.argmax(sizes))] -= 1
        sizes[i] = 1
    return sizes


def partition_quantity_skew(dataset, n_clients, dirichlet_alpha, rng) -> list[np.ndarray]:
    sizes = quantity_skew_sizes(len(dataset), n_clients, dirichlet_alpha, rng)
    pool = rng.permutation(len(dataset))
    bounds = np.cumsum(sizes)[:-1]
    return [np.sort(s) for s in np.split(pool, bounds)]


def make_partition(dataset, n_clients, partition, rng) -> list[np.ndarray]:
    if partition.kind == "iid":
        return partition_iid(dataset, n_clients, rng)
    if partition.kind == "class_noniid":
        return partition_class_noniid(dataset, n_clients, partition.classes_per_client, rng)
    if partition.kind == "quantity_skew":
        return partition_quantity_skew(dataset, n_clients, partition.dirichlet_alpha, rng)
    raise ValueError(f"unknown partition {partition.kind!r}")


def load_dataset(cfg, rng) -> Dataset:
    if cfg.kind == "synthetic":
        return generate_synthetic(cfg.n_samples, cfg.n_features, cfg.n_classes,
                                  cfg.class_separation, rng, noise_std=cfg.noise_std)
    if cfg.kind == "idx":
        return load_idx(cfg.image_path, cfg.label_path)
    if cfg.kind == "cifar10_binary":
        return load_cifar10_binary(cfg.paths)
    raise ValueError(f"unknown dataset kind {cfg.kind!r}")
