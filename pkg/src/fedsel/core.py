"""Configuration, seeded random streams and the selection ledger."""

from __future__ import annotations

import hashlib
import json
import math
from dataclasses import asdict, dataclass, field, fields, replace
from pathlib import Path
from typing import Any

import numpy as np


class ConfigError(ValueError):
    """Invalid or unparseable experiment configuration."""


# ---------------------------------------------------------------------------
# Random streams
# ---------------------------------------------------------------------------

_MASK64 = (1 << 64) - 1


def _label_words(label: str) -> list[int]:
    digest = hashlib.blake2b(label.encode("utf-8"), digest_size=16).digest()
    return [int.from_bytes(digest[i:i + 4], "little") for i in range(0, 16, 4)]


def derive_stream(seed: int, stream_label: str) -> np.random.Generator:
    """Return an independent PCG64 generator keyed by ``(seed, stream_label)``.

    The label is hashed into the SeedSequence entropy, so every distinct
    purpose (partition, per-round resources, per-client shuffles, ...) gets
    its own stream and adding draws to one never shifts another.
    """
    if not stream_label:
        raise ValueError("stream label must be non-empty")
    seed = int(seed) & _MASK64
    entropy = [seed & 0xFFFFFFFF, seed >> 32, *_label_words(stream_label)]
    return np.random.Generator(np.random.PCG64(np.random.SeedSequence(entropy)))


def cohort_size(num_clients: int, selection_ratio: float) -> int:
    # rounding first keeps 0.1 * 30 from ceiling to 4
    k = math.ceil(round(selection_ratio * num_clients, 9))
    return min(max(k, 1), num_clients)


# ---------------------------------------------------------------------------
# Config variants
# ---------------------------------------------------------------------------

PARTITIONS = ("iid", "class_noniid", "quantity_skew")
VOLATILITIES = ("static", "volatile")
STRATEGIES = ("random", "comp_greedy", "comm_greedy", "rbff", "rbcsf")
DATASETS = ("synthetic", "idx", "cifar10_binary")


@dataclass(frozen=True)
class PartitionConfig:
    kind: str = "iid"
    classes_per_client: int = 2
    dirichlet_alpha: float = 0.5

    def __post_init__(self):
        if self.kind not in PARTITIONS:
            raise ConfigError(f"unknown partition kind {self.kind!r}")
        if self.classes_per_client < 1:
            raise ConfigError("classes_per_client must be >= 1")
        if not self.dirichlet_alpha > 0:
            raise ConfigError("dirichlet_alpha must be positive")

    def label(self) -> str:
        return self.kind


@dataclass(frozen=True)
class StrategyConfig:
    kind: str = "random"
    alpha: float | None = None
    normalize_reputation: bool = False

    def __post_init__(self):
        if self.kind not in STRATEGIES:
            raise ConfigError(f"unknown strategy kind {self.kind!r}")
        if self.alpha is not None and self.alpha < 0:
            raise ConfigError("alpha must be >= 0")


@dataclass(frozen=True)
class DatasetConfig:
    kind: str = "synthetic"
    # synthetic
    n_samples: int = 11112
    n_features: int = 20
    n_classes: int = 10
    class_separation: float = 3.0
    noise_std: float = 0.7
    # idx
    image_path: str | None = None
    label_path: str | None = None
    # cifar10_binary
    paths: tuple[str, ...] = ()

    def __post_init__(self):
        if self.kind not in DATASETS:
            raise ConfigError(f"unknown dataset kind {self.kind!r}")
        if self.kind == "synthetic":
            if self.n_samples < self.n_classes or self.n_classes < 2:
                raise ConfigError("synthetic dataset needs n_samples >= n_classes >= 2")
        elif self.kind == "idx" and not (self.image_path and self.label_path):
            raise ConfigError("idx dataset needs image_path and label_path")
        elif self.kind == "cifar10_binary" and not self.paths:
            raise ConfigError("cifar10_binary dataset needs at least one path")


_VARIANTS = {
    "partition": PartitionConfig,
    "strategy": StrategyConfig,
    "dataset": DatasetConfig,
}


@dataclass(frozen=True)
class ExperimentConfig:
    num_clients: int = 50
    selection_ratio: float = 0.4
    rounds: int = 50
    local_epochs: int = 1
    learning_rate: float = 0.01
    batch_size: int = 32
    partition: PartitionConfig = field(default_factory=PartitionConfig)
    volatility: str = "volatile"
    comp_range: tuple[float, float] = (50.0, 200.0)
    comm_range: tuple[float, float] = (1e5, 5e5)
    strategy: StrategyConfig = field(default_factory=StrategyConfig)
    model_size_bits: int | None = None
    hidden_units: int = 0
    test_fraction: float = 0.1
    seed: int = 0
    dataset: DatasetConfig = field(default_factory=DatasetConfig)

    def __post_init__(self):
        if self.num_clients < 1:
            raise ConfigError("num_clients must be positive")
        if not 0 < self.selection_ratio <= 1:
            raise ConfigError("selection_ratio must lie in (0, 1]")
        if self.rounds < 1 or self.local_epochs < 1 or self.batch_size < 1:
            raise ConfigError("rounds, local_epochs and batch_size must be positive")
        if not self.learning_rate >= 0:
            raise ConfigError("learning_rate must be non-negative")
        if self.volatility not in VOLATILITIES:
            raise ConfigError(f"unknown volatility {self.volatility!r}")
        for name in ("comp_range", "comm_range"):
            lo, hi = getattr(self, name)
            if not (lo > 0 and lo <= hi):
                raise ConfigError(f"{name} needs 0 < min <= max, got {(lo, hi)}")
        if self.model_size_bits is not None and self.model_size_bits < 1:
            raise ConfigError("model_size_bits must be positive")
        if self.hidden_units < 0:
            raise ConfigError("hidden_units must be >= 0")
        if not 0 < self.test_fraction < 1:
            raise ConfigError("test_fraction must lie in (0, 1)")
        if self.partition.kind == "class_noniid" and self.dataset.kind == "synthetic":
            if self.partition.classes_per_client > self.dataset.n_classes:
                raise ConfigError("classes_per_client exceeds number of classes")

    @property
    def cohort_size(self) -> int:
        return cohort_size(self.num_clients, self.selection_ratio)

    def with_overrides(self, **changes) -> "ExperimentConfig":
        return replace(self, **changes)

    def to_dict(self) -> dict[str, Any]:
        d = asdict(self)
        d["comp_range"] = list(self.comp_range)
        d["comm_range"] = list(self.comm_range)
        d["dataset"]["paths"] = list(self.dataset.paths)
        return d

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True, separators=(",", ":"))

    def fingerprint(self) -> str:
        return hashlib.sha256(self.to_json().encode()).hexdigest()[:16]

    @classmethod
    def from_dict(cls, data: dict[str, Any]) -> "ExperimentConfig":
        if not isinstance(data, dict):
            raise ConfigError("config must be a JSON object")
        known = {f.name for f in fields(cls)}
        unknown = set(data) - known
        if unknown:
            raise ConfigError(f"unknown config keys: {sorted(unknown)}")
        kwargs = dict(data)
        for key, variant in _VARIANTS.items():
            if key in kwargs:
                kwargs[key] = parse_variant(variant, kwargs[key], key)
        for key in ("comp_range", "comm_range"):
            if key in kwargs:
                value = kwargs[key]
                if not isinstance(value, (list, tuple)) or len(value) != 2:
                    raise ConfigError(f"{key} must be a [min, max] pair")
                kwargs[key] = (float(value[0]), float(value[1]))
        try:
            return cls(**kwargs)
        except TypeError as exc:
            raise ConfigError(str(exc)) from None

    @classmethod
    def from_json(cls, text: str) -> "ExperimentConfig":
        try:
            data = json.loads(text)
        except json.JSONDecodeError as exc:
            raise ConfigError(f"invalid JSON: {exc}") from None
        return cls.from_dict(data)

    @classmethod
    def load(cls, path: str | Path) -> "ExperimentConfig":
        return cls.from_json(Path(path).read_text())


def parse_variant(cls, value, what: str):
    """Build a variant config from ``"kind"`` shorthand or a ``{"kind": ...}`` object."""
    if isinstance(value, cls):
        return value
    if isinstance(value, str):
        value = {"kind": value}
    if not isinstance(value, dict):
        raise ConfigError(f"{what} must be a string or an object")
    known = {f.name for f in fields(cls)}
    unknown = set(value) - known
    if unknown:
        raise ConfigError(f"unknown {what} keys: {sorted(unknown)}")
    value = dict(value)
    if "paths" in value:
        value["paths"] = tuple(value["paths"])
    try:
        return cls(**value)
    except TypeError as exc:
        raise ConfigError(str(exc)) from None


# ---------------------------------------------------------------------------
# Ledger
# ---------------------------------------------------------------------------

class SelectionLedger:
    """Cumulative per-client selection counts."""

    def __init__(self, num_clients: int):
        self._counts = np.zeros(num_clients, dtype=np.int64)
        self.rounds = 0

    @property
    def counts(self) -> np.ndarray:
        view = self._counts.view()
        view.flags.writeable = False
        return view

    @property
    def num_clients(self) -> int:
        return len(self._counts)

    def record(self, selected) -> None:
        ids = np.asarray(selected, dtype=np.int64)
        if len(np.unique(ids)) != len(ids):
            raise ValueError("cohort contains duplicate client ids")
        if ids.size and (ids.min() < 0 or ids.max() >= len(self._counts)):
            raise ValueError("cohort contains an unknown client id")
        self._counts[ids] += 1
        self.rounds += 1

    def total(self) -> int:
        return int(self._counts.sum())
