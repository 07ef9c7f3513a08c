"""Round orchestration: environment sampling, selection, local training, FedAvg."""

from __future__ import annotations

import logging
from dataclasses import asdict, dataclass

import numpy as np

from . import data as data_mod
from .core import ExperimentConfig, SelectionLedger, derive_stream
from .metrics import auc_multiclass, jfi
from .model import ModelParams, ModelSpec, evaluate, init_params, local_train
from .selection import ResourceProfiles, default_alpha, select

log = logging.getLogger(__name__)


class SpecMismatch(ValueError):
    pass


class RoundError(RuntimeError):
    def __init__(self, round_no: int, cause: BaseException):
        super().__init__(f"round {round_no} failed: {cause!r}")
        self.round = round_no


@dataclass(frozen=True)
class RoundRecord:
    round: int
    selected: tuple[int, ...]
    round_time_s: float
    cumulative_time_s: float
    global_accuracy: float
    global_loss: float
    jfi: float
    auc_macro: float
    auc_micro: float

    def to_dict(self):
        d = asdict(self)
        d["selected"] = list(self.selected)
        return d


def draw_profiles(config: ExperimentConfig, round_no: int) -> ResourceProfiles:
    """Independent uniform draws, one stream per (round, client)."""
    n = config.num_clients
    comp = np.empty(n)
    comm = np.empty(n)
    for i in range(n):
        rng = derive_stream(config.seed, f"resources.round.{round_no}.client.{i}")
        comp[i] = rng.uniform(*config.comp_range)
        comm[i] = rng.uniform(*config.comm_range)
    return ResourceProfiles(comp, comm)


def sample_environment(config: ExperimentConfig, round_no: int,
                       static_profiles: ResourceProfiles | None = None) -> ResourceProfiles:
    if not 1 <= round_no <= config.rounds:
        raise ValueError(f"round {round_no} outside [1, {config.rounds}]")
    if config.volatility == "static":
        return static_profiles if static_profiles is not None else draw_profiles(config, 0)
    return draw_profiles(config, round_no)


def fedavg_aggregate(updates) -> ModelParams:
    """Weighted mean of client parameters, weights |D_i| / sum of participating |D_j|."""
    updates = list(updates)
    if not updates:
        raise ValueError("nothing to aggregate")
    spec = updates[0][0].spec
    if any(p.spec != spec for p, _ in updates):
        raise SpecMismatch("updates come from different model specs")
    sizes = [int(n) for _, n in updates]
    if min(sizes) <= 0:
        raise ValueError("shard sizes must be positive")
    total = sum(sizes)
    acc = np.zeros(spec.n_params)
    for (params, n) in updates:
        acc += (n / total) * params.values
    return ModelParams(acc, spec)


def round_time(selected, profiles: ResourceProfiles, shard_sizes, local_epochs: int,
               model_size_bits: int) -> float:
    """Slowest participant's compute plus transfer time, in seconds."""
    sel = np.asarray(selected, dtype=np.int64)
    if sel.size == 0:
        raise ValueError("empty cohort")
    sizes = np.asarray(shard_sizes, dtype=np.float64)[sel]
    t = (local_epochs * sizes / profiles.comp_speed[sel]
         + model_size_bits / profiles.comm_speed[sel])
    return float(t.max())


class Federation:
    """Materialized run state: data, shards, model, ledger, clock."""

    def __init__(self, config: ExperimentConfig, backend=None):
        self.config = config
        self.backend = backend
        dataset = data_mod.load_dataset(config.dataset, derive_stream(config.seed, "dataset"))
        self.train, self.test = data_mod.train_test_split(
            dataset, config.test_fraction, derive_stream(config.seed, "split"))
        self.shards = data_mod.make_partition(
            self.train, config.num_clients, config.partition,
            derive_stream(config.seed, "partition"))
        self.shard_sizes = np.array([len(s) for s in self.shards], dtype=np.int64)
        self.spec = ModelSpec(dataset.n_features, dataset.n_classes, config.hidden_units)
        self.params = init_params(self.spec, derive_stream(config.seed, "init"))
        self.model_size_bits = config.model_size_bits or 64 * self.spec.n_params
        self.k = config.cohort_size
        self.ledger = SelectionLedger(config.num_clients)
        self.clock = 0.0
        self.static_profiles = (draw_profiles(config, 0)
                                if config.volatility == "static" else None)
        strat = config.strategy
        self.alpha = strat.alpha
        if strat.kind == "rbcsf" and self.alpha is None:
            self.alpha = default_alpha(config.comp_range, config.comm_range,
                                       strat.normalize_reputation)
        self.records: list[RoundRecord] = []

    def step(self) -> RoundRecord:
        cfg = self.config
        t = len(self.records) + 1
        profiles = sample_environment(cfg, t, self.static_profiles)
        cohort = select(cfg.strategy, profiles, self.ledger.counts, self.k,
                        derive_stream(cfg.seed, f"selection.round.{t}"), alpha=self.alpha)
        updates = []
        for i in cohort.tolist():
            shard = self.shards[i]
            rng = derive_stream(cfg.seed, f"shuffle.round.{t}.client.{i}")
            local = local_train(self.params, self.train.features[shard],
                                self.train.labels[shard], cfg.local_epochs,
                                cfg.learning_rate, cfg.batch_size, rng, backend=self.backend)
            updates.append((local, len(shard)))
        self.params = fedavg_aggregate(updates)
        elapsed = round_time(cohort, profiles, self.shard_sizes, cfg.local_epochs,
                             self.model_size_bits)
        self.clock += elapsed
        self.ledger.record(cohort)
        acc, loss, probs = evaluate(self.params, self.test.features, self.test.labels)
        macro, micro = auc_multiclass(probs, self.test.labels)
        record = RoundRecord(t, tuple(cohort.tolist()), elapsed, self.clock, acc, loss,
                             jfi(self.ledger.counts), macro, micro)
        self.records.append(record)
        log.debug("round %d acc=%.4f jfi=%.4f t=%.1fs", t, acc, record.jfi, self.clock)
        return record


def run_experiment(config: ExperimentConfig, backend=None,
                   return_federation: bool = False):
    fed = Federation(config, backend=backend)
    for t in range(1, config.rounds + 1):
        try:
            fed.step()
        except Exception as exc:
            raise RoundError(t, exc) from exc
    if return_federation:
        return fed.records, fed
    return fed.records
