"""Sweeps over strategy x partition x volatility x scale x seed, and their outputs."""

from __future__ import annotations

import csv
import io
import itertools
import json
import logging
import threading
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, fields, replace
from pathlib import Path
from statistics import fmean

from .core import (PARTITIONS, STRATEGIES, VOLATILITIES, ConfigError, ExperimentConfig,
                   PartitionConfig, StrategyConfig, parse_variant)
from .federation import RoundError, RoundRecord, run_experiment
from .model import save_params

log = logging.getLogger(__name__)

DEFAULT_CLIENT_COUNTS = (10, 20, 30, 40, 50)
DEFAULT_RATIOS = (0.1, 0.2, 0.3, 0.4, 0.5)

TABLE_METRICS = ("acc", "time_ks", "jfi", "auc_macro", "auc_micro")
SERIES_KEYS = ("fingerprint", "strategy", "partition", "volatility", "round", "loss",
               "accuracy", "jfi", "cum_time_s")


class EmptyGroup(ValueError):
    pass


def strategy_label(s: StrategyConfig) -> str:
    label = s.kind
    if s.normalize_reputation:
        label += "-norm"
    if s.alpha is not None:
        label += f"-a{s.alpha:g}"
    return label


@dataclass(frozen=True)
class SweepSpec:
    base: ExperimentConfig
    strategies: tuple[StrategyConfig, ...] = tuple(StrategyConfig(k) for k in STRATEGIES)
    partitions: tuple[PartitionConfig, ...] = tuple(PartitionConfig(k) for k in PARTITIONS)
    volatilities: tuple[str, ...] = VOLATILITIES
    client_counts: tuple[int, ...] = DEFAULT_CLIENT_COUNTS
    ratios: tuple[float, ...] = DEFAULT_RATIOS
    seeds: tuple[int, ...] = (0,)

    def __post_init__(self):
        for f in fields(self):
            if f.name != "base" and not getattr(self, f.name):
                raise ConfigError(f"sweep list {f.name!r} is empty")

    @classmethod
    def from_dict(cls, data: dict) -> "SweepSpec":
        if not isinstance(data, dict):
            raise ConfigError("sweep spec must be a JSON object")
        known = {f.name for f in fields(cls)}
        unknown = set(data) - known
        if unknown:
            raise ConfigError(f"unknown sweep keys: {sorted(unknown)}")
        base = ExperimentConfig.from_dict(data.get("base", {}))
        kwargs = {"base": base, "seeds": (base.seed,)}
        if "strategies" in data:
            kwargs["strategies"] = tuple(parse_variant(StrategyConfig, s, "strategy")
                                         for s in data["strategies"])
        if "partitions" in data:
            kwargs["partitions"] = tuple(parse_variant(PartitionConfig, p, "partition")
                                         for p in data["partitions"])
        for key in ("volatilities", "client_counts", "ratios", "seeds"):
            if key in data:
                if not isinstance(data[key], list):
                    raise ConfigError(f"{key} must be a list")
                kwargs[key] = tuple(data[key])
        for v in kwargs.get("volatilities", ()):
            if v not in VOLATILITIES:
                raise ConfigError(f"unknown volatility {v!r}")
        return cls(**kwargs)

    @classmethod
    def load(cls, path) -> "SweepSpec":
        try:
            data = json.loads(Path(path).read_text())
        except json.JSONDecodeError as exc:
            raise ConfigError(f"invalid JSON: {exc}") from None
        return cls.from_dict(data)

    def expand(self) -> list[ExperimentConfig]:
        grid = itertools.product(self.volatilities, self.partitions, self.client_counts,
                                 self.ratios, self.seeds, self.strategies)
        return [replace(self.base, volatility=v, partition=p, num_clients=n,
                        selection_ratio=r, seed=s, strategy=st)
                for v, p, n, r, s, st in grid]


@dataclass
class RunSummary:
    fingerprint: str
    config: ExperimentConfig
    accuracy: float
    jfi: float
    time_ks: float
    auc_macro: float
    auc_micro: float
    records: list[RoundRecord] = field(repr=False, default_factory=list)

    @classmethod
    def from_records(cls, config: ExperimentConfig, records) -> "RunSummary":
        last = records[-1]
        return cls(config.fingerprint(), config, last.global_accuracy, last.jfi,
                   last.cumulative_time_s / 1000.0, last.auc_macro, last.auc_micro,
                   list(records))

    @property
    def keys(self) -> dict:
        c = self.config
        return {
            "resource_mode": c.volatility,
            "strategy": strategy_label(c.strategy),
            "partition": c.partition.label(),
            "num_clients": c.num_clients,
            "selection_ratio": c.selection_ratio,
            "seed": c.seed,
        }

    def to_dict(self) -> dict:
        return {
            "fingerprint": self.fingerprint,
            "config": self.config.to_dict(),
            "final": {"acc": self.accuracy, "time_ks": self.time_ks, "jfi": self.jfi,
                      "auc_macro": self.auc_macro, "auc_micro": self.auc_micro},
            "series": [r.to_dict() for r in self.records],
        }

    @classmethod
    def from_dict(cls, d: dict) -> "RunSummary":
        config = ExperimentConfig.from_dict(d["config"])
        records = [RoundRecord(**{**r, "selected": tuple(r["selected"])}) for r in d["series"]]
        f = d["final"]
        return cls(d["fingerprint"], config, f["acc"], f["jfi"], f["time_ks"],
                   f["auc_macro"], f["auc_micro"], records)


def summarize(config, records) -> RunSummary:
    return RunSummary.from_records(config, records)


def _fmt(v) -> str:
    return repr(float(v)) if isinstance(v, float) else str(v)


def emit_table(summaries, group_by=("resource_mode", "strategy", "partition")) -> str:
    """CSV of per-cell means over seeds (time in thousands of seconds)."""
    summaries = list(summaries)
    if not summaries:
        raise EmptyGroup("no summaries to tabulate")
    groups: dict[tuple, list[RunSummary]] = {}
    for s in summaries:
        groups.setdefault(tuple(s.keys[k] for k in group_by), []).append(s)
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow([*group_by, *TABLE_METRICS])
    for key in sorted(groups, key=_group_sort_key(group_by)):
        runs = groups[key]
        row = [fmean(getattr(r, "accuracy" if m == "acc" else m) for r in runs)
               for m in TABLE_METRICS]
        writer.writerow([*key, *(_fmt(v) for v in row)])
    return buf.getvalue()


def _group_sort_key(group_by):
    order = {"resource_mode": VOLATILITIES, "partition": PARTITIONS}

    def key(values):
        out = []
        for name, v in zip(group_by, values):
            if name in order and v in order[name]:
                out.append((0, order[name].index(v), ""))
            elif name == "strategy":
                base = v.split("-")[0]
                out.append((0, STRATEGIES.index(base) if base in STRATEGIES else 99, v))
            else:
                out.append((1, v, ""))
        return tuple(out)
    return key


def emit_runs(summaries) -> str:
    """One CSV row per run (seeds kept separate)."""
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    cols = ("resource_mode", "strategy", "partition", "num_clients", "selection_ratio", "seed")
    writer.writerow(["fingerprint", *cols, *TABLE_METRICS])
    for s in sorted(summaries, key=lambda s: s.fingerprint):
        k = s.keys
        writer.writerow([s.fingerprint, *(_fmt(k[c]) for c in cols),
                         *(_fmt(v) for v in (s.accuracy, s.time_ks, s.jfi,
                                             s.auc_macro, s.auc_micro))])
    return buf.getvalue()


def emit_series(summaries) -> str:
    lines = []
    for s in summaries:
        k = s.keys
        for r in s.records:
            row = dict(zip(SERIES_KEYS, (s.fingerprint, k["strategy"], k["partition"],
                                         k["resource_mode"], r.round, r.global_loss,
                                         r.global_accuracy, r.jfi, r.cumulative_time_s)))
            lines.append(json.dumps(row))
    return "".join(line + "\n" for line in lines)


def execute(config: ExperimentConfig, checkpoint_dir=None) -> RunSummary:
    records, fed = run_experiment(config, return_federation=True)
    if checkpoint_dir is not None:
        Path(checkpoint_dir).mkdir(parents=True, exist_ok=True)
        save_params(fed.params, Path(checkpoint_dir) / f"{config.fingerprint()}.params")
    return summarize(config, records)


def write_outputs(out_dir, summaries) -> None:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    summaries = sorted(summaries, key=lambda s: s.fingerprint)
    (out / "table.csv").write_text(emit_table(summaries))
    (out / "scale.csv").write_text(emit_table(
        summaries, ("resource_mode", "strategy", "partition", "num_clients", "selection_ratio")))
    (out / "runs.csv").write_text(emit_runs(summaries))
    (out / "series.jsonl").write_text(emit_series(summaries))


def write_run(out: Path, summary: RunSummary) -> None:
    runs = out / "runs"
    runs.mkdir(parents=True, exist_ok=True)
    tmp = runs / f"{summary.fingerprint}.json.tmp"
    tmp.write_text(json.dumps(summary.to_dict(), sort_keys=True))
    tmp.replace(runs / f"{summary.fingerprint}.json")


def run_sweep(spec: SweepSpec, out_dir=None, workers: int = 1, checkpoint_dir=None,
              resume: bool = False):
    """Run every cell; return ``(summaries, failures)``.

    Each finished run is written to ``runs/<fingerprint>.json`` as soon as it
    completes; the aggregate files are written once, sorted by fingerprint,
    so they do not depend on ``workers``.
    """
    configs = spec.expand()
    unique = {c.fingerprint(): c for c in configs}
    out = Path(out_dir) if out_dir is not None else None
    if out is not None:
        out.mkdir(parents=True, exist_ok=True)
    lock = threading.Lock()
    summaries: dict[str, RunSummary] = {}
    failures: list[dict] = []

    def job(fp, config):
        if resume and out is not None and (out / "runs" / f"{fp}.json").exists():
            done = RunSummary.from_dict(json.loads((out / "runs" / f"{fp}.json").read_text()))
            with lock:
                summaries[fp] = done
            return
        try:
            summary = execute(config, checkpoint_dir)
        except Exception as exc:
            log.error("run %s failed: %s", fp, exc)
            with lock:
                failures.append({"fingerprint": fp, "error": repr(exc),
                                 "round": getattr(exc, "round", None)})
            return
        with lock:
            summaries[fp] = summary
            if out is not None:
                write_run(out, summary)
        log.info("finished %s (%s)", fp, strategy_label(config.strategy))

    log.info("sweep: %d runs (%d unique)", len(configs), len(unique))
    if workers <= 1:
        for fp, config in unique.items():
            job(fp, config)
    else:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            list(pool.map(lambda item: job(*item), unique.items()))

    ordered = [summaries[fp] for fp in sorted(summaries)]
    failures.sort(key=lambda f: f["fingerprint"])
    if out is not None:
        if ordered:
            write_outputs(out, ordered)
        if failures:
            (out / "failures.jsonl").write_text(
                "".join(json.dumps(f, sort_keys=True) + "\n" for f in failures))
    return ordered, failures


__all__ = [
    "EmptyGroup", "RunSummary", "SweepSpec", "emit_runs", "emit_series", "emit_table",
    "execute", "run_sweep", "summarize", "write_outputs", "RoundError",
]
