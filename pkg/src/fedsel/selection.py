"""Client selection strategies: Random, Comp/Comm-Greedy, RBFF and RBCSF."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np


class KTooLarge(ValueError):
    pass


@dataclass(frozen=True)
class ResourceProfiles:
    """Per-client speeds for one round, indexed by client id."""

    comp_speed: np.ndarray  # samples / second
    comm_speed: np.ndarray  # bits / second

    def __post_init__(self):
        comp = np.asarray(self.comp_speed, dtype=np.float64)
        comm = np.asarray(self.comm_speed, dtype=np.float64)
        if comp.shape != comm.shape or comp.ndim != 1:
            raise ValueError("comp and comm speeds must be equal-length vectors")
        if (comp <= 0).any() or (comm <= 0).any():
            raise ValueError("resource speeds must be strictly positive")
        object.__setattr__(self, "comp_speed", comp)
        object.__setattr__(self, "comm_speed", comm)

    def __len__(self):
        return len(self.comp_speed)


def _minmax(v: np.ndarray) -> np.ndarray:
    lo, hi = v.min(), v.max()
    if hi == lo:
        return np.full_like(v, 0.5)
    return (v - lo) / (hi - lo)


def reputations(profiles: ResourceProfiles, normalize: bool = False) -> np.ndarray:
    """Reputation of every client: comp + comm speed, raw or each min-max scaled."""
    if normalize:
        return _minmax(profiles.comp_speed) + _minmax(profiles.comm_speed)
    return profiles.comp_speed + profiles.comm_speed


def reputation(client: int, profiles: ResourceProfiles, normalize: bool = False) -> float:
    return float(reputations(profiles, normalize)[client])


def rbff_score(reputation, prev_count):
    return reputation / (1 + prev_count)


def rbcsf_score(reputation, prev_count, alpha):
    return reputation - alpha * prev_count


def default_alpha(comp_range, comm_range, normalize: bool) -> float:
    """RBCSF penalty weight used when a config leaves ``alpha`` unset."""
    if normalize:
        return 0.04
    return 0.02 * (comp_range[1] + comm_range[1])


def top_k(scores, k: int) -> np.ndarray:
    """Indices of the k largest scores, ties to the lower id, sorted ascending."""
    scores = np.asarray(scores, dtype=np.float64)
    ranked = np.lexsort((np.arange(len(scores)), -scores))
    return np.sort(ranked[:k])


def strategy_scores(kind, profiles, counts, alpha=0.0, normalize=False):
    """Ranking scores for the deterministic strategies."""
    if kind == "comp_greedy":
        return profiles.comp_speed
    if kind == "comm_greedy":
        return profiles.comm_speed
    rep = reputations(profiles, normalize)
    counts = np.asarray(counts, dtype=np.float64)
    if kind == "rbff":
        return rbff_score(rep, counts)
    if kind == "rbcsf":
        return rbcsf_score(rep, counts, alpha)
    raise ValueError(f"strategy {kind!r} has no score")


def select(strategy, profiles: ResourceProfiles, counts, k: int, rng,
           alpha: float | None = None) -> np.ndarray:
    """Choose this round's cohort of k client ids (sorted ascending).

    ``counts`` are cumulative selections through the previous round.
    ``alpha`` overrides ``strategy.alpha``; one of them must be set for RBCSF.
    """
    n = len(profiles)
    if len(counts) != n:
        raise ValueError("ledger and profiles cover different client sets")
    if not 1 <= k <= n:
        raise KTooLarge(f"cannot select {k} of {n} clients")
    if strategy.kind == "random":
        return np.sort(rng.choice(n, size=k, replace=False))
    if alpha is None:
        alpha = strategy.alpha
    if strategy.kind == "rbcsf" and alpha is None:
        raise ValueError("RBCSF needs alpha")
    scores = strategy_scores(strategy.kind, profiles, counts, alpha or 0.0,
                             strategy.normalize_reputation)
    return top_k(scores, k)
