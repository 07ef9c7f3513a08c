"""Fairness and ranking metrics."""

from __future__ import annotations

import numpy as np
from scipy.stats import rankdata


class AllZero(ValueError):
    pass


class SingleClass(ValueError):
    pass


def jfi(counts, n: int | None = None) -> float:
    """Jain's fairness index of selection counts over ``n`` clients."""
    c = np.asarray(counts, dtype=np.int64)
    if n is None:
        n = len(c)
    if n != len(c) or n < 1:
        raise ValueError("n must equal the number of counts")
    if (c < 0).any():
        raise ValueError("counts must be non-negative")
    total = int(c.sum())
    if total == 0:
        raise AllZero("JFI is undefined when nobody has been selected")
    # integer numerator/denominator keep scale invariance exact
    return total * total / (n * int((c * c).sum()))


def auc_binary(scores, labels) -> float:
    """Rank-sum AUC: P(random positive outscores random negative), ties count half."""
    s = np.asarray(scores, dtype=np.float64)
    y = np.asarray(labels).astype(bool)
    n_pos = int(y.sum())
    n_neg = len(y) - n_pos
    if n_pos == 0 or n_neg == 0:
        raise SingleClass("AUC needs both positive and negative samples")
    ranks = rankdata(s)
    u = ranks[y].sum() - n_pos * (n_pos + 1) / 2.0
    return float(u / (n_pos * n_neg))


def auc_multiclass(probs, labels) -> tuple[float, float]:
    """One-vs-rest AUC: (macro over classes present, micro over flattened pairs)."""
    p = np.asarray(probs, dtype=np.float64)
    y = np.asarray(labels, dtype=np.int64)
    present = np.unique(y)
    if len(present) < 2:
        raise SingleClass("multiclass AUC needs at least two classes in the labels")
    onehot = np.zeros_like(p, dtype=bool)
    onehot[np.arange(len(y)), y] = True
    macro = float(np.mean([auc_binary(p[:, c], onehot[:, c]) for c in present]))
    micro = auc_binary(p.ravel(), onehot.ravel())
    return macro, micro
