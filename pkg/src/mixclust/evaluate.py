"""Performance criteria for trained models: holdout likelihood, accuracy, cluster counts.

Functions taking a ``model`` accept anything with ``log_joint(dataset)``
returning an (N, K) matrix, so the synthetic generator can be scored the same
way as a fitted mixture.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .core import LN2, Dataset, SuffStats, normalize_log_rows
from .selection import SweepResult
from .trainers import accumulate_stats, e_step


@dataclass
class EvalReport:
    marginal_l_bits: float
    k_star: int
    effective_k: int
    holdout_l_bits: float
    class_acc: float | None
    runtime_s: float
    init_s: float = 0.0

    def __post_init__(self):
        if self.class_acc is not None and not 0.0 <= self.class_acc <= 1.0:
            raise ValueError("classification accuracy outside [0, 1]")


def holdout_logl(model, test: Dataset) -> float:
    """Average log2 probability per test case."""
    if test.N == 0:
        raise ValueError("empty test set")
    _, lognorm, _ = normalize_log_rows(model.log_joint(test))
    return float(lognorm.sum()) / (test.N * LN2)


def assign_classes(model, data: Dataset) -> np.ndarray:
    return np.argmax(model.log_joint(data), axis=1)


def confusion_from_assignments(assign: np.ndarray, labels: np.ndarray, n_clusters: int, n_true: int) -> np.ndarray:
    C = np.zeros((n_clusters, n_true), dtype=np.int64)
    np.add.at(C, (np.asarray(assign), np.asarray(labels)), 1)
    return C


def confusion(model, test: Dataset, n_true: int | None = None) -> np.ndarray:
    """Rows are learned clusters, columns true classes, entries case counts."""
    if test.labels is None:
        raise ValueError("confusion matrix needs true labels")
    n_true = int(test.labels.max()) + 1 if n_true is None else n_true
    lj = model.log_joint(test)
    return confusion_from_assignments(np.argmax(lj, axis=1), test.labels, lj.shape[1], n_true)


def classification_accuracy(C: np.ndarray) -> float:
    """Map each learned cluster to its majority true class (many-to-one) and score."""
    C = np.asarray(C)
    total = C.sum()
    if total == 0:
        raise ValueError("empty confusion matrix")
    return float(C.max(axis=1).sum()) / float(total)


def effective_cluster_count(masses) -> int:
    """Clusters whose fractional mass is at least one case.

    Accepts a SuffStats, an (N, K) responsibility matrix, a vector of masses
    or a vector of hard assignments with ``np.integer`` dtype.
    """
    if isinstance(masses, SuffStats):
        m = masses.mass
    else:
        m = np.asarray(masses)
        if m.ndim == 2:
            m = m.sum(axis=0)
        elif np.issubdtype(m.dtype, np.integer):
            m = np.bincount(m)
    return int(np.count_nonzero(m >= 1.0))


def evaluate_sweep(sweep: SweepResult, train: Dataset, test: Dataset) -> EvalReport:
    """Score the K* model of a sweep on every criterion."""
    rec = sweep.best
    resp, _ = e_step(rec.model, train)
    acc = None
    if test.labels is not None:
        acc = classification_accuracy(confusion(rec.model, test))
    return EvalReport(
        marginal_l_bits=rec.cs_bits,
        k_star=sweep.k_star,
        effective_k=effective_cluster_count(accumulate_stats(resp, train)),
        holdout_l_bits=holdout_logl(rec.model, test),
        class_acc=acc,
        runtime_s=rec.fit.seconds,
        init_s=rec.init_seconds,
    )
