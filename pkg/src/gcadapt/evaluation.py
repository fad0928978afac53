"""Per-domain scoring and the aggregate continual-learning metrics.

The performance matrix is lower triangular: entry (i, j) with i >= j is the
score on domain j after adapting through domain i. Average Performance (AP)
is the mean of the last row; Average Forgetting (AF) is the mean of
last-row-minus-diagonal differences (positive = later adaptation improved
old domains). Tie conventions are pinned so results are bit-reproducible:
argmax ties go to the lowest class index, AUC ties count one half.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.stats import rankdata

from .errors import ContractError, MetricError

METRICS = ("accuracy", "macro_f1", "roc_auc")


@dataclass(frozen=True)
class PerformanceMatrix:
    values: np.ndarray     # (T, T) float64, NaN above the diagonal
    metric_name: str = "accuracy"

    def __post_init__(self):
        v = np.array(self.values, dtype=np.float64)
        if v.ndim != 2 or v.shape[0] != v.shape[1]:
            raise ContractError(f"PerformanceMatrix: expected square array, "
                                f"got {v.shape}")
        v[np.triu_indices_from(v, k=1)] = np.nan
        v.setflags(write=False)
        object.__setattr__(self, "values", v)
        if self.metric_name not in METRICS:
            raise ContractError(f"PerformanceMatrix: unknown metric "
                                f"{self.metric_name!r}")

    @classmethod
    def from_rows(cls, rows: list[list[float]], metric_name: str = "accuracy"
                  ) -> "PerformanceMatrix":
        """Build from ragged lower-triangular rows (row i has i+1 entries)."""
        t = len(rows)
        v = np.full((t, t), np.nan)
        for i, row in enumerate(rows):
            if len(row) != i + 1:
                raise ContractError(f"PerformanceMatrix: row {i} has {len(row)} "
                                    f"entries, expected {i + 1}")
            v[i, :i + 1] = row
        return cls(values=v, metric_name=metric_name)

    @property
    def num_domains(self) -> int:
        return self.values.shape[0]

    def rows(self) -> list[list[float]]:
        return [[float(self.values[i, j]) for j in range(i + 1)]
                for i in range(self.num_domains)]


def domain_score(probs, labels, metric: str) -> float:
    """Score predicted probabilities against labels with the named metric."""
    p = np.asarray(probs, dtype=np.float64)
    y = np.asarray(labels, dtype=np.int64)
    if p.ndim != 2 or y.shape != (p.shape[0],):
        raise ContractError(f"domain_score: probs {p.shape} vs labels {y.shape}")
    if y.size == 0:
        raise MetricError("domain_score: no labeled nodes to score")
    c = p.shape[1]
    if y.min() < 0 or y.max() >= c:
        raise ContractError(f"domain_score: labels outside [0, {c})")

    if metric == "accuracy":
        pred = p.argmax(axis=1)   # ties resolve to the lowest class index
        return float((pred == y).mean())

    if metric == "macro_f1":
        pred = p.argmax(axis=1)
        f1s = []
        for k in range(c):
            tp = float(((pred == k) & (y == k)).sum())
            fp = float(((pred == k) & (y != k)).sum())
            fn = float(((pred != k) & (y == k)).sum())
            denom = 2 * tp + fp + fn
            f1s.append(2 * tp / denom if denom > 0 else 0.0)
        return float(np.mean(f1s))

    if metric == "roc_auc":
        if c != 2:
            raise MetricError(f"domain_score: roc_auc requires C = 2, got C = {c}")
        pos, neg = y == 1, y == 0
        n_pos, n_neg = int(pos.sum()), int(neg.sum())
        if n_pos == 0 or n_neg == 0:
            raise MetricError("domain_score: roc_auc undefined with a single class")
        # Mann-Whitney statistic via average ranks; ties count one half.
        ranks = rankdata(p[:, 1], method="average")
        return float((ranks[pos].sum() - n_pos * (n_pos + 1) / 2.0) / (n_pos * n_neg))

    raise MetricError(f"domain_score: unknown metric {metric!r}")


def average_performance(m: PerformanceMatrix) -> float:
    """Mean of the last matrix row."""
    t = m.num_domains
    return float(m.values[t - 1, :t].mean())


def average_forgetting(m: PerformanceMatrix) -> float:
    """Mean over i < T of M[T, i] - M[i, i]; undefined for T = 1."""
    t = m.num_domains
    if t < 2:
        raise MetricError("average_forgetting: undefined for a single domain")
    last = m.values[t - 1, :t - 1]
    diag = np.diagonal(m.values)[:t - 1]
    return float((last - diag).mean())
