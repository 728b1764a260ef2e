"""Binary-classification metrics, accumulated in 64-bit throughout."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import EmptyInput, LengthMismatch, SingleClass

LOGLOSS_EPS = 1e-7


@dataclass(frozen=True)
class MetricReport:
    auc: float
    logloss: float
    epoch: int = 0
    seconds: float = 0.0

    def __post_init__(self) -> None:
        if not 0.0 <= self.auc <= 1.0:
            raise ValueError(f"auc {self.auc} outside [0,1]")
        if self.logloss < 0.0:
            raise ValueError(f"logloss {self.logloss} negative")


def _check_pair(labels, scores) -> tuple[np.ndarray, np.ndarray]:
    y = np.asarray(labels, dtype=np.float64).ravel()
    s = np.asarray(scores, dtype=np.float64).ravel()
    if y.shape[0] != s.shape[0]:
        raise LengthMismatch(f"{y.shape[0]} labels vs {s.shape[0]} scores")
    if y.shape[0] == 0:
        raise EmptyInput("metrics need at least one example")
    return y, s


def logloss(labels, probs) -> float:
    """Mean negative log-likelihood with probabilities clipped to
    [eps, 1-eps], eps = 1e-7."""
    y, p = _check_pair(labels, probs)
    p = np.clip(p, LOGLOSS_EPS, 1.0 - LOGLOSS_EPS)
    return float(-np.mean(y * np.log(p) + (1.0 - y) * np.log1p(-p)))


def _average_ranks(scores: np.ndarray) -> np.ndarray:
    """1-based ranks with ties sharing their average rank."""
    order = np.argsort(scores, kind="mergesort")
    ranks = np.empty(scores.shape[0], dtype=np.float64)
    sorted_scores = scores[order]
    i = 0
    n = scores.shape[0]
    while i < n:
        j = i
        while j + 1 < n and sorted_scores[j + 1] == sorted_scores[i]:
            j += 1
        # positions i..j (0-based) share ranks i+1..j+1
        ranks[order[i : j + 1]] = 0.5 * (i + j) + 1.0
        i = j + 1
    return ranks


def auc(labels, scores) -> float:
    """Mann-Whitney rank form: (sum of positive ranks - P(P+1)/2) / (P*N),
    which equals P(score+ > score-) + 0.5 * P(tie)."""
    y, s = _check_pair(labels, scores)
    pos = y == 1.0
    p = int(pos.sum())
    n = int(y.shape[0] - p)
    if p == 0 or n == 0:
        raise SingleClass(f"need both classes, got {p} positives and {n} negatives")
    ranks = _average_ranks(s)
    rank_sum = float(ranks[pos].sum())
    return (rank_sum - p * (p + 1) / 2.0) / (p * n)
