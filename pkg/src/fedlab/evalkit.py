"""Binary-classification metrics and cross-seed aggregation."""

from __future__ import annotations

import math
import statistics
from dataclasses import dataclass, field

import numpy as np

from .errors import ConfigError, EmptyEvaluationError, ShapeError, UndefinedMetricError

METRIC_ORDER = ("f1_binary", "ac", "precision", "recall", "f1_weighted", "accuracy", "auc",
                "mcc")


@dataclass(frozen=True)
class ConfusionCounts:
    tp: int
    fp: int
    tn: int
    fn: int

    @property
    def total(self) -> int:
        return self.tp + self.fp + self.tn + self.fn


def _check(probs, labels):
    probs = np.asarray(probs, dtype=np.float64).reshape(-1)
    labels = np.asarray(labels).reshape(-1).astype(np.int64)
    if probs.shape != labels.shape:
        raise ShapeError(f"{probs.size} scores for {labels.size} labels")
    return probs, labels


def confusion(probs, labels, threshold: float = 0.5) -> ConfusionCounts:
    """Counts with ``prob >= threshold`` predicted positive."""
    probs, labels = _check(probs, labels)
    pred = probs >= threshold
    pos = labels == 1
    return ConfusionCounts(tp=int(np.sum(pred & pos)), fp=int(np.sum(pred & ~pos)),
                           tn=int(np.sum(~pred & ~pos)), fn=int(np.sum(~pred & pos)))


def _ratio(a, b) -> float:
    return a / b if b else 0.0


def core_metrics(c: ConfusionCounts) -> dict:
    if c.total == 0:
        raise EmptyEvaluationError("no samples were evaluated")
    precision = _ratio(c.tp, c.tp + c.fp)
    recall = _ratio(c.tp, c.tp + c.fn)
    f1 = _ratio(2 * c.tp, 2 * c.tp + c.fp + c.fn)
    denom = (c.tp + c.fp) * (c.tp + c.fn) * (c.tn + c.fp) * (c.tn + c.fn)
    mcc = (c.tp * c.tn - c.fp * c.fn) / math.sqrt(denom) if denom else 0.0
    return {"f1_binary": f1, "precision": precision, "recall": recall,
            "accuracy": (c.tp + c.tn) / c.total, "mcc": mcc}


def weighted_f1(probs, labels, threshold: float = 0.5) -> float:
    """Support-weighted mean of the per-class F1 scores."""
    probs, labels = _check(probs, labels)
    if labels.size == 0:
        raise EmptyEvaluationError("no samples were evaluated")
    c = confusion(probs, labels, threshold)
    f1_pos = _ratio(2 * c.tp, 2 * c.tp + c.fp + c.fn)
    # class 0 as the positive class: its tp is our tn, fp/fn swap
    f1_neg = _ratio(2 * c.tn, 2 * c.tn + c.fn + c.fp)
    n_pos = c.tp + c.fn
    n_neg = c.tn + c.fp
    return (n_pos * f1_pos + n_neg * f1_neg) / c.total


def auc_rank(probs, labels) -> float:
    """Mann-Whitney AUC: P(score_pos > score_neg) with ties counting one half."""
    probs, labels = _check(probs, labels)
    n_pos = int(np.sum(labels == 1))
    n_neg = labels.size - n_pos
    if n_pos == 0 or n_neg == 0:
        raise UndefinedMetricError("AUC needs both classes present")
    order = np.argsort(probs, kind="mergesort")
    sorted_p = probs[order]
    ranks = np.empty(probs.size)
    # average ranks over tie groups
    i = 0
    while i < sorted_p.size:
        j = i
        while j + 1 < sorted_p.size and sorted_p[j + 1] == sorted_p[i]:
            j += 1
        ranks[order[i:j + 1]] = 0.5 * (i + j) + 1.0
        i = j + 1
    u = ranks[labels == 1].sum() - n_pos * (n_pos + 1) / 2.0
    return float(u / (n_pos * n_neg))


def chance_f1(test_labels, train_pos_rate: float, trials: int = 100_000,
              rng: np.random.Generator | None = None) -> float:
    """Monte Carlo mean F1 of a coin that says positive with ``train_pos_rate``.

    Only the (tp, fp) counts matter, so each trial draws two binomials instead of
    one coin per sample.
    """
    if trials < 1:
        raise ConfigError("trials must be >= 1")
    labels = np.asarray(test_labels).reshape(-1)
    P = int(np.sum(labels == 1))
    N = labels.size - P
    if P == 0:
        return 0.0
    rng = rng if rng is not None else np.random.default_rng(0)
    tp = rng.binomial(P, train_pos_rate, size=trials)
    fp = rng.binomial(N, train_pos_rate, size=trials)
    return float(np.mean(2.0 * tp / (P + tp + fp)))


def above_chance(f1: float, chance: float) -> float:
    return f1 - chance


def evaluate(probs, labels, train_pos_rate: float, threshold: float = 0.5,
             chance_trials: int = 100_000, rng: np.random.Generator | None = None) -> dict:
    """Every reported metric for one run, as plain floats (AUC is None if undefined)."""
    probs, labels = _check(probs, labels)
    out = core_metrics(confusion(probs, labels, threshold))
    out["f1_weighted"] = weighted_f1(probs, labels, threshold)
    try:
        out["auc"] = auc_rank(probs, labels)
    except UndefinedMetricError:
        out["auc"] = None
    out["chance_f1"] = chance_f1(labels, train_pos_rate, chance_trials, rng)
    out["ac"] = above_chance(out["f1_binary"], out["chance_f1"])
    return out


@dataclass
class MetricsSummary:
    """Per-seed metric values with mean and sample standard deviation."""

    values: dict = field(default_factory=dict)   # metric -> list over seeds

    @property
    def n(self) -> int:
        return max((len(v) for v in self.values.values()), default=0)

    def mean(self, metric: str) -> float | None:
        vals = [v for v in self.values[metric] if v is not None]
        return statistics.fmean(vals) if vals else None

    def std(self, metric: str) -> float | None:
        vals = [v for v in self.values[metric] if v is not None]
        return statistics.stdev(vals) if len(vals) >= 2 else None

    def to_dict(self) -> dict:
        return {m: {"values": list(v), "mean": self.mean(m), "std": self.std(m)}
                for m, v in self.values.items()}


def aggregate_seeds(per_seed: list[dict]) -> MetricsSummary:
    if not per_seed:
        raise ConfigError("nothing to aggregate")
    keys = list(per_seed[0])
    return MetricsSummary({k: [d.get(k) for d in per_seed] for k in keys})
