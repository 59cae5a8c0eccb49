"""Rank-based detection metrics and bootstrap confidence intervals.

Every function takes labels first (1 = positive) and raw scores second.
Scores are compared by order only, so all metrics here are invariant under
strictly increasing score transforms; raw logits and probabilities give
identical results.

Conventions, fixed project-wide:

* AUC counts a tied (positive, negative) pair as 0.5, i.e. the midrank
  Mann-Whitney statistic. This is the one tie rule satisfying
  ``auc(s) + auc(-s) == 1``.
* AP uses step interpolation over thresholds at unique descending scores,
  ties grouped at one threshold.
* The ROC sweep starts at the ``+inf`` sentinel point (0, 0) and ends at
  (1, 1); both coordinates are monotone non-decreasing.
* EER takes the first sweep point where FPR == FNR exactly, otherwise the
  linear interpolation between the two adjacent points where FPR - FNR
  changes sign.
* FPR@TPR uses the conservative step rule: the smallest FPR among sweep
  points whose TPR already reaches the target, no interpolation.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np

from .errors import NoPositivesError, SingleClassError
from .validation import as_binary_labels, as_float_vector


def _checked(y_true, y_score) -> tuple[np.ndarray, np.ndarray]:
    s = as_float_vector(y_score)
    y = as_binary_labels(y_true, n=s.shape[0])
    return y, s


def _require_both_classes(y: np.ndarray) -> None:
    if not ((y == 1).any() and (y == 0).any()):
        raise SingleClassError("need at least one positive and one negative")


def _midranks(s: np.ndarray) -> np.ndarray:
    """1-based ranks with ties assigned the group average rank."""
    order = np.argsort(s, kind="mergesort")
    sorted_s = s[order]
    edges = np.concatenate(
        ([0], np.flatnonzero(np.diff(sorted_s)) + 1, [s.size])
    )
    counts = np.diff(edges)
    # average of 1-based positions edges[i]+1 .. edges[i+1]
    avg = (edges[:-1] + edges[1:] + 1) / 2.0
    ranks = np.empty(s.size, dtype=np.float64)
    ranks[order] = np.repeat(avg, counts)
    return ranks


def roc_auc(y_true, y_score) -> float:
    """Mann-Whitney AUC with 0.5 credit per tied pair, O(n log n)."""
    y, s = _checked(y_true, y_score)
    _require_both_classes(y)
    n_pos = int((y == 1).sum())
    n_neg = y.size - n_pos
    rank_sum = _midranks(s)[y == 1].sum()
    return float((rank_sum - n_pos * (n_pos + 1) / 2.0) / (n_pos * n_neg))


def _sweep(y: np.ndarray, s: np.ndarray) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Cumulative (tp, fp, threshold) at unique descending scores."""
    order = np.argsort(-s, kind="mergesort")
    y_sorted = y[order]
    s_sorted = s[order]
    last = np.concatenate((np.flatnonzero(np.diff(s_sorted)), [y.size - 1]))
    tp = np.cumsum(y_sorted)[last].astype(np.float64)
    fp = (last + 1) - tp
    return tp, fp, s_sorted[last]


def roc_curve(y_true, y_score) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """ROC sweep as (fpr, tpr, thresholds), sentinel +inf first."""
    y, s = _checked(y_true, y_score)
    _require_both_classes(y)
    n_pos = float((y == 1).sum())
    n_neg = float(y.size - n_pos)
    tp, fp, thr = _sweep(y, s)
    fpr = np.concatenate(([0.0], fp / n_neg))
    tpr = np.concatenate(([0.0], tp / n_pos))
    thresholds = np.concatenate(([np.inf], thr))
    return fpr, tpr, thresholds


def average_precision(y_true, y_score) -> float:
    """Step-interpolated AP over descending unique-score thresholds."""
    y, s = _checked(y_true, y_score)
    n_pos = int((y == 1).sum())
    if n_pos == 0:
        raise NoPositivesError("average precision needs a positive sample")
    tp, fp, _ = _sweep(y, s)
    recall = tp / n_pos
    precision = tp / (tp + fp)
    prev_recall = np.concatenate(([0.0], recall[:-1]))
    return float(np.sum((recall - prev_recall) * precision))


def eer(y_true, y_score) -> float:
    """Equal error rate: the operating point where FPR == FNR."""
    fpr, tpr, _ = roc_curve(y_true, y_score)
    fnr = 1.0 - tpr
    diff = fpr - fnr  # monotone non-decreasing along the sweep
    exact = np.flatnonzero(diff == 0.0)
    if exact.size:
        return float(fpr[exact[0]])
    k = int(np.flatnonzero(diff > 0.0)[0])  # diff[0] == -1, diff[-1] == 1
    t = -diff[k - 1] / (diff[k] - diff[k - 1])
    return float(fpr[k - 1] + t * (fpr[k] - fpr[k - 1]))


def fpr_at_tpr(y_true, y_score, target_tpr: float = 0.95) -> float:
    """Smallest FPR among ROC points with TPR >= target (step rule)."""
    if not 0.0 < target_tpr <= 1.0:
        raise ValueError("target_tpr must be in (0, 1]")
    fpr, tpr, _ = roc_curve(y_true, y_score)
    reachable = fpr[tpr >= target_tpr]  # TPR hits 1.0 at the last point
    return float(reachable.min())


def fpr_at_95(y_true, y_score) -> float:
    return fpr_at_tpr(y_true, y_score, 0.95)


METRICS: dict[str, Callable] = {
    "auc": roc_auc,
    "ap": average_precision,
    "eer": eer,
    "fpr_at_95": fpr_at_95,
}


def resolve_metric(metric) -> Callable:
    if callable(metric):
        return metric
    try:
        return METRICS[metric]
    except KeyError:
        raise ValueError(f"unknown metric id {metric!r}") from None


# --------------------------------------------------------------------------
# aggregation
# --------------------------------------------------------------------------

def mean_by_group(values, groups) -> tuple[list, np.ndarray]:
    """Arithmetic mean of values per group, groups in first-seen order."""
    vals = as_float_vector(values)
    keys: list = []
    index: dict = {}
    sums: list[float] = []
    counts: list[int] = []
    for v, g in zip(vals, groups):
        i = index.get(g)
        if i is None:
            index[g] = len(keys)
            keys.append(g)
            sums.append(float(v))
            counts.append(1)
        else:
            sums[i] += float(v)
            counts[i] += 1
    means = np.array(sums, dtype=np.float64) / np.array(counts, dtype=np.float64)
    return keys, means


# --------------------------------------------------------------------------
# bootstrap
# --------------------------------------------------------------------------

def _replicate_rng(seed: int, replicate: int) -> np.random.Generator:
    # one independent stream per replicate: stream index = replicate index
    return np.random.default_rng((int(seed), int(replicate)))


def _stratified_resample(
    rng: np.random.Generator, pos: np.ndarray, neg: np.ndarray
) -> np.ndarray:
    """Resample positives and negatives separately, preserving class counts.

    Positives are drawn first, then negatives, each via
    ``rng.integers(0, n, size=n)``; this draw order is part of the
    deterministic contract.
    """
    pi = pos[rng.integers(0, pos.size, pos.size)]
    ni = neg[rng.integers(0, neg.size, neg.size)]
    return np.concatenate((pi, ni))


def bootstrap_ci(
    y_true,
    y_score,
    metric="auc",
    n_boot: int = 1000,
    seed: int = 0,
    level: float = 0.95,
) -> tuple[float, float]:
    """Percentile bootstrap interval over class-stratified video resamples.

    Replicate ``i`` uses the generator ``default_rng((seed, i))``, so results
    are deterministic given the seed and safe to compute concurrently.
    """
    if not 0.0 < level < 1.0:
        raise ValueError("level must be in (0, 1)")
    y, s = _checked(y_true, y_score)
    _require_both_classes(y)
    fn = resolve_metric(metric)
    pos = np.flatnonzero(y == 1)
    neg = np.flatnonzero(y == 0)
    stats = np.empty(n_boot, dtype=np.float64)
    for i in range(n_boot):
        idx = _stratified_resample(_replicate_rng(seed, i), pos, neg)
        stats[i] = fn(y[idx], s[idx])
    alpha = 1.0 - level
    lo, hi = np.percentile(stats, [100.0 * alpha / 2.0, 100.0 * (1.0 - alpha / 2.0)])
    return float(lo), float(hi)


def bootstrap_mean_of_folds(
    fold_sets: Sequence[tuple[np.ndarray, np.ndarray]],
    metric="auc",
    n_boot: int = 1000,
    seed: int = 0,
    level: float = 0.95,
) -> tuple[float, float]:
    """CI of the mean-over-folds statistic, resampling each fold's videos.

    Within one replicate the folds are resampled in order from the same
    replicate stream; the statistic is the unweighted mean of the per-fold
    metric values.
    """
    if not fold_sets:
        raise ValueError("need at least one fold")
    fn = resolve_metric(metric)
    prepared = []
    for y_true, y_score in fold_sets:
        y, s = _checked(y_true, y_score)
        _require_both_classes(y)
        prepared.append((y, s, np.flatnonzero(y == 1), np.flatnonzero(y == 0)))
    stats = np.empty(n_boot, dtype=np.float64)
    for i in range(n_boot):
        rng = _replicate_rng(seed, i)
        vals = []
        for y, s, pos, neg in prepared:
            idx = _stratified_resample(rng, pos, neg)
            vals.append(fn(y[idx], s[idx]))
        stats[i] = float(np.mean(vals))
    alpha = 1.0 - level
    lo, hi = np.percentile(stats, [100.0 * alpha / 2.0, 100.0 * (1.0 - alpha / 2.0)])
    return float(lo), float(hi)


# --------------------------------------------------------------------------
# reports
# --------------------------------------------------------------------------

@dataclass(frozen=True)
class MetricReport:
    """Point metrics plus percentile CIs for AUC and AP."""

    auc: float
    ap: float
    eer: float
    fpr_at_95: float
    ci: dict[str, tuple[float, float]]
    n_boot: int
    seed: int
    level: float
    n: int
    unit: str

    def to_json_dict(self) -> dict:
        return {
            "schema": "featprobe.metric_report.v1",
            "unit": self.unit,
            "n": self.n,
            "auc": self.auc,
            "ap": self.ap,
            "eer": self.eer,
            "fpr_at_95": self.fpr_at_95,
            "ci": {k: [lo, hi] for k, (lo, hi) in self.ci.items()},
            "n_boot": self.n_boot,
            "seed": self.seed,
            "level": self.level,
        }


def compute_report(
    y_true,
    y_score,
    unit: str = "video",
    n_boot: int = 1000,
    seed: int = 0,
    level: float = 0.95,
) -> MetricReport:
    """All four headline metrics with bootstrap CIs for AUC and AP."""
    y, s = _checked(y_true, y_score)
    ci = {}
    if n_boot > 0:
        ci["auc"] = bootstrap_ci(y, s, "auc", n_boot=n_boot, seed=seed, level=level)
        ci["ap"] = bootstrap_ci(y, s, "ap", n_boot=n_boot, seed=seed, level=level)
    return MetricReport(
        auc=roc_auc(y, s),
        ap=average_precision(y, s),
        eer=eer(y, s),
        fpr_at_95=fpr_at_95(y, s),
        ci=ci,
        n_boot=n_boot,
        seed=seed,
        level=level,
        n=int(y.size),
        unit=unit,
    )
