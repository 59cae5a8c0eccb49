"""Independent brute-force oracles for the fast implementations under test.

Everything here is deliberately naive: O(n^2) pair counting, exhaustive
threshold sweeps, direct covariance formulas, replayed bootstrap streams and
central finite differences. None of it shares code with the package.
"""

from __future__ import annotations

import math

import numpy as np


def auc_pair_count(y_true, y_score) -> float:
    """Count (positive, negative) pairs; ties worth 0.5."""
    y = np.asarray(y_true)
    s = np.asarray(y_score, dtype=float)
    pos = s[y == 1]
    neg = s[y == 0]
    total = 0.0
    for p in pos:
        for q in neg:
            if p > q:
                total += 1.0
            elif p == q:
                total += 0.5
    return total / (len(pos) * len(neg))


def sweep_points(y_true, y_score) -> list[tuple[float, float, float]]:
    """ROC points (fpr, tpr, threshold) by explicit counting per threshold."""
    y = np.asarray(y_true)
    s = np.asarray(y_score, dtype=float)
    n_pos = int((y == 1).sum())
    n_neg = int((y == 0).sum())
    thresholds = [math.inf] + sorted(set(s.tolist()), reverse=True)
    points = []
    for t in thresholds:
        predicted_pos = s >= t
        tp = int(np.sum(predicted_pos & (y == 1)))
        fp = int(np.sum(predicted_pos & (y == 0)))
        points.append((fp / n_neg, tp / n_pos, t))
    return points


def ap_exhaustive(y_true, y_score) -> float:
    """Step-interpolated AP from the explicit threshold sweep."""
    y = np.asarray(y_true)
    s = np.asarray(y_score, dtype=float)
    n_pos = int((y == 1).sum())
    ap = 0.0
    prev_recall = 0.0
    for t in sorted(set(s.tolist()), reverse=True):
        predicted_pos = s >= t
        tp = int(np.sum(predicted_pos & (y == 1)))
        fp = int(np.sum(predicted_pos & (y == 0)))
        recall = tp / n_pos
        precision = tp / (tp + fp)
        ap += (recall - prev_recall) * precision
        prev_recall = recall
    return ap


def eer_exhaustive(y_true, y_score) -> float:
    """First exact FPR == FNR sweep point, else linear interpolation at the
    strict sign change of (FPR - FNR)."""
    points = sweep_points(y_true, y_score)
    diffs = [fpr - (1.0 - tpr) for fpr, tpr, _ in points]
    for (fpr, tpr, _), d in zip(points, diffs):
        if d == 0.0:
            return fpr
    for k in range(1, len(points)):
        if diffs[k] > 0.0 and diffs[k - 1] < 0.0:
            f0, t0, _ = points[k - 1]
            f1, t1, _ = points[k]
            w = -diffs[k - 1] / (diffs[k] - diffs[k - 1])
            return f0 + w * (f1 - f0)
    raise AssertionError("no EER crossing found")


def fpr_at_tpr_exhaustive(y_true, y_score, target: float = 0.95) -> float:
    points = sweep_points(y_true, y_score)
    candidates = [fpr for fpr, tpr, _ in points if tpr >= target]
    return min(candidates)


def covariance_population(X) -> np.ndarray:
    """Direct (1/n) * sum (x - mu)(x - mu)^T."""
    X = np.asarray(X, dtype=float)
    mu = X.mean(axis=0)
    centered = X - mu
    return centered.T @ centered / X.shape[0]


def bootstrap_replay(y_true, y_score, metric_fn, n_boot, seed, level=0.95):
    """Replay the package's documented resampling streams independently.

    Replicate i draws from default_rng((seed, i)): positives' indices first,
    then negatives', each via integers(0, n, size=n).
    """
    y = np.asarray(y_true)
    s = np.asarray(y_score, dtype=float)
    pos = np.flatnonzero(y == 1)
    neg = np.flatnonzero(y == 0)
    stats = []
    for i in range(n_boot):
        rng = np.random.default_rng((seed, i))
        pi = pos[rng.integers(0, pos.size, pos.size)]
        ni = neg[rng.integers(0, neg.size, neg.size)]
        idx = np.concatenate((pi, ni))
        stats.append(metric_fn(y[idx], s[idx]))
    alpha = 1.0 - level
    lo, hi = np.percentile(stats, [100 * alpha / 2, 100 * (1 - alpha / 2)])
    return float(lo), float(hi)


def central_difference_grad(loss_fn, w, b, step=1e-4):
    """Central finite differences of loss_fn(w, b) in every coordinate."""
    w = np.asarray(w, dtype=float)
    grad_w = np.zeros_like(w)
    for j in range(w.size):
        wp = w.copy()
        wm = w.copy()
        wp[j] += step
        wm[j] -= step
        grad_w[j] = (loss_fn(wp, b) - loss_fn(wm, b)) / (2 * step)
    grad_b = (loss_fn(w, b + step) - loss_fn(w, b - step)) / (2 * step)
    return grad_w, grad_b


def normal_cdf(x: float) -> float:
    return 0.5 * (1.0 + math.erf(x / math.sqrt(2.0)))
