"""Evaluation metrics and fold-aggregated reports.

All metrics are pure functions of arrays and invariant to sample order.
Regression predictives are Gaussian ``(mean, variance)`` pairs at the
observation level (linearized variance plus observation noise);
classification predictives are probabilities.
"""

import json
from dataclasses import dataclass, field

import numpy as np
import scipy.special
import scipy.stats

from .errors import ShapeMismatch, SingleClass


@dataclass(frozen=True)
class GaussianPredictive:
    """Per-sample Gaussian predictive distributions."""

    mean: np.ndarray
    var: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "mean", np.asarray(self.mean, dtype=np.float64))
        object.__setattr__(self, "var", np.asarray(self.var, dtype=np.float64))
        if self.mean.shape != self.var.shape:
            raise ShapeMismatch("mean and var must have identical shapes")
        if np.any(self.var <= 0):
            raise ValueError("predictive variances must be positive")


@dataclass(frozen=True)
class BernoulliPredictive:
    """Per-sample event probabilities."""

    prob: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "prob", np.asarray(self.prob, dtype=np.float64))
        if np.any((self.prob < 0) | (self.prob > 1)):
            raise ValueError("probabilities must lie in [0, 1]")


def probit_adjusted_probability(latent_mean, latent_var):
    """Mean of a logistic-Gaussian, via the probit approximation
    ``sigmoid(mean / sqrt(1 + pi * var / 8))``."""
    latent_mean = np.asarray(latent_mean, dtype=np.float64)
    latent_var = np.asarray(latent_var, dtype=np.float64)
    return scipy.special.expit(latent_mean / np.sqrt(1.0 + np.pi * latent_var / 8.0))


def nll(pred, y):
    """Average negative log-likelihood of targets under the predictives."""
    y = np.asarray(y, dtype=np.float64)
    if isinstance(pred, GaussianPredictive):
        if pred.mean.shape != y.shape:
            raise ShapeMismatch(f"predictions {pred.mean.shape} vs targets {y.shape}")
        return float(np.mean(
            0.5 * np.log(2.0 * np.pi * pred.var) + (y - pred.mean) ** 2 / (2.0 * pred.var)
        ))
    if isinstance(pred, BernoulliPredictive):
        if pred.prob.shape != y.shape:
            raise ShapeMismatch(f"predictions {pred.prob.shape} vs targets {y.shape}")
        p = pred.prob
        with np.errstate(divide="ignore"):
            ll = np.where(y == 1.0, np.log(p), np.log1p(-p))
        return float(-np.mean(ll))
    raise TypeError(f"unsupported predictive type {type(pred)!r}")


def rmse(pred_mean, y):
    pred_mean = np.asarray(pred_mean, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    if pred_mean.shape != y.shape:
        raise ShapeMismatch(f"predictions {pred_mean.shape} vs targets {y.shape}")
    return float(np.sqrt(np.mean((pred_mean - y) ** 2)))


def _check_binary(scores, labels):
    scores = np.asarray(scores, dtype=np.float64)
    labels = np.asarray(labels, dtype=np.float64)
    if scores.shape != labels.shape:
        raise ShapeMismatch(f"scores {scores.shape} vs labels {labels.shape}")
    pos = labels == 1.0
    if pos.all() or not pos.any():
        raise SingleClass("both classes must be present")
    return scores, labels, pos


def auroc(scores, labels):
    """Area under the ROC curve via the tie-corrected Mann-Whitney statistic."""
    scores, labels, pos = _check_binary(scores, labels)
    ranks = scipy.stats.rankdata(scores)  # average ranks on ties
    n_pos = int(pos.sum())
    n_neg = labels.shape[0] - n_pos
    u = float(ranks[pos].sum()) - n_pos * (n_pos + 1) / 2.0
    return u / (n_pos * n_neg)


def auprc(scores, labels):
    """Area under the precision-recall curve by step-wise integration.

    Samples with equal scores enter as one block, so the curve (and area)
    do not depend on their input order.
    """
    scores, labels, pos = _check_binary(scores, labels)
    order = np.argsort(-scores, kind="stable")
    s = scores[order]
    l = labels[order]
    n_pos = int(pos.sum())
    area = 0.0
    tp = 0.0
    seen = 0.0
    i = 0
    n = s.shape[0]
    while i < n:
        j = i
        while j < n and s[j] == s[i]:
            j += 1
        block_pos = float(l[i:j].sum())
        tp_new = tp + block_pos
        seen_new = seen + (j - i)
        recall_step = (tp_new - tp) / n_pos
        precision = tp_new / seen_new
        area += recall_step * precision
        tp, seen = tp_new, seen_new
        i = j
    return float(area)


def ece(probs, labels, bins=10):
    """Expected calibration error over equal-width probability bins."""
    probs = np.asarray(probs, dtype=np.float64)
    labels = np.asarray(labels, dtype=np.float64)
    if probs.shape != labels.shape:
        raise ShapeMismatch(f"probs {probs.shape} vs labels {labels.shape}")
    idx = np.minimum((probs * bins).astype(int), bins - 1)
    total = 0.0
    n = probs.shape[0]
    for b in range(bins):
        mask = idx == b
        if not mask.any():
            continue
        conf = probs[mask].mean()
        acc = labels[mask].mean()
        total += mask.sum() / n * abs(acc - conf)
    return float(total)


def brier_root(probs, labels):
    """Root Brier score, ``sqrt(mean((p - y)^2))``."""
    probs = np.asarray(probs, dtype=np.float64)
    labels = np.asarray(labels, dtype=np.float64)
    if probs.shape != labels.shape:
        raise ShapeMismatch(f"probs {probs.shape} vs labels {labels.shape}")
    return float(np.sqrt(np.mean((probs - labels) ** 2)))


QUANTILE_LEVELS = np.round(np.arange(0.05, 0.951, 0.05), 2)


def quantile_calibration(pred_means, pred_stds, y, levels=QUANTILE_LEVELS):
    """Mean absolute gap between nominal and empirical quantile coverage.

    For each level q, the empirical coverage is the fraction of targets at
    or below the predictive q-quantile ``mean + std * z_q``.
    """
    pred_means = np.asarray(pred_means, dtype=np.float64)
    pred_stds = np.asarray(pred_stds, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    if not (pred_means.shape == pred_stds.shape == y.shape):
        raise ShapeMismatch("means, stds, and targets must share a shape")
    gaps = []
    for q in levels:
        z = scipy.stats.norm.ppf(q)
        coverage = np.mean(y <= pred_means + pred_stds * z)
        gaps.append(abs(coverage - q))
    return float(np.mean(gaps))


REGRESSION_METRICS = ("nll", "rmse", "quantile_calib")
CLASSIFICATION_METRICS = ("nll", "auroc", "auprc", "ece", "brier_root")


@dataclass
class MetricReport:
    """Per-fold metric values with mean and standard error aggregates."""

    task: str
    per_fold: dict = field(default_factory=dict)

    def add_fold(self, values):
        for name, value in values.items():
            self.per_fold.setdefault(name, []).append(float(value))

    @property
    def n_folds(self):
        return max((len(v) for v in self.per_fold.values()), default=0)

    def mean(self, name):
        return float(np.mean(self.per_fold[name]))

    def stderr(self, name):
        vals = self.per_fold[name]
        if len(vals) < 2:
            return 0.0
        return float(np.std(vals, ddof=1) / np.sqrt(len(vals)))

    def to_dict(self):
        return {
            "task": self.task,
            "n_folds": self.n_folds,
            "per_fold": {k: list(v) for k, v in self.per_fold.items()},
            "mean": {k: self.mean(k) for k in self.per_fold},
            "stderr": {k: self.stderr(k) for k in self.per_fold},
        }

    def to_json(self):
        return json.dumps(self.to_dict(), indent=1, sort_keys=True)

    def format_table(self):
        lines = [f"{'metric':<16}{'mean':>12}{'stderr':>12}"]
        for name in sorted(self.per_fold):
            lines.append(f"{name:<16}{self.mean(name):>12.4f}{self.stderr(name):>12.4f}")
        return "\n".join(lines)


def retention_table(confidence, correctness):
    """Rolling metric over samples sorted by decreasing confidence.

    Returns rows ``(fraction_retained, rolling_mean_correctness)``; for
    classification ``correctness`` is 0/1 accuracy, for regression a
    squared error (the caller takes the root).
    """
    confidence = np.asarray(confidence, dtype=np.float64)
    correctness = np.asarray(correctness, dtype=np.float64)
    order = np.argsort(-confidence, kind="stable")
    sorted_vals = correctness[order]
    n = sorted_vals.shape[0]
    rolling = np.cumsum(sorted_vals) / np.arange(1, n + 1)
    fraction = np.arange(1, n + 1) / n
    return fraction, rolling
