"""Classification metrics and the statistical-significance toolkit.

Conventions, fixed here and relied on by tests:
  * per-class F1 with 0/0 -> 0; precision/recall/F1 macro-average over all
    classes, AUROC macro-averages only classes present in y_true (absent
    classes are flagged)
  * AUROC uses the rank statistic with 0.5 credit for ties
  * paired t uses sample sd (k-1); two-sided p through the regularized
    incomplete beta (continued fraction), abs error < 1e-10
  * bootstrap CIs are percentile, deterministic given seed
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Sequence

import numpy as np

from cascadet.data.types import N_CLASSES


@dataclass
class MetricsRow:
    accuracy: float
    precision_macro: float
    recall_macro: float
    f1_macro: float
    auroc_macro: float
    confusion: np.ndarray
    absent_classes: tuple[int, ...] = ()

    def as_dict(self) -> dict:
        return {
            "accuracy": self.accuracy,
            "precision_macro": self.precision_macro,
            "recall_macro": self.recall_macro,
            "f1_macro": self.f1_macro,
            "auroc_macro": self.auroc_macro,
        }


def _binary_auroc(scores: np.ndarray, positives: np.ndarray) -> float:
    """Rank-based AUROC (Mann-Whitney with midranks for ties)."""
    order = np.argsort(scores, kind="mergesort")
    sorted_scores = scores[order]
    ranks = np.empty(len(scores), dtype=np.float64)
    i = 0
    while i < len(scores):
        j = i
        while j + 1 < len(scores) and sorted_scores[j + 1] == sorted_scores[i]:
            j += 1
        ranks[order[i : j + 1]] = 0.5 * (i + j) + 1.0
        i = j + 1
    n_pos = int(positives.sum())
    n_neg = len(scores) - n_pos
    if n_pos == 0 or n_neg == 0:
        raise ValueError("AUROC needs both positive and negative samples")
    rank_sum = ranks[positives].sum()
    return float((rank_sum - n_pos * (n_pos + 1) / 2.0) / (n_pos * n_neg))


def compute_metrics(
    y_true: np.ndarray, y_prob: np.ndarray, y_pred: np.ndarray | None = None
) -> MetricsRow:
    """Accuracy, macro P/R/F1, macro one-vs-rest AUROC, and the confusion matrix.

    y_prob rows must sum to 1 (tolerance 1e-6). y_pred defaults to the
    probability argmax (ties toward the lower class index).
    """
    y_true = np.asarray(y_true, dtype=np.int64)
    y_prob = np.asarray(y_prob, dtype=np.float64)
    if y_prob.ndim != 2 or y_prob.shape[1] != N_CLASSES:
        raise ValueError(f"y_prob must be [n x {N_CLASSES}]")
    if y_prob.shape[0] != y_true.shape[0]:
        raise ValueError("y_true and y_prob lengths differ")
    if np.max(np.abs(y_prob.sum(axis=1) - 1.0)) > 1e-6:
        raise ValueError("y_prob rows must sum to 1 within 1e-6")
    if y_pred is None:
        y_pred = np.argmax(y_prob, axis=1)
    y_pred = np.asarray(y_pred, dtype=np.int64)

    confusion = np.zeros((N_CLASSES, N_CLASSES), dtype=np.int64)
    np.add.at(confusion, (y_true, y_pred), 1)
    total = confusion.sum()
    accuracy = float(np.trace(confusion) / total)

    precisions, recalls, f1s = [], [], []
    for c in range(N_CLASSES):
        tp = confusion[c, c]
        fp = confusion[:, c].sum() - tp
        fn = confusion[c, :].sum() - tp
        precision = tp / (tp + fp) if (tp + fp) > 0 else 0.0
        recall = tp / (tp + fn) if (tp + fn) > 0 else 0.0
        f1 = 2 * precision * recall / (precision + recall) if (precision + recall) > 0 else 0.0
        precisions.append(precision)
        recalls.append(recall)
        f1s.append(f1)

    present = np.unique(y_true)
    absent = tuple(int(c) for c in range(N_CLASSES) if c not in present)
    aurocs = [
        _binary_auroc(y_prob[:, c], y_true == c) for c in range(N_CLASSES) if c in present
    ]
    return MetricsRow(
        accuracy=accuracy,
        precision_macro=float(np.mean(precisions)),
        recall_macro=float(np.mean(recalls)),
        f1_macro=float(np.mean(f1s)),
        auroc_macro=float(np.mean(aurocs)),
        confusion=confusion,
        absent_classes=absent,
    )


# ---------------------------------------------------------------------------
# Student-t machinery: regularized incomplete beta via continued fraction.
# ---------------------------------------------------------------------------

_BETACF_MAX_ITER = 300
_BETACF_EPS = 1e-15
_TINY = 1e-300


def _betacf(a: float, b: float, x: float) -> float:
    qab, qap, qam = a + b, a + 1.0, a - 1.0
    c = 1.0
    d = 1.0 - qab * x / qap
    if abs(d) < _TINY:
        d = _TINY
    d = 1.0 / d
    h = d
    for m in range(1, _BETACF_MAX_ITER + 1):
        m2 = 2 * m
        aa = m * (b - m) * x / ((qam + m2) * (a + m2))
        d = 1.0 + aa * d
        if abs(d) < _TINY:
            d = _TINY
        c = 1.0 + aa / c
        if abs(c) < _TINY:
            c = _TINY
        d = 1.0 / d
        h *= d * c
        aa = -(a + m) * (qab + m) * x / ((a + m2) * (qap + m2))
        d = 1.0 + aa * d
        if abs(d) < _TINY:
            d = _TINY
        c = 1.0 + aa / c
        if abs(c) < _TINY:
            c = _TINY
        d = 1.0 / d
        delta = d * c
        h *= delta
        if abs(delta - 1.0) < _BETACF_EPS:
            return h
    raise RuntimeError("incomplete beta continued fraction did not converge")


def regularized_incomplete_beta(a: float, b: float, x: float) -> float:
    """I_x(a, b) for a, b > 0 and x in [0, 1]."""
    if a <= 0 or b <= 0:
        raise ValueError("incomplete beta needs a, b > 0")
    if x < 0 or x > 1:
        raise ValueError("incomplete beta needs x in [0, 1]")
    if x == 0.0:
        return 0.0
    if x == 1.0:
        return 1.0
    ln_front = (
        math.lgamma(a + b)
        - math.lgamma(a)
        - math.lgamma(b)
        + a * math.log(x)
        + b * math.log1p(-x)
    )
    front = math.exp(ln_front)
    if x < (a + 1.0) / (a + b + 2.0):
        return front * _betacf(a, b, x) / a
    return 1.0 - front * _betacf(b, a, 1.0 - x) / b


def student_t_cdf(t: float, dof: float) -> float:
    """P(T <= t) for Student's t with dof degrees of freedom."""
    if dof <= 0:
        raise ValueError("degrees of freedom must be positive")
    if math.isinf(t):
        return 1.0 if t > 0 else 0.0
    x = dof / (dof + t * t)
    tail = 0.5 * regularized_incomplete_beta(dof / 2.0, 0.5, x)
    return 1.0 - tail if t >= 0 else tail


def student_t_two_sided_p(t: float, dof: float) -> float:
    if math.isinf(t):
        return 0.0
    return regularized_incomplete_beta(dof / 2.0, 0.5, dof / (dof + t * t))


@dataclass(frozen=True)
class TTestResult:
    t_statistic: float
    p_value: float
    dof: int
    degenerate: bool = False


def paired_t_test(a: Sequence[float], b: Sequence[float]) -> TTestResult:
    """Two-sided paired t-test (pairs matched by position, e.g. by seed)."""
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.shape != b.shape or a.ndim != 1:
        raise ValueError("paired t-test needs two equal-length 1-D samples")
    k = a.shape[0]
    if k < 2:
        raise ValueError("paired t-test needs at least 2 pairs")
    d = a - b
    mean = d.mean()
    sd = d.std(ddof=1)
    if sd < 1e-12:
        if abs(mean) < 1e-12:
            return TTestResult(t_statistic=0.0, p_value=1.0, dof=k - 1)
        t = math.copysign(math.inf, mean)
        return TTestResult(t_statistic=t, p_value=0.0, dof=k - 1, degenerate=True)
    t = float(mean / (sd / math.sqrt(k)))
    return TTestResult(t_statistic=t, p_value=student_t_two_sided_p(t, k - 1), dof=k - 1)


def one_sample_t_test(values: Sequence[float], mu: float) -> TTestResult:
    """Two-sided one-sample t-test of mean(values) against mu."""
    values = np.asarray(values, dtype=np.float64)
    if values.ndim != 1 or values.shape[0] < 2:
        raise ValueError("one-sample t-test needs at least 2 values")
    k = values.shape[0]
    mean = values.mean()
    sd = values.std(ddof=1)
    if sd < 1e-12:
        # identical values: compare to mu at float-accumulation tolerance
        if abs(mean - mu) < 1e-12:
            return TTestResult(t_statistic=0.0, p_value=1.0, dof=k - 1, degenerate=True)
        t = math.copysign(math.inf, mean - mu)
        return TTestResult(t_statistic=t, p_value=0.0, dof=k - 1, degenerate=True)
    t = float((mean - mu) / (sd / math.sqrt(k)))
    return TTestResult(t_statistic=t, p_value=student_t_two_sided_p(t, k - 1), dof=k - 1)


def cohens_d(a: Sequence[float], b: Sequence[float], paired: bool = True) -> float:
    """Effect size; paired uses sd of differences, unpaired uses pooled sd.

    Degenerate zero-sd cases return 0 for identical samples and signed
    infinity for a nonzero mean difference.
    """
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.ndim != 1 or b.ndim != 1 or len(a) < 2 or len(b) < 2:
        raise ValueError("cohens_d needs 1-D samples with at least 2 values")
    if paired:
        if a.shape != b.shape:
            raise ValueError("paired cohens_d needs equal-length samples")
        d = a - b
        sd = d.std(ddof=1)
        mean = d.mean()
    else:
        na, nb = len(a), len(b)
        pooled_var = ((na - 1) * a.var(ddof=1) + (nb - 1) * b.var(ddof=1)) / (na + nb - 2)
        sd = math.sqrt(pooled_var)
        mean = a.mean() - b.mean()
    if sd == 0.0:
        return 0.0 if mean == 0.0 else math.copysign(math.inf, mean)
    return float(mean / sd)


def bootstrap_ci(
    values: Sequence[float],
    statistic: Callable[[np.ndarray], float] = np.mean,
    n_resamples: int = 1000,
    level: float = 0.95,
    seed: int = 0,
) -> tuple[float, float]:
    """Percentile bootstrap interval for statistic(values)."""
    values = np.asarray(values, dtype=np.float64)
    if values.ndim != 1 or values.shape[0] < 2:
        raise ValueError("bootstrap needs at least 2 values")
    rng = np.random.default_rng(seed)
    idx = rng.integers(0, values.shape[0], size=(n_resamples, values.shape[0]))
    stats = np.array([statistic(values[row]) for row in idx])
    alpha = (1.0 - level) / 2.0
    low, high = np.percentile(stats, (100 * alpha, 100 * (1 - alpha)))
    return float(low), float(high)


@dataclass
class SignificanceRow:
    comparison: str
    mean_a: float
    mean_b: float
    delta: float
    t_statistic: float
    p_value: float
    cohens_d: float
    ci_low: float
    ci_high: float
    degenerate: bool = False


def compare_paired(
    comparison: str,
    a: Sequence[float],
    b: Sequence[float],
    n_resamples: int = 1000,
    seed: int = 0,
) -> SignificanceRow:
    """Full paired comparison: t-test, effect size, bootstrap CI of the delta."""
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    test = paired_t_test(a, b)
    diffs = a - b
    ci_low, ci_high = bootstrap_ci(diffs, np.mean, n_resamples=n_resamples, seed=seed)
    return SignificanceRow(
        comparison=comparison,
        mean_a=float(a.mean()),
        mean_b=float(b.mean()),
        delta=float(a.mean() - b.mean()),
        t_statistic=test.t_statistic,
        p_value=test.p_value,
        cohens_d=cohens_d(a, b, paired=True),
        ci_low=ci_low,
        ci_high=ci_high,
        degenerate=test.degenerate,
    )


def write_significance_csv(rows: Sequence[SignificanceRow], path: str | Path) -> None:
    """Comparison table in the usual layout (comparison, F1s, delta, p, d, CI)."""
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(
            ["comparison", "f1_a", "f1_b", "delta_f1", "p_value", "cohens_d", "ci_low", "ci_high"]
        )
        for row in rows:
            writer.writerow(
                [
                    row.comparison,
                    f"{row.mean_a:.6f}",
                    f"{row.mean_b:.6f}",
                    f"{row.delta:.6f}",
                    f"{row.p_value:.6g}",
                    f"{row.cohens_d:.6g}",
                    f"{row.ci_low:.6f}",
                    f"{row.ci_high:.6f}",
                ]
            )


def spearman_correlation(x: Sequence[float], y: Sequence[float]) -> float:
    """Spearman rank correlation with midranks; 0 when either side is constant."""
    x = np.asarray(x, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    if x.shape != y.shape or x.ndim != 1 or len(x) < 2:
        raise ValueError("spearman needs two equal-length 1-D samples")

    def _ranks(v: np.ndarray) -> np.ndarray:
        order = np.argsort(v, kind="mergesort")
        ranks = np.empty(len(v))
        sorted_v = v[order]
        i = 0
        while i < len(v):
            j = i
            while j + 1 < len(v) and sorted_v[j + 1] == sorted_v[i]:
                j += 1
            ranks[order[i : j + 1]] = 0.5 * (i + j) + 1.0
            i = j + 1
        return ranks

    rx, ry = _ranks(x), _ranks(y)
    sx, sy = rx.std(), ry.std()
    if sx == 0.0 or sy == 0.0:
        return 0.0
    return float(np.mean((rx - rx.mean()) * (ry - ry.mean())) / (sx * sy))
