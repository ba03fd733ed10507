"""Ranking metrics and analysis curves: average precision / mAP, 1-D
Wasserstein distance between confidence distributions, false-negative
ratio bucket curves, and closed-form gradient curves.

Average precision averages the precision at each positive under descending
score order (no interpolation); ties break toward the lower instance
index. Summations that feed reported metrics accumulate sequentially so
results are reproducible bit for bit and match definition-following loop
oracles exactly.
"""
from __future__ import annotations

import json
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .errors import DomainError, ShapeError

HISTOGRAM_BINS = 50
FN_RATIO_BUCKETS = 100


def _seq_sum(values) -> float:
    total = 0.0
    for v in values:
        total += v
    return total


def average_precision(scores, truth) -> float:
    """Mean over positives of precision at that positive's rank."""
    scores = np.asarray(scores, dtype=float)
    truth = np.asarray(truth)
    if scores.ndim != 1 or scores.shape != truth.shape:
        raise ShapeError("scores and truth must be equal-length vectors")
    if not np.all(np.isin(truth, (0, 1))):
        raise DomainError("truth must be binary")
    order = np.argsort(-scores, kind="stable")
    hits = truth[order] == 1
    n_pos = int(np.count_nonzero(hits))
    if n_pos == 0:
        raise DomainError("average precision undefined without positives")
    ranks = np.arange(1, scores.size + 1)
    precisions = np.cumsum(hits)[hits] / ranks[hits]
    return _seq_sum(precisions.tolist()) / n_pos


def per_class_average_precision(scores, truth):
    """Per-class AP; classes without positives yield None and are listed
    separately so a caller can report them instead of silently averaging."""
    scores = np.asarray(scores, dtype=float)
    truth = np.asarray(truth)
    if scores.ndim != 2 or scores.shape != truth.shape:
        raise ShapeError("scores and truth must be equal-shape matrices")
    values, skipped = [], []
    for c in range(scores.shape[1]):
        if int(truth[:, c].sum()) == 0:
            values.append(None)
            skipped.append(c)
        else:
            values.append(average_precision(scores[:, c], truth[:, c]))
    return values, skipped


def mean_average_precision(scores, truth) -> float:
    """Macro mean of AP over classes that have at least one positive."""
    values, _ = per_class_average_precision(scores, truth)
    kept = [v for v in values if v is not None]
    if not kept:
        raise DomainError("no class has a positive; mAP undefined")
    return _seq_sum(kept) / len(kept)


def wasserstein1(samples_a, samples_b) -> float:
    """1-D earth-mover distance between two empirical distributions.

    Integrates |F_a - F_b| over the merged support; CDF values are exact
    count/size ratios and the integral accumulates in ascending order.
    """
    a = np.sort(np.asarray(samples_a, dtype=float))
    b = np.sort(np.asarray(samples_b, dtype=float))
    if a.size == 0 or b.size == 0:
        raise DomainError("wasserstein1 needs nonempty samples on both sides")
    if not (np.all(np.isfinite(a)) and np.all(np.isfinite(b))):
        raise DomainError("wasserstein1 requires finite samples")
    grid = np.concatenate([a, b])
    grid.sort(kind="stable")
    below_a = np.searchsorted(a, grid[:-1], side="right")
    below_b = np.searchsorted(b, grid[:-1], side="right")
    terms = np.abs(below_a / a.size - below_b / b.size) * np.diff(grid)
    return _seq_sum(terms.tolist())


def confidence_histogram(values, bins: int = HISTOGRAM_BINS) -> np.ndarray:
    """Counts over `bins` equal intervals of [0, 1]; 1.0 joins the last bin."""
    v = np.asarray(values, dtype=float)
    if np.any(v < 0.0) or np.any(v > 1.0):
        raise DomainError("confidences must lie in [0, 1]")
    idx = np.clip((v * bins).astype(int), 0, bins - 1)
    return np.bincount(idx, minlength=bins)


@dataclass
class DistinguishabilityReport:
    """Separation of confidences on unannotated entries, split by truth."""

    w1: float
    per_class_w1: list
    positive_hist: np.ndarray
    negative_hist: np.ndarray
    n_positive: int
    n_negative: int


def distinguishability(confidences, labels, observed, bins: int = HISTOGRAM_BINS) -> DistinguishabilityReport:
    """Pool every unannotated entry (observed == 0), split by the true
    label, and measure how far apart the two confidence distributions sit."""
    p = np.asarray(confidences, dtype=float)
    y = np.asarray(labels)
    s = np.asarray(observed)
    if p.shape != y.shape or y.shape != s.shape:
        raise ShapeError("confidences, labels and observed must share a shape")
    missing = s == 0
    pos = p[missing & (y == 1)]
    neg = p[missing & (y == 0)]
    if pos.size == 0 or neg.size == 0:
        raise DomainError("need unannotated entries of both truth values")
    per_class = []
    for c in range(p.shape[1]):
        m = missing[:, c]
        cp = p[m & (y[:, c] == 1), c] if m.any() else np.empty(0)
        cn = p[m & (y[:, c] == 0), c] if m.any() else np.empty(0)
        per_class.append(wasserstein1(cp, cn) if cp.size and cn.size else None)
    return DistinguishabilityReport(
        w1=wasserstein1(pos, neg),
        per_class_w1=per_class,
        positive_hist=confidence_histogram(pos, bins),
        negative_hist=confidence_histogram(neg, bins),
        n_positive=int(pos.size),
        n_negative=int(neg.size),
    )


@dataclass
class FnRatioCurve:
    """Per-bucket share of false negatives among unannotated entries.

    `ratios` is NaN on buckets that received no unannotated entry; counts
    always satisfy fn_counts + tn_counts = bucket occupancy.
    """

    edges: np.ndarray
    ratios: np.ndarray
    fn_counts: np.ndarray
    tn_counts: np.ndarray

    @property
    def occupancy(self) -> np.ndarray:
        return self.fn_counts + self.tn_counts


def fn_ratio_buckets(confidences, labels, observed, n_buckets: int = FN_RATIO_BUCKETS) -> FnRatioCurve:
    """Bucket unannotated entries by confidence over [0, 1] and report
    FN / (FN + TN) per bucket, where FN means truly positive."""
    p = np.asarray(confidences, dtype=float)
    y = np.asarray(labels)
    s = np.asarray(observed)
    if p.shape != y.shape or y.shape != s.shape:
        raise ShapeError("confidences, labels and observed must share a shape")
    if np.any(p < 0.0) or np.any(p > 1.0):
        raise DomainError("confidences must lie in [0, 1]")
    missing = s == 0
    idx = np.clip((p[missing] * n_buckets).astype(int), 0, n_buckets - 1)
    truthy = y[missing] == 1
    fn = np.bincount(idx[truthy], minlength=n_buckets)
    tn = np.bincount(idx[~truthy], minlength=n_buckets)
    occupancy = fn + tn
    with np.errstate(invalid="ignore"):
        ratios = np.where(occupancy > 0, fn / np.maximum(occupancy, 1), np.nan)
    return FnRatioCurve(
        edges=np.linspace(0.0, 1.0, n_buckets + 1),
        ratios=ratios,
        fn_counts=fn,
        tn_counts=tn,
    )


def gradient_curves(
    p_grid,
    *,
    pseudo_start: tuple,
    pseudo_end: tuple,
    q2: float,
    q3: float,
    hill_lam: float = 1.5,
) -> list:
    """Unannotated-label gradient curves for plotting.

    The formulas are evaluated inline on purpose: these curves act as an
    independent cross-check of the loss modules, so they must not share a
    code path with them.
    """
    p = np.asarray(p_grid, dtype=float)
    if np.any(p <= 0.0) or np.any(p >= 1.0):
        raise DomainError("gradient curves need confidences strictly inside (0, 1)")
    series = []
    for label, (slope, bias) in (("start", pseudo_start), ("end", pseudo_end)):
        t = slope * p + bias
        e = np.exp(-np.abs(t))
        k = np.where(t >= 0.0, 1.0 / (1.0 + e), e / (1.0 + e))
        g = (1.0 - k) * (1.0 - p) ** q3 * p - k * p**q2 * (1.0 - p)
        series.append((f"robust[{label}]", p.copy(), g))
    g_em = np.log(p / (1.0 - p)) * p * (1.0 - p)
    series.append(("entropy", p.copy(), g_em))
    g_hill = p**2 * (2.0 * hill_lam - 3.0 * p) * (1.0 - p)
    series.append(("hill", p.copy(), g_hill))
    return series


@dataclass
class EvalReport:
    """Bundle of evaluation results, serializable to JSON."""

    per_class_ap: list
    skipped_classes: list
    map: float
    w1: Optional[float] = None
    per_class_w1: Optional[list] = None
    fn_ratio: Optional[dict] = None
    extras: dict = field(default_factory=dict)

    def to_json_dict(self) -> dict:
        return {
            "per_class_ap": self.per_class_ap,
            "skipped_classes": self.skipped_classes,
            "map": self.map,
            "w1": self.w1,
            "per_class_w1": self.per_class_w1,
            "fn_ratio": self.fn_ratio,
            "extras": self.extras,
        }

    def to_json(self) -> str:
        return json.dumps(self.to_json_dict(), sort_keys=True, indent=2)


def build_eval_report(
    scores,
    truth,
    *,
    distinguish: Optional[DistinguishabilityReport] = None,
    fn_curve: Optional[FnRatioCurve] = None,
    extras: Optional[dict] = None,
) -> EvalReport:
    values, skipped = per_class_average_precision(scores, truth)
    kept = [v for v in values if v is not None]
    if not kept:
        raise DomainError("no class has a positive; mAP undefined")
    fn_dict = None
    if fn_curve is not None:
        fn_dict = {
            "ratios": [None if np.isnan(r) else float(r) for r in fn_curve.ratios],
            "fn_counts": fn_curve.fn_counts.tolist(),
            "tn_counts": fn_curve.tn_counts.tolist(),
        }
    return EvalReport(
        per_class_ap=[None if v is None else float(v) for v in values],
        skipped_classes=skipped,
        map=_seq_sum(kept) / len(kept),
        w1=None if distinguish is None else float(distinguish.w1),
        per_class_w1=None
        if distinguish is None
        else [None if v is None else float(v) for v in distinguish.per_class_w1],
        fn_ratio=fn_dict,
        extras=extras or {},
    )
