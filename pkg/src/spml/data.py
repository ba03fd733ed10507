"""Synthetic dataset generation, single-positive masking, CSV persistence,
and counting statistics for single-positive multi-label data.

The synthetic generator draws latent standard-normal features and labels
each class by an independent hyperplane, so there is deliberately no label
correlation; optional observation noise is added to the features after
labeling to keep the task from being linearly separable.
"""
from __future__ import annotations

import csv
from dataclasses import dataclass, replace
from statistics import NormalDist
from typing import Optional

import numpy as np

from .errors import ConfigError, DomainError, ParseError
from .numerics import logit, make_rng, sigmoid

SPLIT_TAGS = ("train", "val", "test", "full")

_MAX_RESAMPLE_ROUNDS = 200


def _freeze(arr: np.ndarray) -> np.ndarray:
    arr = np.ascontiguousarray(arr)
    arr.setflags(write=False)
    return arr


@dataclass(frozen=True)
class LabeledDataset:
    """Features plus ground-truth and observed label matrices.

    Invariants: every row has at least one true positive and the observed
    matrix never contains a false positive (observed <= labels entrywise).
    `scar_rate_a` caches #observed-positives / #true-positives when known.
    """

    features: np.ndarray
    labels: np.ndarray
    observed: np.ndarray
    split: str = "full"
    scar_rate_a: Optional[float] = None

    def __post_init__(self):
        x = np.asarray(self.features, dtype=np.float64)
        y = np.asarray(self.labels)
        s = np.asarray(self.observed)
        if x.ndim != 2 or y.ndim != 2 or s.ndim != 2:
            raise DomainError("features, labels and observed must be matrices")
        if y.shape != s.shape or x.shape[0] != y.shape[0]:
            raise DomainError("features, labels and observed row counts must agree")
        if not np.all(np.isin(y, (0, 1))) or not np.all(np.isin(s, (0, 1))):
            raise DomainError("label matrices must be binary")
        if np.any(y.sum(axis=1) < 1):
            raise DomainError("every instance needs at least one true positive")
        if np.any(s > y):
            raise DomainError("observed labels must never invent positives")
        if self.split not in SPLIT_TAGS:
            raise DomainError(f"split must be one of {SPLIT_TAGS}")
        object.__setattr__(self, "features", _freeze(x))
        object.__setattr__(self, "labels", _freeze(y.astype(np.int8)))
        object.__setattr__(self, "observed", _freeze(s.astype(np.int8)))

    @property
    def n_instances(self) -> int:
        return self.features.shape[0]

    @property
    def n_features(self) -> int:
        return self.features.shape[1]

    @property
    def n_classes(self) -> int:
        return self.labels.shape[1]

    @property
    def is_fully_labeled(self) -> bool:
        return bool(np.array_equal(self.observed, self.labels))

    @property
    def is_single_positive(self) -> bool:
        return bool(np.all(self.observed.sum(axis=1) == 1))


@dataclass(frozen=True)
class SyntheticSpec:
    """Knobs of the synthetic generator.

    positive_rate targets the expected share of positive entries;
    class_spread scatters the per-class rates on the log-odds scale;
    feature_noise is the standard deviation of observation noise added to
    the latent features after labeling (0 keeps classes separable).
    """

    n_instances: int
    n_classes: int
    n_features: int
    positive_rate: float = 0.2
    class_spread: float = 0.0
    feature_noise: float = 0.0
    seed: int = 0

    def __post_init__(self):
        if self.n_instances < 1 or self.n_classes < 1 or self.n_features < 1:
            raise ConfigError("instance, class and feature counts must be >= 1")
        if not 0.0 < self.positive_rate < 1.0:
            raise ConfigError("positive_rate must lie strictly inside (0, 1)")
        if self.class_spread < 0.0 or self.feature_noise < 0.0:
            raise ConfigError("class_spread and feature_noise must be >= 0")


@dataclass(frozen=True)
class DatasetStats:
    """Exact label counts plus the two derived rates used elsewhere:
    `prior_missing_positive_rate` (share of unannotated entries that are
    actually positive) and `scar_rate` (share of true positives observed)."""

    n_instances: int
    n_classes: int
    positives_per_class: tuple
    mean_positives_per_row: float
    missing_count: int
    missing_positive_count: int
    prior_missing_positive_rate: float
    scar_rate: Optional[float]

    def to_json_dict(self) -> dict:
        return {
            "n_instances": self.n_instances,
            "n_classes": self.n_classes,
            "positives_per_class": list(self.positives_per_class),
            "mean_positives_per_row": self.mean_positives_per_row,
            "missing_count": self.missing_count,
            "missing_positive_count": self.missing_positive_count,
            "prior_missing_positive_rate": self.prior_missing_positive_rate,
            "scar_rate": self.scar_rate,
        }


def generate_synthetic(spec: SyntheticSpec) -> LabeledDataset:
    """Deterministically draw a fully labeled dataset from the spec.

    Rows that come out with zero positives are resampled in place; if the
    target rate is so low that resampling keeps failing, a DomainError is
    raised rather than silently dropping rows.
    """
    rng = make_rng(spec.seed)
    d, c = spec.n_features, spec.n_classes
    hyper = rng.normal(size=(c, d)) / np.sqrt(d)
    offsets = rng.uniform(-1.0, 1.0, size=c) * spec.class_spread
    rates = sigmoid(logit(spec.positive_rate) + offsets)
    norms = np.sqrt(np.sum(hyper**2, axis=1))
    intercepts = norms * np.array([NormalDist().inv_cdf(float(r)) for r in rates])

    latent = rng.normal(size=(spec.n_instances, d))
    labels = (latent @ hyper.T + intercepts > 0.0).astype(np.int8)
    rounds = 0
    while True:
        bad = np.flatnonzero(labels.sum(axis=1) == 0)
        if bad.size == 0:
            break
        rounds += 1
        if rounds > _MAX_RESAMPLE_ROUNDS:
            raise DomainError(
                "could not reach one positive per row; positive_rate too low"
            )
        latent[bad] = rng.normal(size=(bad.size, d))
        labels[bad] = (latent[bad] @ hyper.T + intercepts > 0.0).astype(np.int8)

    features = latent
    if spec.feature_noise > 0.0:
        features = latent + spec.feature_noise * rng.normal(size=latent.shape)
    return LabeledDataset(features, labels, labels.copy(), split="full")


def mask_single_positive(labels, rng: np.random.Generator) -> np.ndarray:
    """Keep exactly one positive per row, chosen uniformly among that row's
    positives; everything else becomes unannotated (0)."""
    y = np.asarray(labels)
    if y.ndim != 2 or not np.all(np.isin(y, (0, 1))):
        raise DomainError("labels must be a binary matrix")
    if np.any(y.sum(axis=1) < 1):
        raise DomainError("every row needs at least one positive to mask")
    s = np.zeros_like(y, dtype=np.int8)
    for i in range(y.shape[0]):
        pos = np.flatnonzero(y[i])
        s[i, pos[rng.integers(pos.size)]] = 1
    return s


def scar_rate(labels, observed) -> float:
    """Share of true positives that are observed: #{s=1} / #{y=1}."""
    y = np.asarray(labels)
    s = np.asarray(observed)
    if y.shape != s.shape:
        raise DomainError("labels and observed must share a shape")
    total = int(y.sum())
    if total == 0:
        raise DomainError("scar rate undefined without positives")
    return float(s.sum() / total)


def dataset_stats(dataset: LabeledDataset) -> DatasetStats:
    y = dataset.labels
    s = dataset.observed
    missing = int(np.sum(s == 0))
    missing_pos = int(np.sum((y == 1) & (s == 0)))
    prior = missing_pos / missing if missing > 0 else 0.0
    return DatasetStats(
        n_instances=dataset.n_instances,
        n_classes=dataset.n_classes,
        positives_per_class=tuple(int(v) for v in y.sum(axis=0)),
        mean_positives_per_row=float(y.sum() / y.shape[0]),
        missing_count=missing,
        missing_positive_count=missing_pos,
        prior_missing_positive_rate=float(prior),
        scar_rate=scar_rate(y, s),
    )


def make_split_datasets(
    spec: SyntheticSpec, n_train: int, n_val: int, n_test: int
) -> tuple[LabeledDataset, LabeledDataset, LabeledDataset]:
    """Generate train/val/test splits from one seeded draw; the train split
    is single-positive masked, val and test stay fully labeled."""
    if min(n_train, n_val, n_test) < 1:
        raise ConfigError("every split needs at least one instance")
    total = n_train + n_val + n_test
    full = generate_synthetic(replace(spec, n_instances=total))
    lo, mid = n_train, n_train + n_val
    y_train = full.labels[:lo]
    s_train = mask_single_positive(y_train, make_rng(spec.seed, stream=1))
    train = LabeledDataset(
        full.features[:lo], y_train, s_train,
        split="train", scar_rate_a=scar_rate(y_train, s_train),
    )
    val = LabeledDataset(full.features[lo:mid], full.labels[lo:mid], full.labels[lo:mid], split="val")
    test = LabeledDataset(full.features[mid:], full.labels[mid:], full.labels[mid:], split="test")
    return train, val, test


# ---------------------------------------------------------------------------
# CSV persistence: header f0..f{d-1}, y0..y{C-1}, s0..s{C-1}
# ---------------------------------------------------------------------------


def _expected_header(d: int, c: int) -> list[str]:
    return (
        [f"f{j}" for j in range(d)]
        + [f"y{j}" for j in range(c)]
        + [f"s{j}" for j in range(c)]
    )


def save_csv(dataset: LabeledDataset, path) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(_expected_header(dataset.n_features, dataset.n_classes))
        for i in range(dataset.n_instances):
            row = [repr(float(v)) for v in dataset.features[i]]
            row += [str(int(v)) for v in dataset.labels[i]]
            row += [str(int(v)) for v in dataset.observed[i]]
            writer.writerow(row)


def _parse_header(header: list[str]) -> tuple[int, int]:
    d = 0
    while d < len(header) and header[d] == f"f{d}":
        d += 1
    rest = len(header) - d
    if d == 0 or rest <= 0 or rest % 2 != 0:
        raise ParseError("line 1: header must list f*, then y*, then s* columns")
    c = rest // 2
    if header != _expected_header(d, c):
        raise ParseError("line 1: header must list f0..f{d-1}, y0..y{C-1}, s0..s{C-1}")
    return d, c


def _parse_binary(token: str, line_no: int, kind: str) -> int:
    try:
        value = float(token)
    except ValueError as exc:
        raise ParseError(f"line {line_no}: {kind} value {token!r} is not a number") from exc
    if value not in (0.0, 1.0):
        raise ParseError(f"line {line_no}: {kind} value must be 0 or 1, got {token!r}")
    return int(value)


def load_csv(path, split: str = "full") -> LabeledDataset:
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise ParseError("line 1: file is empty, expected a header row") from None
        d, c = _parse_header([h.strip() for h in header])
        feats, labels, observed = [], [], []
        for line_no, row in enumerate(reader, start=2):
            if len(row) != d + 2 * c:
                raise ParseError(
                    f"line {line_no}: expected {d + 2 * c} columns, got {len(row)}"
                )
            try:
                feats.append([float(v) for v in row[:d]])
            except ValueError as exc:
                raise ParseError(f"line {line_no}: feature value is not a number") from exc
            labels.append([_parse_binary(v, line_no, "label") for v in row[d : d + c]])
            observed.append([_parse_binary(v, line_no, "observed") for v in row[d + c :]])
    if not feats:
        raise ParseError("line 2: file has a header but no data rows")
    y = np.asarray(labels, dtype=np.int8)
    s = np.asarray(observed, dtype=np.int8)
    return LabeledDataset(
        np.asarray(feats), y, s, split=split,
        scar_rate_a=scar_rate(y, s) if not np.array_equal(y, s) else None,
    )
