"""Core loss machinery: soft pseudo-labels, Gaussian instance weights,
power-family robust surrogates, their closed-form logit gradients, and the
linear per-epoch schedules that tie them together.

Conventions used throughout:

* every loss is nonnegative and minimized; a positive logit gradient means
  that lowering the logit lowers the loss;
* pseudo-labels and instance weights are calibration terms: they are
  computed from the current confidence but treated as constants when
  differentiating (stop-gradient).

All functions accept floats or numpy arrays and broadcast elementwise.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import DomainError, ParameterError, ShapeError
from .numerics import as_matrix, logit, sigmoid

# Upper bound for the robustness exponents. Values above 1 are rare but
# legitimate (the loss stays well defined), so the cap is 2 rather than 1.
Q_MAX = 2.0


def _ret(out):
    return float(out) if np.ndim(out) == 0 else out


def _check_finite(name, *values):
    for v in values:
        if not np.all(np.isfinite(v)):
            raise ParameterError(f"{name} must be finite")


# ---------------------------------------------------------------------------
# Parameter records
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class PseudoLabelParams:
    """Logistic map p -> sigmoid(slope * p + bias) estimating the chance
    that an unannotated label is actually positive.

    slope >= 0 keeps the map non-decreasing in the confidence; slope = 0
    gives the constant early-training regime, large slope approaches hard
    thresholding at -bias/slope.
    """

    slope: float
    bias: float

    def __post_init__(self):
        _check_finite("pseudo-label params", self.slope, self.bias)
        if self.slope < 0.0:
            raise ParameterError("pseudo-label slope must be >= 0")


@dataclass(frozen=True)
class InstanceWeightParams:
    """Gaussian weight over confidence for unannotated labels.

    The weight peaks at 1 when p equals `center` and decays with scale
    `width`; annotated positives always weigh 1.
    """

    center: float
    width: float

    def __post_init__(self):
        _check_finite("instance-weight params", self.center, self.width)
        if not 0.0 <= self.center <= 1.0:
            raise ParameterError("weight center must lie in [0, 1]")
        if self.width <= 0.0:
            raise ParameterError("weight width must be > 0")


@dataclass(frozen=True)
class RobustnessParams:
    """Exponents of the power-family surrogates: q1 for observed positives,
    q2/q3 for the positive/negative parts of the unannotated loss.

    Each q must lie in (0, 2]; q -> 0 approaches binary cross-entropy and
    q = 1 is the mean-absolute-error case.
    """

    q1: float
    q2: float
    q3: float

    def __post_init__(self):
        for name, q in (("q1", self.q1), ("q2", self.q2), ("q3", self.q3)):
            if not np.isfinite(q) or not 0.0 < q <= Q_MAX:
                raise ParameterError(f"{name} must lie in (0, {Q_MAX}]")


@dataclass(frozen=True)
class EpochLossParams:
    """The loss parameters frozen for one training epoch."""

    pseudo: PseudoLabelParams
    weight: InstanceWeightParams
    robust: RobustnessParams


# ---------------------------------------------------------------------------
# Pointwise components
# ---------------------------------------------------------------------------


def pseudo_label(p, params: PseudoLabelParams):
    """Soft pseudo-label sigmoid(slope * p + bias); stop-gradient w.r.t. p."""
    return sigmoid(params.slope * np.asarray(p, dtype=float) + params.bias)


def _check_observed(observed) -> np.ndarray:
    s = np.asarray(observed)
    if not np.all(np.isin(s, (0, 1))):
        raise DomainError("observed labels must be 0 or 1")
    return s


def instance_weight(p, observed, params: InstanceWeightParams):
    """Per-label weight: 1 for annotated positives, a Gaussian bump in the
    confidence for unannotated labels; stop-gradient w.r.t. p."""
    s = _check_observed(observed)
    p = np.asarray(p, dtype=float)
    gauss = np.exp(-((p - params.center) ** 2) / (2.0 * params.width**2))
    return _ret(np.where(s == 1, 1.0, gauss))


def _check_q(q):
    if not np.isfinite(q) or q <= 0.0:
        raise ParameterError("robustness exponent q must be > 0")


def positive_loss(p, q):
    """(1 - p**q) / q: decreasing in p, -log(p) as q -> 0+, 1 - p at q = 1."""
    _check_q(q)
    return _ret((1.0 - np.asarray(p, dtype=float) ** q) / q)


def negative_loss(p, q):
    """(1 - (1-p)**q) / q: increasing in p, -log(1-p) as q -> 0+, p at q = 1."""
    _check_q(q)
    return _ret((1.0 - (1.0 - np.asarray(p, dtype=float)) ** q) / q)


def missing_label_loss(p, pseudo, q2, q3):
    """Loss for an unannotated label: mix of the positive and negative
    surrogates weighted by the (frozen) pseudo-label."""
    pseudo = np.asarray(pseudo, dtype=float)
    return _ret(pseudo * positive_loss(p, q2) + (1.0 - pseudo) * negative_loss(p, q3))


def missing_label_grad_wrt_logit(p, pseudo, q2, q3):
    """d/d(logit) of the unannotated-label loss, pseudo-label frozen:

        (1 - pseudo) * (1-p)**q3 * p  -  pseudo * p**q2 * (1-p)
    """
    _check_q(q2)
    _check_q(q3)
    p = np.asarray(p, dtype=float)
    pseudo = np.asarray(pseudo, dtype=float)
    return _ret((1.0 - pseudo) * (1.0 - p) ** q3 * p - pseudo * p**q2 * (1.0 - p))


def per_label_loss(p, observed, params: EpochLossParams):
    """Weighted loss of one (instance, class) entry.

    Observed positives use the positive surrogate at q1; unannotated
    entries use the pseudo-label mix at (q2, q3). Both are multiplied by
    the instance weight (which is 1 on positives).
    """
    s = _check_observed(observed)
    p = np.asarray(p, dtype=float)
    q = params.robust
    k = pseudo_label(p, params.pseudo)
    v = instance_weight(p, s, params.weight)
    pos = positive_loss(p, q.q1)
    miss = missing_label_loss(p, k, q.q2, q.q3)
    return _ret(v * np.where(s == 1, pos, miss))


def per_label_grad_wrt_logit(p, observed, params: EpochLossParams):
    """d/d(logit) of the weighted per-entry loss, pseudo-label and weight
    frozen: -p**q1 * (1-p) on positives, weight * missing gradient else."""
    s = _check_observed(observed)
    p = np.asarray(p, dtype=float)
    q = params.robust
    k = pseudo_label(p, params.pseudo)
    v = instance_weight(p, s, params.weight)
    pos = -(p**q.q1) * (1.0 - p)
    miss = missing_label_grad_wrt_logit(p, k, q.q2, q.q3)
    return _ret(np.where(s == 1, pos, v * miss))


def batch_loss(confidences, observed, params: EpochLossParams) -> float:
    """Mean over instances of the per-instance sum of weighted label losses."""
    p = as_matrix(confidences)
    s = np.asarray(observed)
    if s.shape != p.shape:
        raise ShapeError(f"confidences {p.shape} and labels {s.shape} differ")
    per = per_label_loss(p, s, params)
    return float(np.sum(per) / p.shape[0])


# ---------------------------------------------------------------------------
# Schedules
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class ScheduleSpec:
    """Affine interpolation from `start` at epoch 0 to `end` at `horizon`."""

    start: float
    end: float
    horizon: int

    def __post_init__(self):
        _check_finite("schedule anchors", self.start, self.end)
        if int(self.horizon) != self.horizon or self.horizon < 0:
            raise ParameterError("schedule horizon must be a nonnegative integer")


def schedule_value(spec: ScheduleSpec, t) -> float:
    """Value of the schedule at epoch t in [0, horizon]; endpoints exact."""
    if not 0 <= t <= spec.horizon:
        raise DomainError(f"epoch {t} outside schedule range [0, {spec.horizon}]")
    if t == 0:
        return float(spec.start)
    if t == spec.horizon:
        return float(spec.end)
    return float(spec.start + (spec.end - spec.start) * (t / spec.horizon))


@dataclass(frozen=True)
class GrLossParams:
    """Full schedule bundle for the generalized robust loss.

    Holds one schedule per pseudo-label / weight parameter plus the static
    robustness exponents. Because every schedule is affine, checking the
    component invariants at both endpoints covers every epoch in between.
    """

    slope: ScheduleSpec
    bias: ScheduleSpec
    center: ScheduleSpec
    width: ScheduleSpec
    robust: RobustnessParams

    def __post_init__(self):
        horizons = {self.slope.horizon, self.bias.horizon, self.center.horizon, self.width.horizon}
        if len(horizons) != 1:
            raise ParameterError("all schedules must share one horizon")
        for t in (0, self.horizon):
            PseudoLabelParams(schedule_value(self.slope, t), schedule_value(self.bias, t))
            InstanceWeightParams(schedule_value(self.center, t), schedule_value(self.width, t))

    @property
    def horizon(self) -> int:
        return self.slope.horizon

    def at_epoch(self, t) -> EpochLossParams:
        return EpochLossParams(
            pseudo=PseudoLabelParams(schedule_value(self.slope, t), schedule_value(self.bias, t)),
            weight=InstanceWeightParams(schedule_value(self.center, t), schedule_value(self.width, t)),
            robust=self.robust,
        )


def pseudo_label_params_from_prior(prior: float) -> PseudoLabelParams:
    """Constant pseudo-label equal to `prior`: the share of unannotated
    labels that are actually positive, estimable from dataset statistics."""
    if not 0.0 < prior < 1.0:
        raise DomainError("prior must lie strictly inside (0, 1)")
    return PseudoLabelParams(slope=0.0, bias=logit(prior))


def scar_posterior(p, labeled_rate):
    """P(y = 1 | confidence p, unannotated) when every true positive is
    labeled independently with the same probability `labeled_rate`:

        (1 - a) * p / (1 - a * p)

    Monotone increasing in p; the late-training target of the pseudo-label.
    """
    a = float(labeled_rate)
    if not 0.0 <= a <= 1.0:
        raise DomainError("labeled rate must lie in [0, 1]")
    p = np.asarray(p, dtype=float)
    if np.any(p < 0.0) or np.any(p > 1.0):
        raise DomainError("confidence must lie in [0, 1]")
    if np.any(a * p >= 1.0):
        raise DomainError("labeled_rate * p must stay below 1")
    return _ret((1.0 - a) * p / (1.0 - a * p))
