"""Prior multi-label losses in two interchangeable forms.

Each method is available both as a direct per-entry formula (`an_loss`,
`splc_loss`, ...) and as a bundle of five functions — pseudo-label, weight,
and the three branch losses — composed by one shared rule:

    loss = weight * [ s * L1 + (1-s) * (pseudo * L2 + (1-pseudo) * L3) ]

Pseudo-labels and weights are stop-gradient terms; branch gradients are
expressed directly w.r.t. the logit so every gradient stays finite on the
closed interval [0, 1].

A pseudo-label may be undefined (NaN) only where the weight is 0; reaching
an undefined cell with nonzero weight raises ContractViolationError.

Losses are nonnegative and minimized, with one documented exception: the
entropy-style unannotated branch of the EM family is a signed expression
(it rewards uncertain predictions), kept exactly as formulated.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Optional

import numpy as np

from .errors import ConfigError, ContractViolationError, DomainError, ParameterError
from .numerics import as_matrix, clip_probability, logit, sigmoid
from .robust_loss import EpochLossParams, instance_weight, pseudo_label

METHOD_IDS = ("AN", "AN-LS", "Focal", "EN", "EM", "EM+APL", "Hill", "SPLC", "GR")

TermFn = Callable[[np.ndarray, Optional[np.ndarray], Optional[np.ndarray]], np.ndarray]


def _ret(out):
    return float(out) if np.ndim(out) == 0 else out


def _as_binary(observed) -> np.ndarray:
    s = np.asarray(observed)
    if not np.all(np.isin(s, (0, 1))):
        raise DomainError("observed labels must be 0 or 1")
    return s


@dataclass(frozen=True)
class AdaptiveThresholds:
    """Threshold state used by the step-function pseudo-label rows: tau1
    separates kept/positive entries, tau2 the assumed-negative ones, theta
    is a ranking percentile and ema_decay smooths confidences over epochs."""

    tau1: float = 0.5
    tau2: float = 0.0
    theta_percentile: float = 10.0
    ema_decay: float = 0.9

    def __post_init__(self):
        if not 0.0 <= self.tau2 <= self.tau1 <= 1.0:
            raise ParameterError("thresholds must satisfy 0 <= tau2 <= tau1 <= 1")
        if not 0.0 <= self.theta_percentile <= 100.0:
            raise ParameterError("theta percentile must lie in [0, 100]")
        if not 0.0 < self.ema_decay < 1.0:
            raise ParameterError("EMA decay must lie in (0, 1)")


@dataclass(frozen=True)
class FrameworkLoss:
    """One method expressed as the five-piece bundle plus branch gradients."""

    name: str
    pseudo_fn: Callable[[np.ndarray], np.ndarray]
    weight_fn: Callable[[np.ndarray, np.ndarray], np.ndarray]
    loss_pos: TermFn | None
    loss_miss_pos: TermFn | None
    loss_miss_neg: TermFn | None
    grad_pos: TermFn | None
    grad_miss_pos: TermFn | None
    grad_miss_neg: TermFn | None
    needs_logit: bool = False


# ---------------------------------------------------------------------------
# Branch terms (loss and d/dlogit pairs)
# ---------------------------------------------------------------------------


def _bce_pos(p, z, target):
    return -np.log(clip_probability(p))


def _bce_pos_grad(p, z, target):
    return -(1.0 - p)


def _bce_neg(p, z, target):
    return -np.log(clip_probability(1.0 - p))


def _bce_neg_grad(p, z, target):
    return np.asarray(p, dtype=float) + 0.0


def _smoothed_pos(epsilon):
    def loss(p, z, target):
        return -(1.0 - epsilon) * np.log(clip_probability(p)) - epsilon * np.log(
            clip_probability(1.0 - p)
        )

    def grad(p, z, target):
        return p - (1.0 - epsilon)

    return loss, grad


def _focal_pos(gamma):
    def loss(p, z, target):
        return -((1.0 - p) ** gamma) * np.log(clip_probability(p))

    def grad(p, z, target):
        logp = np.log(clip_probability(p))
        return gamma * (1.0 - p) ** gamma * p * logp - (1.0 - p) ** (gamma + 1.0)

    return loss, grad


def _focal_neg(gamma):
    def loss(p, z, target):
        return -(p**gamma) * np.log(clip_probability(1.0 - p))

    def grad(p, z, target):
        log1mp = np.log(clip_probability(1.0 - p))
        return -gamma * p**gamma * (1.0 - p) * log1mp + p ** (gamma + 1.0)

    return loss, grad


def _entropy_miss(scale):
    def loss(p, z, target):
        return scale * (
            p * np.log(clip_probability(p)) + (1.0 - p) * np.log(clip_probability(1.0 - p))
        )

    def grad(p, z, target):
        log_odds = np.log(clip_probability(p)) - np.log(clip_probability(1.0 - p))
        return scale * log_odds * p * (1.0 - p)

    return loss, grad


def _frozen_target_bce(scale):
    # BCE against a frozen soft target; target defaults to the current p
    # (a freshly frozen copy), in which case the gradient vanishes.
    def loss(p, z, target):
        t = p if target is None else np.asarray(target, dtype=float)
        return scale * (
            -t * np.log(clip_probability(p)) - (1.0 - t) * np.log(clip_probability(1.0 - p))
        )

    def grad(p, z, target):
        t = p if target is None else np.asarray(target, dtype=float)
        return scale * (p - t)

    return loss, grad


def _hill_neg(lam):
    def loss(p, z, target):
        return (lam - p) * p**2

    def grad(p, z, target):
        return p**2 * (2.0 * lam - 3.0 * p) * (1.0 - p)

    return loss, grad


def _power_pos(q):
    def loss(p, z, target):
        return (1.0 - p**q) / q

    def grad(p, z, target):
        return -(p**q) * (1.0 - p)

    return loss, grad


def _power_neg(q):
    def loss(p, z, target):
        return (1.0 - (1.0 - p) ** q) / q

    def grad(p, z, target):
        return (1.0 - p) ** q * p

    return loss, grad


def _focal_margin_pos(margin, gamma):
    def loss(p, z, target):
        pm = sigmoid(np.asarray(z, dtype=float) - margin)
        return -((1.0 - pm) ** gamma) * np.log(clip_probability(pm))

    def grad(p, z, target):
        pm = sigmoid(np.asarray(z, dtype=float) - margin)
        logpm = np.log(clip_probability(pm))
        return gamma * (1.0 - pm) ** gamma * pm * logpm - (1.0 - pm) ** (gamma + 1.0)

    return loss, grad


# ---------------------------------------------------------------------------
# Composition rule
# ---------------------------------------------------------------------------


def _eval_term(fn, needed, label, p, z, target):
    if fn is None:
        if np.any(needed):
            raise ContractViolationError(f"{label} is undefined but required")
        return np.zeros_like(p)
    return np.asarray(fn(p, z, target), dtype=float)


def _compose(fl: FrameworkLoss, p, s, z, target, pseudo, weight, use_grad):
    p = np.asarray(p, dtype=float)
    s01 = _as_binary(s)
    if fl.needs_logit and z is None:
        z = logit(clip_probability(p))
    if pseudo is None:
        pseudo = fl.pseudo_fn(p)
    if weight is None:
        weight = fl.weight_fn(p, s01)
    pseudo = np.asarray(pseudo, dtype=float)
    weight = np.asarray(weight, dtype=float)

    active = weight != 0.0
    miss = (s01 == 0) & active
    undefined = np.isnan(pseudo)
    if np.any(miss & undefined):
        raise ContractViolationError("pseudo-label undefined where the weight is nonzero")
    k = np.where(undefined, 0.0, pseudo)

    if use_grad:
        fns = (fl.grad_pos, fl.grad_miss_pos, fl.grad_miss_neg)
    else:
        fns = (fl.loss_pos, fl.loss_miss_pos, fl.loss_miss_neg)
    t1 = _eval_term(fns[0], (s01 == 1) & active, "positive branch", p, z, target)
    t2 = _eval_term(fns[1], miss & (k > 0.0), "unannotated positive branch", p, z, target)
    t3 = _eval_term(fns[2], miss & (k < 1.0), "unannotated negative branch", p, z, target)

    composed = np.where(s01 == 1, t1, k * t2 + (1.0 - k) * t3)
    return _ret(np.where(active, weight * composed, 0.0))


def framework_per_label_loss(fl: FrameworkLoss, p, s, z=None, target=None, pseudo=None, weight=None):
    """Per-entry loss of a bundle; pass `pseudo`/`weight` to freeze them."""
    return _compose(fl, p, s, z, target, pseudo, weight, use_grad=False)


def framework_grad_wrt_logit(fl: FrameworkLoss, p, s, z=None, target=None, pseudo=None, weight=None):
    """Per-entry d/dlogit of a bundle with pseudo-label and weight frozen."""
    return _compose(fl, p, s, z, target, pseudo, weight, use_grad=True)


# ---------------------------------------------------------------------------
# Direct forms
# ---------------------------------------------------------------------------


def an_loss(p, observed):
    """Assumed-negative BCE: -log(p) on positives, -log(1-p) elsewhere."""
    s = _as_binary(observed)
    p = np.asarray(p, dtype=float)
    return _ret(
        np.where(
            s == 1, -np.log(clip_probability(p)), -np.log(clip_probability(1.0 - p))
        )
    )


def an_label_smoothing_loss(p, observed, epsilon=0.1):
    """Assumed-negative BCE against smoothed targets 1-eps / eps."""
    if not 0.0 <= epsilon < 0.5:
        raise ParameterError("label-smoothing epsilon must lie in [0, 0.5)")
    s = _as_binary(observed)
    p = np.asarray(p, dtype=float)
    target = np.where(s == 1, 1.0 - epsilon, epsilon)
    return _ret(
        -target * np.log(clip_probability(p))
        - (1.0 - target) * np.log(clip_probability(1.0 - p))
    )


def focal_loss(p, observed, gamma=2.0):
    """Focal reweighting of BCE; gamma = 0 reduces to `an_loss`."""
    if gamma < 0.0:
        raise ParameterError("focal gamma must be >= 0")
    s = _as_binary(observed)
    p = np.asarray(p, dtype=float)
    pos = -((1.0 - p) ** gamma) * np.log(clip_probability(p))
    neg = -(p**gamma) * np.log(clip_probability(1.0 - p))
    return _ret(np.where(s == 1, pos, neg))


def hill_negative_loss(p, lam=1.5):
    """Assumed-negative loss (lam - p) * p**2: flat near p = 1, so confident
    false negatives stop being pushed down."""
    if lam < 1.0:
        raise ParameterError("hill lambda must be >= 1")
    p = np.asarray(p, dtype=float)
    return _ret((lam - p) * p**2)


def hill_negative_grad_wrt_logit(p, lam=1.5):
    """Closed-form d/dlogit of the hill negative loss: p**2 (2 lam - 3p)(1-p)."""
    p = np.asarray(p, dtype=float)
    return _ret(p**2 * (2.0 * lam - 3.0 * p) * (1.0 - p))


def focal_margin_positive_loss(z, margin=1.0, gamma=2.0):
    """Focal positive loss on the margin-shifted confidence sigmoid(z - m)."""
    if margin < 0.0:
        raise ParameterError("margin must be >= 0")
    pm = sigmoid(np.asarray(z, dtype=float) - margin)
    return _ret(-((1.0 - pm) ** gamma) * np.log(clip_probability(pm)))


def splc_loss(z, observed, tau=0.6, margin=1.0, gamma=2.0, lam=1.5, active=True):
    """Self-paced correction: unannotated entries above tau are treated as
    positives (focal-margin loss), the rest keep the hill negative loss.
    `active` gates the correction; when off, every unannotated entry is
    assumed negative."""
    if not 0.0 <= tau <= 1.0:
        raise ParameterError("tau must lie in [0, 1]")
    s = _as_binary(observed)
    z = np.asarray(z, dtype=float)
    p = sigmoid(z)
    pos = focal_margin_positive_loss(z, margin, gamma)
    neg = hill_negative_loss(p, lam)
    corrected = np.where((p > tau) & bool(active), pos, neg)
    return _ret(np.where(s == 1, pos, corrected))


def em_loss(p, observed, entropy_weight=1.0):
    """Entropy-maximizing loss: BCE on positives, a signed entropy term on
    every unannotated entry (negative values reward uncertainty)."""
    s = _as_binary(observed)
    p = np.asarray(p, dtype=float)
    ent = p * np.log(clip_probability(p)) + (1.0 - p) * np.log(clip_probability(1.0 - p))
    return _ret(np.where(s == 1, -np.log(clip_probability(p)), entropy_weight * ent))


def em_missing_grad_wrt_logit(p):
    """Closed-form d/dlogit of the entropy branch: log(p/(1-p)) * p * (1-p)."""
    p = np.asarray(p, dtype=float)
    log_odds = np.log(clip_probability(p)) - np.log(clip_probability(1.0 - p))
    return _ret(log_odds * p * (1.0 - p))


def em_apl_loss(p, code, entropy_weight=1.0, negative_weight=1.0, frozen_target=None):
    """EM with asymmetric pseudo-labeling codes: 1 observed positive,
    0 still-missing (entropy term), -1 relabeled negative (BCE against the
    frozen soft target, which defaults to the current confidence)."""
    code = np.asarray(code)
    if not np.all(np.isin(code, (-1, 0, 1))):
        raise DomainError("label codes must be -1, 0 or 1")
    p = np.asarray(p, dtype=float)
    t = p if frozen_target is None else np.asarray(frozen_target, dtype=float)
    ent = p * np.log(clip_probability(p)) + (1.0 - p) * np.log(clip_probability(1.0 - p))
    neg = -t * np.log(clip_probability(p)) - (1.0 - t) * np.log(clip_probability(1.0 - p))
    out = np.where(
        code == 1,
        -np.log(clip_probability(p)),
        np.where(code == 0, entropy_weight * ent, negative_weight * neg),
    )
    return _ret(out)


def en_loss(p, observed, tau1):
    """Expected-negative loss with an explicit boundary confidence: entries
    at or below tau1 become negatives, the rest are excluded (weight 0)."""
    s = _as_binary(observed)
    p = np.asarray(p, dtype=float)
    neg = np.where(p <= tau1, -np.log(clip_probability(1.0 - p)), 0.0)
    return _ret(np.where(s == 1, -np.log(clip_probability(p)), neg))


# ---------------------------------------------------------------------------
# Relabeling passes
# ---------------------------------------------------------------------------


def apl_relabel(confidences, observed, theta_percentile) -> np.ndarray:
    """Per class, flag the lowest-confidence theta percent of unannotated
    entries as negative (-1). Ties break toward the lower instance index;
    observed positives keep code 1, the rest keep code 0."""
    if not 0.0 <= theta_percentile <= 100.0:
        raise ParameterError("theta percentile must lie in [0, 100]")
    conf = as_matrix(confidences)
    s = _as_binary(observed)
    if s.shape != conf.shape:
        raise DomainError("confidences and observed labels must share a shape")
    codes = np.where(s == 1, 1, 0).astype(np.int8)
    for c in range(conf.shape[1]):
        missing = np.flatnonzero(s[:, c] == 0)
        count = int(np.floor(theta_percentile / 100.0 * missing.size))
        if count > 0:
            order = np.argsort(conf[missing, c], kind="stable")
            codes[missing[order[:count]], c] = -1
    return codes


def en_relabel(ema_confidences, observed, expected_positives) -> np.ndarray:
    """Per class, mark the (N - Ni) lowest-EMA unannotated entries as
    negative (-1); remaining unannotated entries keep code 0 and are meant
    to be excluded (weight 0) by the EN bundle."""
    ema = as_matrix(ema_confidences)
    s = _as_binary(observed)
    if s.shape != ema.shape:
        raise DomainError("EMA confidences and observed labels must share a shape")
    n = ema.shape[0]
    ni = np.broadcast_to(np.asarray(expected_positives, dtype=int), (ema.shape[1],))
    if np.any(ni < 0) or np.any(ni > n):
        raise DomainError("expected positive counts must lie in [0, N]")
    codes = np.where(s == 1, 1, 0).astype(np.int8)
    for c in range(ema.shape[1]):
        missing = np.flatnonzero(s[:, c] == 0)
        count = min(n - int(ni[c]), missing.size)
        if count > 0:
            order = np.argsort(ema[missing, c], kind="stable")
            codes[missing[order[:count]], c] = -1
    return codes


def ema_update(previous, confidences, decay=0.9):
    """One exponential-moving-average step; the first call (previous None)
    initializes the average at the current confidences."""
    if not 0.0 < decay < 1.0:
        raise ParameterError("EMA decay must lie in (0, 1)")
    conf = np.asarray(confidences, dtype=float)
    if previous is None:
        return conf.copy()
    prev = np.asarray(previous, dtype=float)
    if prev.shape != conf.shape:
        raise DomainError("EMA state and confidences must share a shape")
    return decay * prev + (1.0 - decay) * conf


# ---------------------------------------------------------------------------
# Bundle factory
# ---------------------------------------------------------------------------


def _const_pseudo(value):
    def fn(p):
        return np.full_like(np.asarray(p, dtype=float), value)

    return fn


def _ones_weight(p, s01):
    return np.ones_like(np.asarray(p, dtype=float))


def to_framework(
    method_id: str,
    *,
    epsilon: float = 0.1,
    gamma: float = 2.0,
    lam: float = 1.5,
    margin: float = 1.0,
    tau: float = 0.6,
    thresholds: AdaptiveThresholds | None = None,
    entropy_weight: float = 1.0,
    negative_weight: float = 1.0,
    gr_params: EpochLossParams | None = None,
    splc_active: bool = True,
) -> FrameworkLoss:
    """Build the five-piece bundle for one method id.

    EN and EM+APL need a threshold state; GR needs its epoch parameters.
    """
    if method_id == "AN":
        return FrameworkLoss(
            "AN", _const_pseudo(0.0), _ones_weight,
            _bce_pos, _bce_pos, _bce_neg,
            _bce_pos_grad, _bce_pos_grad, _bce_neg_grad,
        )

    if method_id == "AN-LS":
        if not 0.0 <= epsilon < 0.5:
            raise ParameterError("label-smoothing epsilon must lie in [0, 0.5)")
        sm_loss, sm_grad = _smoothed_pos(epsilon)
        return FrameworkLoss(
            "AN-LS", _const_pseudo(epsilon), _ones_weight,
            sm_loss, _bce_pos, _bce_neg,
            sm_grad, _bce_pos_grad, _bce_neg_grad,
        )

    if method_id == "Focal":
        if gamma < 0.0:
            raise ParameterError("focal gamma must be >= 0")
        fp_loss, fp_grad = _focal_pos(gamma)
        fn_loss, fn_grad = _focal_neg(gamma)
        return FrameworkLoss(
            "Focal", _const_pseudo(0.0), _ones_weight,
            fp_loss, fp_loss, fn_loss,
            fp_grad, fp_grad, fn_grad,
        )

    if method_id == "EN":
        if thresholds is None:
            raise ConfigError("EN requires a threshold state")
        tau1 = thresholds.tau1

        def pseudo_fn(p):
            p = np.asarray(p, dtype=float)
            return np.where(p <= tau1, 0.0, np.nan)

        def weight_fn(p, s01):
            p = np.asarray(p, dtype=float)
            return np.where((s01 == 1) | (p <= tau1), 1.0, 0.0)

        return FrameworkLoss(
            "EN", pseudo_fn, weight_fn,
            _bce_pos, _bce_pos, _bce_neg,
            _bce_pos_grad, _bce_pos_grad, _bce_neg_grad,
        )

    if method_id == "EM":
        ent_loss, ent_grad = _entropy_miss(1.0)

        def em_weight(p, s01):
            return np.where(s01 == 1, 1.0, entropy_weight)

        return FrameworkLoss(
            "EM", _const_pseudo(1.0), em_weight,
            _bce_pos, ent_loss, _bce_neg,
            _bce_pos_grad, ent_grad, _bce_neg_grad,
        )

    if method_id == "EM+APL":
        if thresholds is None:
            raise ConfigError("EM+APL requires a threshold state")
        tau1 = thresholds.tau1
        ent_loss, ent_grad = _entropy_miss(1.0)
        tgt_loss, tgt_grad = _frozen_target_bce(1.0)

        def apl_pseudo(p):
            p = np.asarray(p, dtype=float)
            return np.where(p <= tau1, 0.0, 1.0)

        def apl_weight(p, s01):
            p = np.asarray(p, dtype=float)
            miss = np.where(p <= tau1, negative_weight, entropy_weight)
            return np.where(s01 == 1, 1.0, miss)

        return FrameworkLoss(
            "EM+APL", apl_pseudo, apl_weight,
            _bce_pos, ent_loss, tgt_loss,
            _bce_pos_grad, ent_grad, tgt_grad,
        )

    if method_id == "Hill":
        if lam < 1.0:
            raise ParameterError("hill lambda must be >= 1")
        h_loss, h_grad = _hill_neg(lam)
        return FrameworkLoss(
            "Hill", _const_pseudo(0.0), _ones_weight,
            _bce_pos, None, h_loss,
            _bce_pos_grad, None, h_grad,
        )

    if method_id == "SPLC":
        if not 0.0 <= tau <= 1.0:
            raise ParameterError("tau must lie in [0, 1]")
        fm_loss, fm_grad = _focal_margin_pos(margin, gamma)
        h_loss, h_grad = _hill_neg(lam)
        if splc_active:

            def splc_pseudo(p):
                p = np.asarray(p, dtype=float)
                return np.where(p > tau, 1.0, 0.0)

        else:
            splc_pseudo = _const_pseudo(0.0)
        return FrameworkLoss(
            "SPLC", splc_pseudo, _ones_weight,
            fm_loss, fm_loss, h_loss,
            fm_grad, fm_grad, h_grad,
            needs_logit=True,
        )

    if method_id == "GR":
        if gr_params is None:
            raise ConfigError("GR requires epoch loss parameters")
        q = gr_params.robust
        p1_loss, p1_grad = _power_pos(q.q1)
        p2_loss, p2_grad = _power_pos(q.q2)
        n3_loss, n3_grad = _power_neg(q.q3)

        def gr_pseudo(p):
            return np.asarray(pseudo_label(p, gr_params.pseudo), dtype=float)

        def gr_weight(p, s01):
            return np.asarray(instance_weight(p, s01, gr_params.weight), dtype=float)

        return FrameworkLoss(
            "GR", gr_pseudo, gr_weight,
            p1_loss, p2_loss, n3_loss,
            p1_grad, p2_grad, n3_grad,
        )

    raise ConfigError(f"unknown method id {method_id!r}; expected one of {METHOD_IDS}")
