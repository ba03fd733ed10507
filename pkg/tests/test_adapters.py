"""Adapter tests: direct formulas, framework-bundle equivalence, relabeling
passes, stop-gradient targets, and the undefined-cell contract."""

import math

import numpy as np
import pytest

from spml.adapters import (
    AdaptiveThresholds,
    METHOD_IDS,
    an_label_smoothing_loss,
    an_loss,
    apl_relabel,
    em_apl_loss,
    em_loss,
    em_missing_grad_wrt_logit,
    en_loss,
    en_relabel,
    ema_update,
    focal_loss,
    focal_margin_positive_loss,
    framework_grad_wrt_logit,
    framework_per_label_loss,
    hill_negative_grad_wrt_logit,
    hill_negative_loss,
    splc_loss,
    to_framework,
)
from spml.errors import ConfigError, ContractViolationError, DomainError, ParameterError
from spml.numerics import logit, sigmoid
from spml.robust_loss import (
    EpochLossParams,
    InstanceWeightParams,
    PseudoLabelParams,
    RobustnessParams,
    per_label_grad_wrt_logit,
    per_label_loss,
)


class TestDirectForms:
    def test_an_loss_values(self):
        assert math.isclose(an_loss(0.5, 1), math.log(2.0), abs_tol=1e-15)
        assert math.isclose(an_loss(0.5, 0), math.log(2.0), abs_tol=1e-15)
        # The clamp applies only inside the log, so p = 1 is within one
        # clamp-width of an exact zero.
        assert abs(an_loss(1.0, 1)) <= 2e-12

    def test_an_ls_reduces_to_an(self):
        p = np.linspace(0.01, 0.99, 25)
        s = np.tile([0, 1], 13)[:25]
        np.testing.assert_array_equal(an_label_smoothing_loss(p, s, 0.0), an_loss(p, s))

    def test_an_ls_plug_in(self):
        want = -0.9 * math.log(0.9) - 0.1 * math.log(0.1)
        assert math.isclose(an_label_smoothing_loss(0.9, 1, 0.1), want, abs_tol=1e-12)

    def test_an_ls_minimum_at_epsilon(self):
        # For s = 0 the smoothed BCE is minimized where p equals epsilon.
        eps = 0.15
        grid = np.linspace(0.01, 0.99, 981)
        losses = an_label_smoothing_loss(grid, np.zeros_like(grid, dtype=int), eps)
        assert abs(grid[int(np.argmin(losses))] - eps) <= 2e-3

    def test_an_ls_epsilon_validation(self):
        with pytest.raises(ParameterError):
            an_label_smoothing_loss(0.5, 1, 0.5)

    def test_focal_reduces_to_bce(self):
        p = np.linspace(0.01, 0.99, 25)
        s = np.tile([0, 1], 13)[:25]
        np.testing.assert_allclose(focal_loss(p, s, 0.0), an_loss(p, s), atol=1e-15)

    def test_focal_values(self):
        assert focal_loss(1.0, 1, 2.0) == 0.0
        assert math.isclose(focal_loss(0.5, 1, 2.0), 0.25 * math.log(2.0), abs_tol=1e-12)

    def test_hill_values(self):
        assert hill_negative_loss(0.0) == 0.0
        assert math.isclose(hill_negative_loss(1.0, 1.5), 0.5, abs_tol=1e-15)

    def test_hill_gradient_closed_form(self):
        assert math.isclose(hill_negative_grad_wrt_logit(0.5, 1.5), 0.1875, abs_tol=1e-12)
        p = np.linspace(0.01, 0.99, 99)
        np.testing.assert_allclose(
            hill_negative_grad_wrt_logit(p, 1.5), 3.0 * p**2 * (1.0 - p) ** 2, atol=1e-12
        )

    def test_hill_gradient_matches_finite_difference(self):
        step = 1e-6
        for p in np.arange(0.05, 0.96, 0.1):
            z = logit(p)
            fd = (
                hill_negative_loss(sigmoid(z + step)) - hill_negative_loss(sigmoid(z - step))
            ) / (2.0 * step)
            assert abs(hill_negative_grad_wrt_logit(p) - fd) <= 1e-8

    def test_focal_margin_values(self):
        # margin 0, gamma 0 collapses to the positive BCE branch
        z = np.linspace(-4.0, 4.0, 17)
        np.testing.assert_allclose(
            focal_margin_positive_loss(z, 0.0, 0.0), -np.log(sigmoid(z)), atol=1e-12
        )
        assert focal_margin_positive_loss(60.0, 1.0, 2.0) <= 1e-15
        assert math.isclose(
            focal_margin_positive_loss(0.0, 0.0, 2.0), 0.25 * math.log(2.0), abs_tol=1e-12
        )

    def test_splc_branch_switch(self):
        tau = 0.6
        z_below = logit(tau - 0.01)
        z_above = logit(tau + 0.01)
        below = splc_loss(z_below, 0, tau=tau)
        above = splc_loss(z_above, 0, tau=tau)
        assert below == hill_negative_loss(sigmoid(z_below))
        assert math.isclose(
            above, focal_margin_positive_loss(z_above), abs_tol=1e-15
        )

    def test_splc_gate_off_assumes_negative(self):
        z = logit(0.9)
        assert splc_loss(z, 0, tau=0.6, active=False) == hill_negative_loss(0.9)

    def test_em_entropy_gradient_zero_at_half(self):
        assert em_missing_grad_wrt_logit(0.5) == 0.0

    def test_em_gradient_closed_form(self):
        p = np.linspace(0.01, 0.99, 99)
        want = np.log(p / (1.0 - p)) * p * (1.0 - p)
        np.testing.assert_allclose(em_missing_grad_wrt_logit(p), want, atol=1e-12)

    def test_em_gradient_matches_finite_difference(self):
        step = 1e-6
        for p in np.arange(0.05, 0.96, 0.1):
            z = logit(p)
            fd = (em_loss(sigmoid(z + step), 0) - em_loss(sigmoid(z - step), 0)) / (2 * step)
            assert abs(em_missing_grad_wrt_logit(p) - fd) <= 1e-8

    def test_em_apl_frozen_target_gradient(self):
        # d/dz of the relabeled-negative branch with the target frozen is
        # beta * (p - target); check against a finite difference that holds
        # the target fixed.
        p, target, beta, step = 0.3, 0.7, 2.0, 1e-6
        z = logit(p)

        def loss_at(zz):
            return em_apl_loss(sigmoid(zz), -1, 1.0, beta, frozen_target=target)

        fd = (loss_at(z + step) - loss_at(z - step)) / (2.0 * step)
        assert abs(beta * (p - target) - fd) <= 1e-8

    def test_em_apl_fresh_freeze_has_zero_gradient(self):
        fl = to_framework("EM+APL", thresholds=AdaptiveThresholds(tau1=0.5))
        g = framework_grad_wrt_logit(fl, 0.2, 0)  # p <= tau1 -> frozen-target branch
        assert g == 0.0

    def test_em_apl_code_validation(self):
        with pytest.raises(DomainError):
            em_apl_loss(0.5, 2)

    def test_parameter_range_validation(self):
        with pytest.raises(ParameterError):
            hill_negative_loss(0.5, lam=0.5)
        with pytest.raises(ParameterError):
            focal_margin_positive_loss(0.0, margin=-1.0)
        with pytest.raises(ParameterError):
            splc_loss(0.0, 0, tau=1.5)
        with pytest.raises(ParameterError):
            AdaptiveThresholds(tau1=0.2, tau2=0.4)


class TestRelabeling:
    def test_apl_examples(self):
        conf = np.array([[0.1], [0.2], [0.3], [0.4]])
        observed = np.zeros((4, 1), dtype=int)
        assert np.array_equal(apl_relabel(conf, observed, 0.0), np.zeros((4, 1)))
        assert np.array_equal(apl_relabel(conf, observed, 100.0), -np.ones((4, 1)))
        half = apl_relabel(conf, observed, 50.0)
        assert half[:, 0].tolist() == [-1, -1, 0, 0]

    def test_apl_respects_observed_positives(self):
        conf = np.array([[0.05, 0.9], [0.1, 0.8], [0.2, 0.7]])
        observed = np.array([[1, 0], [0, 1], [0, 0]])
        codes = apl_relabel(conf, observed, 100.0)
        assert codes[0, 0] == 1 and codes[1, 1] == 1
        assert np.all(codes[observed == 0] == -1)

    def test_apl_tie_break_by_index(self):
        conf = np.full((4, 1), 0.5)
        observed = np.zeros((4, 1), dtype=int)
        codes = apl_relabel(conf, observed, 50.0)
        assert codes[:, 0].tolist() == [-1, -1, 0, 0]

    def test_apl_deterministic(self):
        rng = np.random.default_rng(0)
        conf = rng.uniform(size=(30, 4))
        observed = (rng.uniform(size=(30, 4)) < 0.2).astype(int)
        a = apl_relabel(conf, observed, 30.0)
        b = apl_relabel(conf.copy(), observed.copy(), 30.0)
        assert np.array_equal(a, b)

    def test_en_boundary_counts(self):
        ema = np.array([[0.1], [0.4], [0.2], [0.9]])
        observed = np.zeros((4, 1), dtype=int)
        all_neg = en_relabel(ema, observed, [0])
        assert np.all(all_neg == -1)
        none_neg = en_relabel(ema, observed, [4])
        assert np.all(none_neg == 0)
        two = en_relabel(ema, observed, [2])
        assert two[:, 0].tolist() == [-1, 0, -1, 0]

    def test_en_count_validation(self):
        with pytest.raises(DomainError):
            en_relabel(np.ones((3, 1)) * 0.5, np.zeros((3, 1), dtype=int), [4])

    def test_ema_matches_loop_oracle(self):
        rng = np.random.default_rng(9)
        decay = 0.9
        state = None
        oracle = None
        for _ in range(5):
            conf = rng.uniform(size=(6, 3))
            state = ema_update(state, conf, decay)
            oracle = conf.copy() if oracle is None else decay * oracle + (1 - decay) * conf
            np.testing.assert_allclose(state, oracle, atol=1e-15)

    def test_ema_decay_validation(self):
        with pytest.raises(ParameterError):
            ema_update(None, np.ones((2, 2)), 1.0)


def _gr_epoch_params():
    return EpochLossParams(
        PseudoLabelParams(2.0, -1.0),
        InstanceWeightParams(0.8, 0.5),
        RobustnessParams(0.01, 0.01, 1.0),
    )


def _direct_and_framework(method, p, s, tau):
    """Evaluate one (p, s, threshold-state) tuple through both routes."""
    if method == "AN":
        return an_loss(p, s), framework_per_label_loss(to_framework("AN"), p, s)
    if method == "AN-LS":
        fl = to_framework("AN-LS", epsilon=0.1)
        return an_label_smoothing_loss(p, s, 0.1), framework_per_label_loss(fl, p, s)
    if method == "Focal":
        fl = to_framework("Focal", gamma=2.0)
        return focal_loss(p, s, 2.0), framework_per_label_loss(fl, p, s)
    if method == "EN":
        fl = to_framework("EN", thresholds=AdaptiveThresholds(tau1=tau))
        return en_loss(p, s, tau), framework_per_label_loss(fl, p, s)
    if method == "EM":
        fl = to_framework("EM", entropy_weight=0.7)
        return em_loss(p, s, 0.7), framework_per_label_loss(fl, p, s)
    if method == "EM+APL":
        fl = to_framework(
            "EM+APL",
            thresholds=AdaptiveThresholds(tau1=tau),
            entropy_weight=0.7,
            negative_weight=1.3,
        )
        code = 1 if s == 1 else (-1 if p <= tau else 0)
        target = 0.45
        direct = em_apl_loss(p, code, 0.7, 1.3, frozen_target=target)
        return direct, framework_per_label_loss(fl, p, s, target=target)
    if method == "Hill":
        fl = to_framework("Hill", lam=1.5)
        direct = an_loss(p, 1) if s == 1 else hill_negative_loss(p, 1.5)
        return direct, framework_per_label_loss(fl, p, s)
    if method == "SPLC":
        fl = to_framework("SPLC", tau=tau, margin=1.0, gamma=2.0, lam=1.5)
        z = logit(p)
        return splc_loss(z, s, tau=tau), framework_per_label_loss(fl, p, s, z=z)
    if method == "GR":
        params = _gr_epoch_params()
        fl = to_framework("GR", gr_params=params)
        return per_label_loss(p, s, params), framework_per_label_loss(fl, p, s)
    raise AssertionError(method)


@pytest.mark.parametrize("method", METHOD_IDS)
def test_framework_equivalence(method):
    rng = np.random.default_rng(17)
    worst = 0.0
    for _ in range(1000):
        p = float(rng.uniform(0.001, 0.999))
        s = int(rng.integers(0, 2))
        tau = float(rng.uniform(0.1, 0.9))
        if abs(p - tau) < 1e-9:
            continue
        direct, framework = _direct_and_framework(method, p, s, tau)
        worst = max(worst, abs(direct - framework))
    assert worst <= 1e-12


@pytest.mark.parametrize("method", METHOD_IDS)
def test_framework_gradient_matches_frozen_finite_difference(method):
    """The bundle gradient must match a finite difference of the bundle loss
    with pseudo-label, weight and target all held at the base point."""
    rng = np.random.default_rng(23)
    step = 1e-6
    for _ in range(40):
        p = float(rng.uniform(0.05, 0.95))
        s = int(rng.integers(0, 2))
        tau = float(rng.uniform(0.1, 0.9))
        if abs(p - tau) < 1e-3:
            continue
        if method == "GR":
            fl = to_framework("GR", gr_params=_gr_epoch_params())
        elif method in ("EN", "EM+APL"):
            fl = to_framework(method, thresholds=AdaptiveThresholds(tau1=tau))
        elif method == "SPLC":
            fl = to_framework("SPLC", tau=tau)
        else:
            fl = to_framework(method)
        target = 0.3 if method == "EM+APL" else None
        pseudo = fl.pseudo_fn(np.asarray(p))
        weight = fl.weight_fn(np.asarray(p), np.asarray(s))
        z = logit(p)
        analytic = framework_grad_wrt_logit(
            fl, p, s, z=z, target=target, pseudo=pseudo, weight=weight
        )

        def frozen_loss(zz):
            pp = sigmoid(zz)
            return framework_per_label_loss(
                fl, pp, s, z=zz, target=target, pseudo=pseudo, weight=weight
            )

        fd = (frozen_loss(z + step) - frozen_loss(z - step)) / (2.0 * step)
        assert abs(analytic - fd) <= 1e-5 * max(abs(fd), abs(analytic), 1e-4)


class TestBundleContracts:
    def test_zero_weight_silences_undefined_pseudo(self):
        fl = to_framework("EN", thresholds=AdaptiveThresholds(tau1=0.3))
        # p above tau1 on a missing label: pseudo-label undefined, weight 0.
        assert framework_per_label_loss(fl, 0.8, 0) == 0.0
        assert framework_grad_wrt_logit(fl, 0.8, 0) == 0.0

    def test_undefined_pseudo_with_weight_raises(self):
        fl = to_framework("EN", thresholds=AdaptiveThresholds(tau1=0.3))
        with pytest.raises(ContractViolationError):
            framework_per_label_loss(fl, 0.8, 0, weight=1.0)

    def test_undefined_branch_with_demand_raises(self):
        fl = to_framework("Hill")
        with pytest.raises(ContractViolationError):
            framework_per_label_loss(fl, 0.5, 0, pseudo=0.5, weight=1.0)

    def test_zero_weight_zeroes_composed_loss_for_all_methods(self):
        for method in METHOD_IDS:
            if method == "GR":
                fl = to_framework("GR", gr_params=_gr_epoch_params())
            elif method in ("EN", "EM+APL"):
                fl = to_framework(method, thresholds=AdaptiveThresholds(tau1=0.5))
            else:
                fl = to_framework(method)
            assert framework_per_label_loss(fl, 0.4, 0, weight=0.0) == 0.0

    def test_finite_on_open_interval(self):
        p = np.linspace(1e-9, 1.0 - 1e-9, 101)
        for method in METHOD_IDS:
            if method == "GR":
                fl = to_framework("GR", gr_params=_gr_epoch_params())
            elif method in ("EN", "EM+APL"):
                fl = to_framework(method, thresholds=AdaptiveThresholds(tau1=0.5))
            else:
                fl = to_framework(method)
            for s in (0, 1):
                values = framework_per_label_loss(fl, p, np.full(p.shape, s, dtype=int))
                assert np.all(np.isfinite(values))

    def test_unknown_method(self):
        with pytest.raises(ConfigError):
            to_framework("ROLE")

    def test_table_row_shapes(self):
        hill = to_framework("Hill")
        assert hill.loss_miss_pos is None
        p = np.array([0.2, 0.6])
        np.testing.assert_array_equal(hill.pseudo_fn(p), [0.0, 0.0])
        gr = to_framework("GR", gr_params=_gr_epoch_params())
        k = gr.pseudo_fn(np.array([0.5]))
        assert math.isclose(float(k[0]), sigmoid(2.0 * 0.5 - 1.0), abs_tol=1e-15)
        an = to_framework("AN")
        np.testing.assert_array_equal(an.weight_fn(p, np.array([0, 1])), [1.0, 1.0])


class TestFrameworkGradEquivalence:
    def test_gr_bundle_grad_matches_core(self):
        params = _gr_epoch_params()
        fl = to_framework("GR", gr_params=params)
        rng = np.random.default_rng(31)
        p = rng.uniform(0.01, 0.99, size=200)
        s = rng.integers(0, 2, size=200)
        got = framework_grad_wrt_logit(fl, p, s)
        want = per_label_grad_wrt_logit(p, s, params)
        np.testing.assert_allclose(got, want, atol=1e-14)
