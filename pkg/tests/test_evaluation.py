"""Metric tests. AP/mAP and the Wasserstein distance are compared against
definition-following brute-force oracles that share nothing with the
implementations except IEEE arithmetic; the comparisons are exact."""

import math

import numpy as np
import pytest

from spml.errors import DomainError
from spml.evaluation import (
    EvalReport,
    average_precision,
    build_eval_report,
    confidence_histogram,
    distinguishability,
    fn_ratio_buckets,
    gradient_curves,
    mean_average_precision,
    per_class_average_precision,
    wasserstein1,
)
from spml.numerics import sigmoid
from spml.robust_loss import missing_label_grad_wrt_logit


def oracle_average_precision(scores, truth):
    """Literal definition: walk ranks in descending score order (ties by
    index), count positives in each prefix by brute force."""
    order = sorted(range(len(scores)), key=lambda i: (-scores[i], i))
    total = 0.0
    n_pos = 0
    for rank, idx in enumerate(order, start=1):
        if truth[idx] == 1:
            hits = 0
            for j in order[:rank]:
                if truth[j] == 1:
                    hits += 1
            total += hits / rank
            n_pos += 1
    return total / n_pos


def oracle_wasserstein1(a, b):
    """Literal CDF-integral definition with brute-force counting."""
    points = sorted(set(list(a) + list(b)))
    total = 0.0
    for lo, hi in zip(points[:-1], points[1:]):
        below_a = sum(1 for v in a if v <= lo)
        below_b = sum(1 for v in b if v <= lo)
        total += abs(below_a / len(a) - below_b / len(b)) * (hi - lo)
    return total


class TestAveragePrecision:
    def test_perfect_ranking(self):
        assert average_precision([0.9, 0.8, 0.1], [1, 1, 0]) == 1.0

    def test_single_positive_midrank(self):
        assert average_precision([0.9, 0.8, 0.7], [0, 1, 0]) == 0.5

    def test_all_positive(self):
        assert average_precision([0.9, 0.8], [1, 1]) == 1.0

    def test_tie_break_is_stable(self):
        assert average_precision([0.5, 0.5], [1, 0]) == 1.0
        assert average_precision([0.5, 0.5], [0, 1]) == 0.5

    def test_no_positive_raises(self):
        with pytest.raises(DomainError):
            average_precision([0.1, 0.2], [0, 0])

    def test_matches_oracle_exactly(self):
        rng = np.random.default_rng(19)
        for _ in range(300):
            n = int(rng.integers(1, 9))
            scores = rng.uniform(size=n)
            truth = rng.integers(0, 2, size=n)
            if truth.sum() == 0:
                truth[int(rng.integers(n))] = 1
            assert average_precision(scores, truth) == oracle_average_precision(
                scores.tolist(), truth.tolist()
            )


class TestMeanAveragePrecision:
    def test_identity_toy(self):
        scores = np.eye(3)
        assert mean_average_precision(scores, np.eye(3, dtype=int)) == 1.0

    def test_mean_of_two_classes(self):
        scores = np.array([[0.9, 0.9], [0.8, 0.8], [0.1, 0.7]])
        truth = np.array([[1, 0], [0, 1], [0, 0]])
        assert mean_average_precision(scores, truth) == 0.75

    def test_instance_permutation_invariance(self):
        rng = np.random.default_rng(2)
        scores = rng.uniform(size=(20, 4))
        truth = (rng.uniform(size=(20, 4)) < 0.3).astype(int)
        truth[0] = 1
        base = mean_average_precision(scores, truth)
        perm = rng.permutation(20)
        assert math.isclose(
            mean_average_precision(scores[perm], truth[perm]), base, abs_tol=1e-12
        )

    def test_empty_classes_skipped_and_reported(self):
        scores = np.array([[0.9, 0.2], [0.1, 0.3]])
        truth = np.array([[1, 0], [0, 0]])
        values, skipped = per_class_average_precision(scores, truth)
        assert values[1] is None and skipped == [1]
        assert mean_average_precision(scores, truth) == 1.0

    def test_no_valid_class_raises(self):
        with pytest.raises(DomainError):
            mean_average_precision(np.ones((2, 1)), np.zeros((2, 1), dtype=int))

    def test_matches_oracle_exactly(self):
        rng = np.random.default_rng(29)
        for _ in range(200):
            n = int(rng.integers(2, 9))
            c = int(rng.integers(1, 6))
            scores = rng.uniform(size=(n, c))
            truth = (rng.uniform(size=(n, c)) < 0.4).astype(int)
            truth[0, :] = 1
            aps = [
                oracle_average_precision(scores[:, j].tolist(), truth[:, j].tolist())
                for j in range(c)
            ]
            total = 0.0
            for v in aps:
                total += v
            assert mean_average_precision(scores, truth) == total / c


class TestWasserstein:
    def test_identical_samples(self):
        assert wasserstein1([0.2, 0.4, 0.9], [0.9, 0.2, 0.4]) == 0.0

    def test_point_masses(self):
        assert wasserstein1([0.0], [1.0]) == 1.0

    def test_split_mass(self):
        assert wasserstein1([0.0, 1.0], [0.5, 0.5]) == 0.5

    def test_symmetry(self):
        rng = np.random.default_rng(3)
        a = rng.uniform(size=17)
        b = rng.uniform(size=23)
        assert wasserstein1(a, b) == wasserstein1(b, a)

    def test_triangle_inequality(self):
        rng = np.random.default_rng(5)
        for _ in range(50):
            a = rng.uniform(size=12)
            b = rng.uniform(size=12)
            c = rng.uniform(size=12)
            assert wasserstein1(a, c) <= wasserstein1(a, b) + wasserstein1(b, c) + 1e-9

    def test_empty_raises(self):
        with pytest.raises(DomainError):
            wasserstein1([], [0.5])

    def test_matches_oracle_exactly(self):
        rng = np.random.default_rng(37)
        for _ in range(300):
            a = rng.uniform(size=int(rng.integers(1, 12)))
            b = rng.uniform(size=int(rng.integers(1, 12)))
            assert wasserstein1(a, b) == oracle_wasserstein1(a.tolist(), b.tolist())


class TestDistinguishability:
    def _toy(self):
        # One unannotated positive at confidence 1, two unannotated
        # negatives at 0; the observed column is excluded entirely.
        conf = np.array([[0.9, 1.0], [0.9, 0.0], [0.9, 0.0]])
        y = np.array([[1, 1], [1, 0], [1, 0]])
        s = np.array([[1, 0], [1, 0], [1, 0]])
        return conf, y, s

    def test_perfect_separation(self):
        conf, y, s = self._toy()
        report = distinguishability(conf, y, s)
        assert report.w1 == 1.0
        assert report.n_positive == 1 and report.n_negative == 2

    def test_identical_distributions(self):
        conf = np.full((4, 2), 0.5)
        y = np.array([[1, 0], [1, 0], [1, 1], [1, 1]])
        s = np.zeros_like(y)
        s[:, 0] = 1
        report = distinguishability(conf, y, s)
        assert report.w1 == 0.0

    def test_annotated_entries_excluded(self):
        conf, y, s = self._toy()
        report = distinguishability(conf, y, s)
        # the observed (1.0) and (0.5) entries of column 0 must not leak in
        assert report.n_positive + report.n_negative == int((s == 0).sum())

    def test_empty_side_raises(self):
        y = np.array([[1, 1], [1, 1]])
        s = np.array([[1, 0], [0, 1]])
        with pytest.raises(DomainError):
            distinguishability(np.full((2, 2), 0.5), y, s)

    def test_histograms_count_everything(self):
        conf, y, s = self._toy()
        report = distinguishability(conf, y, s)
        assert report.positive_hist.sum() == report.n_positive
        assert report.negative_hist.sum() == report.n_negative

    def test_histogram_edge_value(self):
        counts = confidence_histogram([1.0, 0.0, 0.999])
        assert counts[-1] == 2 and counts[0] == 1


class TestFnRatioBuckets:
    def test_constant_confidence_single_bucket(self):
        rng = np.random.default_rng(41)
        y = (rng.uniform(size=(50, 4)) < 0.4).astype(int)
        y[:, 0] = 1
        s = np.zeros_like(y)
        s[:, 0] = 1
        conf = np.full(y.shape, 0.5)
        curve = fn_ratio_buckets(conf, y, s)
        occupied = np.flatnonzero(curve.occupancy)
        assert occupied.tolist() == [50]
        missing = (s == 0)
        global_prior = ((y == 1) & missing).sum() / missing.sum()
        assert math.isclose(curve.ratios[50], global_prior, abs_tol=1e-12)

    def test_all_true_negatives(self):
        y = np.array([[1, 0], [1, 0]])
        s = np.array([[1, 0], [1, 0]])
        curve = fn_ratio_buckets(np.array([[0.9, 0.1], [0.9, 0.8]]), y, s)
        occ = curve.occupancy > 0
        assert np.all(curve.ratios[occ] == 0.0)

    def test_counts_conserve(self):
        rng = np.random.default_rng(43)
        y = (rng.uniform(size=(80, 5)) < 0.3).astype(int)
        y[:, 2] = 1
        s = np.zeros_like(y)
        s[:, 2] = 1
        conf = rng.uniform(size=y.shape)
        curve = fn_ratio_buckets(conf, y, s)
        assert curve.occupancy.sum() == int((s == 0).sum())

    def test_unoccupied_buckets_flagged(self):
        curve = fn_ratio_buckets(
            np.array([[0.5, 0.5]]), np.array([[1, 1]]), np.array([[1, 0]])
        )
        assert np.isnan(curve.ratios[0])
        assert not np.isnan(curve.ratios[50])


class TestGradientCurves:
    def _series(self, **kw):
        args = dict(pseudo_start=(0.0, -1.0), pseudo_end=(2.0, -2.0), q2=0.01, q3=1.0)
        args.update(kw)
        return gradient_curves(np.linspace(0.01, 0.99, 99), **args)

    def test_labels_and_shapes(self):
        series = self._series()
        assert [label for label, _, _ in series] == [
            "robust[start]", "robust[end]", "entropy", "hill",
        ]

    def test_entropy_zero_at_half(self):
        series = dict((label, (p, g)) for label, p, g in self._series())
        p, g = series["entropy"]
        assert abs(g[np.argmin(np.abs(p - 0.5))]) <= 1e-12

    def test_hill_value(self):
        series = dict((label, (p, g)) for label, p, g in self._series())
        p, g = series["hill"]
        assert math.isclose(g[np.argmin(np.abs(p - 0.5))], 0.1875, abs_tol=1e-12)

    def test_degenerate_pseudo_is_sigmoid_derivative(self):
        # pseudo-label pinned at 0 with q3 = 1 leaves the p(1-p) curve
        series = self._series(pseudo_start=(0.0, -800.0), q3=1.0)
        label, p, g = series[0]
        np.testing.assert_allclose(g, p * (1.0 - p), atol=1e-15)

    def test_matches_core_closed_form(self):
        # Independent inline formulas must agree with the loss module.
        p = np.linspace(0.01, 0.99, 99)
        for slope, bias in ((0.0, -1.0), (2.0, -2.0), (10.0, -8.0)):
            series = gradient_curves(
                p, pseudo_start=(slope, bias), pseudo_end=(slope, bias), q2=0.01, q3=1.0
            )
            _, _, g = series[0]
            k = sigmoid(slope * p + bias)
            want = missing_label_grad_wrt_logit(p, k, 0.01, 1.0)
            np.testing.assert_allclose(g, want, atol=1e-14)

    def test_matches_adapter_closed_forms(self):
        from spml.adapters import em_missing_grad_wrt_logit, hill_negative_grad_wrt_logit

        p = np.linspace(0.01, 0.99, 99)
        series = dict((label, g) for label, _, g in self._series())
        np.testing.assert_allclose(
            series["entropy"], em_missing_grad_wrt_logit(p), atol=1e-14
        )
        np.testing.assert_allclose(
            series["hill"], hill_negative_grad_wrt_logit(p, 1.5), atol=1e-14
        )

    def test_grid_domain_checked(self):
        with pytest.raises(DomainError):
            self._series_with_bad_grid()

    def _series_with_bad_grid(self):
        return gradient_curves(
            np.array([0.0, 0.5]), pseudo_start=(0, 0), pseudo_end=(0, 0), q2=1, q3=1
        )


class TestEvalReport:
    def test_build_and_serialize(self):
        scores = np.array([[0.9, 0.1], [0.2, 0.8]])
        truth = np.array([[1, 0], [0, 1]])
        report = build_eval_report(scores, truth, extras={"note": "toy"})
        assert report.map == 1.0
        payload = report.to_json_dict()
        assert payload["map"] == 1.0 and payload["extras"]["note"] == "toy"
        assert isinstance(report.to_json(), str)

    def test_report_is_dataclass_roundtrippable(self):
        report = EvalReport(per_class_ap=[1.0], skipped_classes=[], map=1.0)
        assert report.to_json_dict()["w1"] is None
