import math
import warnings
from fractions import Fraction

import numpy as np
import pytest

from uqgate.conformal import (
    CalibrationModel,
    StratTree,
    conformal_quantile,
    evaluate_coverage,
    fit_calibration,
    leaf_alpha,
    nonconformity,
    predict_interval,
)
from uqgate.errors import DataError


def oracle_quantile(scores, alpha):
    """Sort-and-index brute force with exact decimal arithmetic."""
    ordered = sorted(scores)
    n = len(ordered)
    k = math.ceil(Fraction(1) - Fraction(str(alpha))) if False else None
    level = (Fraction(1) - Fraction(str(alpha))) * (n + 1)
    k = int(math.ceil(level))
    if k > n:
        return ordered[-1], True
    return ordered[k - 1], False


class TestNonconformity:
    def test_zero_residual(self):
        assert nonconformity(0.4, 0.4, 0.9, 0.1) == 0.0

    def test_three_four_five(self):
        got = nonconformity(0.7, 0.2, 0.3, 0.4, eps=1e-10)
        assert got == pytest.approx(1.0, abs=1e-9)

    def test_eps_guard_keeps_it_finite(self):
        got = nonconformity(0.2, 0.0, 0.0, 0.0, eps=1e-10)
        assert got == pytest.approx(2e9, rel=1e-12)
        assert math.isfinite(got)


class TestConformalQuantile:
    def test_ten_scores_alpha_half(self):
        scores = list(range(1, 11))
        assert conformal_quantile(scores, 0.5) == 6.0

    def test_boundary_of_ceiling_formula(self):
        # n=9, alpha=0.1: index 9 equals n, so the max without any warning.
        scores = [float(i) for i in range(1, 10)]
        with warnings.catch_warnings():
            warnings.simplefilter("error")
            assert conformal_quantile(scores, 0.1) == 9.0

    def test_small_sample_clamps_with_warning(self):
        scores = [1.0, 2.0, 3.0, 4.0, 5.0]
        with pytest.warns(UserWarning, match="too small"):
            assert conformal_quantile(scores, 0.1) == 5.0

    def test_empty_rejected(self):
        with pytest.raises(DataError):
            conformal_quantile([], 0.1)

    def test_exhaustive_against_oracle(self):
        rng = np.random.default_rng(0)
        for n in range(1, 51):
            scores = rng.uniform(size=n).tolist()
            for alpha in (0.05, 0.1, 0.2, 0.5):
                expected, clamped = oracle_quantile(scores, alpha)
                with warnings.catch_warnings():
                    warnings.simplefilter("ignore")
                    got = conformal_quantile(scores, alpha)
                assert got == expected, (n, alpha)

    def test_monotone_as_alpha_decreases(self):
        rng = np.random.default_rng(1)
        scores = rng.uniform(size=80).tolist()
        alphas = [0.5, 0.4, 0.3, 0.2, 0.1, 0.05]
        with warnings.catch_warnings():
            warnings.simplefilter("ignore")
            qs = [conformal_quantile(scores, a) for a in alphas]
        assert all(b >= a for a, b in zip(qs, qs[1:]))


class TestFitCalibration:
    def fit_simple(self, n=100, seed=0, min_leaf_n=30, features=None, y=None):
        rng = np.random.default_rng(seed)
        features = rng.normal(size=(n, 3)) if features is None else features
        y = rng.uniform(size=n) if y is None else y
        y_hat = np.full(n, 0.5)
        sa = rng.uniform(0.1, 0.9, size=n)
        se = rng.uniform(0.1, 0.9, size=n)
        return fit_calibration(features, y, y_hat, sa, se,
                               alpha=0.1, min_leaf_n=min_leaf_n)

    def test_small_sample_forces_fallback(self):
        model = self.fit_simple(n=20, min_leaf_n=30)
        assert all(lq.fallback for lq in model.leaf_quantiles.values())
        assert all(lq.q == model.q_global for lq in model.leaf_quantiles.values())

    def test_identical_features_single_leaf_more_conservative(self):
        n = 100
        rng = np.random.default_rng(2)
        features = np.ones((n, 3))
        model = self.fit_simple(n=n, features=features)
        assert len(model.leaf_quantiles) == 1
        (lq,) = model.leaf_quantiles.values()
        assert not lq.fallback
        assert lq.alpha_leaf < model.alpha
        # Lower miscoverage level on the same scores cannot shrink the quantile.
        assert lq.q >= model.q_global

    def test_two_cluster_leaf_quantiles_ordered(self):
        rng = np.random.default_rng(3)
        n = 400
        half = n // 2
        features = np.vstack([
            rng.normal(-4.0, 0.5, size=(half, 2)),
            rng.normal(4.0, 0.5, size=(half, 2)),
        ])
        y = np.concatenate([
            0.3 + 0.01 * rng.normal(size=half),   # quiet cluster
            0.5 + 0.2 * rng.normal(size=half),    # noisy cluster
        ])
        y_hat = np.concatenate([np.full(half, 0.3), np.full(half, 0.5)])
        sa = np.full(n, 0.5)
        se = np.full(n, 0.5)
        model = fit_calibration(features, y, y_hat, sa, se, alpha=0.1,
                                min_leaf_n=30)
        q_quiet = predict_interval(model, np.array([-4.0, -4.0]), 0.3, 0.5, 0.5).q_used
        q_noisy = predict_interval(model, np.array([4.0, 4.0]), 0.5, 0.5, 0.5).q_used
        # Per-cluster oracle: quantiles of each cluster's own scores keep
        # the same ordering.
        assert q_quiet < q_noisy

    def test_needs_twenty_records(self):
        with pytest.raises(DataError):
            self.fit_simple(n=19)

    def test_constant_scores_still_valid(self):
        n = 60
        rng = np.random.default_rng(4)
        features = rng.normal(size=(n, 2))
        y = np.full(n, 0.4)
        y_hat = np.full(n, 0.4)
        sa = np.full(n, 0.3)
        se = np.full(n, 0.4)
        model = fit_calibration(features, y, y_hat, sa, se, alpha=0.1,
                                min_leaf_n=30)
        assert model.q_global == 0.0
        assert all(lq.q == 0.0 for lq in model.leaf_quantiles.values())

    def test_leaf_alpha_is_conservative_and_converging(self):
        assert leaf_alpha(0.1, 30) < 0.1
        assert leaf_alpha(0.1, 30) < leaf_alpha(0.1, 1000) < 0.1


class TestPredictInterval:
    def single_leaf_model(self, q=2.0, alpha=0.1):
        tree = StratTree.fit(np.zeros((40, 1)), np.zeros(40), min_leaf_n=30)
        from uqgate.conformal import LeafQuantile
        return CalibrationModel(
            alpha=alpha, q_global=q, tree=tree,
            leaf_quantiles={0: LeafQuantile(q=q, n=40, alpha_leaf=alpha,
                                            fallback=False)},
            min_leaf_n=30,
        )

    def test_zero_sigma_degenerate(self):
        model = self.single_leaf_model()
        band = predict_interval(model, np.zeros(1), 0.5, 0.0, 0.0)
        assert band.lo == band.hi == 0.5

    def test_three_four_five_halfwidth(self):
        model = self.single_leaf_model(q=2.0)
        band = predict_interval(model, np.zeros(1), 0.5, 0.3, 0.4)
        assert band.lo == pytest.approx(-0.5, abs=1e-12)
        assert band.hi == pytest.approx(1.5, abs=1e-12)

    def test_doubling_sigmas_doubles_width(self):
        model = self.single_leaf_model(q=1.7)
        a = predict_interval(model, np.zeros(1), 0.5, 0.2, 0.3)
        b = predict_interval(model, np.zeros(1), 0.5, 0.4, 0.6)
        assert b.width == pytest.approx(2 * a.width, rel=1e-12)

    def test_width_formula_bit_exact(self):
        model = self.single_leaf_model(q=1.3)
        band = predict_interval(model, np.zeros(1), 0.4, 0.25, 0.6)
        expected = 2.0 * 1.3 * math.sqrt(0.25**2 + 0.6**2)
        assert band.hi - band.lo == (band.lo + expected) - band.lo or \
            band.width == pytest.approx(expected, rel=1e-15)

    def test_fallback_leaf_uses_global(self):
        rng = np.random.default_rng(5)
        n = 20
        model = fit_calibration(
            rng.normal(size=(n, 2)), rng.uniform(size=n), np.full(n, 0.5),
            np.full(n, 0.5), np.full(n, 0.5), alpha=0.1, min_leaf_n=30,
        )
        band = predict_interval(model, np.zeros(2), 0.5, 0.5, 0.5)
        assert band.leaf_id == "global"
        assert band.q_used == model.q_global


class TestCoverage:
    def test_whole_range_intervals_cover_everything(self):
        rng = np.random.default_rng(6)
        n = 50
        model = TestPredictInterval().single_leaf_model(q=100.0)
        cov, width = evaluate_coverage(
            model, rng.normal(size=(n, 1)), rng.uniform(size=n),
            np.full(n, 0.5), np.full(n, 0.5), np.full(n, 0.5),
        )
        assert cov == 1.0

    def test_zero_width_intervals_cover_nothing(self):
        rng = np.random.default_rng(7)
        n = 50
        model = TestPredictInterval().single_leaf_model(q=0.0)
        cov, width = evaluate_coverage(
            model, rng.normal(size=(n, 1)), rng.uniform(size=n),
            np.full(n, 0.5), np.full(n, 0.5), np.full(n, 0.5),
        )
        assert cov == 0.0
        assert width == 0.0

    def test_empty_test_set_rejected(self):
        model = TestPredictInterval().single_leaf_model()
        with pytest.raises(DataError):
            evaluate_coverage(model, np.zeros((0, 1)), np.zeros(0),
                              np.zeros(0), np.zeros(0), np.zeros(0))

    def test_split_conformal_validity_small(self):
        # Desk-size sanity run; the acceptance suite runs the full version.
        hits = []
        for seed in range(5):
            rng = np.random.default_rng(seed)
            n = 500
            y_cal = rng.normal(size=n)
            y_test = rng.normal(size=n)
            scores = np.abs(y_cal)
            q = conformal_quantile(scores, 0.1)
            cov = float(np.mean(np.abs(y_test) <= q))
            hits.append(cov)
        assert sum(1 for c in hits if 0.85 <= c <= 0.95) >= 4
