import math

import numpy as np
import pytest

from uqgate.aleatoric import (
    DensityModel,
    fit_density,
    mahalanobis,
    mahalanobis_batch,
    score_aleatoric,
    score_aleatoric_batch,
)
from uqgate.errors import DataError, NumericError
from uqgate.records import FeatureRecord, FeatureStore


def store_from(points) -> FeatureStore:
    return FeatureStore([
        FeatureRecord(
            id=f"s:{i}:{i}", sequence="s", frame=i, model_id="m",
            bbox=(0.0, 0.0, 1.0, 1.0), feature=np.asarray(p, dtype=float),
        )
        for i, p in enumerate(points)
    ])


def adjugate_inverse(a: np.ndarray) -> np.ndarray:
    """3x3 inverse via the adjugate; independent of any factorization."""
    cof = np.empty((3, 3))
    for i in range(3):
        for j in range(3):
            minor = np.delete(np.delete(a, i, axis=0), j, axis=1)
            cof[i, j] = (-1) ** (i + j) * (
                minor[0, 0] * minor[1, 1] - minor[0, 1] * minor[1, 0]
            )
    det = (a[0, 0] * cof[0, 0] + a[0, 1] * cof[0, 1] + a[0, 2] * cof[0, 2])
    return cof.T / det


class TestFitDensity:
    def test_hand_covariance_cross(self):
        # {(1,0),(-1,0),(0,1),(0,-1)}: mean 0, biased covariance diag(0.5).
        store = store_from([(1, 0), (-1, 0), (0, 1), (0, -1)])
        model = fit_density(store, lam=0.1)
        np.testing.assert_allclose(model.mu, [0.0, 0.0], atol=1e-15)
        sigma_reg = model.chol @ model.chol.T
        np.testing.assert_allclose(sigma_reg, np.diag([0.55, 0.55]), atol=1e-12)

    def test_identity_covariance_scales_by_shrinkage(self):
        # Whitened limit: covariance I gives trace/d = 1, so reg = 1.1 I.
        rng = np.random.default_rng(0)
        z = rng.normal(size=(2000, 3))
        z = (z - z.mean(axis=0))
        cov = z.T @ z / z.shape[0]
        L = np.linalg.cholesky(cov)
        white = z @ np.linalg.inv(L).T  # exactly identity sample covariance
        model = fit_density(store_from(white), lam=0.1)
        sigma_reg = model.chol @ model.chol.T
        np.testing.assert_allclose(sigma_reg, 1.1 * np.eye(3), atol=1e-8)

    def test_needs_two_records(self):
        with pytest.raises(DataError):
            fit_density(store_from([(1.0, 2.0)]))

    def test_constant_features_fail_factorization_at_zero_lambda(self):
        store = store_from([(1.0, 1.0)] * 5)
        with pytest.raises(NumericError):
            fit_density(store, lam=0.0)

    def test_bounds_come_from_calibration(self):
        store = store_from([(0, 0), (2, 0), (0, 2), (-2, 0), (0, -2)])
        model = fit_density(store, lam=1e-4)
        dists = mahalanobis_batch(model, store.features)
        assert model.m_min == pytest.approx(max(dists.min(), model.epsilon))
        assert model.m_max == pytest.approx(dists.max())


class TestMahalanobis:
    def test_zero_at_mean(self):
        store = store_from([(1, 2), (3, 4), (2, 0)])
        model = fit_density(store, lam=0.1)
        assert mahalanobis(model, model.mu) == 0.0

    def test_univariate_standardization(self):
        # d=1, mu=0, regularized variance 4 -> M(2) = 1.
        model = DensityModel(
            mu=np.array([0.0]), chol=np.array([[2.0]]), lam=0.0,
            m_min=0.5, m_max=2.0,
        )
        assert mahalanobis(model, np.array([2.0])) == pytest.approx(1.0)

    def test_matches_adjugate_oracle_d3(self):
        rng = np.random.default_rng(42)
        for _ in range(100):
            pts = rng.normal(size=(30, 3)) @ rng.normal(size=(3, 3))
            store = store_from(pts)
            model = fit_density(store, lam=1e-3)
            sigma_reg = model.chol @ model.chol.T
            inv = adjugate_inverse(sigma_reg)
            v = rng.normal(size=3)
            delta = v - model.mu
            expected = math.sqrt(float(delta @ inv @ delta))
            got = mahalanobis(model, v)
            assert got == pytest.approx(expected, rel=1e-10)

    def test_dimension_mismatch(self):
        store = store_from([(1, 0), (0, 1), (1, 1)])
        model = fit_density(store, lam=0.1)
        with pytest.raises(DataError):
            mahalanobis(model, np.array([1.0, 2.0, 3.0]))

    def test_non_finite_rejected(self):
        store = store_from([(1, 0), (0, 1), (1, 1)])
        model = fit_density(store, lam=0.1)
        with pytest.raises(NumericError):
            mahalanobis(model, np.array([np.nan, 0.0]))


class TestScore:
    def make_model(self, m_min=0.5, m_max=8.0, eps=1e-10):
        return DensityModel(
            mu=np.array([0.0]), chol=np.array([[1.0]]), lam=0.0,
            m_min=m_min, m_max=m_max, epsilon=eps,
        )

    def test_lower_anchor(self):
        model = self.make_model()
        from uqgate.aleatoric import score_aleatoric_from_distance
        s = float(score_aleatoric_from_distance(model, model.m_min))
        assert 0.0 <= s < 1e-6

    def test_upper_anchor(self):
        model = self.make_model()
        from uqgate.aleatoric import score_aleatoric_from_distance
        s = float(score_aleatoric_from_distance(model, model.m_max))
        assert s == pytest.approx(1.0, abs=1e-9)

    def test_log_midpoint(self):
        # Geometric mean of the anchors lands at 0.5 when eps << m_min.
        model = self.make_model(m_min=0.5, m_max=8.0)
        from uqgate.aleatoric import score_aleatoric_from_distance
        mid = math.sqrt(model.m_min * model.m_max)
        s = float(score_aleatoric_from_distance(model, mid))
        assert s == pytest.approx(0.5, abs=1e-4)

    def test_degenerate_bounds_rejected(self):
        model = self.make_model(m_min=1.0, m_max=1.0)
        with pytest.raises(DataError):
            score_aleatoric(model, np.array([3.0]))

    def test_monotone_in_distance(self):
        model = self.make_model()
        from uqgate.aleatoric import score_aleatoric_from_distance
        ms = np.linspace(0.01, 20.0, 200)
        scores = score_aleatoric_from_distance(model, ms)
        assert np.all(np.diff(scores) >= -1e-15)

    def test_calibration_scores_span_unit_interval(self):
        rng = np.random.default_rng(3)
        store = store_from(rng.normal(size=(200, 4)))
        model = fit_density(store, lam=1e-4)
        scores = score_aleatoric_batch(model, store.features)
        assert scores.min() <= 1e-6
        assert scores.max() == pytest.approx(1.0, abs=1e-12)
        assert np.all((scores >= 0.0) & (scores <= 1.0))


class TestProperties:
    def test_affine_equivariance_at_zero_shrinkage(self):
        rng = np.random.default_rng(11)
        pts = rng.normal(size=(100, 3))
        store = store_from(pts)
        model = fit_density(store, lam=0.0)
        a = rng.normal(size=(3, 3)) + 3.0 * np.eye(3)
        b = rng.normal(size=3)
        mapped = store_from(pts @ a.T + b)
        model_t = fit_density(mapped, lam=0.0)
        for _ in range(20):
            v = rng.normal(size=3)
            m1 = mahalanobis(model, v)
            m2 = mahalanobis(model_t, a @ v + b)
            assert m2 == pytest.approx(m1, abs=1e-8, rel=1e-8)

    def test_score_correlates_with_displacement_coupled_labels(self):
        from uqgate.metrics import pearson
        from uqgate.synth import SynthConfig, generate_synth

        cfg = SynthConfig(n=1500, d=6, displacement_coupling=0.3, seed=5)
        result = generate_synth(cfg)
        model = fit_density(result.store, lam=1e-4)
        scores = score_aleatoric_batch(model, result.store.features)
        assert pearson(scores, result.y) > 0.0
