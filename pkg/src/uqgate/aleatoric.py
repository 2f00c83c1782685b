"""Global feature-density model and normalized Mahalanobis scoring.

The data-driven uncertainty of a detection is its deviation from the global
density of calibration features: a shrinkage-regularized covariance fit,
a Mahalanobis distance through its Cholesky factor, and a log-scaled
min-max normalization anchored on the calibration extremes.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional

import numpy as np
from scipy.linalg import cho_factor, cho_solve

from .errors import DataError, NumericError
from .records import FeatureStore

DEFAULT_LAMBDA = 1e-4
DEFAULT_EPSILON = 1e-10


@dataclass
class DensityModel:
    """Fitted global density; immutable after fit, scoring is pure."""

    mu: np.ndarray
    chol: np.ndarray           # lower-triangular factor of the regularized covariance
    lam: float
    m_min: float
    m_max: float
    epsilon: float = DEFAULT_EPSILON

    @property
    def dimension(self) -> int:
        return int(self.mu.shape[0])

    def to_dict(self) -> dict:
        return {
            "mu": [float(v) for v in self.mu],
            "chol": [[float(v) for v in row] for row in self.chol],
            "lambda": float(self.lam),
            "m_min": float(self.m_min),
            "m_max": float(self.m_max),
            "epsilon": float(self.epsilon),
        }

    @classmethod
    def from_dict(cls, obj: dict) -> "DensityModel":
        try:
            return cls(
                mu=np.asarray(obj["mu"], dtype=float),
                chol=np.asarray(obj["chol"], dtype=float),
                lam=float(obj["lambda"]),
                m_min=float(obj["m_min"]),
                m_max=float(obj["m_max"]),
                epsilon=float(obj["epsilon"]),
            )
        except (KeyError, TypeError, ValueError) as exc:
            raise DataError(f"malformed density section: {exc}") from exc


def fit_density(calibration: FeatureStore, lam: float = DEFAULT_LAMBDA,
                epsilon: float = DEFAULT_EPSILON) -> DensityModel:
    """Fit mean, shrinkage-regularized covariance, and normalization bounds.

    Covariance is the biased 1/n estimator; regularization adds
    lam * trace/d to the diagonal. Bounds m_min/m_max are the Mahalanobis
    distances of the calibration records themselves.
    """
    feats = calibration.features
    n, d = feats.shape
    if n < 2:
        raise DataError(f"density fit needs at least 2 calibration records, got {n}")
    if lam < 0:
        raise DataError(f"shrinkage coefficient must be >= 0, got {lam}")
    if not np.all(np.isfinite(feats)):
        raise NumericError("calibration features contain non-finite values")

    mu = feats.mean(axis=0)
    centered = feats - mu
    sigma = centered.T @ centered / n
    sigma_reg = sigma + lam * (np.trace(sigma) / d) * np.eye(d)
    try:
        chol, _ = cho_factor(sigma_reg, lower=True)
    except np.linalg.LinAlgError as exc:
        raise NumericError(
            f"covariance factorization failed (lambda={lam} too small for "
            f"degenerate calibration data)"
        ) from exc
    chol = np.tril(chol)

    model = DensityModel(mu=mu, chol=chol, lam=float(lam), m_min=1.0, m_max=2.0,
                         epsilon=float(epsilon))
    dists = mahalanobis_batch(model, feats)
    # A calibration point exactly at the mean would break the log anchor;
    # floor at epsilon to keep m_min > 0.
    model.m_min = float(max(dists.min(), epsilon))
    model.m_max = float(dists.max())
    return model


def mahalanobis_batch(model: DensityModel, vs: np.ndarray) -> np.ndarray:
    """Mahalanobis distance of each row of vs via two triangular solves."""
    vs = np.atleast_2d(np.asarray(vs, dtype=float))
    if vs.shape[1] != model.dimension:
        raise DataError(
            f"feature dimension {vs.shape[1]} does not match model dimension "
            f"{model.dimension}"
        )
    if not np.all(np.isfinite(vs)):
        raise NumericError("query features contain non-finite values")
    delta = (vs - model.mu).T
    solved = cho_solve((model.chol, True), delta)
    sq = np.einsum("dn,dn->n", delta, solved)
    return np.sqrt(np.maximum(sq, 0.0))


def mahalanobis(model: DensityModel, v: np.ndarray) -> float:
    """Mahalanobis distance of a single feature vector."""
    return float(mahalanobis_batch(model, np.asarray(v, dtype=float)[None, :])[0])


def score_aleatoric_from_distance(model: DensityModel, m) -> np.ndarray:
    """Log-normalize raw distances to [0, 1] using the calibration anchors."""
    if model.m_max <= model.m_min:
        raise DataError(
            "degenerate calibration: m_max equals m_min (constant features)"
        )
    m = np.asarray(m, dtype=float)
    num = np.log(m + model.epsilon) - np.log(model.m_min)
    den = np.log(model.m_max) - np.log(model.m_min)
    return np.clip(num / den, 0.0, 1.0)


def score_aleatoric(model: DensityModel, v: np.ndarray) -> float:
    """Normalized data-driven uncertainty of one feature vector."""
    return float(score_aleatoric_from_distance(model, mahalanobis(model, v)))


def score_aleatoric_batch(model: DensityModel, vs: np.ndarray) -> np.ndarray:
    return score_aleatoric_from_distance(model, mahalanobis_batch(model, vs))
