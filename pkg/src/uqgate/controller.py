"""Threshold-based keep/escalate decisions from the decomposed uncertainty.

Escalation targets reducible (model-driven) uncertainty only: high
epistemic with tolerable aleatoric triggers a bigger model, high aleatoric
alone keeps the current one, and the doubly-high regime is flagged
ambiguous and handled conservatively downstream.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import DataError

DEFAULT_TAU_EPIS = 0.6
DEFAULT_TAU_ALEA = 0.5


@dataclass(frozen=True)
class ControllerConfig:
    tau_alea: float = DEFAULT_TAU_ALEA
    tau_epis: float = DEFAULT_TAU_EPIS

    def __post_init__(self):
        if not (0.0 <= self.tau_alea <= 1.0 and 0.0 <= self.tau_epis <= 1.0):
            raise DataError("controller thresholds must lie in [0, 1]")


@dataclass(frozen=True)
class Decision:
    action: str     # "keep" | "escalate"
    ambiguous: bool
    regime: str     # "low_low" | "epis_dominant" | "alea_dominant" | "both_high"


def decide(sigma_alea: float, sigma_epis: float, config: ControllerConfig) -> Decision:
    """Regime rules with strict > for exceeding a threshold, <= for compliance."""
    high_e = sigma_epis > config.tau_epis
    high_a = sigma_alea > config.tau_alea
    if high_e and not high_a:
        return Decision(action="escalate", ambiguous=False, regime="epis_dominant")
    if high_a and not high_e:
        return Decision(action="keep", ambiguous=False, regime="alea_dominant")
    if high_a and high_e:
        return Decision(action="keep", ambiguous=True, regime="both_high")
    return Decision(action="keep", ambiguous=False, regime="low_low")


def empirical_quantile(values: np.ndarray, q: float) -> float:
    """The ceil(q * n)-th order statistic (1-indexed), floored at the minimum."""
    values = np.sort(np.asarray(values, dtype=float))
    n = values.shape[0]
    k = max(1, int(np.ceil(q * n - 1e-9)))
    return float(values[min(k, n) - 1])


def calibrate_thresholds(
    sigma_alea: np.ndarray,
    sigma_epis: np.ndarray,
    target_escalation_rate: float,
) -> ControllerConfig:
    """Budget-style threshold pick: the epistemic threshold sits at the
    (1 - rate) quantile of calibration scores, the aleatoric at the median."""
    if not (0.0 < target_escalation_rate < 1.0):
        raise DataError(
            f"target escalation rate must lie in (0, 1), got {target_escalation_rate}"
        )
    sa = np.asarray(sigma_alea, dtype=float)
    se = np.asarray(sigma_epis, dtype=float)
    if se.size == 0 or sa.size == 0:
        raise DataError("threshold calibration needs non-empty score arrays")
    if np.all(se == se[0]) or np.all(sa == sa[0]):
        raise DataError("degenerate constant scores; cannot place thresholds")
    tau_epis = empirical_quantile(se, 1.0 - target_escalation_rate)
    tau_alea = empirical_quantile(sa, 0.5)
    return ControllerConfig(tau_alea=float(np.clip(tau_alea, 0.0, 1.0)),
                            tau_epis=float(np.clip(tau_epis, 0.0, 1.0)))
