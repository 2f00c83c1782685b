"""Evaluation metrics, the gating ablation, and report assembly."""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Optional, Sequence, Union

import numpy as np

from .errors import DataError
from .policy import ACTIONS, PARAMS_M, ActionSet, SimulationResult, TraceFrame

DEFAULT_PARAMS = dict(zip(ACTIONS, PARAMS_M))


def pearson(x: Sequence[float], y: Sequence[float]) -> float:
    """Sample Pearson correlation; constant inputs are an error."""
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    if x.shape != y.shape or x.ndim != 1:
        raise DataError("pearson needs two equal-length 1-d sequences")
    if x.shape[0] < 2:
        raise DataError("pearson needs at least 2 samples")
    xc = x - x.mean()
    yc = y - y.mean()
    sx = math.sqrt(float((xc**2).mean()))
    sy = math.sqrt(float((yc**2).mean()))
    if sx == 0.0 or sy == 0.0:
        raise DataError("pearson is undefined for constant input")
    return float((xc * yc).mean() / (sx * sy))


@dataclass
class Bin:
    center: float
    mean: Optional[float]  # None for empty bins
    count: int


def binned_mean(x: Sequence[float], y: Sequence[float], n_bins: int) -> list[Bin]:
    """Mean of y inside equal-width bins of x over [0, 1]."""
    if n_bins < 2:
        raise DataError(f"need at least 2 bins, got {n_bins}")
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    idx = np.minimum((x * n_bins).astype(int), n_bins - 1)
    out: list[Bin] = []
    for b in range(n_bins):
        center = (b + 0.5) / n_bins
        mask = idx == b
        count = int(mask.sum())
        mean = float(y[mask].mean()) if count else None
        out.append(Bin(center=center, mean=mean, count=count))
    return out


def compute_savings(
    result: Union[SimulationResult, Sequence[str]],
    params: Optional[dict[str, float]] = None,
) -> float:
    """1 - (mean active parameters / largest-model parameters)."""
    params = params if params is not None else DEFAULT_PARAMS
    if "xlarge" not in params:
        raise DataError("parameter table must include 'xlarge'")
    names = (
        result.action_names()
        if isinstance(result, SimulationResult)
        else list(result)
    )
    if not names:
        raise DataError("no actions to compute savings over")
    try:
        active = [params[n] for n in names]
    except KeyError as exc:
        raise DataError(f"unknown action label {exc.args[0]!r}") from None
    return 1.0 - float(np.mean(active)) / params["xlarge"]


@dataclass
class GateAblationResult:
    decomposed_savings: float
    total_savings: float
    decomposed_escalation_rate: float
    total_escalation_rate: float
    decomposed_iou_drop: float
    total_iou_drop: float
    total_threshold: float
    quality_bound: float

    def to_dict(self) -> dict:
        return {
            "decomposed_savings": self.decomposed_savings,
            "total_savings": self.total_savings,
            "decomposed_escalation_rate": self.decomposed_escalation_rate,
            "total_escalation_rate": self.total_escalation_rate,
            "decomposed_iou_drop": self.decomposed_iou_drop,
            "total_iou_drop": self.total_iou_drop,
            "total_threshold": self.total_threshold,
            "quality_bound": self.quality_bound,
        }


def gate_ablation(
    frames: Sequence[TraceFrame],
    tau_epis: float = 0.6,
    tau_alea: float = 0.5,
    max_iou_drop: float = 0.01,
    actions: ActionSet = ActionSet(),
) -> GateAblationResult:
    """Compare split-uncertainty gating against a single combined gate.

    Both gates pick between the lightest and heaviest backbone per frame
    under the same quality constraint (mean-IoU drop vs always-heaviest at
    most max_iou_drop). The combined baseline uses the largest threshold on
    sqrt(sa^2 + se^2) that still satisfies the constraint, i.e. its minimal
    escalation set at matched quality.
    """
    if not frames:
        raise DataError("gate ablation needs a non-empty trace")
    low, high = actions.names[0], actions.names[-1]
    sa = np.array([f.sigma_alea for f in frames])
    se = np.array([f.sigma_epis for f in frames])
    iou_low = np.array([f.per_model[low]["iou"] for f in frames])
    iou_high = np.array([f.per_model[high]["iou"] for f in frames])
    p_low, p_high = actions.params[0], actions.params[-1]
    best_iou = float(iou_high.mean())
    tol = 1e-9

    def evaluate(mask: np.ndarray) -> tuple[float, float, float]:
        achieved = np.where(mask, iou_high, iou_low)
        drop = best_iou - float(achieved.mean())
        mean_params = float(np.where(mask, p_high, p_low).mean())
        return 1.0 - mean_params / p_high, drop, float(mask.mean())

    dec_mask = (se > tau_epis) & (sa <= tau_alea)
    dec_savings, dec_drop, dec_rate = evaluate(dec_mask)
    if dec_drop > max_iou_drop + tol:
        raise DataError(
            f"infeasible budget: split-uncertainty gate drops mean IoU by "
            f"{dec_drop:.4f} > bound {max_iou_drop}"
        )

    combined = np.sqrt(sa**2 + se**2)
    thresholds = [math.inf] + sorted(set(combined.tolist()), reverse=True)
    total_mask = np.ones_like(dec_mask)
    total_threshold = -math.inf
    for thr in thresholds:
        mask = combined > thr
        _, drop, _ = evaluate(mask)
        if drop <= max_iou_drop + tol:
            total_mask = mask
            total_threshold = thr
            break
    tot_savings, tot_drop, tot_rate = evaluate(total_mask)
    return GateAblationResult(
        decomposed_savings=dec_savings,
        total_savings=tot_savings,
        decomposed_escalation_rate=dec_rate,
        total_escalation_rate=tot_rate,
        decomposed_iou_drop=dec_drop,
        total_iou_drop=tot_drop,
        total_threshold=total_threshold,
        quality_bound=max_iou_drop,
    )


@dataclass
class MetricsReport:
    pearson_alea_epis: Optional[float] = None
    pearson_alea_conformity: Optional[float] = None
    coverage: Optional[float] = None
    mean_width: Optional[float] = None
    compute_savings: Optional[float] = None
    switch_rate: Optional[float] = None
    per_bin_conformity: list[Bin] = field(default_factory=list)

    def __post_init__(self):
        if self.coverage is not None and not (0.0 <= self.coverage <= 1.0):
            raise DataError(f"coverage must lie in [0, 1], got {self.coverage}")
        if self.compute_savings is not None and not (
            0.0 <= self.compute_savings <= 1.0
        ):
            raise DataError(
                f"compute savings must lie in [0, 1], got {self.compute_savings}"
            )

    def to_dict(self) -> dict:
        return {
            "pearson_alea_epis": self.pearson_alea_epis,
            "pearson_alea_conformity": self.pearson_alea_conformity,
            "coverage": self.coverage,
            "mean_width": self.mean_width,
            "compute_savings": self.compute_savings,
            "switch_rate": self.switch_rate,
            "per_bin_conformity": [
                {"center": b.center, "mean": b.mean, "count": b.count}
                for b in self.per_bin_conformity
            ],
        }
