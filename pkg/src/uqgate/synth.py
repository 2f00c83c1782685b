"""Synthetic stores and traces for desk-scale evaluation.

The generators are deterministic for a fixed seed and parameterize the
properties the test suite cares about: cluster structure, heteroscedastic
label noise, displacement-coupled conformity, shifted subpopulations, and
controllable cross-layer drift.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np
from scipy.linalg import expm

from .errors import DataError
from .policy import ACTIONS, TraceFrame
from .records import FeatureRecord, FeatureStore


@dataclass(frozen=True)
class SynthConfig:
    n: int = 1000
    d: int = 8
    means: Optional[tuple[tuple[float, ...], ...]] = None
    cov_scales: Optional[tuple[float, ...]] = None  # isotropic scale per cluster
    weights: Optional[tuple[float, ...]] = None
    base_y: Optional[tuple[float, ...]] = None
    noise_scales: Optional[tuple[float, ...]] = None
    displacement_coupling: float = 0.0
    shift_fraction: float = 0.0
    shift_offset: float = 0.0
    layer_count: int = 4
    layer_angle: float = 0.15
    layer_noise: float = 0.05
    track_size: int = 10
    seed: int = 0


@dataclass
class SynthResult:
    store: FeatureStore
    y: np.ndarray
    y_hat: np.ndarray
    shifted: np.ndarray
    clusters: np.ndarray


def _resolve_clusters(cfg: SynthConfig):
    if cfg.means is not None:
        means = np.asarray(cfg.means, dtype=float)
    else:
        means = np.zeros((2, cfg.d))
        means[0, 0] = -2.0
        means[1, 0] = 2.0
    k = means.shape[0]
    cov_scales = np.asarray(
        cfg.cov_scales if cfg.cov_scales is not None else [1.0] * k, dtype=float
    )
    weights = np.asarray(
        cfg.weights if cfg.weights is not None else [1.0 / k] * k, dtype=float
    )
    base_y = np.asarray(
        cfg.base_y if cfg.base_y is not None else np.linspace(0.3, 0.5, k),
        dtype=float,
    )
    noise = np.asarray(
        cfg.noise_scales if cfg.noise_scales is not None else [0.05] * k,
        dtype=float,
    )
    if not (len(cov_scales) == len(weights) == len(base_y) == len(noise) == k):
        raise DataError("cluster parameter lists must share one length")
    if abs(weights.sum() - 1.0) > 1e-9 or np.any(weights < 0):
        raise DataError("mixture weights must be non-negative and sum to 1")
    return means, cov_scales, weights, base_y, noise


def _layer_rotations(d: int, count: int, angle: float,
                     rng: np.random.Generator) -> list[np.ndarray]:
    A = rng.normal(size=(d, d))
    S = A - A.T
    norm = np.linalg.norm(S)
    if norm > 0:
        S = S / norm
    return [expm((i * angle) * S) for i in range(count)]


def generate_synth(cfg: SynthConfig) -> SynthResult:
    """Gaussian-mixture features with per-cluster heteroscedastic labels.

    Layer features are fixed per-layer rotations of the base feature plus
    layer-indexed noise, so consecutive-layer divergence rises with the
    configured angle. A seeded subset can be displaced along one fixed
    direction and flagged as shifted.
    """
    if cfg.n < 1:
        raise DataError("need n >= 1 records")
    means, cov_scales, weights, base_y, noise = _resolve_clusters(cfg)
    rng = np.random.default_rng(cfg.seed)
    k, d = means.shape

    clusters = rng.choice(k, size=cfg.n, p=weights)
    z = rng.normal(size=(cfg.n, d))
    feats = means[clusters] + cov_scales[clusters, None] * z

    shift_dir = rng.normal(size=d)
    shift_dir /= np.linalg.norm(shift_dir)
    shifted = np.zeros(cfg.n, dtype=bool)
    n_shift = int(round(cfg.shift_fraction * cfg.n))
    if n_shift > 0:
        idx = rng.choice(cfg.n, size=n_shift, replace=False)
        shifted[idx] = True
        feats[idx] += cfg.shift_offset * shift_dir

    disp = np.linalg.norm(z, axis=1) / math.sqrt(d)
    eta = rng.normal(size=cfg.n)
    y = base_y[clusters] + noise[clusters] * eta
    y = y + cfg.displacement_coupling * disp
    y = np.clip(y, 0.0, 1.0)
    y_hat = base_y[clusters].copy()

    rotations = _layer_rotations(d, cfg.layer_count, cfg.layer_angle, rng)
    layer_noise = rng.normal(size=(cfg.n, cfg.layer_count, d)) * cfg.layer_noise

    boxes = np.column_stack(
        [
            rng.uniform(0, 560, size=cfg.n),
            rng.uniform(0, 400, size=cfg.n),
            rng.uniform(20, 80, size=cfg.n),
            rng.uniform(20, 80, size=cfg.n),
        ]
    )

    records = []
    for i in range(cfg.n):
        layers = [rotations[l] @ feats[i] + layer_noise[i, l]
                  for l in range(cfg.layer_count)]
        track = i // cfg.track_size
        records.append(
            FeatureRecord(
                id=f"synth:{track}:{i}",
                sequence="synth",
                frame=i,
                model_id="synthetic",
                bbox=tuple(boxes[i]),
                feature=feats[i],
                layer_features=layers,
                iou=float(1.0 - y[i]),
                confidence=None,
            )
        )
    return SynthResult(
        store=FeatureStore(records),
        y=y,
        y_hat=y_hat,
        shifted=shifted,
        clusters=clusters,
    )


def make_policy_trace(
    n_sequences: int = 4,
    frames_per_sequence: int = 300,
    block: int = 50,
    base_frames: int = 35,
    epis_frames: int = 8,
    seed: int = 0,
) -> list[TraceFrame]:
    """Trace with recurring segments: calm stretches where every backbone is
    equally good, model-gap bursts where only the two largest hold quality,
    and noise bursts where no backbone helps.

    Each `block` splits into base_frames calm, epis_frames model-gap, and the
    remainder noise frames.
    """
    if base_frames + epis_frames >= block:
        raise DataError("segment lengths exceed the block size")
    rng = np.random.default_rng(seed)
    frames: list[TraceFrame] = []
    for s in range(n_sequences):
        for t in range(frames_per_sequence):
            phase = t % block
            u = rng.uniform()
            if phase < base_frames:
                se = rng.uniform(0.05, 0.3)
                sa = rng.uniform(0.05, 0.3)
                good = 0.88 + 0.02 * u
                ious = [good] * 5
            elif phase < base_frames + epis_frames:
                se = rng.uniform(0.75, 0.95)
                sa = rng.uniform(0.05, 0.2)
                weak = 0.35 + 0.03 * u
                strong = 0.88 + 0.02 * u
                ious = [weak, weak, weak, strong, strong]
            else:
                se = rng.uniform(0.05, 0.3)
                sa = rng.uniform(0.75, 0.95)
                flat = 0.5 + 0.02 * u
                ious = [flat] * 5
            per_model = {
                name: {"iou": float(v), "y_hat": float(1.0 - v)}
                for name, v in zip(ACTIONS, ious)
            }
            frames.append(
                TraceFrame(
                    sequence=f"seq{s:02d}",
                    frame=t,
                    per_model=per_model,
                    sigma_alea=float(sa),
                    sigma_epis=float(se),
                    bbox=(
                        float(rng.uniform(50, 500)),
                        float(rng.uniform(50, 350)),
                        float(rng.uniform(30, 90)),
                        float(rng.uniform(30, 90)),
                    ),
                    frame_size=(640.0, 480.0),
                )
            )
    return frames


def make_gate_trace(
    n_frames: int = 600,
    alea_fraction: float = 0.3,
    epis_fraction: float = 0.1,
    seed: int = 0,
) -> list[TraceFrame]:
    """Trace for the gating ablation: the highest combined-uncertainty frames
    are noise-dominated (no backbone gap), while a smaller set of moderate
    model-gap frames is what actually needs escalation."""
    if alea_fraction + epis_fraction >= 1.0:
        raise DataError("phase fractions must leave room for base frames")
    rng = np.random.default_rng(seed)
    n_alea = int(round(alea_fraction * n_frames))
    n_epis = int(round(epis_fraction * n_frames))
    kinds = np.array(
        ["alea"] * n_alea + ["epis"] * n_epis
        + ["base"] * (n_frames - n_alea - n_epis)
    )
    rng.shuffle(kinds)
    frames: list[TraceFrame] = []
    for t, kind in enumerate(kinds):
        u = rng.uniform()
        if kind == "base":
            sa, se = rng.uniform(0.05, 0.2), rng.uniform(0.05, 0.2)
            ious = [0.9 + 0.01 * u] * 5
        elif kind == "alea":
            sa, se = rng.uniform(0.9, 0.98), rng.uniform(0.1, 0.25)
            ious = [0.55 + 0.01 * u] * 5
        else:  # epis
            sa, se = rng.uniform(0.05, 0.2), rng.uniform(0.65, 0.8)
            weak = 0.3 + 0.02 * u
            strong = 0.9 + 0.01 * u
            ious = [weak, weak, weak, strong, strong]
        per_model = {
            name: {"iou": float(v), "y_hat": float(1.0 - v)}
            for name, v in zip(ACTIONS, ious)
        }
        frames.append(
            TraceFrame(
                sequence="gate",
                frame=t,
                per_model=per_model,
                sigma_alea=float(sa),
                sigma_epis=float(se),
                bbox=(100.0, 100.0, 60.0, 80.0),
                frame_size=(640.0, 480.0),
            )
        )
    return frames
