"""Model-driven uncertainty from local representation support.

Three complementary signals are computed against the cached calibration
features: net repulsive force from the nearest neighbors (support
deficiency), spectral effective-rank collapse of the local neighborhood,
and cosine divergence between consecutive encoder layers. A simplex grid
search picks combination weights that decorrelate the combined score from
the data-driven (density) score.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np

from .errors import DataError
from .records import FeatureRecord, FeatureStore

WEIGHT_GRID_STEPS = 20  # simplex resolution 0.05 -> 231 candidates


@dataclass(frozen=True)
class EpistemicConfig:
    k_supp: int = 100
    tau: float = 1.0
    eps_supp: float = 1e-6
    k_rank: int = 50
    layer_indices: tuple[int, ...] = (4, 9, 15, 21)
    centered_collapse: bool = False

    def __post_init__(self):
        if self.k_supp < 1:
            raise DataError(f"k_supp must be >= 1, got {self.k_supp}")
        if self.k_rank < 2:
            raise DataError(f"k_rank must be >= 2, got {self.k_rank}")
        if self.tau <= 0:
            raise DataError(f"temperature must be > 0, got {self.tau}")
        if len(self.layer_indices) < 2 or any(
            b <= a for a, b in zip(self.layer_indices, self.layer_indices[1:])
        ):
            raise DataError("layer_indices must be strictly increasing with length >= 2")

    def to_dict(self) -> dict:
        return {
            "k_supp": self.k_supp,
            "tau": self.tau,
            "eps_supp": self.eps_supp,
            "k_rank": self.k_rank,
            "layer_indices": list(self.layer_indices),
            "centered_collapse": self.centered_collapse,
        }

    @classmethod
    def from_dict(cls, obj: dict) -> "EpistemicConfig":
        return cls(
            k_supp=int(obj["k_supp"]),
            tau=float(obj["tau"]),
            eps_supp=float(obj["eps_supp"]),
            k_rank=int(obj["k_rank"]),
            layer_indices=tuple(int(i) for i in obj["layer_indices"]),
            centered_collapse=bool(obj.get("centered_collapse", False)),
        )


class NeighborIndex:
    """Exact nearest-neighbor search over the cached calibration features.

    Plain vectorized scan; read-only after construction, so concurrent
    queries are safe. Ties break toward earlier calibration insertion order.
    """

    def __init__(self, points: np.ndarray):
        self.points = np.asarray(points, dtype=float)
        self._sq_norms = np.einsum("nd,nd->n", self.points, self.points)

    def __len__(self) -> int:
        return int(self.points.shape[0])

    def _sq_dists(self, queries: np.ndarray) -> np.ndarray:
        q = np.atleast_2d(queries)
        d2 = (
            np.einsum("md,md->m", q, q)[:, None]
            + self._sq_norms[None, :]
            - 2.0 * q @ self.points.T
        )
        return np.maximum(d2, 0.0)

    def query(self, v: np.ndarray, k: int) -> tuple[np.ndarray, np.ndarray]:
        """k smallest (index, distance) pairs for one query, ascending."""
        if k > len(self):
            raise DataError(f"k={k} exceeds calibration size {len(self)}")
        d2 = self._sq_dists(np.asarray(v, dtype=float)[None, :])[0]
        order = np.argsort(d2, kind="stable")[:k]
        return order, np.sqrt(d2[order])

    def query_batch(self, queries: np.ndarray, k: int) -> tuple[np.ndarray, np.ndarray]:
        """(m, k) neighbor indices and distances for m query rows.

        Distance ties within the selected k sort by insertion order; ties
        straddling the selection boundary resolve by partition order.
        """
        if k > len(self):
            raise DataError(f"k={k} exceeds calibration size {len(self)}")
        d2 = self._sq_dists(queries)
        if k == len(self):
            part = np.broadcast_to(np.arange(k), (d2.shape[0], k)).copy()
        else:
            part = np.argpartition(d2, k - 1, axis=1)[:, :k]
            part = np.sort(part, axis=1)
        pd = np.take_along_axis(d2, part, axis=1)
        order = np.argsort(pd, axis=1, kind="stable")
        idx = np.take_along_axis(part, order, axis=1)
        return idx, np.sqrt(np.take_along_axis(pd, order, axis=1))


def knn(index: NeighborIndex, v: np.ndarray, k: int) -> list[tuple[np.ndarray, float]]:
    """Exact k nearest calibration neighbors of v, ascending by distance."""
    idx, dists = index.query(v, k)
    return [(index.points[i], float(d)) for i, d in zip(idx, dists)]


def support_deficiency_raw(
    v: np.ndarray,
    neighbors: Sequence[np.ndarray] | np.ndarray,
    tau: float,
    eps: float,
) -> float:
    """Magnitude of the net inverse-square, exponentially tempered force.

    Each neighbor u at distance d > 0 contributes
    exp(-d/tau)/(d^2 + eps) along the unit direction (v - u)/d. Coincident
    neighbors (d = 0) have no defined direction and are skipped.
    """
    v = np.asarray(v, dtype=float)
    neigh = np.asarray(neighbors, dtype=float)
    if neigh.size == 0:
        return 0.0
    diff = v[None, :] - neigh
    dist = np.linalg.norm(diff, axis=1)
    mask = dist > 0.0
    if not np.any(mask):
        return 0.0
    w = np.exp(-dist[mask] / tau) / ((dist[mask] ** 2 + eps) * dist[mask])
    net = (w[:, None] * diff[mask]).sum(axis=0)
    return float(np.linalg.norm(net))


def _support_raw_batch(queries: np.ndarray, neigh: np.ndarray, dist: np.ndarray,
                       tau: float, eps: float) -> np.ndarray:
    diff = queries[:, None, :] - neigh
    safe = np.where(dist > 0.0, dist, 1.0)
    w = np.where(dist > 0.0, np.exp(-dist / tau) / ((dist**2 + eps) * safe), 0.0)
    net = np.einsum("mk,mkd->md", w, diff)
    return np.linalg.norm(net, axis=1)


def collapse_from_spectrum(eigenvalues: np.ndarray, d: int) -> float:
    """Collapse score from a local covariance spectrum.

    Entropy of the normalized eigenvalues gives the effective rank
    r_eff = exp(H); the score maps r_eff = d to 0 and r_eff = 1 to 1.
    Missing eigenvalues (fewer neighbors than dimensions) count as zeros,
    which contribute nothing to the entropy.
    """
    if d < 2:
        raise DataError(f"collapse score needs dimension >= 2, got d={d}")
    eig = np.maximum(np.asarray(eigenvalues, dtype=float), 0.0)
    total = eig.sum()
    if total <= 0.0:
        return 1.0  # all-zero spectrum: maximal collapse
    p = eig / total
    nz = p > 0.0
    h = float(-(p[nz] * np.log(p[nz])).sum())
    r_eff = np.exp(h)
    return float(np.clip(1.0 - (r_eff - 1.0) / (d - 1.0), 0.0, 1.0))


def geometric_collapse(neighbors: np.ndarray, centered: bool = False,
                       d: Optional[int] = None) -> float:
    """Collapse score of a neighbor set from its local second-moment matrix.

    The matrix is (1/k) X^T X over raw neighbor rows (optionally centered
    first); the ambient dimension d anchors the score's denominator even
    when fewer than d neighbors are supplied.
    """
    X = np.atleast_2d(np.asarray(neighbors, dtype=float))
    k, dim = X.shape
    if k < 2:
        raise DataError(f"collapse score needs at least 2 neighbors, got {k}")
    d = dim if d is None else d
    if centered:
        X = X - X.mean(axis=0)
    if k <= dim:
        gram = X @ X.T / k  # same nonzero spectrum as X^T X / k
        eig = np.linalg.eigvalsh(gram)
    else:
        eig = np.linalg.eigvalsh(X.T @ X / k)
    return collapse_from_spectrum(eig, d)


def _collapse_batch(neigh: np.ndarray, d: int, centered: bool) -> np.ndarray:
    m, k, dim = neigh.shape
    X = neigh - neigh.mean(axis=1, keepdims=True) if centered else neigh
    if k <= dim:
        gram = np.einsum("mkd,mld->mkl", X, X) / k
    else:
        gram = np.einsum("mkd,mke->mde", X, X) / k
    eig = np.maximum(np.linalg.eigvalsh(gram), 0.0)
    total = eig.sum(axis=1)
    out = np.ones(m)
    ok = total > 0.0
    if np.any(ok):
        p = eig[ok] / total[ok, None]
        with np.errstate(divide="ignore", invalid="ignore"):
            plogp = np.where(p > 0.0, p * np.log(p), 0.0)
        r_eff = np.exp(-plogp.sum(axis=1))
        out[ok] = np.clip(1.0 - (r_eff - 1.0) / (d - 1.0), 0.0, 1.0)
    return out


def cross_layer_divergence(layer_features: Sequence[np.ndarray]) -> float:
    """Mean cosine divergence (1 - cos) between consecutive layer vectors."""
    if len(layer_features) < 2:
        raise DataError("cross-layer divergence needs at least 2 layer vectors")
    divs = []
    prev = np.asarray(layer_features[0], dtype=float)
    prev_norm = np.linalg.norm(prev)
    if prev_norm == 0.0:
        raise DataError("layer 0 has zero norm")
    for i, cur in enumerate(layer_features[1:], start=1):
        cur = np.asarray(cur, dtype=float)
        if cur.shape != prev.shape:
            raise DataError(
                f"layers {i - 1} and {i} have mismatched dimensions "
                f"{prev.shape[0]} vs {cur.shape[0]}"
            )
        cur_norm = np.linalg.norm(cur)
        if cur_norm == 0.0:
            raise DataError(f"layer {i} has zero norm")
        cos = float(prev @ cur) / (prev_norm * cur_norm)
        divs.append(1.0 - cos)
        prev, prev_norm = cur, cur_norm
    # Raw divergence can exceed 1 for anti-parallel vectors; the component
    # contract is [0, 1].
    return float(np.clip(np.mean(divs), 0.0, 1.0))


def _divergence_batch(layer_features, m: int) -> np.ndarray:
    """Cross-layer divergence over a batch; uses the stacked fast path when
    every record carries equal-width layers."""
    out = np.zeros(m)
    present = [lf is not None for lf in layer_features]
    if not any(present):
        return out
    if all(present):
        widths = {tuple(np.asarray(v).shape for v in lf) for lf in layer_features[:50]}
        if len(widths) == 1 and len(set(next(iter(widths)))) == 1:
            stacked = np.stack([np.stack(lf) for lf in layer_features])  # (m, L, d)
            norms = np.linalg.norm(stacked, axis=2)
            if np.any(norms == 0.0):
                bad = np.argwhere(norms == 0.0)[0]
                raise DataError(f"layer {bad[1]} has zero norm")
            unit = stacked / norms[:, :, None]
            cos = np.einsum("mld,mld->ml", unit[:, :-1], unit[:, 1:])
            return np.clip((1.0 - cos).mean(axis=1), 0.0, 1.0)
    for i, layers in enumerate(layer_features):
        if layers is not None:
            out[i] = cross_layer_divergence(layers)
    return out


def _minmax_normalize(raw: np.ndarray, lo: float, hi: float) -> np.ndarray:
    if hi <= lo:
        return np.zeros_like(raw)
    return np.clip((raw - lo) / (hi - lo), 0.0, 1.0)


def optimize_weights(
    components: np.ndarray,
    aleatoric: np.ndarray,
    shift_labels: Optional[np.ndarray] = None,
    allowed: tuple[bool, bool, bool] = (True, True, True),
) -> tuple[float, float, float]:
    """Grid-search simplex weights that decorrelate the combined score.

    Minimizes |corr(combined, aleatoric)| - beta * separation over the
    0.05-step simplex (231 candidates); separation is the shifted-minus-rest
    mean gap of the combined score and beta = 0.5 only when shift labels are
    supplied. Ties resolve toward the weight vector closest to uniform.
    """
    comps = np.asarray(components, dtype=float)
    alea = np.asarray(aleatoric, dtype=float)
    if comps.ndim != 2 or comps.shape[1] != 3:
        raise DataError("components must be an (n, 3) array")
    if comps.shape[0] != alea.shape[0]:
        raise DataError("components and aleatoric scores must align")
    if comps.shape[0] < 10:
        raise DataError(
            f"weight optimization needs >= 10 records, got {comps.shape[0]}"
        )
    if comps.min() < -1e-9 or comps.max() > 1.0 + 1e-9:
        raise DataError("components must be min-max normalized to [0, 1]")

    candidates = []
    for i in range(WEIGHT_GRID_STEPS + 1):
        for j in range(WEIGHT_GRID_STEPS + 1 - i):
            k = WEIGHT_GRID_STEPS - i - j
            w = np.array([i, j, k], dtype=float) / WEIGHT_GRID_STEPS
            if any(w[c] > 0 and not allowed[c] for c in range(3)):
                continue
            candidates.append(w)
    W = np.stack(candidates)  # (c, 3)

    combined = comps @ W.T  # (n, c)
    alea_std = float(alea.std())
    if alea_std == 0.0:
        warnings.warn("aleatoric scores are constant; correlation term treated as 0")
        corr = np.zeros(W.shape[0])
    else:
        cc = combined - combined.mean(axis=0)
        aa = alea - alea.mean()
        comb_std = np.sqrt((cc**2).mean(axis=0))
        cov = (cc * aa[:, None]).mean(axis=0)
        degenerate = comb_std == 0.0
        if np.any(degenerate):
            warnings.warn(
                "some candidate combinations are constant; their correlation "
                "term is treated as 0"
            )
        with np.errstate(divide="ignore", invalid="ignore"):
            corr = np.where(degenerate, 0.0, cov / (comb_std * alea_std))

    beta = 0.0
    sep = np.zeros(W.shape[0])
    if shift_labels is not None:
        labels = np.asarray(shift_labels, dtype=bool)
        if labels.shape[0] != comps.shape[0]:
            raise DataError("shift labels must align with components")
        if labels.any() and (~labels).any():
            beta = 0.5
            sep = combined[labels].mean(axis=0) - combined[~labels].mean(axis=0)

    J = np.abs(corr) - beta * sep
    j_min = float(J.min())
    tied = np.flatnonzero(J <= j_min + 1e-12)
    uniform = np.full(3, 1.0 / 3.0)
    dists = np.linalg.norm(W[tied] - uniform, axis=1)
    best = tied[int(np.argmin(dists))]
    w = W[best]
    return float(w[0]), float(w[1]), float(w[2])


@dataclass
class EpistemicModel:
    """Fitted combination model; immutable after fit, scoring is pure."""

    index: NeighborIndex
    comp_norm: tuple[tuple[float, float], tuple[float, float], tuple[float, float]]
    weights: tuple[float, float, float]
    config: EpistemicConfig
    has_layers: bool = True
    degenerate_support: bool = False

    @property
    def supp_norm(self) -> tuple[float, float]:
        return self.comp_norm[0]

    def _effective_k(self, k: int) -> int:
        return min(k, len(self.index))

    def raw_components_batch(
        self,
        feats: np.ndarray,
        layer_features: Optional[list[Optional[list[np.ndarray]]]] = None,
    ) -> np.ndarray:
        """(m, 3) raw component values before min-max normalization."""
        feats = np.atleast_2d(np.asarray(feats, dtype=float))
        m = feats.shape[0]
        cfg = self.config

        # One search at the larger k serves both components: the first k
        # entries of a (distance, insertion-order) sorted list are exactly
        # the k nearest.
        k_s = self._effective_k(cfg.k_supp)
        k_r = self._effective_k(cfg.k_rank)
        idx, dist = self.index.query_batch(feats, max(k_s, k_r))
        raw_supp = _support_raw_batch(
            feats, self.index.points[idx[:, :k_s]], dist[:, :k_s],
            cfg.tau, cfg.eps_supp,
        )
        raw_rank = _collapse_batch(
            self.index.points[idx[:, :k_r]], feats.shape[1],
            cfg.centered_collapse,
        )

        raw_grad = np.zeros(m)
        if layer_features is not None:
            raw_grad = _divergence_batch(layer_features, m)
        return np.column_stack([raw_supp, raw_rank, raw_grad])

    def normalize_components(self, raw: np.ndarray) -> np.ndarray:
        out = np.empty_like(raw)
        for c in range(3):
            lo, hi = self.comp_norm[c]
            out[:, c] = _minmax_normalize(raw[:, c], lo, hi)
        return out

    def score_batch(
        self,
        feats: np.ndarray,
        layer_features: Optional[list[Optional[list[np.ndarray]]]] = None,
    ) -> tuple[np.ndarray, np.ndarray]:
        """Combined scores and normalized (m, 3) components."""
        w = np.asarray(self.weights)
        if w[2] > 0.0 and (
            layer_features is None or any(lf is None for lf in layer_features)
        ):
            raise DataError(
                "epistemic: layer features are required when the cross-layer "
                "weight is positive"
            )
        comps = self.normalize_components(
            self.raw_components_batch(feats, layer_features)
        )
        return comps @ w, comps


def support_deficiency(model: EpistemicModel, v: np.ndarray) -> float:
    """Normalized support deficiency of one feature vector."""
    cfg = model.config
    k = model._effective_k(cfg.k_supp)
    idx, dist = model.index.query(np.asarray(v, dtype=float), k)
    raw = support_deficiency_raw(v, model.index.points[idx], cfg.tau, cfg.eps_supp)
    lo, hi = model.supp_norm
    if hi <= lo:
        return 0.0
    return float(np.clip((raw - lo) / (hi - lo), 0.0, 1.0))


def score_epistemic(
    model: EpistemicModel, record: FeatureRecord
) -> tuple[float, tuple[float, float, float]]:
    """Combined score and per-component diagnostics for one record."""
    layers = [record.layer_features] if record.layer_features is not None else [None]
    if model.weights[2] > 0.0 and record.layer_features is None:
        raise DataError(
            f"epistemic: record {record.id!r} has no layer features but the "
            f"cross-layer weight is positive"
        )
    sigma, comps = model.score_batch(record.feature[None, :], layers)
    c = comps[0]
    return float(sigma[0]), (float(c[0]), float(c[1]), float(c[2]))


def fit_epistemic(
    calibration: FeatureStore,
    config: EpistemicConfig,
    aleatoric_scores: np.ndarray,
    shift_labels: Optional[np.ndarray] = None,
    fixed_weights: Optional[tuple[float, float, float]] = None,
) -> tuple[EpistemicModel, np.ndarray]:
    """Fit normalizers and combination weights on the calibration store.

    Returns the model and the (n, 3) normalized calibration components.
    Stores without layer features restrict the search to zero cross-layer
    weight unless fixed weights force it, which is an error.
    """
    feats = calibration.features
    has_layers = all(r.layer_features is not None for r in calibration.records)
    index = NeighborIndex(feats)
    proto = EpistemicModel(
        index=index,
        comp_norm=((0.0, 1.0), (0.0, 1.0), (0.0, 1.0)),
        weights=(1.0, 0.0, 0.0),
        config=config,
        has_layers=has_layers,
    )
    layer_lists = [r.layer_features for r in calibration.records] if has_layers else None
    raw = proto.raw_components_batch(feats, layer_lists)
    comp_norm = tuple(
        (float(raw[:, c].min()), float(raw[:, c].max())) for c in range(3)
    )
    degenerate_support = comp_norm[0][1] <= comp_norm[0][0]
    if degenerate_support:
        warnings.warn("support deficiency is constant over calibration; scores fall back to 0")

    model = EpistemicModel(
        index=index,
        comp_norm=comp_norm,  # type: ignore[arg-type]
        weights=(1.0, 0.0, 0.0),
        config=config,
        has_layers=has_layers,
        degenerate_support=degenerate_support,
    )
    comps = model.normalize_components(raw)

    if fixed_weights is not None:
        w = np.asarray(fixed_weights, dtype=float)
        if w.min() < 0 or abs(w.sum() - 1.0) > 1e-9:
            raise DataError("fixed weights must be non-negative and sum to 1")
        if w[2] > 0 and not has_layers:
            raise DataError(
                "epistemic: cross-layer weight forced positive but the store "
                "has no layer features"
            )
        weights = (float(w[0]), float(w[1]), float(w[2]))
    else:
        allowed = (True, True, has_layers)
        if not has_layers:
            warnings.warn(
                "store has no layer features; cross-layer weight pinned to 0"
            )
        weights = optimize_weights(
            comps, aleatoric_scores, shift_labels=shift_labels, allowed=allowed
        )
    model.weights = weights
    return model, comps
