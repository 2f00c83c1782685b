"""Distribution-free calibration of the decomposed uncertainty.

Residuals are normalized by the combined uncertainty magnitude, ranked into
a finite-sample global quantile, and optionally stratified by a small
variance-reduction regression tree over the feature space so that
well-behaved regions earn tighter intervals.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field
from typing import Optional, Sequence, Union

import numpy as np

from .errors import DataError
from .records import FeatureStore

DEFAULT_ALPHA = 0.1
DEFAULT_MIN_LEAF = 30
DEFAULT_EPS = 1e-10
TREE_MAX_DEPTH = 5


def nonconformity(y: float, y_hat: float, sigma_alea: float, sigma_epis: float,
                  eps: float = DEFAULT_EPS) -> float:
    """Residual magnitude normalized by the combined uncertainty."""
    if eps <= 0:
        raise DataError(f"eps must be > 0, got {eps}")
    denom = math.sqrt(sigma_alea**2 + sigma_epis**2) + eps
    return abs(y - y_hat) / denom


def nonconformity_batch(y, y_hat, sigma_alea, sigma_epis, eps: float = DEFAULT_EPS):
    if eps <= 0:
        raise DataError(f"eps must be > 0, got {eps}")
    y = np.asarray(y, dtype=float)
    y_hat = np.asarray(y_hat, dtype=float)
    sa = np.asarray(sigma_alea, dtype=float)
    se = np.asarray(sigma_epis, dtype=float)
    return np.abs(y - y_hat) / (np.sqrt(sa**2 + se**2) + eps)


def conformal_quantile(scores: Sequence[float], alpha: float,
                       warn_small: bool = True) -> float:
    """Finite-sample quantile: the ceil((1-alpha)(n+1))-th order statistic.

    When that index exceeds n the sample is too small for the requested
    level; the maximum is returned with a warning.
    """
    scores = np.asarray(scores, dtype=float)
    n = scores.shape[0]
    if n == 0:
        raise DataError("conformal quantile of an empty score list")
    if not (0.0 < alpha < 1.0):
        raise DataError(f"alpha must lie in (0, 1), got {alpha}")
    # Snap values a hair above an integer back down so decimal alphas
    # (0.1, 0.05, ...) rank exactly as their exact-arithmetic ceiling.
    k = math.ceil((1.0 - alpha) * (n + 1) - 1e-9)
    ordered = np.sort(scores)
    if k > n:
        if warn_small:
            warnings.warn(
                f"calibration sample too small for alpha={alpha} "
                f"(n={n}); falling back to the maximum score"
            )
        return float(ordered[-1])
    return float(ordered[k - 1])


@dataclass
class TreeNode:
    node_id: int
    feature: int = -1          # -1 marks a leaf
    threshold: float = 0.0
    left: int = -1
    right: int = -1
    n: int = 0

    @property
    def is_leaf(self) -> bool:
        return self.feature < 0


class StratTree:
    """Axis-aligned regression tree on (features -> nonconformity score).

    Splits maximize variance reduction, require min_leaf_n samples per
    child, and stop at depth 5. Construction is deterministic: the first
    best (feature, threshold) in scan order wins.
    """

    def __init__(self, nodes: list[TreeNode]):
        self.nodes = nodes

    @classmethod
    def fit(cls, X: np.ndarray, y: np.ndarray, min_leaf_n: int,
            max_depth: int = TREE_MAX_DEPTH) -> "StratTree":
        X = np.asarray(X, dtype=float)
        y = np.asarray(y, dtype=float)
        nodes: list[TreeNode] = []

        def build(idx: np.ndarray, depth: int) -> int:
            node_id = len(nodes)
            node = TreeNode(node_id=node_id, n=int(idx.shape[0]))
            nodes.append(node)
            if depth >= max_depth or idx.shape[0] < 2 * min_leaf_n:
                return node_id
            sub_y = y[idx]
            parent_sse = float(((sub_y - sub_y.mean()) ** 2).sum())
            n = idx.shape[0]
            cuts = np.arange(min_leaf_n, n - min_leaf_n + 1)
            best = None  # (child_sse, feature, threshold)
            for f in range(X.shape[1]):
                col = X[idx, f]
                order = np.argsort(col, kind="stable")
                col_s = col[order]
                y_s = sub_y[order]
                csum = np.cumsum(y_s)
                csq = np.cumsum(y_s**2)
                total, total_sq = csum[-1], csq[-1]
                sep = col_s[cuts - 1] != col_s[cuts]  # splittable boundaries
                if not np.any(sep):
                    continue
                left_sse = csq[cuts - 1] - csum[cuts - 1] ** 2 / cuts
                right_n = n - cuts
                right_sum = total - csum[cuts - 1]
                right_sse = (total_sq - csq[cuts - 1]) - right_sum**2 / right_n
                child_sse = np.where(sep, left_sse + right_sse, np.inf)
                at = int(np.argmin(child_sse))  # first minimum in cut order
                cand = float(child_sse[at])
                if cand < parent_sse - 1e-12 and (
                    best is None or cand < best[0] - 1e-12
                ):
                    cut = int(cuts[at])
                    thr = 0.5 * (col_s[cut - 1] + col_s[cut])
                    best = (cand, f, float(thr))
            if best is None:
                return node_id
            _, f, thr = best
            node.feature = f
            node.threshold = thr
            mask = X[idx, f] <= thr
            node.left = build(idx[mask], depth + 1)
            node.right = build(idx[~mask], depth + 1)
            return node_id

        build(np.arange(X.shape[0]), 0)
        return cls(nodes)

    def leaf_id(self, v: np.ndarray) -> int:
        node = self.nodes[0]
        while not node.is_leaf:
            node = self.nodes[node.left if v[node.feature] <= node.threshold
                              else node.right]
        return node.node_id

    def leaf_ids(self, X: np.ndarray) -> np.ndarray:
        return np.array([self.leaf_id(row) for row in np.atleast_2d(X)])

    def leaves(self) -> list[int]:
        return [n.node_id for n in self.nodes if n.is_leaf]

    def to_dict(self) -> list[dict]:
        return [
            {
                "id": n.node_id,
                "feature": n.feature,
                "threshold": n.threshold,
                "left": n.left,
                "right": n.right,
                "n": n.n,
            }
            for n in self.nodes
        ]

    @classmethod
    def from_dict(cls, rows: list[dict]) -> "StratTree":
        nodes = [
            TreeNode(
                node_id=int(r["id"]),
                feature=int(r["feature"]),
                threshold=float(r["threshold"]),
                left=int(r["left"]),
                right=int(r["right"]),
                n=int(r["n"]),
            )
            for r in rows
        ]
        return cls(nodes)


@dataclass
class LeafQuantile:
    q: float
    n: int
    alpha_leaf: Optional[float]  # None marks fallback-to-global
    fallback: bool

    def to_dict(self) -> dict:
        return {"q": self.q, "n": self.n, "alpha_leaf": self.alpha_leaf,
                "fallback": self.fallback}


@dataclass
class PredictionInterval:
    lo: float
    hi: float
    q_used: float
    leaf_id: Union[int, str]  # tree leaf id, or "global" on fallback

    @property
    def width(self) -> float:
        return self.hi - self.lo


@dataclass
class CalibrationModel:
    """Global quantile plus per-leaf local quantiles; immutable after fit."""

    alpha: float
    q_global: float
    tree: StratTree
    leaf_quantiles: dict[int, LeafQuantile]
    min_leaf_n: int
    eps: float = DEFAULT_EPS

    def to_dict(self) -> dict:
        return {
            "alpha": self.alpha,
            "q_global": self.q_global,
            "tree": self.tree.to_dict(),
            "leaf_quantiles": {
                str(k): v.to_dict() for k, v in self.leaf_quantiles.items()
            },
            "min_leaf_n": self.min_leaf_n,
            "eps": self.eps,
        }

    @classmethod
    def from_dict(cls, obj: dict) -> "CalibrationModel":
        try:
            return cls(
                alpha=float(obj["alpha"]),
                q_global=float(obj["q_global"]),
                tree=StratTree.from_dict(obj["tree"]),
                leaf_quantiles={
                    int(k): LeafQuantile(
                        q=float(v["q"]),
                        n=int(v["n"]),
                        alpha_leaf=(
                            float(v["alpha_leaf"])
                            if v["alpha_leaf"] is not None else None
                        ),
                        fallback=bool(v["fallback"]),
                    )
                    for k, v in obj["leaf_quantiles"].items()
                },
                min_leaf_n=int(obj["min_leaf_n"]),
                eps=float(obj["eps"]),
            )
        except (KeyError, TypeError, ValueError) as exc:
            raise DataError(f"malformed calibration section: {exc}") from exc


def leaf_alpha(alpha: float, n_leaf: int) -> float:
    """Slightly conservative per-leaf miscoverage, approaching alpha as
    the leaf grows."""
    return alpha * (1.0 - 1.0 / math.sqrt(n_leaf))


def fit_calibration(
    features: np.ndarray,
    y: np.ndarray,
    y_hat: np.ndarray,
    sigma_alea: np.ndarray,
    sigma_epis: np.ndarray,
    alpha: float = DEFAULT_ALPHA,
    min_leaf_n: int = DEFAULT_MIN_LEAF,
    eps: float = DEFAULT_EPS,
) -> CalibrationModel:
    """Fit the global quantile and the tree-stratified local quantiles."""
    features = np.asarray(features, dtype=float)
    n = features.shape[0]
    if n < 20:
        raise DataError(f"conformal calibration needs >= 20 records, got {n}")
    for name, arr in (("y", y), ("y_hat", y_hat), ("sigma_alea", sigma_alea),
                      ("sigma_epis", sigma_epis)):
        if np.asarray(arr).shape[0] != n:
            raise DataError(f"{name} is not aligned with the feature rows")

    scores = nonconformity_batch(y, y_hat, sigma_alea, sigma_epis, eps)
    q_global = conformal_quantile(scores, alpha)

    tree = StratTree.fit(features, scores, min_leaf_n=min_leaf_n)
    assignments = tree.leaf_ids(features)
    leaf_quantiles: dict[int, LeafQuantile] = {}
    for leaf in tree.leaves():
        leaf_scores = scores[assignments == leaf]
        n_leaf = int(leaf_scores.shape[0])
        if n_leaf >= min_leaf_n:
            a_leaf = leaf_alpha(alpha, n_leaf)
            q_leaf = conformal_quantile(leaf_scores, a_leaf, warn_small=False)
            leaf_quantiles[leaf] = LeafQuantile(
                q=q_leaf, n=n_leaf, alpha_leaf=a_leaf, fallback=False
            )
        else:
            leaf_quantiles[leaf] = LeafQuantile(
                q=q_global, n=n_leaf, alpha_leaf=None, fallback=True
            )
    return CalibrationModel(
        alpha=alpha,
        q_global=float(q_global),
        tree=tree,
        leaf_quantiles=leaf_quantiles,
        min_leaf_n=min_leaf_n,
        eps=eps,
    )


def predict_interval(
    model: CalibrationModel,
    v: np.ndarray,
    y_hat: float,
    sigma_alea: float,
    sigma_epis: float,
) -> PredictionInterval:
    """Interval y_hat +/- q * sqrt(sa^2 + se^2) using the leaf's quantile.

    The interval is not clamped to [0, 1]; clamping is a reporting option.
    """
    leaf = model.tree.leaf_id(np.asarray(v, dtype=float))
    lq = model.leaf_quantiles.get(leaf)
    if lq is None or lq.fallback:
        q, leaf_id = model.q_global, "global"
    else:
        q, leaf_id = lq.q, leaf
    half = q * math.sqrt(sigma_alea**2 + sigma_epis**2)
    return PredictionInterval(lo=y_hat - half, hi=y_hat + half, q_used=q,
                              leaf_id=leaf_id)


def evaluate_coverage(
    model: CalibrationModel,
    features: np.ndarray,
    y: np.ndarray,
    y_hat: np.ndarray,
    sigma_alea: np.ndarray,
    sigma_epis: np.ndarray,
) -> tuple[float, float]:
    """Fraction of true y inside their intervals, and the mean width."""
    features = np.atleast_2d(np.asarray(features, dtype=float))
    n = features.shape[0]
    if n == 0:
        raise DataError("cannot evaluate coverage on an empty test set")
    hits = 0
    widths = np.empty(n)
    for i in range(n):
        band = predict_interval(
            model, features[i], float(y_hat[i]), float(sigma_alea[i]),
            float(sigma_epis[i])
        )
        widths[i] = band.width
        if band.lo <= y[i] <= band.hi:
            hits += 1
    return hits / n, float(widths.mean())
