"""Canonical data model and JSONL persistence for detection feature records.

One record captures a single detection: its pooled embedding, optional
per-layer embeddings, spatial context, and (when ground truth was available
at export time) the detection IoU. Records with IoU carry the quality label
y = 1 - IoU, where larger means worse.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from typing import Iterable, Optional, Sequence

import numpy as np

from .errors import DataError

RECORD_FIELDS = ("id", "sequence", "frame", "model_id", "bbox", "feature",
                 "layer_features", "iou", "confidence")

ID_DELIMITER = ":"  # id convention: "<sequence>:<track>:<frame>"


@dataclass
class FeatureRecord:
    id: str
    sequence: str
    frame: int
    model_id: str
    bbox: tuple[float, float, float, float]
    feature: np.ndarray
    layer_features: Optional[list[np.ndarray]] = None
    iou: Optional[float] = None
    confidence: Optional[float] = None

    def conformity(self) -> Optional[float]:
        """Quality label y = 1 - IoU; None when no ground truth was attached."""
        if self.iou is None:
            return None
        return 1.0 - self.iou

    def track_key(self) -> str:
        """Track identity "<sequence>:<track>" parsed from the id string."""
        parts = self.id.split(ID_DELIMITER)
        if len(parts) < 3:
            raise DataError(
                f"record id {self.id!r} does not follow the "
                f"'<sequence>{ID_DELIMITER}<track>{ID_DELIMITER}<frame>' convention"
            )
        return ID_DELIMITER.join(parts[:2])

    def to_json_obj(self) -> dict:
        obj: dict = {
            "id": self.id,
            "sequence": self.sequence,
            "frame": self.frame,
            "model_id": self.model_id,
            "bbox": [float(v) for v in self.bbox],
            "feature": [float(v) for v in self.feature],
        }
        if self.layer_features is not None:
            obj["layer_features"] = [[float(v) for v in lf] for lf in self.layer_features]
        if self.iou is not None:
            obj["iou"] = float(self.iou)
        if self.confidence is not None:
            obj["confidence"] = float(self.confidence)
        return obj


def _validate_record(rec: FeatureRecord, where: str) -> None:
    x, y, w, h = rec.bbox
    if not (w > 0 and h > 0):
        raise DataError(f"{where}: bbox of record {rec.id!r} must have w > 0 and h > 0")
    if rec.frame < 0:
        raise DataError(f"{where}: record {rec.id!r} has negative frame index")
    if not np.all(np.isfinite(rec.feature)):
        raise DataError(f"{where}: record {rec.id!r} has non-finite feature values")
    if rec.iou is not None and not (0.0 <= rec.iou <= 1.0):
        raise DataError(f"{where}: record {rec.id!r} has iou outside [0, 1]")
    if rec.confidence is not None and not (0.0 <= rec.confidence <= 1.0):
        raise DataError(f"{where}: record {rec.id!r} has confidence outside [0, 1]")
    if rec.layer_features is not None:
        if len(rec.layer_features) < 2:
            raise DataError(
                f"{where}: record {rec.id!r} has {len(rec.layer_features)} layer "
                f"features; at least 2 are required"
            )
        for i, lf in enumerate(rec.layer_features):
            if not np.all(np.isfinite(lf)):
                raise DataError(
                    f"{where}: record {rec.id!r} layer {i} has non-finite values"
                )


class FeatureStore:
    """Immutable collection of records with a single consistent dimension.

    Safe for concurrent reads once constructed; nothing mutates after init.
    """

    def __init__(self, records: Sequence[FeatureRecord]):
        records = list(records)
        if not records:
            raise DataError("feature store is empty")
        self.records: list[FeatureRecord] = records
        self.dimension = int(records[0].feature.shape[0])
        self.layer_count: Optional[int] = None
        layer_dims: Optional[list[int]] = None
        seen_ids: set[str] = set()
        for rec in records:
            if rec.id in seen_ids:
                raise DataError(f"duplicate record id {rec.id!r}")
            seen_ids.add(rec.id)
            if rec.feature.shape[0] != self.dimension:
                raise DataError(
                    f"record {rec.id!r} has feature dimension "
                    f"{rec.feature.shape[0]}, expected {self.dimension}"
                )
            if rec.layer_features is not None:
                dims = [int(lf.shape[0]) for lf in rec.layer_features]
                if layer_dims is None:
                    layer_dims = dims
                    self.layer_count = len(dims)
                elif dims != layer_dims:
                    raise DataError(
                        f"record {rec.id!r} has layer dimensions {dims}, "
                        f"expected {layer_dims}"
                    )
        self._features: Optional[np.ndarray] = None

    def __len__(self) -> int:
        return len(self.records)

    def __iter__(self):
        return iter(self.records)

    @property
    def features(self) -> np.ndarray:
        """(n, d) matrix of record features, rows in store order."""
        if self._features is None:
            self._features = np.stack([r.feature for r in self.records])
        return self._features

    def ids(self) -> list[str]:
        return [r.id for r in self.records]

    def conformities(self) -> np.ndarray:
        """y = 1 - IoU for every record; raises if any record lacks iou."""
        ys = []
        for rec in self.records:
            y = rec.conformity()
            if y is None:
                raise DataError(f"record {rec.id!r} has no iou label")
            ys.append(y)
        return np.asarray(ys, dtype=float)

    def has_labels(self) -> bool:
        return all(r.iou is not None for r in self.records)

    def filter_sequence(self, sequence: str) -> "FeatureStore":
        subset = [r for r in self.records if r.sequence == sequence]
        if not subset:
            raise DataError(f"no records for sequence {sequence!r}")
        return FeatureStore(subset)


@dataclass(frozen=True)
class SplitSpec:
    mode: str = "by_fraction"  # or "by_track_identity"
    fraction: float = 0.5
    seed: int = 0

    def __post_init__(self):
        if self.mode not in ("by_fraction", "by_track_identity"):
            raise DataError(f"unknown split mode {self.mode!r}")
        if not (0.0 < self.fraction < 1.0):
            raise DataError(f"split fraction must lie in (0, 1), got {self.fraction}")


def _parse_record(obj: dict, line_no: int) -> FeatureRecord:
    try:
        bbox = obj["bbox"]
        rec = FeatureRecord(
            id=str(obj["id"]),
            sequence=str(obj["sequence"]),
            frame=int(obj["frame"]),
            model_id=str(obj["model_id"]),
            bbox=(float(bbox[0]), float(bbox[1]), float(bbox[2]), float(bbox[3])),
            feature=np.asarray(obj["feature"], dtype=float),
            layer_features=(
                [np.asarray(lf, dtype=float) for lf in obj["layer_features"]]
                if "layer_features" in obj and obj["layer_features"] is not None
                else None
            ),
            iou=float(obj["iou"]) if obj.get("iou") is not None else None,
            confidence=(
                float(obj["confidence"]) if obj.get("confidence") is not None else None
            ),
        )
    except (KeyError, TypeError, ValueError, IndexError) as exc:
        raise DataError(f"line {line_no}: malformed record ({exc})") from exc
    _validate_record(rec, f"line {line_no}")
    return rec


def load_records(path) -> FeatureStore:
    """Load a JSONL record file into a FeatureStore.

    Dimension consistency is verified against the first record; violations
    report the offending record id.
    """
    records: list[FeatureRecord] = []
    try:
        fh = open(path, "r", encoding="utf-8")
    except FileNotFoundError:
        raise DataError(f"record file not found: {path}") from None
    with fh:
        for line_no, line in enumerate(fh, start=1):
            line = line.strip()
            if not line:
                continue
            try:
                obj = json.loads(line)
            except json.JSONDecodeError as exc:
                raise DataError(f"line {line_no}: invalid JSON ({exc.msg})") from exc
            records.append(_parse_record(obj, line_no))
    if not records:
        raise DataError(f"{path}: empty record file")
    return FeatureStore(records)


def save_records(store: FeatureStore, path) -> None:
    """Write a store back out in the canonical JSONL format."""
    with open(path, "w", encoding="utf-8") as fh:
        for rec in store.records:
            fh.write(json.dumps(rec.to_json_obj()) + "\n")


def split(store: FeatureStore, spec: SplitSpec) -> tuple[FeatureStore, FeatureStore]:
    """Partition a store into disjoint, exhaustive calibration/test halves.

    by_fraction draws ceil(n * fraction) calibration records from a seeded
    shuffle. by_track_identity keeps every track wholly inside one partition,
    filling calibration with shuffled tracks until the fraction target is met.
    """
    n = len(store)
    if spec.mode == "by_fraction":
        n_cal = math.ceil(n * spec.fraction)
        if n_cal == 0 or n_cal == n:
            raise DataError(
                f"store of {n} records cannot populate both partitions "
                f"at fraction {spec.fraction}"
            )
        rng = np.random.default_rng(spec.seed)
        order = rng.permutation(n)
        cal_idx = sorted(order[:n_cal].tolist())
        test_idx = sorted(order[n_cal:].tolist())
        cal = FeatureStore([store.records[i] for i in cal_idx])
        test = FeatureStore([store.records[i] for i in test_idx])
        return cal, test

    # by_track_identity
    tracks: dict[str, list[int]] = {}
    for i, rec in enumerate(store.records):
        tracks.setdefault(rec.track_key(), []).append(i)
    if len(tracks) < 2:
        raise DataError(
            f"store has {len(tracks)} track(s); at least 2 are needed to "
            f"populate both partitions by track identity"
        )
    keys = sorted(tracks)
    rng = np.random.default_rng(spec.seed)
    rng.shuffle(keys)
    target = math.ceil(n * spec.fraction)
    cal_idx: list[int] = []
    test_idx: list[int] = []
    for key in keys:
        if len(cal_idx) < target and len(test_idx) + len(cal_idx) < n:
            cal_idx.extend(tracks[key])
        else:
            test_idx.extend(tracks[key])
    if not test_idx:
        # Last shuffled track must back off to the test side.
        last = keys[-1]
        moved = set(tracks[last])
        cal_idx = [i for i in cal_idx if i not in moved]
        test_idx = sorted(moved)
    if not cal_idx or not test_idx:
        raise DataError("track split left one partition empty")
    cal = FeatureStore([store.records[i] for i in sorted(cal_idx)])
    test = FeatureStore([store.records[i] for i in sorted(test_idx)])
    return cal, test
