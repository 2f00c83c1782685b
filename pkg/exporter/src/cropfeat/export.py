"""Manifest-driven export of per-detection features to the record JSONL.

Input manifests are JSON Lines, one image per line:

    {"image": path, "sequence": str, "frame": int, "model_id": str,
     "boxes": [[x, y, w, h], ...], "gt_boxes": [[x, y, w, h], ...]}

`gt_boxes` is optional; when present every emitted record carries the IoU
of its detection against the greedily matched ground-truth box. Output is
the canonical feature record schema: `feature` holds the deepest tapped
layer's pooled vector, `layer_features` all tapped layers at one shared
width.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional

import numpy as np
from PIL import Image, UnidentifiedImageError

from .encoder import EncoderError, build_encoder, interpolate_width
from .geometry import Box, GeometryError, clamp_box, match_ground_truth


class ExportError(ValueError):
    pass


@dataclass(frozen=True)
class ExportConfig:
    encoder: str = "pyramid"
    taps: tuple[int, ...] = (4, 9, 15, 21)
    crop_padding: float = 0.0
    pooled_width: int = 256
    device: str = "cpu"  # accepted for interface parity; the pyramid is CPU-only

    def __post_init__(self):
        if len(self.taps) < 2 or any(
            b <= a for a, b in zip(self.taps, self.taps[1:])
        ):
            raise ExportError("taps must be strictly increasing with length >= 2")
        if self.pooled_width < 1:
            raise ExportError("pooled width must be positive")


@dataclass
class ManifestEntry:
    image: str
    sequence: str
    frame: int
    model_id: str
    boxes: list[Box]
    gt_boxes: Optional[list[Box]] = None


def load_manifest(path) -> list[ManifestEntry]:
    entries: list[ManifestEntry] = []
    try:
        fh = open(path, "r", encoding="utf-8")
    except FileNotFoundError:
        raise ExportError(f"manifest not found: {path}") from None
    with fh:
        for line_no, line in enumerate(fh, start=1):
            line = line.strip()
            if not line:
                continue
            try:
                obj = json.loads(line)
                entries.append(
                    ManifestEntry(
                        image=str(obj["image"]),
                        sequence=str(obj["sequence"]),
                        frame=int(obj["frame"]),
                        model_id=str(obj["model_id"]),
                        boxes=[tuple(float(v) for v in b) for b in obj["boxes"]],
                        gt_boxes=(
                            [tuple(float(v) for v in b) for b in obj["gt_boxes"]]
                            if obj.get("gt_boxes") is not None else None
                        ),
                    )
                )
            except (KeyError, TypeError, ValueError, json.JSONDecodeError) as exc:
                raise ExportError(
                    f"manifest line {line_no}: malformed entry ({exc})"
                ) from exc
    if not entries:
        raise ExportError(f"{path}: empty manifest")
    return entries


def _load_image(path: str) -> np.ndarray:
    try:
        with Image.open(path) as img:
            return np.asarray(img.convert("RGB"), dtype=float) / 255.0
    except FileNotFoundError:
        raise ExportError(f"image not found: {path}") from None
    except UnidentifiedImageError:
        raise ExportError(f"unreadable image: {path}") from None


def export_entry(entry: ManifestEntry, cfg: ExportConfig, encoder) -> list[dict]:
    """Records for one manifest line, in box order."""
    img = _load_image(entry.image)
    height, width = img.shape[:2]
    ious = (
        match_ground_truth(entry.boxes, entry.gt_boxes)
        if entry.gt_boxes is not None else None
    )
    records: list[dict] = []
    for i, box in enumerate(entry.boxes):
        try:
            cx, cy, cw, ch = clamp_box(box, width, height, cfg.crop_padding)
        except GeometryError as exc:
            raise ExportError(f"{entry.image} box {i}: {exc}") from exc
        crop = img[int(cy): int(cy + ch), int(cx): int(cx + cw)]
        taps = encoder.run(crop, cfg.taps)
        layers = [interpolate_width(v, cfg.pooled_width) for v in taps]
        record = {
            "id": f"{entry.sequence}:{i}:{entry.frame}",
            "sequence": entry.sequence,
            "frame": entry.frame,
            "model_id": entry.model_id,
            "bbox": [float(v) for v in box],
            "feature": [float(v) for v in layers[-1]],
            "layer_features": [[float(v) for v in lf] for lf in layers],
        }
        if ious is not None:
            record["iou"] = float(ious[i])
        records.append(record)
    return records


def export(manifest_path, output_path, cfg: ExportConfig = ExportConfig()) -> int:
    """Run the whole manifest; returns the number of records written.

    Output follows manifest order. The pyramid encoder is deterministic, so
    identical inputs produce byte-identical files.
    """
    entries = load_manifest(manifest_path)
    try:
        encoder = build_encoder(cfg.encoder)
    except EncoderError as exc:
        raise ExportError(str(exc)) from exc
    n = 0
    out = Path(output_path)
    out.parent.mkdir(parents=True, exist_ok=True)
    with open(out, "w", encoding="utf-8") as fh:
        for entry in entries:
            for record in export_entry(entry, cfg, encoder):
                fh.write(json.dumps(record) + "\n")
                n += 1
    return n
