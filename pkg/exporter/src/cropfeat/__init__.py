"""Per-detection multi-layer crop features in the canonical record JSONL."""

from .encoder import PyramidEncoder, build_encoder, interpolate_width
from .export import ExportConfig, ExportError, ManifestEntry, export, load_manifest
from .geometry import clamp_box, iou, match_ground_truth

__version__ = "0.1.0"
