"""Persistence for the fitted model bundle.

A bundle is one JSON document with `density`, `epistemic`, `calibration`,
and `version` keys. Floats survive the round trip bit-exactly (shortest
repr serialization). The epistemic neighbor index is not serialized; it is
rebuilt from the calibration store on load.
"""

from __future__ import annotations

import json
from dataclasses import dataclass

from .aleatoric import DensityModel
from .conformal import CalibrationModel
from .epistemic import EpistemicConfig, EpistemicModel, NeighborIndex
from .errors import DataError
from .records import FeatureStore

BUNDLE_VERSION = 1


@dataclass
class ModelBundle:
    density: DensityModel
    epistemic: EpistemicModel
    calibration: CalibrationModel


def save_model_bundle(bundle: ModelBundle, path) -> None:
    epis = bundle.epistemic
    obj = {
        "version": BUNDLE_VERSION,
        "density": bundle.density.to_dict(),
        "epistemic": {
            "weights": [float(w) for w in epis.weights],
            "config": epis.config.to_dict(),
            "supp_norm": [float(v) for v in epis.supp_norm],
            "comp_norm": [[float(v) for v in pair] for pair in epis.comp_norm],
            "has_layers": epis.has_layers,
            "degenerate_support": epis.degenerate_support,
        },
        "calibration": bundle.calibration.to_dict(),
    }
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(obj, fh)


def load_model_bundle(path, calibration_store: FeatureStore) -> ModelBundle:
    """Restore a bundle, rebuilding the neighbor index from the store."""
    try:
        with open(path, "r", encoding="utf-8") as fh:
            obj = json.load(fh)
    except FileNotFoundError:
        raise DataError(f"bundle file not found: {path}") from None
    except json.JSONDecodeError as exc:
        raise DataError(f"{path}: truncated or invalid bundle ({exc.msg})") from exc
    version = obj.get("version")
    if version != BUNDLE_VERSION:
        raise DataError(
            f"{path}: bundle version {version!r} does not match "
            f"supported version {BUNDLE_VERSION}"
        )
    for key in ("density", "epistemic", "calibration"):
        if key not in obj:
            raise DataError(f"{path}: bundle is missing the {key!r} section")

    density = DensityModel.from_dict(obj["density"])
    e = obj["epistemic"]
    try:
        comp_norm = tuple(
            (float(lo), float(hi)) for lo, hi in e["comp_norm"]
        )
        epistemic = EpistemicModel(
            index=NeighborIndex(calibration_store.features),
            comp_norm=comp_norm,  # type: ignore[arg-type]
            weights=tuple(float(w) for w in e["weights"]),  # type: ignore[arg-type]
            config=EpistemicConfig.from_dict(e["config"]),
            has_layers=bool(e.get("has_layers", True)),
            degenerate_support=bool(e.get("degenerate_support", False)),
        )
    except (KeyError, TypeError, ValueError) as exc:
        raise DataError(f"malformed epistemic section: {exc}") from exc
    calibration = CalibrationModel.from_dict(obj["calibration"])
    return ModelBundle(density=density, epistemic=epistemic, calibration=calibration)
