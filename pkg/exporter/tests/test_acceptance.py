"""Exporter conformance: the emitted JSONL is a valid record store, IoU
labels match an independent hand oracle exactly, and all layer vectors
share one width."""

import json
import warnings
from pathlib import Path

import pytest

DATA = Path(__file__).parent / "data"


def hand_iou(a, b):
    """Independent overlap oracle written against (x, y, w, h) tuples."""
    ax1, ay1, ax2, ay2 = a[0], a[1], a[0] + a[2], a[1] + a[3]
    bx1, by1, bx2, by2 = b[0], b[1], b[0] + b[2], b[1] + b[3]
    iw = min(ax2, bx2) - max(ax1, bx1)
    ih = min(ay2, by2) - max(ay1, by1)
    if iw <= 0 or ih <= 0:
        return 0.0
    inter = iw * ih
    return inter / (a[2] * a[3] + b[2] * b[3] - inter)


MANIFEST = [
    {
        "image": "scene0.png", "sequence": "s0", "frame": 0, "model_id": "pyr",
        "boxes": [[30, 20, 40, 30], [80, 60, 35, 25]],
        "gt_boxes": [[30, 20, 40, 30], [85, 60, 35, 25]],
    },
    {
        "image": "scene1.png", "sequence": "s1", "frame": 1, "model_id": "pyr",
        "boxes": [[0, 0, 50, 40]],
        "gt_boxes": [[10, 0, 50, 40]],
    },
    {
        "image": "scene2.png", "sequence": "s2", "frame": 2, "model_id": "pyr",
        "boxes": [[20, 25, 30, 30], [100, 10, 20, 20]],
        "gt_boxes": [[25, 30, 30, 30]],
    },
]


@pytest.fixture(scope="module")
def exported(tmp_path_factory):
    from cropfeat.export import ExportConfig, export

    tmp = tmp_path_factory.mktemp("accept")
    manifest = tmp / "manifest.jsonl"
    with open(manifest, "w") as fh:
        for entry in MANIFEST:
            entry = dict(entry)
            entry["image"] = str(DATA / entry["image"])
            fh.write(json.dumps(entry) + "\n")
    out = tmp / "records.jsonl"
    export(manifest, out, ExportConfig(pooled_width=64))
    return out


def test_11_exporter_conformance(exported):
    # Loads cleanly through the canonical store reader, without warnings.
    from uqgate.records import load_records

    with warnings.catch_warnings():
        warnings.simplefilter("error")
        store = load_records(exported)
    assert len(store) == 5

    # IoU labels equal the hand oracle exactly (greedy best-overlap).
    by_id = {rec.id: rec for rec in store.records}
    expected = {
        "s0:0:0": hand_iou((30, 20, 40, 30), (30, 20, 40, 30)),
        "s0:1:0": hand_iou((80, 60, 35, 25), (85, 60, 35, 25)),
        "s1:0:1": hand_iou((0, 0, 50, 40), (10, 0, 50, 40)),
        "s2:0:2": hand_iou((20, 25, 30, 30), (25, 30, 30, 30)),
        "s2:1:2": 0.0,  # disjoint from the only ground-truth box
    }
    assert expected["s0:0:0"] == 1.0
    for rec_id, want in expected.items():
        assert by_id[rec_id].iou == want, rec_id

    # One shared width across every layer vector of every record.
    widths = {
        lf.shape[0] for rec in store.records for lf in rec.layer_features
    }
    assert widths == {64}
    assert store.dimension == 64

    print("ACCEPTANCE 11 [PASS] exporter conformance "
          f"(5 records, ious exact, shared width 64)")
