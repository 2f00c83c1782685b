"""Deterministic multi-stage convolutional pyramid over image crops.

The "pyramid" encoder is a fixed (untrained) stack of 3x3 convolutions with
ReLU and periodic 2x2 average-pool downsampling. Weights derive from a hash
of the encoder name, so the same crop always encodes to the same vectors
with no seed involved. Any tapped stage is spatially average-pooled to a
channel vector and linearly interpolated to one shared width, keeping
consecutive-layer comparisons well defined.
"""

from __future__ import annotations

import hashlib

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

INPUT_SIZE = 64
N_STAGES = 24
DOWNSAMPLE_AT = (6, 12, 18)
BASE_CHANNELS = 8


class EncoderError(ValueError):
    pass


def _name_seed(name: str) -> int:
    digest = hashlib.sha256(name.encode("utf-8")).digest()
    return int.from_bytes(digest[:8], "big")


def _conv3x3(x: np.ndarray, w: np.ndarray, b: np.ndarray) -> np.ndarray:
    padded = np.pad(x, ((1, 1), (1, 1), (0, 0)))
    patches = sliding_window_view(padded, (3, 3), axis=(0, 1))  # H,W,C,3,3
    return np.einsum("hwcij,ocij->hwo", patches, w, optimize=True) + b


def _avg_pool2(x: np.ndarray) -> np.ndarray:
    h, w, c = x.shape
    h2, w2 = h // 2, w // 2
    return x[: h2 * 2, : w2 * 2].reshape(h2, 2, w2, 2, c).mean(axis=(1, 3))


class PyramidEncoder:
    """Fixed-weight feature pyramid; stage index is the "layer" a tap names."""

    def __init__(self, name: str = "pyramid", n_stages: int = N_STAGES):
        if n_stages < 1:
            raise EncoderError("encoder needs at least one stage")
        self.name = name
        self.n_stages = n_stages
        rng = np.random.default_rng(_name_seed(name))
        self.stages = []
        in_ch = 3
        out_ch = BASE_CHANNELS
        for i in range(n_stages):
            scale = np.sqrt(2.0 / (in_ch * 9))
            w = rng.normal(0.0, scale, size=(out_ch, in_ch, 3, 3))
            b = rng.normal(0.0, 0.01, size=out_ch)
            self.stages.append((w, b, i in DOWNSAMPLE_AT))
            in_ch = out_ch
            if i in DOWNSAMPLE_AT:
                out_ch = min(out_ch * 2, 64)

    @property
    def depth(self) -> int:
        return self.n_stages

    def run(self, crop: np.ndarray, taps: tuple[int, ...]) -> list[np.ndarray]:
        """Feature map channel means at each tapped stage, in tap order.

        `crop` is an (H, W, 3) float array in [0, 1]; it is resampled to the
        encoder's working resolution first.
        """
        bad = [t for t in taps if not (0 <= t < self.n_stages)]
        if bad:
            raise EncoderError(
                f"tap indices {bad} outside the encoder depth {self.n_stages}"
            )
        x = _resize(crop, INPUT_SIZE, INPUT_SIZE)
        wanted = set(taps)
        pooled: dict[int, np.ndarray] = {}
        for i, (w, b, down) in enumerate(self.stages):
            x = np.maximum(_conv3x3(x, w, b), 0.0)
            if down:
                x = _avg_pool2(x)
            if i in wanted:
                pooled[i] = x.mean(axis=(0, 1))
        return [pooled[t] for t in taps]


def _resize(img: np.ndarray, height: int, width: int) -> np.ndarray:
    """Bilinear resample to a fixed working resolution."""
    h, w = img.shape[:2]
    if h == height and w == width:
        return img.astype(float)
    ys = np.linspace(0, h - 1, height)
    xs = np.linspace(0, w - 1, width)
    y0 = np.floor(ys).astype(int)
    x0 = np.floor(xs).astype(int)
    y1 = np.minimum(y0 + 1, h - 1)
    x1 = np.minimum(x0 + 1, w - 1)
    fy = (ys - y0)[:, None, None]
    fx = (xs - x0)[None, :, None]
    img = img.astype(float)
    top = img[y0][:, x0] * (1 - fx) + img[y0][:, x1] * fx
    bot = img[y1][:, x0] * (1 - fx) + img[y1][:, x1] * fx
    return top * (1 - fy) + bot * fy


def interpolate_width(vec: np.ndarray, width: int) -> np.ndarray:
    """Linearly interpolate a channel vector onto a fixed-width grid."""
    vec = np.asarray(vec, dtype=float)
    if vec.shape[0] == width:
        return vec
    if vec.shape[0] == 1:
        return np.full(width, float(vec[0]))
    src = np.linspace(0.0, 1.0, vec.shape[0])
    dst = np.linspace(0.0, 1.0, width)
    return np.interp(dst, src, vec)


def build_encoder(name: str) -> PyramidEncoder:
    """Encoder registry; the deterministic pyramid is the only built-in."""
    if name == "pyramid" or name.startswith("pyramid:"):
        return PyramidEncoder(name)
    raise EncoderError(
        f"unknown encoder {name!r}; built-in encoders: 'pyramid' "
        f"(or 'pyramid:<variant>' for differently seeded weights)"
    )
