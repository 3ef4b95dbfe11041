"""Geometric and photometric augmentation applied identically to all channels."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .samples import Sample


class AugmentRejected(ValueError):
    """The transformed ball center fell outside the frame; skip this draw."""


def _as_range(v, center=0.0):
    if isinstance(v, (tuple, list)):
        lo, hi = float(v[0]), float(v[1])
    else:
        lo, hi = center - float(v), center + float(v)
    if lo > hi:
        raise ValueError(f"empty range {v!r}")
    return lo, hi


@dataclass
class AugmentParams:
    """Ranges for random augmentation draws.

    ``rotation`` and ``brightness`` are either a half-width ``r`` (giving
    ``[-r, r]``) or an explicit ``(lo, hi)``; ``contrast`` is a ``(lo, hi)``
    factor range or a half-width ``c`` around 1.
    """

    rotation: float | tuple = 5.0
    brightness: float | tuple = 0.15
    contrast: float | tuple = (0.8, 1.25)

    def __post_init__(self):
        self._rot = _as_range(self.rotation)
        self._bri = _as_range(self.brightness)
        self._con = _as_range(self.contrast, 1.0)
        if self._con[0] <= 0:
            raise ValueError("contrast factors must be positive")

    def draw(self, rng: np.random.Generator) -> tuple[float, float, float]:
        return (float(rng.uniform(*self._rot)), float(rng.uniform(*self._bri)),
                float(rng.uniform(*self._con)))


IDENTITY = AugmentParams(0.0, 0.0, (1.0, 1.0))


def rotate_point(x, y, degrees, dims):
    """Rotate ``(x, y)`` about the frame center; positive angles map +x toward +y."""
    h, w = dims
    cx, cy = (w - 1) / 2.0, (h - 1) / 2.0
    t = math.radians(degrees)
    c, s = math.cos(t), math.sin(t)
    dx, dy = x - cx, y - cy
    return cx + c * dx - s * dy, cy + s * dx + c * dy


def rotate_frames(frames: np.ndarray, degrees: float) -> np.ndarray:
    """Bilinear rotation about the frame center; samples from outside read as 0."""
    _, h, w = frames.shape
    ys, xs = np.mgrid[0:h, 0:w].astype(np.float64)
    # inverse map: output pixel -> source location
    sx, sy = rotate_point(xs, ys, -degrees, (h, w))
    x0 = np.floor(sx).astype(int)
    y0 = np.floor(sy).astype(int)
    fx, fy = sx - x0, sy - y0
    out = np.zeros(frames.shape, dtype=np.float64)
    for oy, ox, wgt in ((0, 0, (1 - fx) * (1 - fy)), (0, 1, fx * (1 - fy)),
                        (1, 0, (1 - fx) * fy), (1, 1, fx * fy)):
        xi, yi = x0 + ox, y0 + oy
        ok = (xi >= 0) & (xi < w) & (yi >= 0) & (yi < h) & (wgt > 0)
        vals = np.zeros(frames.shape, dtype=np.float64)
        vals[:, ok] = frames[:, yi[ok], xi[ok]]
        out += vals * wgt
    return out.astype(frames.dtype)


def apply_transform(sample: Sample, degrees: float, brightness: float, contrast: float) -> Sample:
    """Rotate, rescale contrast about the mean, shift brightness, clamp to [0, 1]."""
    if contrast <= 0:
        raise ValueError("contrast factor must be positive")
    if degrees == 0 and brightness == 0 and contrast == 1:
        return sample
    h, w = sample.hw
    frames = sample.frames
    center = sample.center
    extra = sample.extra_centers
    if degrees != 0:
        cx, cy = rotate_point(*center, degrees, (h, w))
        center = (int(round(cx)), int(round(cy)))
        if not (0 <= center[0] < w and 0 <= center[1] < h):
            raise AugmentRejected(f"center {sample.center} leaves the frame after {degrees} deg")
        extra = tuple(tuple(int(round(v)) for v in rotate_point(*c, degrees, (h, w))) for c in extra)
        frames = rotate_frames(frames, degrees)
    if contrast != 1:
        mean = frames.mean()
        frames = (frames - mean) * contrast + mean
    if brightness != 0:
        frames = frames + brightness
    frames = np.clip(frames, 0.0, 1.0).astype(sample.frames.dtype)
    label = sample.label if center == sample.center else None
    return Sample(frames, center, label, sample.frame_index, extra, sample.sigma)


def augment(sample: Sample, params: AugmentParams, seed) -> Sample:
    """Draw a transform from ``params`` with ``seed`` and apply it."""
    rng = seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)
    return apply_transform(sample, *params.draw(rng))
