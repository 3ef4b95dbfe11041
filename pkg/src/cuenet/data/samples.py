"""Training samples, Gaussian heatmap labels, channel handling and splits."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from ..tensor import ShapeError

DEFAULT_SIGMA = 2.0


def gaussian_heatmap(center, sigma: float, dims, dtype=np.float64) -> np.ndarray:
    """[1, H, W] Gaussian blob around ``center = (x, y)`` that sums to 1."""
    h, w = dims
    x0, y0 = center
    if not (0 <= x0 < w and 0 <= y0 < h):
        raise ValueError(f"center {center} outside {w}x{h} frame")
    if sigma <= 0:
        raise ValueError("sigma must be positive")
    ys = np.arange(h, dtype=np.float64)[:, None]
    xs = np.arange(w, dtype=np.float64)[None, :]
    g = np.exp(-((xs - x0) ** 2 + (ys - y0) ** 2) / (2.0 * sigma * sigma))
    g /= g.sum()
    return g[None].astype(dtype)


@dataclass
class Sample:
    """One input stack with its ground truth.

    ``frames`` is [C, H, W] with C in {1, 3}; ``center`` is the (x, y) pixel of
    the tracked ball and ``label`` the matching heatmap. ``extra_centers`` holds
    further balls in multi-object scenes; they do not contribute to the label.
    """

    frames: np.ndarray
    center: tuple[int, int]
    label: np.ndarray = None
    frame_index: int = 0
    extra_centers: tuple = field(default_factory=tuple)
    sigma: float = DEFAULT_SIGMA

    def __post_init__(self):
        if self.frames.ndim != 3 or self.frames.shape[0] not in (1, 3):
            raise ShapeError(f"frames must be [1|3, H, W], got {list(self.frames.shape)}")
        _, h, w = self.frames.shape
        x, y = self.center
        self.center = (int(x), int(y))
        if not (0 <= self.center[0] < w and 0 <= self.center[1] < h):
            raise ValueError(f"center {self.center} outside {w}x{h} frame")
        if self.label is None:
            self.label = gaussian_heatmap(self.center, self.sigma, (h, w), dtype=self.frames.dtype)
        elif self.label.shape != (1, h, w):
            raise ShapeError(f"label dims {list(self.label.shape)} != [1, {h}, {w}]")

    @property
    def hw(self) -> tuple[int, int]:
        return self.frames.shape[1], self.frames.shape[2]

    @property
    def centers(self) -> list[tuple[int, int]]:
        return [self.center, *self.extra_centers]

    def with_frames(self, frames: np.ndarray) -> "Sample":
        return Sample(frames, self.center, self.label, self.frame_index, self.extra_centers, self.sigma)


def split_channels(rgb_frame: np.ndarray):
    """Separate a 3-channel video frame into its (APS, DVS) planes.

    Intensity frames are carried on the red channel and event frames on the
    green channel; blue is unused.
    """
    if rgb_frame.ndim != 3 or rgb_frame.shape[0] != 3:
        raise ShapeError(f"expected [3, H, W] frame, got {list(rgb_frame.shape)}")
    return rgb_frame[0:1].copy(), rgb_frame[1:2].copy()


def stack_frames(samples) -> Sample:
    """Stack three consecutive single-channel samples into one 3-channel sample.

    Channels are ordered oldest first; ground truth comes from the newest frame.
    """
    samples = list(samples)
    if len(samples) != 3:
        raise ValueError(f"need exactly 3 samples, got {len(samples)}")
    idx = [s.frame_index for s in samples]
    if idx[1] != idx[0] + 1 or idx[2] != idx[1] + 1:
        raise ValueError(f"frame indices {idx} are not consecutive")
    return _stack(samples)


def _stack(samples) -> Sample:
    last = samples[-1]
    frames = np.concatenate([s.frames[:1] for s in samples], axis=0)
    return Sample(frames, last.center, last.label, last.frame_index, last.extra_centers, last.sigma)


def stack_sequence(samples) -> list[Sample]:
    """3-frame stacks for every sample of a sequence.

    Frames before the start of the sequence (or across a gap in frame indices)
    are replaced by repeating the earliest available frame.
    """
    samples = list(samples)
    out = []
    for t, s in enumerate(samples):
        window = [s]
        for back in (1, 2):
            j = t - back
            prev = samples[j] if j >= 0 and samples[j].frame_index == s.frame_index - back else None
            window.insert(0, prev if prev is not None else window[0])
        out.append(_stack(window))
    return out


def single_channel(samples) -> list[Sample]:
    """Keep only the newest frame of each sample (input for the one-frame network)."""
    return [s.with_frames(s.frames[-1:]) for s in samples]


# ---------------------------------------------------------------------------
# location-based split


class EmptySplitError(ValueError):
    pass


def region_of(center, dims, grid) -> tuple[int, int]:
    """Grid cell ``(row, col)`` containing ``center`` in a frame of ``dims = (H, W)``."""
    (h, w), (rows, cols) = dims, grid
    x, y = center
    return min(rows - 1, int(y * rows // h)), min(cols - 1, int(x * cols // w))


def choose_validation_regions(grid=(4, 4), count: int = 4, seed: int = 0) -> set[tuple[int, int]]:
    rows, cols = grid
    if not 0 < count < rows * cols:
        raise ValueError("validation region count must leave both sides nonempty")
    rng = np.random.default_rng(seed)
    cells = rng.choice(rows * cols, size=count, replace=False)
    return {(int(c) // cols, int(c) % cols) for c in sorted(cells)}


def location_split(samples, region_grid=(4, 4), validation_regions=None, seed: int = 0):
    """Partition samples by the grid cell their true center falls into.

    Cells listed in ``validation_regions`` (``(row, col)`` pairs) go to the
    validation side. When no regions are given, four cells are drawn from
    ``seed``.
    """
    samples = list(samples)
    rows, cols = region_grid
    if rows <= 0 or cols <= 0:
        raise ValueError("grid must have positive rows and cols")
    if validation_regions is None:
        validation_regions = choose_validation_regions(region_grid, 4, seed)
    validation_regions = {tuple(r) for r in validation_regions}
    if not validation_regions or len(validation_regions) >= rows * cols:
        raise ValueError("validation regions must be a nonempty proper subset of the grid")
    for r, c in validation_regions:
        if not (0 <= r < rows and 0 <= c < cols):
            raise ValueError(f"region {(r, c)} outside {rows}x{cols} grid")
    train, val = [], []
    for s in samples:
        (val if region_of(s.center, s.hw, region_grid) in validation_regions else train).append(s)
    if not train:
        raise EmptySplitError("training split is empty; choose different validation regions")
    if not val:
        raise EmptySplitError("validation split is empty; choose different validation regions")
    return train, val
