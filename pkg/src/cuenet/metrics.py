"""Heatmap losses, peak extraction and Positioning Error (PE) reports."""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .tensor import require_same_dims

DEFAULT_TOLERANCE = 4
HIST_BINS = 21  # unit-width bins 0..19, last bin collects PE >= 20


def l1_loss(output: np.ndarray, label: np.ndarray) -> float:
    """Sum of absolute per-pixel differences."""
    require_same_dims(output, label, "output/label")
    return float(np.abs(label.astype(np.float64) - output).sum())


def l1_loss_grad(output: np.ndarray, label: np.ndarray) -> np.ndarray:
    """d(l1_loss)/d(output); the subgradient at exact equality is 0."""
    require_same_dims(output, label, "output/label")
    return -np.sign(label - output)


def quadratic_loss(a: np.ndarray, y: np.ndarray) -> float:
    require_same_dims(a, y, "activation/label")
    d = y.astype(np.float64) - a
    return 0.5 * float((d * d).sum())


def quadratic_loss_grad(a: np.ndarray, y: np.ndarray) -> np.ndarray:
    require_same_dims(a, y, "activation/label")
    return a - y


def mean_quadratic_loss(activations, labels) -> float:
    """Average of per-sample quadratic losses over a set of samples."""
    pairs = list(zip(activations, labels))
    if not pairs:
        raise ValueError("need at least one sample")
    return sum(quadratic_loss(a, y) for a, y in pairs) / len(pairs)


LOSSES = {
    "l1": (l1_loss, l1_loss_grad),
    "quadratic": (quadratic_loss, quadratic_loss_grad),
}


# ---------------------------------------------------------------------------
# peaks


def _plane(heatmap):
    h = np.asarray(heatmap)
    if h.ndim == 3:
        if h.shape[0] != 1:
            raise ValueError(f"heatmap must have one channel, got {h.shape[0]}")
        h = h[0]
    if h.ndim != 2:
        raise ValueError(f"heatmap must be [H, W] or [1, H, W], got {list(h.shape)}")
    return h


def argmax_peak(heatmap) -> tuple[int, int, float]:
    """Global maximum as ``(x, y, value)``; ties go to the first pixel in row-major order."""
    h = _plane(heatmap)
    flat = int(np.argmax(h))
    y, x = divmod(flat, h.shape[1])
    return x, y, float(h[y, x])


@dataclass
class PeakSet:
    peaks: list[tuple[int, int, float]] = field(default_factory=list)

    def __len__(self):
        return len(self.peaks)

    def __iter__(self):
        return iter(self.peaks)

    def __getitem__(self, i):
        return self.peaks[i]

    def centers(self) -> list[tuple[int, int]]:
        return [(x, y) for x, y, _ in self.peaks]


def top_k_peaks(heatmap, k: int, min_separation: float = 0.0) -> PeakSet:
    """Greedy non-maximum suppression.

    Take the global maximum, suppress every pixel within ``min_separation`` of
    it (the peak itself always), and repeat until ``k`` peaks are found or no
    pixels remain.
    """
    if k < 1:
        raise ValueError("k must be at least 1")
    if min_separation < 0:
        raise ValueError("min_separation must be nonnegative")
    h = _plane(heatmap).astype(np.float64)
    alive = np.ones(h.shape, dtype=bool)
    ys, xs = np.mgrid[0:h.shape[0], 0:h.shape[1]]
    work = h.copy()
    peaks = []
    while len(peaks) < k and alive.any():
        work[~alive] = -np.inf
        x, y, v = argmax_peak(work)
        peaks.append((x, y, float(h[y, x])))
        alive &= (xs - x) ** 2 + (ys - y) ** 2 > min_separation ** 2
        alive[y, x] = False
    return PeakSet(peaks)


def positioning_error(pred, truth) -> float:
    """Euclidean distance in pixels between predicted and true centers."""
    return math.hypot(pred[0] - truth[0], pred[1] - truth[1])


# ---------------------------------------------------------------------------
# reports


def scaled_tolerance(scale: float, base: float = DEFAULT_TOLERANCE, floor: int = 2) -> int:
    """Tolerance for downscaled inputs: ``floor(base * scale)``, at least ``floor``."""
    return max(floor, int(math.floor(base * scale + 1e-9)))


@dataclass
class PEReport:
    pe: list[float]
    tolerance: float = DEFAULT_TOLERANCE
    frame_indices: list[int] | None = None

    def __post_init__(self):
        if any(v < 0 for v in self.pe):
            raise ValueError("positioning errors must be nonnegative")
        if self.frame_indices is None:
            self.frame_indices = list(range(len(self.pe)))

    @property
    def frames_evaluated(self) -> int:
        return len(self.pe)

    @property
    def accuracy(self) -> float:
        """Fraction of frames with PE within the tolerance."""
        if not self.pe:
            return 0.0
        return sum(1 for v in self.pe if v <= self.tolerance) / len(self.pe)

    # the paper-facing name for the default tolerance
    accuracy_at_4 = accuracy

    @property
    def histogram(self) -> list[int]:
        counts = [0] * HIST_BINS
        for v in self.pe:
            counts[min(int(math.floor(v)), HIST_BINS - 1)] += 1
        return counts

    @property
    def mean_pe(self) -> float:
        return float(np.mean(self.pe)) if self.pe else float("nan")

    @property
    def median_pe(self) -> float:
        return float(np.median(self.pe)) if self.pe else float("nan")

    def merge(self, other: "PEReport") -> "PEReport":
        if other.tolerance != self.tolerance:
            raise ValueError("cannot merge reports with different tolerances")
        pairs = sorted(zip(self.frame_indices + other.frame_indices, self.pe + other.pe))
        return PEReport([p for _, p in pairs], self.tolerance, [i for i, _ in pairs])

    def to_csv(self) -> str:
        lines = ["frame_index,pe"]
        lines += [f"{i},{v:.6f}" for i, v in zip(self.frame_indices, self.pe)]
        return "\n".join(lines) + "\n"

    def summary_line(self) -> str:
        return (f"frames,accuracy_at_{self.tolerance:g},mean_pe,median_pe\n"
                f"{self.frames_evaluated},{self.accuracy:.6f},{self.mean_pe:.6f},{self.median_pe:.6f}\n")

    def histogram_text(self, width: int = 50) -> str:
        counts = self.histogram
        top = max(counts) or 1
        rows = []
        for b, c in enumerate(counts):
            label = f"{b:>3}+" if b == HIST_BINS - 1 else f"{b:>3} "
            rows.append(f"{label} | {'#' * round(width * c / top):<{width}} {c}")
        return "\n".join(rows) + "\n"


def evaluate(net, samples, tolerance: float = DEFAULT_TOLERANCE) -> PEReport:
    """PE of the heatmap argmax against ground truth for every sample."""
    samples = list(samples)
    if not samples:
        raise ValueError("cannot evaluate an empty dataset")
    pe, idx = [], []
    for s in samples:
        heat = net.forward(s.frames, training=False)
        x, y, _ = argmax_peak(heat)
        pe.append(positioning_error((x, y), s.center))
        idx.append(s.frame_index)
    return PEReport(pe, tolerance, idx)


def evaluate_predictor(predict, samples, tolerance: float = DEFAULT_TOLERANCE) -> PEReport:
    """Like :func:`evaluate` for any callable mapping a sample to ``(x, y)``."""
    samples = list(samples)
    if not samples:
        raise ValueError("cannot evaluate an empty dataset")
    pe = [positioning_error(predict(s), s.center) for s in samples]
    return PEReport(pe, tolerance, [s.frame_index for s in samples])
