"""CueNet: heatmap-based ball detection with a from-scratch numpy CNN engine."""

from .metrics import PEReport, argmax_peak, evaluate, l1_loss, positioning_error, top_k_peaks
from .network import (
    Network,
    NetworkConfig,
    build_network,
    load_checkpoint,
    save_checkpoint,
    scaled_widths,
)
from .trainer import TrainConfig, TrainHistory, fit, train_epoch, validate

__version__ = "0.1.0"

__all__ = [
    "PEReport", "argmax_peak", "evaluate", "l1_loss", "positioning_error", "top_k_peaks",
    "Network", "NetworkConfig", "build_network", "load_checkpoint", "save_checkpoint",
    "scaled_widths", "TrainConfig", "TrainHistory", "fit", "train_epoch", "validate",
]
