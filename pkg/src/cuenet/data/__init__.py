from .augment import AugmentParams, AugmentRejected, apply_transform, augment
from .io import export_dataset, load_dataset, read_pgm, write_pgm
from .labels import LabelFile, LabelFormatError, LabelRecord, format_label_file, parse_label_file
from .samples import (
    EmptySplitError,
    Sample,
    gaussian_heatmap,
    location_split,
    single_channel,
    split_channels,
    stack_frames,
    stack_sequence,
)
from .synth import SynthConfig, synth_sequence

__all__ = [
    "AugmentParams", "AugmentRejected", "apply_transform", "augment",
    "export_dataset", "load_dataset", "read_pgm", "write_pgm",
    "LabelFile", "LabelFormatError", "LabelRecord", "format_label_file", "parse_label_file",
    "EmptySplitError", "Sample", "gaussian_heatmap", "location_split", "single_channel",
    "split_channels", "stack_frames", "stack_sequence",
    "SynthConfig", "synth_sequence",
]
