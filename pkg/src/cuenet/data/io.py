"""On-disk dataset format.

A dataset directory holds::

    meta.txt        key=value lines: width, height, channels
    labels.txt      label records (see :mod:`cuenet.data.labels`)
    frames/NNNN.pgm binary P5, maxval 255; multi-channel frames store their
                    planes stacked vertically (PGM height = channels * height)
"""

from __future__ import annotations

import logging
import re
from pathlib import Path

import numpy as np

from .labels import LabelFile, LabelRecord, format_label_file, parse_label_file
from .samples import DEFAULT_SIGMA, Sample
from .synth import quantize, to_unit

log = logging.getLogger(__name__)


class DatasetError(Exception):
    pass


class MissingFileError(DatasetError):
    pass


class PGMFormatError(DatasetError):
    pass


class DimensionMismatchError(DatasetError):
    pass


_TOKEN = re.compile(rb"\s*(?:#[^\n]*\n\s*)*(\S+)")


def write_pgm(path, img_u8: np.ndarray) -> None:
    if img_u8.dtype != np.uint8 or img_u8.ndim != 2:
        raise ValueError("write_pgm expects a 2-D uint8 array")
    h, w = img_u8.shape
    Path(path).write_bytes(b"P5\n%d %d\n255\n" % (w, h) + img_u8.tobytes())


def read_pgm(path) -> np.ndarray:
    """Read an 8-bit binary PGM into a [H, W] uint8 array."""
    data = Path(path).read_bytes()
    fields, pos = [], 0
    for _ in range(4):
        m = _TOKEN.match(data, pos)
        if not m:
            raise PGMFormatError(f"{path}: truncated header")
        fields.append(m.group(1))
        pos = m.end()
    if fields[0] != b"P5":
        raise PGMFormatError(f"{path}: not a binary PGM (magic {fields[0]!r})")
    try:
        w, h, maxval = (int(f) for f in fields[1:])
    except ValueError:
        raise PGMFormatError(f"{path}: malformed header") from None
    if maxval > 255:
        raise PGMFormatError(f"{path}: unsupported {maxval}-level PGM (only 8-bit is supported)")
    if maxval != 255:
        raise PGMFormatError(f"{path}: maxval must be 255, got {maxval}")
    pos += 1  # single whitespace byte after maxval
    pixels = data[pos:pos + w * h]
    if len(pixels) != w * h:
        raise PGMFormatError(f"{path}: expected {w * h} pixel bytes, found {len(pixels)}")
    return np.frombuffer(pixels, dtype=np.uint8).reshape(h, w)


def read_meta(path) -> dict[str, int]:
    meta = {}
    for line in Path(path).read_text().splitlines():
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        key, sep, value = line.partition("=")
        if not sep:
            raise DatasetError(f"{path}: expected key=value, got {line!r}")
        meta[key.strip()] = value.strip()
    for key in ("width", "height", "channels"):
        if key not in meta:
            raise DatasetError(f"{path}: missing {key}")
    return {k: int(v) for k, v in meta.items() if k in ("width", "height", "channels")}


def frame_name(index: int) -> str:
    return f"{index:04d}.pgm"


def export_dataset(samples, out_dir) -> Path:
    """Write samples (all with the same dims) in the dataset directory format."""
    samples = list(samples)
    if not samples:
        raise DatasetError("nothing to export")
    out = Path(out_dir)
    (out / "frames").mkdir(parents=True, exist_ok=True)
    c, h, w = samples[0].frames.shape
    (out / "meta.txt").write_text(f"width={w}\nheight={h}\nchannels={c}\n")
    records = []
    for s in samples:
        if s.frames.shape != (c, h, w):
            raise DimensionMismatchError("all exported samples must share dims")
        write_pgm(out / "frames" / frame_name(s.frame_index), quantize(s.frames.reshape(c * h, w)))
        records.append(LabelRecord(s.frame_index, tuple(s.centers)))
    (out / "labels.txt").write_text(format_label_file(LabelFile(records)))
    return out


def load_dataset(dir_path, sigma: float = DEFAULT_SIGMA) -> list[Sample]:
    """Load labeled frames in frame-index order; unlabeled frames are skipped."""
    root = Path(dir_path)
    if not root.is_dir():
        raise MissingFileError(f"{root}: not a directory")
    if not (root / "meta.txt").exists():
        raise MissingFileError(f"{root}: missing meta.txt")
    if not (root / "labels.txt").exists():
        raise MissingFileError(f"{root}: missing labels.txt")
    meta = read_meta(root / "meta.txt")
    w, h, c = meta["width"], meta["height"], meta["channels"]
    labels = parse_label_file((root / "labels.txt").read_text(), width=w, height=h).by_index()
    frames_dir = root / "frames"
    if not frames_dir.is_dir():
        raise MissingFileError(f"{root}: missing frames/ directory")
    samples, unlabeled = [], 0
    files = sorted(frames_dir.glob("*.pgm"), key=lambda p: int(p.stem))
    for path in files:
        idx = int(path.stem)
        rec = labels.pop(idx, None)
        if rec is None:
            unlabeled += 1
            continue
        img = read_pgm(path)
        if img.shape != (c * h, w):
            raise DimensionMismatchError(
                f"{path}: PGM is {img.shape[1]}x{img.shape[0]}, meta says {w}x{c * h}")
        frames = to_unit(img).reshape(c, h, w)
        samples.append(Sample(frames, rec.centers[0], frame_index=idx,
                              extra_centers=tuple(rec.centers[1:]), sigma=sigma))
    if unlabeled:
        log.warning("skipped %d frames without labels", unlabeled)
    if labels:
        raise DatasetError(f"labels reference missing frames: {sorted(labels)[:5]}")
    return samples
