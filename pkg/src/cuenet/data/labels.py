"""Plain-text label files: one ``frame_index x y`` record per line.

Two-ball sequences append a second ``x2 y2`` pair. Blank lines and ``#``
comments are ignored.
"""

from __future__ import annotations

from dataclasses import dataclass, field


class LabelFormatError(ValueError):
    def __init__(self, message: str, line: int | None = None):
        self.line = line
        super().__init__(f"line {line}: {message}" if line is not None else message)


@dataclass(frozen=True)
class LabelRecord:
    frame_index: int
    centers: tuple[tuple[int, int], ...]

    @property
    def x(self) -> int:
        return self.centers[0][0]

    @property
    def y(self) -> int:
        return self.centers[0][1]


@dataclass
class LabelFile:
    records: list[LabelRecord] = field(default_factory=list)

    def __len__(self):
        return len(self.records)

    def __iter__(self):
        return iter(self.records)

    def by_index(self) -> dict[int, LabelRecord]:
        return {r.frame_index: r for r in self.records}


def parse_label_file(text: str, width: int | None = None, height: int | None = None) -> LabelFile:
    records: list[LabelRecord] = []
    last = None
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        parts = line.split()
        if len(parts) < 3 or len(parts) % 2 == 0:
            raise LabelFormatError(f"expected 'frame_index x y [x2 y2 ...]', got {raw!r}", lineno)
        try:
            nums = [int(p) for p in parts]
        except ValueError:
            raise LabelFormatError(f"non-integer field in {raw!r}", lineno) from None
        idx, coords = nums[0], nums[1:]
        if idx < 0:
            raise LabelFormatError(f"negative frame index {idx}", lineno)
        if last is not None and idx <= last:
            raise LabelFormatError(f"frame index {idx} does not increase (previous {last})", lineno)
        centers = tuple((coords[i], coords[i + 1]) for i in range(0, len(coords), 2))
        for x, y in centers:
            if x < 0 or y < 0 or (width is not None and x >= width) or (height is not None and y >= height):
                raise LabelFormatError(f"coordinate ({x}, {y}) outside the frame", lineno)
        records.append(LabelRecord(idx, centers))
        last = idx
    return LabelFile(records)


def format_label_file(labels: LabelFile) -> str:
    lines = []
    for r in labels:
        coords = " ".join(f"{x} {y}" for x, y in r.centers)
        lines.append(f"{r.frame_index} {coords}")
    return "\n".join(lines) + ("\n" if lines else "")
