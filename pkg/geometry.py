"""
Box Geometry
============
Axis-aligned (x, y, w, h) boxes in pixels, shared by the scene generator,
the tracker and the metrics. (x, y) is the top-left corner in continuous
image coordinates where pixel i spans [i, i + 1).

Change log:
  2026-10-18  Initial implementation
"""

from dataclasses import dataclass
from typing import Iterable, List, Sequence

import numpy as np

from ddf_errors import DataError


@dataclass(frozen=True)
class BBox:
    x: float
    y: float
    w: float
    h: float

    @property
    def center(self):
        return (self.x + self.w / 2.0, self.y + self.h / 2.0)

    @property
    def area(self) -> float:
        return self.w * self.h

    def is_valid(self) -> bool:
        return bool(np.isfinite([self.x, self.y, self.w, self.h]).all()
                    and self.w > 0 and self.h > 0)

    def validate(self, what: str = "box") -> "BBox":
        if not self.is_valid():
            raise DataError(f"degenerate {what}: {self}")
        return self

    def as_list(self) -> List[float]:
        return [float(self.x), float(self.y), float(self.w), float(self.h)]

    def scaled(self, factor: float) -> "BBox":
        return BBox(self.x * factor, self.y * factor, self.w * factor, self.h * factor)

    def clip(self, width: float, height: float, min_size: float = 1.0) -> "BBox":
        """Clip to the frame, keeping at least `min_size` pixels per side."""
        x0 = min(max(self.x, 0.0), width - min_size)
        y0 = min(max(self.y, 0.0), height - min_size)
        x1 = min(max(self.x + self.w, x0 + min_size), width)
        y1 = min(max(self.y + self.h, y0 + min_size), height)
        return BBox(x0, y0, x1 - x0, y1 - y0)

    @classmethod
    def from_center(cls, cx: float, cy: float, w: float, h: float) -> "BBox":
        return cls(cx - w / 2.0, cy - h / 2.0, w, h)

    @classmethod
    def from_list(cls, values: Sequence[float]) -> "BBox":
        x, y, w, h = (float(v) for v in values)
        return cls(x, y, w, h)


def boxes_to_array(boxes: Iterable[BBox]) -> np.ndarray:
    """Stack boxes into an (N, 4) float64 array."""
    arr = np.array([b.as_list() for b in boxes], dtype=np.float64)
    return arr.reshape(-1, 4)


def intersection_area(a: BBox, b: BBox) -> float:
    iw = min(a.x + a.w, b.x + b.w) - max(a.x, b.x)
    ih = min(a.y + a.h, b.y + b.h) - max(a.y, b.y)
    return max(iw, 0.0) * max(ih, 0.0)


# ============================================================
# TRAJECTORIES
# ============================================================

@dataclass
class Trajectory:
    """Per-frame predicted boxes with lost-target flags (1 = lost)."""

    boxes: List[BBox]
    flags: List[int]

    def __post_init__(self):
        if len(self.boxes) != len(self.flags):
            raise DataError(f"trajectory has {len(self.boxes)} boxes but {len(self.flags)} flags")

    def __len__(self) -> int:
        return len(self.boxes)

    def as_array(self) -> np.ndarray:
        return boxes_to_array(self.boxes)

    def write(self, path: str) -> str:
        """One line per frame: 'frame_index x y w h flag'."""
        with open(path, "w", encoding="utf-8") as f:
            for i, (box, flag) in enumerate(zip(self.boxes, self.flags)):
                x, y, w, h = box.as_list()
                f.write(f"{i} {x!r} {y!r} {w!r} {h!r} {int(flag)}\n")
        return path

    @classmethod
    def read(cls, path: str) -> "Trajectory":
        boxes, flags = [], []
        with open(path, "r", encoding="utf-8") as f:
            for line_no, line in enumerate(f):
                parts = line.split()
                if not parts:
                    continue
                if len(parts) != 6 or int(parts[0]) != len(boxes):
                    raise DataError(f"{path}:{line_no + 1}: malformed trajectory line {line.strip()!r}")
                boxes.append(BBox.from_list(parts[1:5]))
                flags.append(int(parts[5]))
        return cls(boxes, flags)
