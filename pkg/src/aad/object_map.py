"""Per-pixel object-occurrence history built from external detections.

Detections arrive as JSON lines::

    {"frame": 12, "class_id": 14, "score": 0.93, "bbox": [x0, y0, x1, y1]}

Boxes are half-open pixel rectangles: a box covers columns
``floor(x0) .. ceil(x1) - 1`` and rows ``floor(y0) .. ceil(y1) - 1``.

The map stores ``C + 1`` counters per pixel, one per class plus the total
number of observed objects (with 21 classes that is 22 values per pixel).
"""
from __future__ import annotations

import json
import math
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable

import numpy as np

from .errors import FormatError, NoHistoryError, ParseError, RangeError, ShapeError

__all__ = [
    "DEFAULT_CLASSES",
    "DetectionRecord",
    "ObjectMap",
    "parse_detections",
    "load_detections",
    "accumulate",
    "class_probability",
    "object_anomaly",
    "save_object_map",
    "load_object_map",
]

# 20 PASCAL VOC classes plus background.
DEFAULT_CLASSES = (
    "background", "aeroplane", "bicycle", "bird", "boat", "bottle", "bus", "car", "cat", "chair",
    "cow", "diningtable", "dog", "horse", "motorbike", "person", "pottedplant", "sheep", "sofa",
    "train", "tvmonitor",
)

DETECTION_THRESHOLD = 0.8


@dataclass(frozen=True)
class DetectionRecord:
    frame_index: int
    class_id: int
    score: float
    bbox: tuple[float, float, float, float]

    def pixel_bounds(self) -> tuple[int, int, int, int]:
        """Half-open integer pixel rectangle ``(x0, y0, x1, y1)``."""
        x0, y0, x1, y1 = self.bbox
        return math.floor(x0), math.floor(y0), math.ceil(x1), math.ceil(y1)


def _clamp_box(bbox, frame_size):
    x0, y0, x1, y1 = bbox
    if frame_size is not None:
        w, h = frame_size
        x0, x1 = min(max(x0, 0.0), w), min(max(x1, 0.0), w)
        y0, y1 = min(max(y0, 0.0), h), min(max(y1, 0.0), h)
    return x0, y0, x1, y1


def parse_detections(
    source: str | Iterable[str],
    num_classes: int = len(DEFAULT_CLASSES),
    threshold: float = DETECTION_THRESHOLD,
    frame_size: tuple[int, int] | None = None,
) -> list[DetectionRecord]:
    """Parse JSON-lines detections, dropping those scoring below ``threshold``.

    ``frame_size`` is ``(width, height)``; when given, boxes are clamped to
    the frame and boxes left empty by clamping are rejected.

    Raises:
        ParseError: malformed JSON, missing keys or a degenerate box.
        RangeError: class id outside ``[0, num_classes)`` or score outside [0, 1].
    """
    lines = source.splitlines() if isinstance(source, str) else source
    records = []
    for lineno, line in enumerate(lines, start=1):
        line = line.strip()
        if not line:
            continue
        try:
            obj = json.loads(line)
            frame = obj["frame"]
            class_id = obj["class_id"]
            score = float(obj["score"])
            bbox = tuple(float(v) for v in obj["bbox"])
        except (json.JSONDecodeError, KeyError, TypeError, ValueError) as exc:
            raise ParseError(f"malformed detection: {exc}", lineno) from None
        if not isinstance(frame, int) or isinstance(frame, bool) or frame < 0:
            raise ParseError(f"frame must be a non-negative integer, got {frame!r}", lineno)
        if not isinstance(class_id, int) or isinstance(class_id, bool):
            raise ParseError(f"class_id must be an integer, got {class_id!r}", lineno)
        if not 0 <= class_id < num_classes:
            raise RangeError(f"class_id {class_id} outside [0, {num_classes})", lineno)
        if not 0.0 <= score <= 1.0:
            raise RangeError(f"score {score} outside [0, 1]", lineno)
        if len(bbox) != 4 or not all(math.isfinite(v) for v in bbox):
            raise ParseError("bbox must hold four finite numbers", lineno)
        if not (bbox[0] < bbox[2] and bbox[1] < bbox[3]):
            raise ParseError(f"degenerate bbox {list(bbox)}", lineno)
        bbox = _clamp_box(bbox, frame_size)
        if not (bbox[0] < bbox[2] and bbox[1] < bbox[3]):
            raise ParseError("bbox lies outside the frame", lineno)
        if score < threshold:
            continue
        records.append(DetectionRecord(frame, class_id, score, bbox))
    records.sort(key=lambda r: r.frame_index)
    return records


def load_detections(path, **kwargs) -> list[DetectionRecord]:
    with open(path, encoding="utf-8") as fh:
        return parse_detections(fh, **kwargs)


class ObjectMap:
    """Counters of shape ``(height, width, num_classes + 1)``; the last slot is the total."""

    def __init__(self, width: int, height: int, num_classes: int = len(DEFAULT_CLASSES), counts=None):
        self.width = width
        self.height = height
        self.num_classes = num_classes
        if counts is None:
            counts = np.zeros((height, width, num_classes + 1), dtype=np.int64)
        if counts.shape != (height, width, num_classes + 1):
            raise ShapeError(f"counter tensor has shape {counts.shape}")
        self.counts = counts

    @property
    def total(self) -> np.ndarray:
        return self.counts[..., self.num_classes]

    def copy(self) -> ObjectMap:
        return ObjectMap(self.width, self.height, self.num_classes, self.counts.copy())

    def window(self, record: DetectionRecord) -> tuple[slice, slice]:
        x0, y0, x1, y1 = record.pixel_bounds()
        x0, x1 = max(x0, 0), min(x1, self.width)
        y0, y1 = max(y0, 0), min(y1, self.height)
        return slice(y0, max(y0, y1)), slice(x0, max(x0, x1))

    def probabilities(self, class_id: int) -> np.ndarray:
        """Per-pixel probability of ``class_id`` (0 where nothing was seen)."""
        total = self.total
        return np.divide(self.counts[..., class_id], total, out=np.zeros(total.shape), where=total > 0)


def accumulate(omap: ObjectMap, records: Iterable[DetectionRecord]) -> ObjectMap:
    """Return a new map with every record's box counted once."""
    out = omap.copy()
    for rec in records:
        if not 0 <= rec.class_id < out.num_classes:
            raise RangeError(f"class_id {rec.class_id} outside [0, {out.num_classes})")
        ys, xs = out.window(rec)
        out.counts[ys, xs, rec.class_id] += 1
        out.counts[ys, xs, out.num_classes] += 1
    return out


def class_probability(omap: ObjectMap, x: int, y: int, class_id: int) -> float:
    total = int(omap.total[y, x])
    if total == 0:
        raise NoHistoryError(f"no objects observed at pixel ({x}, {y})")
    return int(omap.counts[y, x, class_id]) / total


def object_anomaly(omap: ObjectMap, record: DetectionRecord, p_rare: float = 0.05, min_total: int = 20) -> bool:
    """True when ``record``'s class is rare where it was detected.

    Only pixels with at least ``min_total`` observations vote; if fewer than
    half the box qualifies the detection is treated as normal.
    """
    ys, xs = omap.window(record)
    total = omap.total[ys, xs]
    if total.size == 0:
        return False
    seen = total >= min_total
    if 2 * int(seen.sum()) < total.size or not seen.any():
        return False
    prob = omap.counts[ys, xs, record.class_id][seen] / total[seen]
    return bool(prob.mean() < p_rare)


def save_object_map(path, omap: ObjectMap) -> None:
    with open(path, "wb") as fh:
        np.savez_compressed(fh, counts=omap.counts, num_classes=omap.num_classes)


def load_object_map(path) -> ObjectMap:
    try:
        with np.load(path) as data:
            counts = data["counts"]
            num_classes = int(data["num_classes"])
    except (OSError, KeyError, ValueError) as exc:
        raise FormatError(f"{path}: not an object map ({exc})") from exc
    h, w, _ = counts.shape
    return ObjectMap(w, h, num_classes, counts.astype(np.int64))
