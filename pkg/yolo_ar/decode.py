import logging
from dataclasses import dataclass, replace
from enum import Enum

import numpy as np

from yolo_ar.errors import ConfigurationError, DataError, ShapeError
from yolo_ar.preprocess import CropRect

logger = logging.getLogger(__name__)


class CoordinateSpace(Enum):
    NETWORK_INPUT = "network_input"
    FULL_FRAME = "full_frame"


@dataclass(frozen=True)
class BBox:
    x: float  # left
    y: float  # top
    width: float
    height: float

    def center(self) -> tuple[float, float]:
        return self.x + self.width / 2, self.y + self.height / 2

    def shifted(self, dx: float, dy: float) -> "BBox":
        return BBox(self.x + dx, self.y + dy, self.width, self.height)

    def as_list(self) -> list[float]:
        return [self.x, self.y, self.width, self.height]


@dataclass(frozen=True)
class Detection:
    bbox: BBox
    category: int
    score: float
    space: CoordinateSpace = CoordinateSpace.NETWORK_INPUT

    def __post_init__(self):
        if not (self.bbox.width > 0 and self.bbox.height > 0):
            raise DataError(f"degenerate box {self.bbox}")
        if not 0.0 <= self.score <= 1.0:
            raise DataError(f"score {self.score} outside [0, 1]")

    def translated(self, dx: float, dy: float, space: CoordinateSpace) -> "Detection":
        return replace(self, bbox=self.bbox.shifted(dx, dy), space=space)


@dataclass(frozen=True)
class DecodeConfig:
    confidence_threshold: float = 0.25
    nms_iou_threshold: float = 0.45
    max_detections: int = 100
    class_aware_nms: bool = True

    def __post_init__(self):
        for name in ("confidence_threshold", "nms_iou_threshold"):
            v = getattr(self, name)
            if not 0.0 < v < 1.0:
                raise ConfigurationError(f"{name} must be in (0, 1), got {v}")
        if self.max_detections < 1:
            raise ConfigurationError(
                f"max_detections must be >= 1, got {self.max_detections}"
            )


@dataclass(frozen=True, eq=False)
class RawOutput:
    """Undecoded YOLOv8 head output: (batch, 4+C, N) or (batch, N, 4+C)."""

    values: np.ndarray
    category_count: int

    @property
    def dims(self) -> tuple[int, ...]:
        return tuple(self.values.shape)

    @property
    def batch(self) -> int:
        return self.values.shape[0]

    def candidates(self, batch_index: int = 0) -> np.ndarray:
        """Rows of (cx, cy, w, h, score_0 .. score_C-1) for one batch slice."""
        if self.values.ndim != 3:
            raise ShapeError(f"raw output must be 3-D, got {self.dims}")
        width = 4 + self.category_count
        _, a, b = self.dims
        if a == width and b == width:
            raise ShapeError(f"raw output {self.dims} orientation is ambiguous")
        if a == width:
            return self.values[batch_index].T
        if b == width:
            return self.values[batch_index]
        raise ShapeError(
            f"raw output {self.dims} inconsistent with {self.category_count} categories"
        )


def decode_raw(
    raw: RawOutput, config: DecodeConfig, batch_index: int = 0
) -> list[Detection]:
    rows = raw.candidates(batch_index).astype(np.float64)
    scores = rows[:, 4:]
    if np.isnan(scores).any():
        raise DataError("NaN in category scores")
    categories = scores.argmax(axis=1)
    best = scores[np.arange(len(rows)), categories]
    keep = best >= config.confidence_threshold
    keep &= (rows[:, 2] > 0) & (rows[:, 3] > 0)
    out = []
    for i in np.flatnonzero(keep):
        cx, cy, w, h = rows[i, :4]
        out.append(
            Detection(BBox(cx - w / 2, cy - h / 2, w, h), int(categories[i]), float(best[i]))
        )
    logger.debug("decoded %d of %d candidates", len(out), len(rows))
    return out


def iou(a: BBox, b: BBox) -> float:
    ix = max(0.0, min(a.x + a.width, b.x + b.width) - max(a.x, b.x))
    iy = max(0.0, min(a.y + a.height, b.y + b.height) - max(a.y, b.y))
    inter = ix * iy
    union = a.width * a.height + b.width * b.height - inter
    return inter / union if union > 0 else 0.0


def _iou_against(box: np.ndarray, others: np.ndarray) -> np.ndarray:
    ix = np.clip(
        np.minimum(box[0] + box[2], others[:, 0] + others[:, 2])
        - np.maximum(box[0], others[:, 0]),
        0.0,
        None,
    )
    iy = np.clip(
        np.minimum(box[1] + box[3], others[:, 1] + others[:, 3])
        - np.maximum(box[1], others[:, 1]),
        0.0,
        None,
    )
    inter = ix * iy
    union = box[2] * box[3] + others[:, 2] * others[:, 3] - inter
    return inter / union


def nms(
    dets: list[Detection], iou_threshold: float, class_aware: bool = True
) -> list[Detection]:
    """Greedy suppression; output by descending score, ties by input index."""
    if not dets:
        return []
    order = sorted(range(len(dets)), key=lambda i: -dets[i].score)
    boxes = np.array([dets[i].bbox.as_list() for i in order], dtype=np.float64)
    cats = np.array([dets[i].category for i in order])
    alive = np.ones(len(order), dtype=bool)
    kept = []
    for k in range(len(order)):
        if not alive[k]:
            continue
        kept.append(dets[order[k]])
        rest = np.arange(k + 1, len(order))
        rest = rest[alive[rest]]
        if class_aware:
            rest = rest[cats[rest] == cats[k]]
        if rest.size:
            alive[rest[_iou_against(boxes[k], boxes[rest]) > iou_threshold]] = False
    return kept


def finalize(
    raw: RawOutput, config: DecodeConfig, batch_index: int = 0
) -> list[Detection]:
    """Decode, suppress and truncate one batch slice, staying in network space."""
    dets = nms(
        decode_raw(raw, config, batch_index),
        config.nms_iou_threshold,
        config.class_aware_nms,
    )
    return dets[: config.max_detections]


def postprocess(
    raw: RawOutput, config: DecodeConfig, crop: CropRect, batch_index: int = 0
) -> list[Detection]:
    return [
        d.translated(crop.x, crop.y, CoordinateSpace.FULL_FRAME)
        for d in finalize(raw, config, batch_index)
    ]
