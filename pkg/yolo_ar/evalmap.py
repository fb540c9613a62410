"""COCO-style box evaluation (mAP@50, mAP@50-95) and recall per tagged group.

AP is the mean of the interpolated precision envelope at 101 recall points.
Categories without ground truth are left out of the means, and ``iscrowd``
annotations are treated as ordinary ground truth.
"""

import json
import logging
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from pydantic import BaseModel, ConfigDict, ValidationError

from yolo_ar.codec import DetectionRecord, read_records
from yolo_ar.decode import BBox, iou
from yolo_ar.errors import ConfigurationError, ParseError

logger = logging.getLogger(__name__)

DEFAULT_GROUP_ATTRIBUTE = "group_tag"


@dataclass(frozen=True)
class GroundTruthItem:
    image_id: int | str
    bbox: BBox
    category_id: int
    group_tag: str | None = None


@dataclass(frozen=True)
class EvalConfig:
    iou_thresholds: tuple[float, ...] = tuple(
        float(t) for t in np.round(np.linspace(0.5, 0.95, 10), 2)
    )
    recall_points: int = 101
    max_detections_per_image: int = 100

    def __post_init__(self):
        t = self.iou_thresholds
        if not t or any(not 0 < x < 1 for x in t) or list(t) != sorted(set(t)):
            raise ConfigurationError(f"IoU thresholds must be ascending in (0, 1): {t}")


class CategoryAP(BaseModel):
    category_id: int
    ap50: float | None
    ap50_95: float


class EvalCounts(BaseModel):
    images: int
    ground_truths: int
    detections: int


class EvalResult(BaseModel):
    map50: float
    map50_95: float
    per_category: list[CategoryAP]
    counts: EvalCounts


class _CocoAnnotation(BaseModel):
    model_config = ConfigDict(extra="allow")
    image_id: int | str
    category_id: int
    bbox: list[float]


class _CocoFile(BaseModel):
    model_config = ConfigDict(extra="allow")
    images: list[dict] = []
    annotations: list[_CocoAnnotation]
    categories: list[dict] = []


def load_annotations(
    path: str | Path, group_attribute: str = DEFAULT_GROUP_ATTRIBUTE
) -> list[GroundTruthItem]:
    path = Path(path)
    try:
        data = _CocoFile.model_validate(json.loads(path.read_text()))
    except json.JSONDecodeError as e:
        raise ParseError(e.msg, str(path), f"line {e.lineno} column {e.colno}") from e
    except ValidationError as e:
        first = e.errors()[0]
        raise ParseError(first["msg"], str(path), "/".join(map(str, first["loc"]))) from e

    items = []
    for index, a in enumerate(data.annotations):
        if len(a.bbox) != 4 or a.bbox[2] <= 0 or a.bbox[3] <= 0:
            logger.warning("annotation %d in %s has a degenerate box %s, skipped", index, path, a.bbox)
            continue
        tag = (a.model_extra or {}).get(group_attribute)
        items.append(
            GroundTruthItem(
                image_id=a.image_id,
                bbox=BBox(*a.bbox),
                category_id=a.category_id,
                group_tag=None if tag is None else str(tag),
            )
        )
    return items


def load_detections(path: str | Path) -> list[DetectionRecord]:
    return read_records(path)


def _bbox(d: DetectionRecord) -> BBox:
    return BBox(*d.bbox)


def _score_order(dets: list[DetectionRecord]) -> list[DetectionRecord]:
    return sorted(dets, key=lambda d: -d.score)


@dataclass
class MatchResult:
    detections: list[DetectionRecord]  # score-descending
    labels: list[bool]  # True = TP, aligned with detections
    gt_matched: list[bool] = field(default_factory=list)  # aligned with the gts argument


def match_detections(
    dets: list[DetectionRecord], gts: list[GroundTruthItem], iou_threshold: float
) -> MatchResult:
    """Greedy in score order: each detection takes the unmatched GT of its
    image and category with the highest IoU at or above the threshold."""
    ordered = _score_order(dets)
    by_key: dict[tuple, list[int]] = {}
    for j, g in enumerate(gts):
        by_key.setdefault((g.image_id, g.category_id), []).append(j)
    matched = [False] * len(gts)
    labels = []
    for d in ordered:
        box = _bbox(d)
        best, best_iou = None, iou_threshold
        for j in by_key.get((d.image_id, d.category_id), ()):
            if matched[j]:
                continue
            overlap = iou(box, gts[j].bbox)
            if overlap >= best_iou and (best is None or overlap > best_iou):
                best, best_iou = j, overlap
        if best is not None:
            matched[best] = True
        labels.append(best is not None)
    return MatchResult(ordered, labels, matched)


def average_precision(
    labels: list[bool], gt_count: int, recall_points: int = 101
) -> float | None:
    """None when the category has no ground truth."""
    if gt_count == 0:
        return None
    if not labels:
        return 0.0
    tp = np.cumsum(np.array(labels, dtype=np.float64))
    fp = np.cumsum(~np.array(labels, dtype=bool), dtype=np.float64)
    recall = tp / gt_count
    precision = tp / (tp + fp)
    # envelope: precision made non-increasing in recall
    precision = np.maximum.accumulate(precision[::-1])[::-1]
    points = np.linspace(0.0, 1.0, recall_points)
    idx = np.searchsorted(recall, points, side="left")
    q = np.where(idx < len(precision), precision[np.minimum(idx, len(precision) - 1)], 0.0)
    return float(q.mean())


def _truncate_per_image(dets: list[DetectionRecord], limit: int) -> list[DetectionRecord]:
    kept, seen = [], {}
    for d in _score_order(dets):
        seen[d.image_id] = seen.get(d.image_id, 0) + 1
        if seen[d.image_id] <= limit:
            kept.append(d)
    return kept


def evaluate(
    dets: list[DetectionRecord],
    gts: list[GroundTruthItem],
    config: EvalConfig = EvalConfig(),
) -> EvalResult:
    dets = _truncate_per_image(dets, config.max_detections_per_image)
    categories = sorted({g.category_id for g in gts})
    thresholds = config.iou_thresholds
    at50 = next((i for i, t in enumerate(thresholds) if abs(t - 0.5) < 1e-9), None)

    per_category = []
    for c in categories:
        cat_dets = [d for d in dets if d.category_id == c]
        cat_gts = [g for g in gts if g.category_id == c]
        aps = [
            average_precision(
                match_detections(cat_dets, cat_gts, t).labels,
                len(cat_gts),
                config.recall_points,
            )
            for t in thresholds
        ]
        per_category.append(
            CategoryAP(
                category_id=c,
                ap50=None if at50 is None else aps[at50],
                ap50_95=float(np.mean(aps)),
            )
        )

    if not per_category:
        logger.warning("no ground truth to evaluate against")
    ap50s = [c.ap50 for c in per_category if c.ap50 is not None]
    return EvalResult(
        map50=float(np.mean(ap50s)) if ap50s else 0.0,
        map50_95=float(np.mean([c.ap50_95 for c in per_category])) if per_category else 0.0,
        per_category=per_category,
        counts=EvalCounts(
            images=len({g.image_id for g in gts} | {d.image_id for d in dets}),
            ground_truths=len(gts),
            detections=len(dets),
        ),
    )


def recall_by_group(
    dets: list[DetectionRecord],
    gts: list[GroundTruthItem],
    iou_threshold: float = 0.5,
    score_threshold: float = 0.25,
) -> dict[str, float]:
    tagged = [g for g in gts if g.group_tag is not None]
    if len(tagged) < len(gts):
        logger.warning("%d ground truths without a group tag ignored", len(gts) - len(tagged))
    kept = [d for d in dets if d.score >= score_threshold]
    matched = match_detections(kept, tagged, iou_threshold).gt_matched
    totals: dict[str, list[int]] = {}
    for g, m in zip(tagged, matched):
        hit_total = totals.setdefault(g.group_tag, [0, 0])
        hit_total[0] += m
        hit_total[1] += 1
    return {tag: hits / total for tag, (hits, total) in sorted(totals.items())}


def recall_curve(
    dets: list[DetectionRecord],
    gts: list[GroundTruthItem],
    iou_threshold: float,
    score_thresholds: list[float],
) -> dict[str, list[float]]:
    """Per group, recall at each confidence threshold (in the given order)."""
    curves: dict[str, list[float]] = {}
    for t in score_thresholds:
        for tag, r in recall_by_group(dets, gts, iou_threshold, t).items():
            curves.setdefault(tag, []).append(r)
    return curves
