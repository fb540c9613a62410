"""On-disk records: COCO-results detections (optionally with anchors) and the
JSON report envelope shared by every command."""

import json
from pathlib import Path
from typing import Any

from pydantic import BaseModel, Field, TypeAdapter, ValidationError

from yolo_ar import __version__
from yolo_ar.decode import Detection
from yolo_ar.errors import ParseError
from yolo_ar.geometry import Anchor3D

TOOL_NAME = "yolo-ar"

# contiguous 80-class index -> COCO category id
COCO80_TO_91 = [
    1, 2, 3, 4, 5, 6, 7, 8, 9, 10, 11, 13, 14, 15, 16, 17, 18, 19, 20, 21,
    22, 23, 24, 25, 27, 28, 31, 32, 33, 34, 35, 36, 37, 38, 39, 40, 41, 42, 43, 44,
    46, 47, 48, 49, 50, 51, 52, 53, 54, 55, 56, 57, 58, 59, 60, 61, 62, 63, 64, 65,
    67, 70, 72, 73, 74, 75, 76, 77, 78, 79, 80, 81, 82, 84, 85, 86, 87, 88, 89, 90,
]  # fmt: skip


class AnchorRecord(BaseModel):
    origin: list[float]
    direction: list[float]
    point: list[float] | None = None
    acquisition_timestamp: int


class DetectionRecord(BaseModel):
    image_id: int | str
    category_id: int
    bbox: list[float] = Field(min_length=4, max_length=4)
    score: float
    anchor: AnchorRecord | None = None


def record_of_detection(
    det: Detection,
    image_id: int | str,
    anchor: Anchor3D | None = None,
    category_ids: list[int] | None = None,
) -> DetectionRecord:
    category = category_ids[det.category] if category_ids else det.category
    a = None
    if anchor is not None:
        a = AnchorRecord(
            origin=anchor.ray.origin.tolist(),
            direction=anchor.ray.direction.tolist(),
            point=None if anchor.point is None else anchor.point.tolist(),
            acquisition_timestamp=anchor.acquisition_timestamp,
        )
    return DetectionRecord(
        image_id=image_id,
        category_id=category,
        bbox=det.bbox.as_list(),
        score=det.score,
        anchor=a,
    )


def image_id_of(path: Path) -> int | str:
    """COCO file names are zero-padded ids; anything else keeps its stem."""
    return int(path.stem) if path.stem.isdigit() else path.stem


def write_records(path: str | Path, records: list[DetectionRecord]) -> None:
    data = [r.model_dump(mode="json", exclude_none=True) for r in records]
    Path(path).write_text(json.dumps(data, indent=2) + "\n")


def read_records(path: str | Path) -> list[DetectionRecord]:
    path = Path(path)
    try:
        return TypeAdapter(list[DetectionRecord]).validate_json(path.read_bytes())
    except ValidationError as e:
        first = e.errors()[0]
        raise ParseError(first["msg"], str(path), "/".join(map(str, first["loc"]))) from e


class Report(BaseModel):
    tool: str = TOOL_NAME
    version: str = __version__
    command: str
    config: dict[str, Any]
    result: Any


def write_report(path: str | Path, report: Report) -> None:
    text = json.dumps(report.model_dump(mode="json"), indent=2, sort_keys=True)
    Path(path).write_text(text + "\n")


def read_report(path: str | Path) -> Report:
    path = Path(path)
    try:
        return Report.model_validate_json(path.read_bytes())
    except ValidationError as e:
        first = e.errors()[0]
        raise ParseError(first["msg"], str(path), "/".join(map(str, first["loc"]))) from e
