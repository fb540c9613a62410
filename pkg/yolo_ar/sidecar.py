"""Reader for the ``key = value`` sidecar files that carry camera data.

Pose/intrinsics sidecar::

    # comment
    image_width = 1280
    image_height = 720
    projection = <16 numbers, row-major>
    frame_timestamp = <ns>
    pose = <ns> <16 numbers, row-major>     (repeatable, increasing timestamps)

Plane file::

    point = x y z
    normal = x y z
"""

from dataclasses import dataclass
from pathlib import Path

import numpy as np

from yolo_ar.errors import ParseError, YoloArError
from yolo_ar.frame import CameraIntrinsics, CameraPose, PoseBuffer

KEYS = {"image_width", "image_height", "projection", "frame_timestamp", "pose"}


@dataclass
class Sidecar:
    intrinsics: CameraIntrinsics
    frame_timestamp: int
    poses: PoseBuffer


def _lines(path: Path):
    with open(path, "r") as f:
        for number, l in enumerate(f, start=1):
            l = l.split("#", 1)[0].strip()
            if l == "":
                continue
            key, sep, value = l.partition("=")
            if not sep:
                raise ParseError("expected 'key = value'", str(path), f"line {number}")
            yield number, key.strip(), value.split()


def _numbers(path: Path, number: int, values: list[str], count: int) -> np.ndarray:
    if len(values) != count:
        raise ParseError(
            f"expected {count} numbers, got {len(values)}", str(path), f"line {number}"
        )
    try:
        return np.array([float(v) for v in values])
    except ValueError as e:
        raise ParseError(str(e), str(path), f"line {number}") from e


def read_sidecar(path: str | Path, capacity: int = 128) -> Sidecar:
    path = Path(path)
    fields: dict[str, np.ndarray] = {}
    poses = PoseBuffer(capacity)
    for number, key, values in _lines(path):
        if key not in KEYS:
            raise ParseError("unknown key " + key, str(path), f"line {number}")
        try:
            if key == "pose":
                v = _numbers(path, number, values, 17)
                poses.push_pose(CameraPose(v[1:].reshape(4, 4), int(values[0])))
            elif key == "projection":
                fields[key] = _numbers(path, number, values, 16).reshape(4, 4)
            elif len(values) != 1:
                raise ParseError(f"{key} takes one integer", str(path), f"line {number}")
            else:
                fields[key] = int(values[0])
        except ParseError:
            raise
        except (YoloArError, ValueError) as e:
            raise ParseError(str(e), str(path), f"line {number}") from e
    missing = {"image_width", "image_height", "projection", "frame_timestamp"} - fields.keys()
    if missing:
        raise ParseError("missing " + ", ".join(sorted(missing)), str(path), "end of file")
    intrinsics = CameraIntrinsics(
        fields["projection"], fields["image_width"], fields["image_height"]
    )
    return Sidecar(intrinsics, fields["frame_timestamp"], poses)


def read_plane(path: str | Path) -> tuple[np.ndarray, np.ndarray]:
    path = Path(path)
    fields = {}
    for number, key, values in _lines(path):
        if key not in ("point", "normal"):
            raise ParseError("unknown key " + key, str(path), f"line {number}")
        fields[key] = _numbers(path, number, values, 3)
    if fields.keys() != {"point", "normal"}:
        raise ParseError("plane needs point and normal", str(path), "end of file")
    return fields["point"], fields["normal"]
