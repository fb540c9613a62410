"""Pixel unprojection and world anchoring.

Convention used everywhere: right-handed camera space, camera looks down -z,
y up; pixel origin top-left with y down, pixel centres at +0.5.
"""

from dataclasses import dataclass
from pathlib import Path

import numpy as np

from yolo_ar.decode import CoordinateSpace, Detection
from yolo_ar.errors import ConfigurationError, GeometryError, NoIntersectionError
from yolo_ar.frame import (
    DEFAULT_POSE_TOLERANCE_NS,
    CameraIntrinsics,
    CameraPose,
    PoseBuffer,
)
from yolo_ar.sidecar import read_plane

PARALLEL_EPSILON = 1e-9


@dataclass(frozen=True, eq=False)
class Ray3D:
    origin: np.ndarray
    direction: np.ndarray

    def at(self, t: float) -> np.ndarray:
        return self.origin + t * self.direction


@dataclass(frozen=True)
class RayOnly:
    pass


@dataclass(frozen=True)
class FixedDepth:
    depth: float

    def __post_init__(self):
        if not self.depth > 0:
            raise ConfigurationError(f"depth must be > 0, got {self.depth}")


@dataclass(frozen=True, eq=False)
class PlaneIntersection:
    point: np.ndarray
    normal: np.ndarray

    def __post_init__(self):
        normal = np.asarray(self.normal, dtype=np.float64)
        if not np.linalg.norm(normal) > 0:
            raise ConfigurationError("plane normal must be non-zero")
        object.__setattr__(self, "normal", normal)
        object.__setattr__(self, "point", np.asarray(self.point, dtype=np.float64))


PlacementPolicy = RayOnly | FixedDepth | PlaneIntersection


@dataclass(frozen=True)
class FrameMeta:
    timestamp: int
    intrinsics: CameraIntrinsics


@dataclass(frozen=True, eq=False)
class Anchor3D:
    ray: Ray3D
    point: np.ndarray | None
    detection: Detection
    acquisition_timestamp: int


def unproject(pixel: tuple[float, float], intrinsics: CameraIntrinsics) -> np.ndarray:
    u, v = pixel
    w, h = intrinsics.image_width, intrinsics.image_height
    if not (0 <= u < w and 0 <= v < h):
        raise GeometryError(f"pixel ({u}, {v}) outside {w}x{h} image")
    ndc_x = 2 * (u + 0.5) / w - 1
    ndc_y = 1 - 2 * (v + 0.5) / h
    try:
        inverse = np.linalg.inv(intrinsics.projection)
    except np.linalg.LinAlgError as e:
        raise GeometryError("projection matrix is singular") from e
    # any depth on the pixel's ray works; use the near plane
    cam = inverse @ np.array([ndc_x, ndc_y, -1.0, 1.0])
    if abs(cam[3]) < PARALLEL_EPSILON:
        raise GeometryError("unprojected point is at infinity")
    direction = cam[:3] / cam[3]
    norm = np.linalg.norm(direction)
    if norm == 0:
        raise GeometryError("unprojected direction is degenerate")
    return direction / norm


def project(point_cam: np.ndarray, intrinsics: CameraIntrinsics) -> tuple[float, float]:
    clip = intrinsics.projection @ np.append(point_cam, 1.0)
    if abs(clip[3]) < PARALLEL_EPSILON:
        raise GeometryError("point projects to infinity")
    ndc = clip[:2] / clip[3]
    u = (ndc[0] + 1) * intrinsics.image_width / 2 - 0.5
    v = (1 - ndc[1]) * intrinsics.image_height / 2 - 0.5
    return float(u), float(v)


def to_world(direction_cam: np.ndarray, pose: CameraPose) -> Ray3D:
    d = pose.rotation @ direction_cam
    return Ray3D(pose.translation.copy(), d / np.linalg.norm(d))


def _place(ray: Ray3D, policy: PlacementPolicy) -> np.ndarray | None:
    if isinstance(policy, RayOnly):
        return None
    if isinstance(policy, FixedDepth):
        return ray.at(policy.depth)
    denom = float(policy.normal @ ray.direction)
    if abs(denom) < PARALLEL_EPSILON:
        raise NoIntersectionError("ray is parallel to the placement plane")
    t = float(policy.normal @ (policy.point - ray.origin)) / denom
    if t <= 0:
        raise NoIntersectionError("placement plane is behind the camera")
    return ray.at(t)


def anchor_detection(
    det: Detection,
    frame_meta: FrameMeta,
    poses: PoseBuffer,
    policy: PlacementPolicy = RayOnly(),
    tolerance: int = DEFAULT_POSE_TOLERANCE_NS,
) -> Anchor3D:
    if det.space is not CoordinateSpace.FULL_FRAME:
        raise GeometryError("anchoring needs a full-frame detection")
    # only the box centre has to fall inside the image; unproject enforces it
    pose = poses.pose_at(frame_meta.timestamp, tolerance)
    ray = to_world(unproject(det.bbox.center(), frame_meta.intrinsics), pose)
    return Anchor3D(ray, _place(ray, policy), det, frame_meta.timestamp)


def parse_policy(text: str) -> PlacementPolicy:
    """``ray``, ``depth:<meters>`` or ``plane:<file>``."""
    kind, _, arg = text.partition(":")
    if kind == "ray" and not arg:
        return RayOnly()
    if kind == "depth":
        try:
            return FixedDepth(float(arg))
        except ValueError as e:
            raise ConfigurationError(f"bad depth in policy {text!r}") from e
    if kind == "plane" and arg:
        point, normal = read_plane(Path(arg))
        return PlaneIntersection(point, normal)
    raise ConfigurationError(f"unknown placement policy {text!r}")
