import logging
import threading
from collections import deque
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Iterator

import cv2
import numpy as np

from yolo_ar.errors import (
    ConfigurationError,
    DataError,
    NoPoseError,
    OrderingError,
    StalePoseError,
)

logger = logging.getLogger(__name__)

DEFAULT_POSE_CAPACITY = 128
DEFAULT_POSE_TOLERANCE_NS = 100_000_000
ORTHONORMAL_TOLERANCE = 1e-6


@dataclass(frozen=True, eq=False)
class ImageFrame:
    frame_id: int
    width: int
    height: int
    pixels: np.ndarray  # (height, width, 3) uint8, RGB, row-major
    timestamp: int

    def __post_init__(self):
        if self.width < 1 or self.height < 1:
            raise DataError(f"frame size {self.width}x{self.height} is empty")
        if self.pixels.dtype != np.uint8 or self.pixels.shape != (
            self.height,
            self.width,
            3,
        ):
            raise DataError(
                f"pixel buffer {self.pixels.shape}/{self.pixels.dtype} does not match "
                f"{self.width}x{self.height} RGB8"
            )

    @classmethod
    def of_array(cls, pixels: np.ndarray, frame_id: int = 0, timestamp: int = 0):
        h, w = pixels.shape[:2]
        return cls(frame_id, w, h, np.ascontiguousarray(pixels), timestamp)


@dataclass(frozen=True, eq=False)
class CameraPose:
    camera_to_world: np.ndarray
    timestamp: int

    def __post_init__(self):
        m = np.asarray(self.camera_to_world, dtype=np.float64)
        if m.shape != (4, 4):
            raise DataError(f"camera_to_world must be 4x4, got {m.shape}")
        if not np.array_equal(m[3], [0.0, 0.0, 0.0, 1.0]):
            raise DataError("camera_to_world last row must be [0, 0, 0, 1]")
        r = m[:3, :3]
        if np.abs(r.T @ r - np.eye(3)).max() >= ORTHONORMAL_TOLERANCE:
            raise DataError("camera_to_world rotation block is not orthonormal")
        if abs(np.linalg.det(r) - 1.0) > ORTHONORMAL_TOLERANCE:
            raise DataError("camera_to_world rotation block is not a proper rotation")
        object.__setattr__(self, "camera_to_world", m)

    @property
    def rotation(self) -> np.ndarray:
        return self.camera_to_world[:3, :3]

    @property
    def translation(self) -> np.ndarray:
        return self.camera_to_world[:3, 3]

    @classmethod
    def identity(cls, timestamp: int = 0) -> "CameraPose":
        return cls(np.eye(4), timestamp)

    @classmethod
    def from_yaw(
        cls, degrees: float, timestamp: int = 0, translation=(0.0, 0.0, 0.0)
    ) -> "CameraPose":
        """Rotation about the world y (up) axis."""
        a = np.deg2rad(degrees)
        m = np.eye(4)
        m[:3, :3] = [
            [np.cos(a), 0.0, np.sin(a)],
            [0.0, 1.0, 0.0],
            [-np.sin(a), 0.0, np.cos(a)],
        ]
        m[:3, 3] = translation
        return cls(m, timestamp)


@dataclass(frozen=True, eq=False)
class CameraIntrinsics:
    projection: np.ndarray
    image_width: int
    image_height: int

    def __post_init__(self):
        p = np.asarray(self.projection, dtype=np.float64)
        if p.shape != (4, 4):
            raise DataError(f"projection must be 4x4, got {p.shape}")
        object.__setattr__(self, "projection", p)

    @classmethod
    def perspective(
        cls,
        vertical_fov_deg: float,
        width: int,
        height: int,
        near: float = 0.1,
        far: float = 100.0,
    ) -> "CameraIntrinsics":
        """Symmetric right-handed projection, camera looking down -z."""
        f = 1.0 / np.tan(np.deg2rad(vertical_fov_deg) / 2)
        aspect = width / height
        p = np.zeros((4, 4))
        p[0, 0] = f / aspect
        p[1, 1] = f
        p[2, 2] = (far + near) / (near - far)
        p[2, 3] = 2 * far * near / (near - far)
        p[3, 2] = -1.0
        return cls(p, width, height)


class PoseBuffer:
    """Timestamp-ordered ring of camera poses.

    One writer, many readers; readers work on a snapshot taken under the lock.
    """

    def __init__(self, capacity: int = DEFAULT_POSE_CAPACITY):
        if capacity < 1:
            raise ConfigurationError(f"pose buffer capacity must be >= 1, got {capacity}")
        self.capacity = capacity
        self._entries: deque[CameraPose] = deque(maxlen=capacity)
        self._lock = threading.Lock()

    def __len__(self) -> int:
        with self._lock:
            return len(self._entries)

    def snapshot(self) -> tuple[CameraPose, ...]:
        with self._lock:
            return tuple(self._entries)

    def push_pose(self, pose: CameraPose) -> "PoseBuffer":
        with self._lock:
            if self._entries and pose.timestamp < self._entries[-1].timestamp:
                raise OrderingError(pose.timestamp, self._entries[-1].timestamp)
            self._entries.append(pose)
        return self

    def pose_at(
        self, timestamp: int, tolerance: int = DEFAULT_POSE_TOLERANCE_NS
    ) -> CameraPose:
        entries = self.snapshot()
        if not entries:
            raise NoPoseError("pose buffer is empty")
        stamps = np.fromiter((p.timestamp for p in entries), dtype=np.int64)
        gaps = np.abs(stamps - np.int64(timestamp))
        i = int(np.argmin(gaps))
        if gaps[i] > tolerance:
            raise StalePoseError(int(gaps[i]), tolerance)
        return entries[i]


class FrameMailbox:
    """Capacity-1, latest-wins hand-over between acquisition and detection."""

    def __init__(self):
        self._frame: ImageFrame | None = None
        self._ready = threading.Condition()
        self.dropped = 0

    def publish_frame(self, frame: ImageFrame) -> None:
        with self._ready:
            if self._frame is not None:
                self.dropped += 1
                logger.debug("dropping unconsumed frame %d", self._frame.frame_id)
            self._frame = frame
            self._ready.notify()

    def take_latest(
        self, block: bool = False, timeout: float | None = None
    ) -> ImageFrame | None:
        with self._ready:
            if block:
                self._ready.wait_for(lambda: self._frame is not None, timeout)
            frame, self._frame = self._frame, None
            return frame


def identity_trajectory(timestamp: int) -> np.ndarray:
    return np.eye(4)


def yaw_trajectory(deg_per_second: float) -> Callable[[int], np.ndarray]:
    def at(timestamp: int) -> np.ndarray:
        return CameraPose.from_yaw(deg_per_second * timestamp / 1e9).camera_to_world

    return at


@dataclass(frozen=True)
class StreamSpec:
    width: int
    height: int
    fps: float
    count: int
    seed: int = 0
    trajectory: Callable[[int], np.ndarray] = field(default=identity_trajectory)


def synthetic_stream(spec: StreamSpec) -> Iterator[tuple[ImageFrame, CameraPose]]:
    if spec.width < 1 or spec.height < 1:
        raise ConfigurationError(f"stream size {spec.width}x{spec.height} is empty")
    if spec.fps <= 0:
        raise ConfigurationError(f"fps must be > 0, got {spec.fps}")
    if 1e9 / spec.fps < 1:
        raise ConfigurationError(f"fps {spec.fps} leaves less than 1 ns between frames")
    if spec.count < 1:
        raise ConfigurationError(f"count must be >= 1, got {spec.count}")
    return _generate(spec)


def _generate(spec: StreamSpec) -> Iterator[tuple[ImageFrame, CameraPose]]:
    rng = np.random.default_rng(spec.seed)
    for i in range(spec.count):
        t = round(i * 1e9 / spec.fps)
        pixels = rng.integers(0, 256, (spec.height, spec.width, 3), dtype=np.uint8)
        frame = ImageFrame(i, spec.width, spec.height, pixels, t)
        yield frame, CameraPose(spec.trajectory(t), t)


def read_image(path: str | Path, frame_id: int = 0, timestamp: int = 0) -> ImageFrame:
    path = Path(path)
    if path.suffix == ".npy":
        pixels = np.load(path)
    else:
        bgr = cv2.imread(str(path), cv2.IMREAD_COLOR)
        if bgr is None:
            raise DataError(f"cannot decode image {path}")
        pixels = cv2.cvtColor(bgr, cv2.COLOR_BGR2RGB)
    if pixels.ndim != 3 or pixels.shape[2] != 3:
        raise DataError(f"{path} is not an RGB image: shape {pixels.shape}")
    if pixels.dtype != np.uint8:
        raise DataError(f"{path} holds {pixels.dtype} pixels, expected uint8")
    return ImageFrame.of_array(pixels, frame_id, timestamp)
