"""Centre crop, [0, 1] normalisation and tensor assembly.

No resizing or letterboxing happens here: a frame smaller than the network
input is rejected, so a box in network pixels maps back to the frame by a
plain offset.
"""

from dataclasses import dataclass
from enum import Enum

import numpy as np

from yolo_ar.errors import FrameTooSmallError, ShapeError
from yolo_ar.frame import ImageFrame


class Layout(Enum):
    CHANNELS_LAST = "channels_last"
    CHANNELS_FIRST = "channels_first"


@dataclass(frozen=True)
class CropRect:
    x: int
    y: int
    size: int


@dataclass(frozen=True, eq=False)
class InputTensor:
    values: np.ndarray
    layout: Layout

    @property
    def dims(self) -> tuple[int, ...]:
        return tuple(self.values.shape)

    @property
    def batch(self) -> int:
        return self.values.shape[0]

    @property
    def spatial_size(self) -> int:
        return self.values.shape[1 if self.layout is Layout.CHANNELS_LAST else 2]


def _centered_origin(width: int, height: int, w: int, h: int) -> tuple[int, int]:
    return (width - w) // 2, (height - h) // 2


def center_crop(frame: ImageFrame, n: int) -> tuple[np.ndarray, CropRect]:
    if n < 1 or n > min(frame.width, frame.height):
        raise FrameTooSmallError(n, frame.width, frame.height)
    x, y = _centered_origin(frame.width, frame.height, n, n)
    return frame.pixels[y : y + n, x : x + n].copy(), CropRect(x, y, n)


def center_crop_region(
    frame: ImageFrame, width: int, height: int
) -> tuple[np.ndarray, tuple[int, int]]:
    """Rectangular variant of center_crop, returning the region and its origin."""
    if width > frame.width or height > frame.height or width < 1 or height < 1:
        raise FrameTooSmallError(max(width, height), frame.width, frame.height)
    x, y = _centered_origin(frame.width, frame.height, width, height)
    return frame.pixels[y : y + height, x : x + width].copy(), (x, y)


def normalize(image: np.ndarray) -> np.ndarray:
    return image.astype(np.float32) / np.float32(255.0)


def to_tensor(image: np.ndarray, layout: Layout = Layout.CHANNELS_FIRST) -> InputTensor:
    if image.ndim != 3 or image.shape[0] != image.shape[1] or image.shape[2] != 3:
        raise ShapeError(f"expected a square n x n x 3 image, got {image.shape}")
    if layout is Layout.CHANNELS_LAST:
        values = np.ascontiguousarray(image[np.newaxis])
    else:
        values = np.ascontiguousarray(image.transpose(2, 0, 1)[np.newaxis])
    return InputTensor(values, layout)


def convert_layout(tensor: InputTensor, layout: Layout) -> InputTensor:
    if tensor.layout is layout:
        return tensor
    perm = (0, 2, 3, 1) if layout is Layout.CHANNELS_LAST else (0, 3, 1, 2)
    return InputTensor(np.ascontiguousarray(tensor.values.transpose(perm)), layout)


def preprocess(
    frame: ImageFrame, n: int, layout: Layout = Layout.CHANNELS_FIRST
) -> tuple[InputTensor, CropRect]:
    crop, rect = center_crop(frame, n)
    return to_tensor(normalize(crop), layout), rect
