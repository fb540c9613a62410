"""Square tiling of a non-square region, batched inference input, and merge.

Tiles never pad: the last row/column is snapped back so it ends on the region
edge, which may increase overlap there.
"""

from dataclasses import dataclass

import numpy as np

from yolo_ar.decode import CoordinateSpace, DecodeConfig, Detection, nms
from yolo_ar.errors import PlanError, ShapeError
from yolo_ar.preprocess import InputTensor, Layout, to_tensor


@dataclass(frozen=True)
class TilePlan:
    tile_size: int
    origins: tuple[tuple[int, int], ...]
    region: tuple[int, int]  # (width, height)

    def __len__(self) -> int:
        return len(self.origins)


BatchTensor = InputTensor


def _axis_origins(length: int, tile: int, stride: int) -> list[int]:
    starts = list(range(0, length - tile + 1, stride))
    if starts[-1] + tile < length:
        starts.append(length - tile)
    return starts


def plan_tiles(width: int, height: int, tile_size: int, overlap: int = 0) -> TilePlan:
    if tile_size < 1 or tile_size > min(width, height):
        raise PlanError(f"tile {tile_size} does not fit a {width}x{height} region")
    if not 0 <= overlap < tile_size:
        raise PlanError(f"overlap must be in [0, {tile_size}), got {overlap}")
    stride = tile_size - overlap
    xs = _axis_origins(width, tile_size, stride)
    ys = _axis_origins(height, tile_size, stride)
    return TilePlan(tile_size, tuple((x, y) for y in ys for x in xs), (width, height))


def assemble_batch(
    image: np.ndarray, plan: TilePlan, layout: Layout = Layout.CHANNELS_FIRST
) -> BatchTensor:
    width, height = plan.region
    if image.ndim != 3 or image.shape[:2] != (height, width):
        raise ShapeError(
            f"image {image.shape} does not match planned region {width}x{height}"
        )
    n = plan.tile_size
    slices = [to_tensor(image[y : y + n, x : x + n], layout).values for x, y in plan.origins]
    return InputTensor(np.concatenate(slices, axis=0), layout)


def merge_detections(
    per_tile: list[list[Detection]], plan: TilePlan, config: DecodeConfig
) -> list[Detection]:
    if len(per_tile) != len(plan):
        raise ShapeError(f"{len(per_tile)} detection lists for {len(plan)} tiles")
    merged = [
        d.translated(x, y, CoordinateSpace.FULL_FRAME)
        for dets, (x, y) in zip(per_tile, plan.origins)
        for d in dets
    ]
    return nms(merged, config.nms_iou_threshold, config.class_aware_nms)
