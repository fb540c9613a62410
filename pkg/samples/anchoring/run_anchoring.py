import context

import logging
import threading

import numpy as np

from yolo_ar.clock import WallClock
from yolo_ar.decode import DecodeConfig
from yolo_ar.engine import MockSpec, load_mock
from yolo_ar.frame import (
    CameraIntrinsics,
    FrameMailbox,
    PoseBuffer,
    StreamSpec,
    synthetic_stream,
    yaw_trajectory,
)
from yolo_ar.geometry import FixedDepth
from yolo_ar.pipeline import Anchoring, DetectionPipeline

logging.basicConfig(level=logging.INFO)


def brightest_spot(values: np.ndarray) -> np.ndarray:
    """One 'object' box around the brightest pixel of a channels-first input."""
    gray = values.mean(axis=0)
    y, x = np.unravel_index(int(np.argmax(gray)), gray.shape)
    out = np.zeros((5, 1), dtype=np.float32)
    out[:, 0] = (x, y, 16, 16, 0.9)
    return out


def acquire(mailbox: FrameMailbox, poses: PoseBuffer, done: threading.Event):
    spec = StreamSpec(
        context.frame_width,
        context.frame_height,
        context.fps,
        context.frame_count,
        trajectory=yaw_trajectory(context.yaw_deg_per_second),
    )
    clock = WallClock()
    for frame, pose in synthetic_stream(spec):
        poses.push_pose(pose)
        mailbox.publish_frame(frame)
        clock.sleep(1 / context.fps)
    done.set()


if __name__ == "__main__":

    mailbox, poses, done = FrameMailbox(), PoseBuffer(), threading.Event()
    _, session = load_mock(MockSpec(fixed_delay_ms=45.0, rule=brightest_spot, category_count=1), 160)
    intrinsics = CameraIntrinsics.perspective(
        context.vertical_fov_deg, context.frame_width, context.frame_height
    )
    pipeline = DetectionPipeline(
        session,
        DecodeConfig(confidence_threshold=0.5),
        anchoring=Anchoring(intrinsics, poses, FixedDepth(2.0)),
    )

    threading.Thread(target=acquire, args=(mailbox, poses, done)).start()

    while True:
        frame = mailbox.take_latest(block=True, timeout=0.5)
        if frame is None:
            if done.is_set():
                break
            continue
        result = pipeline.run(frame)
        for det, anchor in zip(result.detections, result.anchors):
            print(
                f"frame {frame.frame_id}: box {det.bbox.as_list()} -> "
                f"point {np.round(anchor.point, 3).tolist()}"
            )
    print(f"-{mailbox.dropped} frames dropped while detecting-")
