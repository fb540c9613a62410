import logging
from contextlib import contextmanager, nullcontext
from dataclasses import dataclass, field
from enum import Enum

from yolo_ar.clock import Clock
from yolo_ar.decode import (
    CoordinateSpace,
    DecodeConfig,
    Detection,
    finalize,
    postprocess,
)
from yolo_ar.engine import InferenceSession
from yolo_ar.errors import ConfigurationError, GeometryError
from yolo_ar.frame import (
    DEFAULT_POSE_TOLERANCE_NS,
    CameraIntrinsics,
    ImageFrame,
    PoseBuffer,
)
from yolo_ar.geometry import (
    Anchor3D,
    FrameMeta,
    PlacementPolicy,
    RayOnly,
    anchor_detection,
)
from yolo_ar.preprocess import center_crop_region, normalize, preprocess
from yolo_ar.tiler import TilePlan, assemble_batch, merge_detections

logger = logging.getLogger(__name__)


class Stage(Enum):
    PREPROCESS = "preprocess"
    INFERENCE = "inference"
    POSTPROCESS = "postprocess"
    MERGE = "merge"
    ANCHOR = "anchor"
    TOTAL = "total"


class StageRecorder:
    """Collects one elapsed time per stage for a single pipeline run."""

    def __init__(self, clock: Clock):
        self.clock = clock
        self.elapsed_ns: dict[Stage, int] = {}
        self.current: Stage | None = None
        self.failed: Stage | None = None

    @contextmanager
    def stage(self, stage: Stage):
        outer, self.current = self.current, stage
        start = self.clock.now()
        try:
            yield
        except Exception:
            if self.failed is None:
                self.failed = stage
            raise
        finally:
            self.elapsed_ns[stage] = self.clock.now() - start
            self.current = outer


@dataclass
class Anchoring:
    intrinsics: CameraIntrinsics
    poses: PoseBuffer
    policy: PlacementPolicy = field(default_factory=RayOnly)
    tolerance: int = DEFAULT_POSE_TOLERANCE_NS


@dataclass
class PipelineResult:
    detections: list[Detection]
    anchors: list[Anchor3D] | None = None


class DetectionPipeline:
    """preprocess -> infer -> postprocess [-> merge] [-> anchor] for one frame.

    With a tile plan the centred region of the plan's size is cut out of the
    frame, tiled and run as one batch.
    """

    def __init__(
        self,
        session: InferenceSession,
        decode_config: DecodeConfig = DecodeConfig(),
        tile_plan: TilePlan | None = None,
        anchoring: Anchoring | None = None,
    ):
        self.session = session
        self.decode_config = decode_config
        self.tile_plan = tile_plan
        self.anchoring = anchoring
        d = session.descriptor
        self.input_size = d.input_size
        self.layout = d.layout
        if tile_plan is not None and tile_plan.tile_size != self.input_size:
            raise ConfigurationError(
                f"tile size {tile_plan.tile_size} differs from model input {self.input_size}"
            )

    def _bracket(self, recorder: StageRecorder | None, stage: Stage):
        return nullcontext() if recorder is None else recorder.stage(stage)

    def run(self, frame: ImageFrame, recorder: StageRecorder | None = None) -> PipelineResult:
        s = self.session
        if self.anchoring is not None:
            i = self.anchoring.intrinsics
            if (frame.width, frame.height) != (i.image_width, i.image_height):
                raise GeometryError(
                    f"frame {frame.frame_id} is {frame.width}x{frame.height}, "
                    f"intrinsics are for {i.image_width}x{i.image_height}"
                )

        with self._bracket(recorder, Stage.TOTAL):
            if self.tile_plan is None:
                dets = self._run_single(frame, recorder)
            else:
                dets = self._run_tiled(frame, recorder)
            anchors = None
            if self.anchoring is not None:
                with self._bracket(recorder, Stage.ANCHOR):
                    a = self.anchoring
                    meta = FrameMeta(frame.timestamp, a.intrinsics)
                    anchors = [
                        anchor_detection(d, meta, a.poses, a.policy, a.tolerance)
                        for d in dets
                    ]
                    s.simulate_stage(Stage.ANCHOR.value)
        logger.debug("frame %d: %d detections", frame.frame_id, len(dets))
        return PipelineResult(dets, anchors)

    def _run_single(self, frame, recorder) -> list[Detection]:
        s = self.session
        with self._bracket(recorder, Stage.PREPROCESS):
            tensor, crop = preprocess(frame, self.input_size, self.layout)
            s.simulate_stage(Stage.PREPROCESS.value)
        with self._bracket(recorder, Stage.INFERENCE):
            raw = s.infer(tensor)
        with self._bracket(recorder, Stage.POSTPROCESS):
            dets = postprocess(raw, self.decode_config, crop)
            s.simulate_stage(Stage.POSTPROCESS.value)
        return dets

    def _run_tiled(self, frame, recorder) -> list[Detection]:
        s = self.session
        plan = self.tile_plan
        with self._bracket(recorder, Stage.PREPROCESS):
            region, (rx, ry) = center_crop_region(frame, *plan.region)
            batch = assemble_batch(normalize(region), plan, self.layout)
            s.simulate_stage(Stage.PREPROCESS.value)
        with self._bracket(recorder, Stage.INFERENCE):
            raw = s.infer(batch)
        with self._bracket(recorder, Stage.POSTPROCESS):
            per_tile = [finalize(raw, self.decode_config, i) for i in range(len(plan))]
            s.simulate_stage(Stage.POSTPROCESS.value)
        with self._bracket(recorder, Stage.MERGE):
            merged = merge_detections(per_tile, plan, self.decode_config)
            dets = [d.translated(rx, ry, CoordinateSpace.FULL_FRAME) for d in merged]
            s.simulate_stage(Stage.MERGE.value)
        return dets
