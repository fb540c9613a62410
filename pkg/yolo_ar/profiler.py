"""Latency measurement: warm-up, repeated timed runs, per-stage statistics,
size/model sweeps, the pixel-count scaling fit and the tiled-batch comparison.

Statistics use the population standard deviation of the timed runs only;
warm-up runs are never recorded.
"""

import logging
from dataclasses import dataclass, field
from typing import Callable, Iterable

import numpy as np
from pydantic import BaseModel, model_validator

from yolo_ar.clock import Clock, WallClock
from yolo_ar.decode import DecodeConfig
from yolo_ar.engine import InferenceSession
from yolo_ar.errors import (
    ConfigurationError,
    DataError,
    InsufficientDataError,
    ProfilingError,
    YoloArError,
)
from yolo_ar.frame import ImageFrame, StreamSpec, synthetic_stream
from yolo_ar.pipeline import DetectionPipeline, Stage, StageRecorder
from yolo_ar.tiler import plan_tiles

logger = logging.getLogger(__name__)

TSV_DECIMALS = 3


@dataclass
class TimingProtocol:
    warmup_iterations: int = 10
    repetitions: int = 100
    clock: Clock = field(default_factory=WallClock)
    keep_raw: bool = False

    def __post_init__(self):
        if self.repetitions < 2:
            raise ConfigurationError(
                f"need at least 2 repetitions for a deviation, got {self.repetitions}"
            )
        if self.warmup_iterations < 0:
            raise ConfigurationError(
                f"warm-up count must be >= 0, got {self.warmup_iterations}"
            )


class StageTiming(BaseModel):
    stage: str
    mean_ms: float
    std_ms: float
    samples: int


class ReportConfig(BaseModel):
    variant_name: str
    input_size: int
    backend: str
    batch: int = 1
    tiling: str | None = None


class ProtocolEcho(BaseModel):
    warmup_iterations: int
    repetitions: int
    clock: str


class LatencyReport(BaseModel):
    config: ReportConfig
    stages: list[StageTiming]
    protocol: ProtocolEcho
    environment: str = ""
    raw_samples_ms: dict[str, list[float]] | None = None

    @model_validator(mode="after")
    def _one_entry_per_stage(self):
        names = [s.stage for s in self.stages]
        if len(set(names)) != len(names):
            raise ValueError("duplicate stage entries")
        if Stage.TOTAL.value not in names:
            raise ValueError("report has no total entry")
        return self

    def stage(self, stage: Stage | str) -> StageTiming | None:
        name = stage.value if isinstance(stage, Stage) else stage
        return next((s for s in self.stages if s.stage == name), None)

    @property
    def total(self) -> StageTiming:
        return self.stage(Stage.TOTAL)

    def to_tsv(self) -> str:
        c = self.config
        lines = ["variant\tsize\tbackend\tbatch\tstage\tmean_ms\tstd_ms\tsamples"]
        for s in self.stages:
            lines.append(
                f"{c.variant_name}\t{c.input_size}\t{c.backend}\t{c.batch}\t{s.stage}\t"
                f"{s.mean_ms:.{TSV_DECIMALS}f}\t{s.std_ms:.{TSV_DECIMALS}f}\t{s.samples}"
            )
        return "\n".join(lines) + "\n"


class SweepRow(BaseModel):
    variant_name: str
    input_size: int
    mean_total_ms: float
    std_ms: float
    map50: float | None = None
    map50_95: float | None = None
    parameter_count: int | None = None


class SweepFailure(BaseModel):
    variant_name: str
    input_size: int
    reason: str


SWEEP_COLUMNS = (
    "variant",
    "size",
    "mean_total_ms",
    "std_ms",
    "map50",
    "map50_95",
    "parameters",
)


class SweepTable(BaseModel):
    rows: list[SweepRow]
    failures: list[SweepFailure] = []

    @model_validator(mode="after")
    def _unique_cells(self):
        keys = [(r.variant_name, r.input_size) for r in self.rows]
        if len(set(keys)) != len(keys):
            raise ValueError("duplicate (variant, size) rows")
        return self

    def to_tsv(self) -> str:
        def opt(v, fmt="{:.4f}"):
            return "" if v is None else fmt.format(v)

        lines = ["\t".join(SWEEP_COLUMNS)]
        for r in self.rows:
            lines.append(
                "\t".join(
                    [
                        r.variant_name,
                        str(r.input_size),
                        f"{r.mean_total_ms:.{TSV_DECIMALS}f}",
                        f"{r.std_ms:.{TSV_DECIMALS}f}",
                        opt(r.map50),
                        opt(r.map50_95),
                        opt(r.parameter_count, "{}"),
                    ]
                )
            )
        return "\n".join(lines) + "\n"

    @classmethod
    def from_tsv(cls, text: str) -> "SweepTable":
        lines = [l for l in text.splitlines() if l.strip()]
        if not lines or tuple(lines[0].split("\t")) != SWEEP_COLUMNS:
            raise DataError("not a sweep table: unexpected header")
        rows = []
        for number, l in enumerate(lines[1:], start=2):
            cells = l.split("\t")
            if len(cells) != len(SWEEP_COLUMNS):
                raise DataError(f"line {number}: expected {len(SWEEP_COLUMNS)} columns")
            variant, size, mean, std, m50, m5095, params = cells
            try:
                rows.append(
                    SweepRow(
                        variant_name=variant,
                        input_size=int(size),
                        mean_total_ms=float(mean),
                        std_ms=float(std),
                        map50=float(m50) if m50 else None,
                        map50_95=float(m5095) if m5095 else None,
                        parameter_count=int(params) if params else None,
                    )
                )
            except ValueError as e:
                raise DataError(f"line {number}: {e}") from e
        return cls(rows=rows)


class ScalingFit(BaseModel):
    slope_ms_per_pixel: float
    intercept_ms: float
    r_squared: float
    points: int


class TiledComparison(BaseModel):
    tiled: LatencyReport
    single: LatencyReport
    ratio: float


def _report_config(pipeline: DetectionPipeline) -> ReportConfig:
    d = pipeline.session.descriptor
    plan = pipeline.tile_plan
    return ReportConfig(
        variant_name=d.variant_name,
        input_size=d.input_size,
        backend=pipeline.session.backend_kind.value,
        batch=1 if plan is None else len(plan),
        tiling=None
        if plan is None
        else f"{plan.region[0]}x{plan.region[1]}/{plan.tile_size}",
    )


def time_pipeline(
    pipeline: DetectionPipeline,
    frame: ImageFrame,
    protocol: TimingProtocol = TimingProtocol(),
    environment: str = "",
) -> LatencyReport:
    samples: dict[Stage, list[float]] = {}
    with pipeline.session.exclusive():
        for i in range(protocol.warmup_iterations):
            try:
                pipeline.run(frame)
            except YoloArError as e:
                raise ProfilingError("warm-up", i, e) from e
        for i in range(protocol.repetitions):
            recorder = StageRecorder(protocol.clock)
            try:
                pipeline.run(frame, recorder)
            except YoloArError as e:
                stage = recorder.failed or Stage.TOTAL
                raise ProfilingError(stage.value, i, e) from e
            for stage, ns in recorder.elapsed_ns.items():
                samples.setdefault(stage, []).append(ns / 1e6)

    stages = []
    for stage in Stage:
        if stage in samples:
            values = np.array(samples[stage])
            stages.append(
                StageTiming(
                    stage=stage.value,
                    mean_ms=float(values.mean()),
                    std_ms=float(values.std()),
                    samples=len(values),
                )
            )
    report = LatencyReport(
        config=_report_config(pipeline),
        stages=stages,
        protocol=ProtocolEcho(
            warmup_iterations=protocol.warmup_iterations,
            repetitions=protocol.repetitions,
            clock=protocol.clock.name,
        ),
        environment=environment,
        raw_samples_ms={s.value: v for s, v in samples.items()}
        if protocol.keep_raw
        else None,
    )
    logger.info(
        "%s@%d: total %.3f ms (std %.3f)",
        report.config.variant_name,
        report.config.input_size,
        report.total.mean_ms,
        report.total.std_ms,
    )
    return report


@dataclass
class ModelSource:
    """A model variant that can be opened at a given input size."""

    variant_name: str
    open: Callable[[int], InferenceSession]


def sweep(
    models: list[ModelSource],
    sizes: list[int],
    protocol: TimingProtocol,
    frame: ImageFrame,
    decode_config: DecodeConfig = DecodeConfig(),
    scorer: Callable[[DetectionPipeline], object] | None = None,
    environment: str = "",
) -> SweepTable:
    """Time every (model, size) cell; failing cells are recorded, not raised.

    ``scorer`` returns an object with ``map50`` and ``map50_95`` attributes.
    """
    rows, failures = [], []
    for source in models:
        for n in sizes:
            try:
                session = source.open(n)
                pipeline = DetectionPipeline(session, decode_config)
                report = time_pipeline(pipeline, frame, protocol, environment)
                row = SweepRow(
                    variant_name=source.variant_name,
                    input_size=n,
                    mean_total_ms=report.total.mean_ms,
                    std_ms=report.total.std_ms,
                    parameter_count=session.descriptor.parameter_count,
                )
                if scorer is not None:
                    result = scorer(pipeline)
                    row.map50, row.map50_95 = result.map50, result.map50_95
                rows.append(row)
            except YoloArError as e:
                logger.warning("sweep cell %s@%d failed: %s", source.variant_name, n, e)
                failures.append(
                    SweepFailure(variant_name=source.variant_name, input_size=n, reason=str(e))
                )
    return SweepTable(rows=rows, failures=failures)


def _size_and_total(item: LatencyReport | SweepRow) -> tuple[int, float]:
    if isinstance(item, LatencyReport):
        return item.config.input_size, item.total.mean_ms
    return item.input_size, item.mean_total_ms


def fit_pixel_scaling(reports: Iterable[LatencyReport | SweepRow]) -> ScalingFit:
    """Least squares of mean total latency against n squared."""
    points = [_size_and_total(r) for r in reports]
    if len({n for n, _ in points}) < 3:
        raise InsufficientDataError(len({n for n, _ in points}))
    x = np.array([n * n for n, _ in points], dtype=np.float64)
    y = np.array([t for _, t in points], dtype=np.float64)
    slope, intercept = np.polyfit(x, y, 1)
    residual = float(((y - (slope * x + intercept)) ** 2).sum())
    total = float(((y - y.mean()) ** 2).sum())
    r_squared = 1.0 - residual / total if total > 0 else 1.0
    return ScalingFit(
        slope_ms_per_pixel=float(slope),
        intercept_ms=float(intercept),
        r_squared=r_squared,
        points=len(points),
    )


def compare_tiled(
    open_session: Callable[[int], InferenceSession],
    region: tuple[int, int],
    tile: int,
    protocol: TimingProtocol,
    overlap: int = 0,
    frame: ImageFrame | None = None,
    decode_config: DecodeConfig = DecodeConfig(),
    environment: str = "",
) -> TiledComparison:
    """Batch of square tiles over ``region`` against one input of the region's
    longer side (2n x 2n for the n x 2n case)."""
    width, height = region
    side = max(width, height)
    if frame is None:
        frame, _ = next(iter(synthetic_stream(StreamSpec(side, side, 30.0, 1))))
    plan = plan_tiles(width, height, tile, overlap)
    tiled = time_pipeline(
        DetectionPipeline(open_session(tile), decode_config, plan),
        frame,
        protocol,
        environment,
    )
    single = time_pipeline(
        DetectionPipeline(open_session(side), decode_config), frame, protocol, environment
    )
    if single.total.mean_ms <= 0:
        raise DataError("single-input run measured zero latency, ratio undefined")
    return TiledComparison(
        tiled=tiled, single=single, ratio=tiled.total.mean_ms / single.total.mean_ms
    )
