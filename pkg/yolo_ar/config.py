"""Resolved run configuration.

Values come from command-line flags, then a JSON config file, then the
defaults below. A report file written by any command is also accepted as a
config file: its embedded ``config`` section is used.
"""

import json
from pathlib import Path
from typing import Literal

from pydantic import BaseModel, ConfigDict, Field, ValidationError, field_validator

from yolo_ar.clock import Clock, VirtualClock, WallClock
from yolo_ar.decode import DecodeConfig
from yolo_ar.errors import ConfigurationError, ParseError
from yolo_ar.preprocess import Layout
from yolo_ar.profiler import TimingProtocol

LAYOUTS = {"nchw": Layout.CHANNELS_FIRST, "nhwc": Layout.CHANNELS_LAST}
DEFAULT_SIZE = 160


def _split(text: str) -> list[str]:
    return [t.strip() for t in text.split(",") if t.strip()]


class RunConfig(BaseModel):
    model_config = ConfigDict(extra="forbid")

    # model
    model: list[str] = []
    variant_name: str | None = None
    backend: Literal["reference", "accelerated", "mock"] = "reference"
    size: int | None = Field(None, gt=0)  # None: the model's own, DEFAULT_SIZE for the mock
    sizes: list[int] = [160, 224, 320]
    layout: Literal["auto", "nchw", "nhwc"] = "auto"
    categories: int | None = Field(None, gt=0)
    max_opset: int | None = None

    # decoding
    conf: float = 0.25
    iou: float = 0.45
    max_detections: int = 100
    class_agnostic: bool = False
    coco_category_ids: bool = False

    # tiling
    tile: int | None = Field(None, gt=0)
    overlap: int = Field(0, ge=0)
    region: tuple[int, int] | None = None

    # timing
    warmup: int = Field(10, ge=0)
    reps: int = Field(100, ge=2)
    raw: bool = False
    clock: Literal["auto", "wall", "virtual"] = "auto"
    environment: str = ""

    # inputs
    image: list[str] = []
    images: str | None = None
    frame_size: tuple[int, int] = (1280, 720)
    seed: int | None = None
    sidecar: str | None = None
    policy: str = "ray"

    # evaluation and selection
    annotations: str | None = None
    detections: str | None = None
    group_attribute: str = "group_tag"
    match_iou: float = 0.5
    score_thresholds: list[float] = [0.25]
    table: str | None = None
    budget_ms: float | None = Field(None, gt=0)
    metric: Literal["mAP50", "mAP50_95"] = "mAP50_95"

    # mock backend
    mock_delay_ms: float = Field(0.0, ge=0)
    mock_pixel_ms: float = Field(0.0, ge=0)
    mock_stage_ms: dict[str, float] = {}
    mock_output: str | None = None

    output: str | None = None

    @field_validator("region", "frame_size", mode="before")
    @classmethod
    def _width_by_height(cls, v):
        if isinstance(v, str):
            w, sep, h = v.lower().partition("x")
            if not sep:
                raise ValueError(f"expected WIDTHxHEIGHT, got {v!r}")
            return int(w), int(h)
        return v

    @field_validator("sizes", "score_thresholds", mode="before")
    @classmethod
    def _comma_list(cls, v):
        return _split(v) if isinstance(v, str) else v

    @field_validator("mock_stage_ms", mode="before")
    @classmethod
    def _stage_delays(cls, v):
        if isinstance(v, (list, tuple)):
            delays = {}
            for item in v:
                stage, sep, ms = item.partition("=")
                if not sep:
                    raise ValueError(f"expected STAGE=MS, got {item!r}")
                delays[stage.strip()] = float(ms)
            return delays
        return v

    def decode_config(self) -> DecodeConfig:
        return DecodeConfig(
            confidence_threshold=self.conf,
            nms_iou_threshold=self.iou,
            max_detections=self.max_detections,
            class_aware_nms=not self.class_agnostic,
        )

    def resolved_layout(self) -> Layout | None:
        return LAYOUTS.get(self.layout)

    def make_clock(self) -> Clock:
        if self.clock == "wall":
            return WallClock()
        if self.clock == "virtual" or (self.backend == "mock" and self.seed is not None):
            if self.backend != "mock":
                raise ConfigurationError("the virtual clock only works with the mock backend")
            return VirtualClock()
        return WallClock()

    def timing_protocol(self, clock: Clock) -> TimingProtocol:
        return TimingProtocol(self.warmup, self.reps, clock, self.raw)


def load_config_file(path: str | Path) -> dict:
    path = Path(path)
    try:
        data = json.loads(path.read_text())
    except OSError as e:
        raise ConfigurationError(f"cannot read config file {path}: {e}") from e
    except json.JSONDecodeError as e:
        raise ParseError(e.msg, str(path), f"line {e.lineno} column {e.colno}") from e
    if not isinstance(data, dict):
        raise ParseError("config must be a JSON object", str(path), "top level")
    if "tool" in data and isinstance(data.get("config"), dict):
        data = data["config"]
    return data


def resolve(config_file: str | Path | None, flags: dict) -> RunConfig:
    """Flags that were not given (None or empty) leave file and default values alone."""
    merged = load_config_file(config_file) if config_file else {}
    merged.update({k: v for k, v in flags.items() if v is not None and v != ()})
    try:
        return RunConfig.model_validate(merged)
    except ValidationError as e:
        first = e.errors()[0]
        field = ".".join(map(str, first["loc"])) or "config"
        raise ConfigurationError(f"{field}: {first['msg']}") from e
