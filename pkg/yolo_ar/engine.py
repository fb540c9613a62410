"""Model loading and the inference backend boundary.

Two backends sit behind ``InferenceSession``: onnxruntime (reference CPU or an
accelerated execution provider) and a deterministic mock whose delays and
outputs are fully described by a ``MockSpec``.
"""

import ast
import logging
import threading
from contextlib import contextmanager
from dataclasses import dataclass, field
from enum import Enum
from pathlib import Path
from typing import Callable

import numpy as np
import onnx
import onnxruntime as ort

from yolo_ar.clock import Clock, WallClock
from yolo_ar.decode import RawOutput
from yolo_ar.errors import (
    AmbiguousLayoutError,
    ConfigurationError,
    InferenceError,
    LoadError,
    SessionBusyError,
    ShapeError,
    UnsupportedInputError,
)
from yolo_ar.preprocess import InputTensor, Layout

logger = logging.getLogger(__name__)

DEFAULT_WARMUP = 10
YOLO_STRIDES = (8, 16, 32)

# highest ai.onnx opset implemented by each onnxruntime release
ORT_MAX_OPSET = {
    (1, 14): 18,
    (1, 15): 19,
    (1, 16): 19,
    (1, 17): 20,
    (1, 18): 21,
    (1, 19): 21,
    (1, 20): 21,
}


class BackendKind(Enum):
    REFERENCE_CPU = "reference"
    ACCELERATED = "accelerated"
    MOCK = "mock"


@dataclass(frozen=True)
class ModelDescriptor:
    source_path: str
    variant_name: str
    input_extents: tuple[int | None, int, int, int]  # batch may be dynamic
    layout: Layout
    category_count: int
    opset_version: int | None
    parameter_count: int | None = None
    max_opset: int | None = None

    @property
    def input_size(self) -> int:
        return self.input_extents[2]

    @property
    def opset_supported(self) -> bool:
        if self.opset_version is None or self.max_opset is None:
            return True
        return self.opset_version <= self.max_opset


def detect_layout(input_extents) -> Layout:
    if len(input_extents) != 4:
        raise UnsupportedInputError(f"expected 4 input extents, got {tuple(input_extents)}")
    first, last = input_extents[1] == 3, input_extents[3] == 3
    if first and last:
        raise AmbiguousLayoutError(tuple(input_extents))
    if first:
        return Layout.CHANNELS_FIRST
    if last:
        return Layout.CHANNELS_LAST
    raise UnsupportedInputError(
        f"no 3-channel axis in input extents {tuple(input_extents)}"
    )


def yolo_candidate_count(n: int) -> int:
    return sum((n // s) ** 2 for s in YOLO_STRIDES)


class Backend:
    name = "backend"
    max_opset: int | None = None

    def __init__(self, clock: Clock | None = None):
        self.clock = clock or WallClock()

    def run(self, values: np.ndarray) -> np.ndarray:
        raise NotImplementedError

    def simulate_stage(self, stage: str) -> None:
        pass


def onnxruntime_max_opset(version: str = ort.__version__) -> int:
    """Opset limit for an onnxruntime version; releases newer than the table get
    its last entry, older ones its first."""
    release = tuple(int(p) for p in version.split(".")[:2])
    known = [k for k in ORT_MAX_OPSET if k <= release]
    return ORT_MAX_OPSET[max(known) if known else min(ORT_MAX_OPSET)]


class OnnxRuntimeBackend(Backend):
    max_opset = onnxruntime_max_opset()

    def __init__(self, model_path: str, kind: BackendKind):
        super().__init__()
        opt = ort.SessionOptions()
        if kind is BackendKind.ACCELERATED:
            providers = [
                p for p in ort.get_available_providers() if p != "CPUExecutionProvider"
            ]
            if not providers:
                logger.warning(
                    "no accelerated execution provider available, falling back to CPU"
                )
            providers.append("CPUExecutionProvider")
        else:
            providers = ["CPUExecutionProvider"]
        try:
            self.sess = ort.InferenceSession(model_path, opt, providers=providers)
        except Exception as e:
            raise LoadError(model_path, e) from e
        self.name = "onnxruntime:" + self.sess.get_providers()[0]
        self.input_name = self.sess.get_inputs()[0].name
        self.output_name = self.sess.get_outputs()[0].name

    def run(self, values: np.ndarray) -> np.ndarray:
        return self.sess.run([self.output_name], {self.input_name: values})[0]


@dataclass
class MockSpec:
    fixed_delay_ms: float = 0.0
    per_pixel_ms: float = 0.0
    stage_delays_ms: dict[str, float] = field(default_factory=dict)
    canned_output: np.ndarray | None = None
    # maps one input slice (model layout, no batch axis) to a (4+C, N) array
    rule: Callable[[np.ndarray], np.ndarray] | None = None
    category_count: int = 80
    clock: Clock = field(default_factory=WallClock)


class MockBackend(Backend):
    name = "mock"

    def __init__(self, spec: MockSpec):
        super().__init__(spec.clock)
        self.spec = spec
        self.calls = 0

    def _output(self, values: np.ndarray, n: int) -> np.ndarray:
        batch = values.shape[0]
        if self.spec.rule is not None:
            return np.stack([self.spec.rule(values[i]) for i in range(batch)])
        if self.spec.canned_output is not None:
            canned = self.spec.canned_output
            if canned.shape[0] == 1 and batch > 1:
                return np.repeat(canned, batch, axis=0)
            return canned
        return np.zeros(
            (batch, 4 + self.spec.category_count, yolo_candidate_count(n)),
            dtype=np.float32,
        )

    def run(self, values: np.ndarray) -> np.ndarray:
        self.calls += 1
        n = max(values.shape[1:])
        pixels = values.shape[0] * n * n
        self.clock.sleep(
            (self.spec.fixed_delay_ms + self.spec.per_pixel_ms * pixels) / 1000
        )
        return self._output(values, n)

    def simulate_stage(self, stage: str) -> None:
        self.clock.sleep(self.spec.stage_delays_ms.get(stage, 0.0) / 1000)


class InferenceSession:
    """One in-flight inference at a time; other threads get SessionBusyError."""

    def __init__(self, descriptor: ModelDescriptor, kind: BackendKind, backend: Backend):
        self.descriptor = descriptor
        self.backend_kind = kind
        self.backend = backend
        self.calls = 0
        self._lock = threading.RLock()

    @property
    def clock(self) -> Clock:
        return self.backend.clock

    @contextmanager
    def exclusive(self):
        if not self._lock.acquire(blocking=False):
            raise SessionBusyError(self.backend.name)
        try:
            yield self
        finally:
            self._lock.release()

    def _check(self, tensor: InputTensor) -> None:
        d = self.descriptor
        if tensor.layout is not d.layout:
            raise ShapeError(
                f"tensor layout {tensor.layout.value} but model expects {d.layout.value}"
            )
        if tensor.dims[1:] != tuple(d.input_extents[1:]):
            raise ShapeError(
                f"tensor dims {tensor.dims} do not match model input {d.input_extents}"
            )
        if d.input_extents[0] is not None and tensor.batch != d.input_extents[0]:
            raise ShapeError(
                f"model has static batch {d.input_extents[0]}, got {tensor.batch}"
            )

    def infer(self, tensor: InputTensor) -> RawOutput:
        self._check(tensor)
        with self.exclusive():
            self.calls += 1
            try:
                values = self.backend.run(tensor.values)
            except Exception as e:
                raise InferenceError(self.backend.name, str(e)) from e
        return RawOutput(np.asarray(values), self.descriptor.category_count)

    def simulate_stage(self, stage: str) -> None:
        self.backend.simulate_stage(stage)


def warm_up(session: InferenceSession, k: int = DEFAULT_WARMUP) -> None:
    if k < 0:
        raise ConfigurationError(f"warm-up count must be >= 0, got {k}")
    d = session.descriptor
    shape = (d.input_extents[0] or 1, *d.input_extents[1:])
    zeros = InputTensor(np.zeros(shape, dtype=np.float32), d.layout)
    for _ in range(k):
        session.infer(zeros)


def _dims(value_info) -> list[int | None]:
    return [
        d.dim_value if d.HasField("dim_value") else None
        for d in value_info.type.tensor_type.shape.dim
    ]


def _category_count(model: onnx.ModelProto, explicit: int | None) -> int:
    if explicit is not None:
        return explicit
    meta = {p.key: p.value for p in model.metadata_props}
    if "names" in meta:
        try:
            return len(ast.literal_eval(meta["names"]))
        except (ValueError, SyntaxError):
            logger.warning("unreadable 'names' metadata, inferring category count")
    out = _dims(model.graph.output[0])
    if len(out) == 3 and out[1] is not None and out[2] is not None:
        c = min(out[1], out[2]) - 4
        logger.warning("category count not declared, inferred %d from output %s", c, out)
        return c
    raise ConfigurationError("cannot determine category count, pass it explicitly")


def load_model(
    path: str | Path,
    backend: BackendKind = BackendKind.REFERENCE_CPU,
    variant_name: str | None = None,
    input_size: int | None = None,
    layout: Layout | None = None,
    category_count: int | None = None,
    legacy_opset_limit: int | None = None,
) -> tuple[ModelDescriptor, InferenceSession]:
    path = str(path)
    try:
        model = onnx.load(path)
        onnx.checker.check_model(model)
    except Exception as e:
        raise LoadError(path, e) from e

    opset = next(
        (o.version for o in model.opset_import if o.domain in ("", "ai.onnx")), None
    )
    initializers = {t.name for t in model.graph.initializer}
    inputs = [i for i in model.graph.input if i.name not in initializers]
    if not inputs:
        raise LoadError(path, "graph has no input")
    if len(inputs) > 1:
        logger.warning("model has %d inputs, using %s", len(inputs), inputs[0].name)
    extents = _dims(inputs[0])

    layout = layout or detect_layout(extents)
    spatial = (2, 3) if layout is Layout.CHANNELS_FIRST else (1, 2)
    for axis in spatial:
        if extents[axis] is None:
            if input_size is None:
                raise ConfigurationError(
                    f"model input {extents} has dynamic spatial dims, pass an input size"
                )
            extents[axis] = input_size
        elif input_size is not None and extents[axis] != input_size:
            raise ConfigurationError(
                f"model input is fixed at {extents[axis]}, cannot override with {input_size}"
            )
    if extents[spatial[0]] != extents[spatial[1]]:
        raise UnsupportedInputError(f"model input {extents} is not square")
    channel_axis = 1 if layout is Layout.CHANNELS_FIRST else 3
    if extents[channel_axis] != 3:
        raise UnsupportedInputError(f"model input {extents} has no 3-channel axis for {layout.value}")

    if backend is BackendKind.MOCK:
        raise ConfigurationError("mock sessions are created with load_mock")
    runtime = OnnxRuntimeBackend(path, backend)
    descriptor = ModelDescriptor(
        source_path=path,
        variant_name=variant_name or Path(path).stem,
        input_extents=tuple(extents),
        layout=layout,
        category_count=_category_count(model, category_count),
        opset_version=opset,
        parameter_count=sum(int(np.prod(t.dims)) for t in model.graph.initializer),
        max_opset=runtime.max_opset,
    )
    if not descriptor.opset_supported:
        logger.warning(
            "model opset %s exceeds backend support (%s)", opset, runtime.max_opset
        )
    if legacy_opset_limit is not None and opset is not None and opset > legacy_opset_limit:
        logger.warning(
            "model opset %d exceeds the configured limit %d", opset, legacy_opset_limit
        )
    logger.info(
        "loaded %s: input %s (%s), %d categories, opset %s",
        descriptor.variant_name,
        descriptor.input_extents,
        layout.value,
        descriptor.category_count,
        opset,
    )
    return descriptor, InferenceSession(descriptor, backend, runtime)


def load_mock(
    spec: MockSpec,
    input_size: int,
    layout: Layout = Layout.CHANNELS_FIRST,
    variant_name: str = "mock",
    parameter_count: int | None = None,
) -> tuple[ModelDescriptor, InferenceSession]:
    if layout is Layout.CHANNELS_FIRST:
        extents = (None, 3, input_size, input_size)
    else:
        extents = (None, input_size, input_size, 3)
    descriptor = ModelDescriptor(
        source_path="mock:" + variant_name,
        variant_name=variant_name,
        input_extents=extents,
        layout=layout,
        category_count=spec.category_count,
        opset_version=None,
        parameter_count=parameter_count,
    )
    return descriptor, InferenceSession(descriptor, BackendKind.MOCK, MockBackend(spec))
