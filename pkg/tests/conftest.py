import os
import sys

sys.path.insert(0, os.path.abspath(os.path.join(os.path.dirname(__file__), "..")))

import numpy as np
import onnx
import pytest
from onnx import TensorProto, helper, numpy_helper

from yolo_ar.frame import ImageFrame
from yolo_ar.profiler import SweepRow, SweepTable

BOX_SCALE = 64.0


def build_tiny_model(
    path,
    n: int | None = 64,
    categories: int = 2,
    layout: str = "nchw",
    names_metadata: bool = True,
    opset: int = 13,
    seed: int = 0,
):
    """A few ops emitting a YOLOv8-shaped (batch, 4+C, N) output.

    ``n=None`` leaves the spatial input dims dynamic.
    """
    rng = np.random.default_rng(seed)
    width = 4 + categories
    side = n if n is not None else "side"
    if layout == "nchw":
        input_dims = ["batch", 3, side, side]
    else:
        input_dims = ["batch", side, side, 3]
    anchors = (n // 8) ** 2 if n is not None else "anchors"

    weights = numpy_helper.from_array(
        rng.normal(0.0, 0.1, (width, 3, 8, 8)).astype(np.float32), "conv_w"
    )
    bias = numpy_helper.from_array(
        rng.normal(0.0, 0.1, (width,)).astype(np.float32), "conv_b"
    )
    shape = numpy_helper.from_array(np.array([0, width, -1], dtype=np.int64), "head_shape")
    scale = np.ones((1, width, 1), dtype=np.float32)
    scale[0, :4, 0] = BOX_SCALE
    scale = numpy_helper.from_array(scale, "box_scale")

    nodes = []
    x = "images"
    if layout == "nhwc":
        nodes.append(helper.make_node("Transpose", ["images"], ["nchw"], perm=[0, 3, 1, 2]))
        x = "nchw"
    nodes += [
        helper.make_node(
            "Conv", [x, "conv_w", "conv_b"], ["conv"], kernel_shape=[8, 8], strides=[8, 8]
        ),
        helper.make_node("Sigmoid", ["conv"], ["act"]),
        helper.make_node("Reshape", ["act", "head_shape"], ["flat"]),
        helper.make_node("Mul", ["flat", "box_scale"], ["output0"]),
    ]
    graph = helper.make_graph(
        nodes,
        "tiny_yolo",
        [helper.make_tensor_value_info("images", TensorProto.FLOAT, input_dims)],
        [helper.make_tensor_value_info("output0", TensorProto.FLOAT, ["batch", width, anchors])],
        initializer=[weights, bias, shape, scale],
    )
    model = helper.make_model(graph, opset_imports=[helper.make_opsetid("", opset)])
    model.ir_version = 8
    if names_metadata:
        names = {i: f"class{i}" for i in range(categories)}
        helper.set_model_props(model, {"names": str(names)})
    onnx.save(model, str(path))
    return path


@pytest.fixture
def tiny_model(tmp_path):
    def make(name="tiny.onnx", **kwargs):
        return build_tiny_model(tmp_path / name, **kwargs)

    return make


@pytest.fixture
def random_frame():
    def make(width=320, height=240, seed=0, frame_id=0, timestamp=0):
        rng = np.random.default_rng(seed)
        pixels = rng.integers(0, 256, (height, width, 3), dtype=np.uint8)
        return ImageFrame(frame_id, width, height, pixels, timestamp)

    return make


# nano rows lead below ~450 ms, small rows above
BUDGET_ROWS = [
    ("yolov8n", 160, 96.0, 0.30, 0.18),
    ("yolov8n", 224, 150.0, 0.38, 0.24),
    ("yolov8n", 320, 236.0, 0.45, 0.30),
    ("yolov8n", 416, 380.0, 0.50, 0.34),
    ("yolov8n", 480, 520.0, 0.52, 0.355),
    ("yolov8n", 640, 900.0, 0.53, 0.37),
    ("yolov8s", 160, 200.0, 0.35, 0.22),
    ("yolov8s", 224, 330.0, 0.44, 0.28),
    ("yolov8s", 320, 450.0, 0.55, 0.38),
    ("yolov8s", 416, 700.0, 0.59, 0.42),
    ("yolov8s", 640, 1600.0, 0.61, 0.44),
]
PARAMETERS = {"yolov8n": 3_157_200, "yolov8s": 11_166_560}


@pytest.fixture
def budget_table() -> SweepTable:
    return SweepTable(
        rows=[
            SweepRow(
                variant_name=v,
                input_size=n,
                mean_total_ms=t,
                std_ms=1.0,
                map50=m50,
                map50_95=m5095,
                parameter_count=PARAMETERS[v],
            )
            for v, n, t, m50, m5095 in BUDGET_ROWS
        ]
    )
