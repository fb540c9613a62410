import numpy as np
import pytest

from yolo_ar.errors import FrameTooSmallError, ShapeError
from yolo_ar.frame import ImageFrame
from yolo_ar.preprocess import (
    CropRect,
    Layout,
    center_crop,
    center_crop_region,
    convert_layout,
    normalize,
    preprocess,
    to_tensor,
)


def _blank(width, height, value=0):
    return ImageFrame.of_array(np.full((height, width, 3), value, dtype=np.uint8))


def test_center_crop_arithmetic(random_frame):
    frame = random_frame(1280, 720)
    crop, rect = center_crop(frame, 160)
    assert rect == CropRect(560, 280, 160)
    assert np.array_equal(crop, frame.pixels[280:440, 560:720])
    assert center_crop(frame, 224)[1] == CropRect(528, 248, 224)


def test_center_crop_identity(random_frame):
    frame = random_frame(160, 160)
    crop, rect = center_crop(frame, 160)
    assert rect == CropRect(0, 0, 160)
    assert np.array_equal(crop, frame.pixels)


def test_center_crop_too_small():
    with pytest.raises(FrameTooSmallError) as e:
        center_crop(_blank(100, 100), 160)
    assert (e.value.n, e.value.width, e.value.height) == (160, 100, 100)


def test_center_crop_margins_symmetric_within_one_pixel():
    rng = np.random.default_rng(1)
    for _ in range(200):
        w, h = (int(v) for v in rng.integers(1, 60, 2))
        n = int(rng.integers(1, min(w, h) + 1))
        _, rect = center_crop(_blank(w, h), n)
        assert 0 <= (w - rect.x - n) - rect.x <= 1
        assert 0 <= (h - rect.y - n) - rect.y <= 1


def test_center_crop_region(random_frame):
    frame = random_frame(400, 200)
    region, origin = center_crop_region(frame, 320, 160)
    assert origin == (40, 20)
    assert region.shape == (160, 320, 3)
    with pytest.raises(FrameTooSmallError):
        center_crop_region(frame, 401, 100)


def test_normalize_endpoints():
    out = normalize(np.array([0, 128, 255], dtype=np.uint8))
    assert out[0] == 0.0
    assert out[2] == 1.0
    assert out[1] == pytest.approx(0.50196, abs=1e-5)


def test_normalize_monotone_and_bounded():
    values = normalize(np.arange(256, dtype=np.uint8))
    assert np.all(np.diff(values) > 0)
    assert values.min() >= 0.0 and values.max() <= 1.0


def test_to_tensor_channels_last_indexing():
    image = np.random.default_rng(0).random((2, 2, 3)).astype(np.float32)
    tensor = to_tensor(image, Layout.CHANNELS_LAST)
    assert tensor.dims == (1, 2, 2, 3)
    flat = tensor.values.ravel()
    for y in range(2):
        for x in range(2):
            for c in range(3):
                assert flat[((y * 2) + x) * 3 + c] == image[y, x, c]


def test_to_tensor_channels_first_indexing():
    image = np.random.default_rng(0).random((2, 2, 3)).astype(np.float32)
    tensor = to_tensor(image, Layout.CHANNELS_FIRST)
    assert tensor.dims == (1, 3, 2, 2)
    flat = tensor.values.ravel()
    for y in range(2):
        for x in range(2):
            for c in range(3):
                assert flat[(c * 2 + y) * 2 + x] == image[y, x, c]
    assert sorted(flat) == sorted(image.ravel())


def test_layout_permutation_is_a_bijection():
    for n in range(1, 9):
        image = np.arange(n * n * 3, dtype=np.float32).reshape(n, n, 3)
        last = to_tensor(image, Layout.CHANNELS_LAST)
        first = convert_layout(last, Layout.CHANNELS_FIRST)
        assert np.array_equal(first.values, to_tensor(image, Layout.CHANNELS_FIRST).values)
        back = convert_layout(first, Layout.CHANNELS_LAST)
        assert back.values.tobytes() == last.values.tobytes()
        assert len(np.unique(first.values)) == n * n * 3


def test_to_tensor_rejects_non_square():
    with pytest.raises(ShapeError):
        to_tensor(np.zeros((2, 3, 3), dtype=np.float32))


def test_preprocess_composition(random_frame):
    frame = random_frame(1280, 720)
    tensor, rect = preprocess(frame, 160, Layout.CHANNELS_FIRST)
    assert tensor.dims == (1, 3, 160, 160)
    assert rect == CropRect(560, 280, 160)
    assert tensor.spatial_size == 160
    assert 0.0 <= tensor.values.min() and tensor.values.max() <= 1.0


def test_preprocess_white_frame():
    tensor, _ = preprocess(_blank(320, 240, 255), 160)
    assert np.all(tensor.values == 1.0)


def test_preprocess_is_deterministic(random_frame):
    frame = random_frame(320, 240, seed=5)
    a, _ = preprocess(frame, 96, Layout.CHANNELS_LAST)
    b, _ = preprocess(frame, 96, Layout.CHANNELS_LAST)
    assert a.values.tobytes() == b.values.tobytes()
