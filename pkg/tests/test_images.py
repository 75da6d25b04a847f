import numpy as np
import pytest

from uvrc.errors import ShapeError
from uvrc.images import list_images, pad_to_stride, read_image, to_float, to_u8, unpad, write_image


def test_pad_500x300():
    x = np.random.default_rng(0).random((300, 500, 3), dtype=np.float32)
    p, dims = pad_to_stride(x, 64)
    assert p.shape == (320, 512, 3)
    assert dims == (300, 500)
    assert np.array_equal(unpad(p, dims), x)


def test_pad_identity():
    x = np.zeros((64, 64, 3), np.float32)
    p, dims = pad_to_stride(x, 64)
    assert p.shape == x.shape and dims == (64, 64)
    assert unpad(p, dims).shape == x.shape


def test_pad_single_pixel_replicates():
    x = np.array([[[0.1, 0.5, 0.9]]], np.float32)
    p, _ = pad_to_stride(x, 16)
    assert p.shape == (16, 16, 3)
    assert np.all(p == x[0, 0])


def test_unpad_too_large():
    with pytest.raises(ShapeError):
        unpad(np.zeros((320, 512, 3), np.float32), (600, 600))


def test_u8_float_roundtrip():
    x = np.arange(256, dtype=np.uint8).reshape(16, 16, 1).repeat(3, axis=2)
    assert np.array_equal(to_u8(to_float(x)), x)


def test_to_u8_rounds_half_away_and_clips():
    f = np.array([[[0.5 / 255, 2.0, -1.0]]])
    assert to_u8(f).tolist() == [[[1, 255, 0]]]


@pytest.mark.parametrize("suffix", [".png", ".ppm"])
def test_image_io(tmp_path, suffix):
    x = np.random.default_rng(1).integers(0, 256, (7, 9, 3), dtype=np.uint8)
    path = tmp_path / f"a{suffix}"
    write_image(x, path)
    assert np.array_equal(read_image(path), x)
    assert list_images(tmp_path) == [path]
