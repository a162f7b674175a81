import numpy as np
import pytest
from PIL import Image

from abrsvm import _kernels
from abrsvm.features import ModelManifest
from abrsvm.preprocess import CropRect, crop, load_image, prepare_input


def manifest_for(size=224, means=(0.0, 0.0, 0.0), stds=(1.0, 1.0, 1.0), layout="hwc"):
    return ModelManifest(
        model_name="m",
        weights_path=__import__("pathlib").Path("w.bin"),
        weights_checksum="00",
        input_size=size,
        channel_means=means,
        channel_stds=stds,
        feature_output_name="f",
        feature_dim=4,
        layout=layout,
    )


def test_crop_full_image_is_identity():
    img = np.arange(5 * 7 * 3, dtype=np.uint8).reshape(5, 7, 3)
    out = crop(img, CropRect(0, 0, 7, 5))
    np.testing.assert_array_equal(out, img)


def test_crop_report_panel_size():
    img = np.zeros((2000, 2400, 3), dtype=np.uint8)
    out = crop(img, CropRect(10, 20, 2350, 1950))
    assert out.shape == (1950, 2350, 3)


def test_crop_exact_pixels():
    rng = np.random.default_rng(0)
    img = rng.integers(0, 256, (20, 30, 3), dtype=np.uint8)
    out = crop(img, CropRect(3, 5, 10, 8))
    np.testing.assert_array_equal(out, img[5:13, 3:13])


def test_crop_one_pixel_out_of_bounds():
    img = np.zeros((10, 10, 3), dtype=np.uint8)
    with pytest.raises(ValueError, match="exceeds image bounds"):
        crop(img, CropRect(1, 0, 10, 10))


def test_crop_rect_validation():
    with pytest.raises(ValueError):
        CropRect(-1, 0, 5, 5)
    with pytest.raises(ValueError):
        CropRect(0, 0, 0, 5)


def test_prepare_input_identity_normalization():
    rng = np.random.default_rng(1)
    img = rng.integers(0, 256, (16, 16, 3), dtype=np.uint8)
    tensor = prepare_input(img, manifest_for(size=16))
    np.testing.assert_allclose(tensor.values, img.astype(np.float32) / 255.0, atol=0)


def test_prepare_input_constant_midpoint_zeroes_out():
    img = np.full((8, 8, 3), 127.5)  # (127.5/255 - 0.5) / 0.5 == 0
    tensor = prepare_input(img, manifest_for(size=8, means=(0.5, 0.5, 0.5), stds=(0.5, 0.5, 0.5)))
    np.testing.assert_array_equal(tensor.values, np.zeros((8, 8, 3), dtype=np.float32))


def test_prepare_input_report_page_to_224():
    img = np.zeros((1950, 2350, 3), dtype=np.uint8)
    tensor = prepare_input(img, manifest_for(size=224, layout="chw"))
    assert tensor.values.shape == (3, 224, 224)
    assert tensor.height == tensor.width == 224
    assert tensor.channels == 3


def test_prepare_input_grayscale_promotion():
    img = np.arange(64, dtype=np.uint8).reshape(8, 8)
    tensor = prepare_input(img, manifest_for(size=8))
    assert tensor.values.shape == (8, 8, 3)
    np.testing.assert_array_equal(tensor.values[:, :, 0], tensor.values[:, :, 2])


def test_prepare_input_imagenet_range_bound():
    rng = np.random.default_rng(2)
    img = rng.integers(0, 256, (40, 50, 3), dtype=np.uint8)
    manifest = manifest_for(size=32, means=(0.485, 0.456, 0.406), stds=(0.229, 0.224, 0.225))
    tensor = prepare_input(img, manifest)
    assert np.all(np.abs(tensor.values) <= 10.0)
    assert np.all(np.isfinite(tensor.values))


def test_prepare_input_missing_normalization():
    from types import SimpleNamespace

    stub = SimpleNamespace(
        model_name="m", input_size=8, channel_means=None, channel_stds=None, layout="hwc"
    )
    with pytest.raises(ValueError, match="normalization"):
        prepare_input(np.zeros((8, 8, 3), dtype=np.uint8), stub)


def test_resize_to_own_size_is_identity():
    rng = np.random.default_rng(3)
    img = rng.integers(0, 256, (13, 9, 3), dtype=np.uint8).astype(np.float64)
    out = _kernels.bilinear_resize(img, 13, 9)
    np.testing.assert_array_equal(out, img)


def test_resize_bit_identical_across_paths():
    rng = np.random.default_rng(4)
    img = rng.integers(0, 256, (37, 23, 3), dtype=np.uint8).astype(np.float64)
    a = _kernels.resize_numba(np.ascontiguousarray(img), 16, 16)
    b = _kernels.resize_numpy(img, 16, 16)
    np.testing.assert_array_equal(a, b)


def test_resize_repeat_calls_bit_identical():
    rng = np.random.default_rng(5)
    img = rng.integers(0, 256, (50, 64, 3), dtype=np.uint8)
    m = manifest_for(size=24)
    t1 = prepare_input(img, m)
    t2 = prepare_input(img, m)
    np.testing.assert_array_equal(t1.values, t2.values)


def test_resize_degenerate_single_row():
    img = np.full((1, 4, 3), 9.0)
    out = _kernels.bilinear_resize(img, 4, 4)
    np.testing.assert_array_equal(out, np.full((4, 4, 3), 9.0))


def test_load_image_png_roundtrip(tmp_path):
    rng = np.random.default_rng(6)
    arr = rng.integers(0, 256, (12, 17, 3), dtype=np.uint8)
    p = tmp_path / "x.png"
    Image.fromarray(arr).save(p)
    np.testing.assert_array_equal(load_image(p), arr)


def test_load_image_grayscale_is_promoted(tmp_path):
    arr = np.arange(100, dtype=np.uint8).reshape(10, 10)
    p = tmp_path / "g.png"
    Image.fromarray(arr, mode="L").save(p)
    out = load_image(p)
    assert out.shape == (10, 10, 3)


def test_load_image_undecodable(tmp_path):
    p = tmp_path / "bad.png"
    p.write_bytes(b"this is not an image")
    with pytest.raises(ValueError, match="cannot decode"):
        load_image(p)


def test_load_image_missing(tmp_path):
    with pytest.raises(FileNotFoundError):
        load_image(tmp_path / "nope.png")
