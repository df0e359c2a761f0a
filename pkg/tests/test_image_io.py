import numpy as np
import pytest

from src.utils.errors import DatasetError
from src.utils.image_io import read_labels, read_pfm, read_rgb, write_labels, write_pfm, write_rgb


def test_rgb_is_quantized_to_eight_bits(tmp_path, rng):
    image = rng.uniform(size=(3, 8, 16))
    path = str(tmp_path / "frame.png")
    write_rgb(path, image)
    restored = read_rgb(path)
    assert restored.shape == (3, 8, 16)
    assert np.abs(restored - image).max() <= 0.5 / 255 + 1e-12


def test_labels_keep_instance_indices(tmp_path):
    labels = np.zeros((8, 16), dtype=np.int64)
    labels[2:4, 3:9] = 1
    labels[5:7, 10:12] = 2
    path = str(tmp_path / "mask.png")
    write_labels(path, labels)
    np.testing.assert_array_equal(read_labels(path), labels)
    with pytest.raises(DatasetError):
        write_labels(path, np.full((2, 2), 300))


def test_color_masks_are_rejected(tmp_path, rng):
    path = str(tmp_path / "color.png")
    write_rgb(path, rng.uniform(size=(3, 4, 4)))
    with pytest.raises(DatasetError):
        read_labels(path)


def test_pfm_keeps_orientation_and_invalid_pixels(tmp_path, rng):
    depth = rng.uniform(1.0, 50.0, (6, 10))
    invalid = np.zeros_like(depth, dtype=bool)
    invalid[0, 0] = True
    path = tmp_path / "depth.pfm"
    write_pfm(str(path), depth, invalid=invalid)
    assert path.read_bytes().startswith(b"Pf\n10 6\n-1.0\n")
    restored = read_pfm(str(path))
    assert np.isnan(restored[0, 0])
    np.testing.assert_allclose(restored[~invalid], depth[~invalid], rtol=1e-6)


def test_big_endian_pfm(tmp_path):
    values = np.array([[1.0, 2.0], [3.0, 4.0]], dtype=">f4")
    path = tmp_path / "be.pfm"
    path.write_bytes(b"Pf\n2 2\n1.0\n" + values[::-1].tobytes())
    np.testing.assert_array_equal(read_pfm(str(path)), values.astype(np.float64))


@pytest.mark.parametrize("raw", [b"P6\n2 2\n255\n", b"PF\n1 1\n-1.0\n" + bytes(12), b"Pf\n2 2\n-1.0\n" + bytes(4)])
def test_malformed_pfm(tmp_path, raw):
    path = tmp_path / "bad.pfm"
    path.write_bytes(raw)
    with pytest.raises(DatasetError):
        read_pfm(str(path))


def test_missing_files(tmp_path):
    with pytest.raises(DatasetError):
        read_rgb(str(tmp_path / "none.png"))
    with pytest.raises(DatasetError):
        read_pfm(str(tmp_path / "none.pfm"))
