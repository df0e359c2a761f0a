import numpy as np
import pytest
from PIL import Image

from src.components.visualize import colorize_inverse_depth, depth_panel, normalize, save_depth_panel
from src.utils.errors import ShapeError


def test_normalize_maps_to_unit_range():
    values = np.array([[2.0, 4.0], [np.nan, 6.0]])
    out = normalize(values)
    assert out.min() == 0.0 and out.max() == 1.0
    assert out[1, 0] == 0.0
    assert not normalize(np.full((2, 2), np.nan)).any()


def test_flat_input_normalizes_to_zero():
    flat = np.full((3, 4), 7.5)
    np.testing.assert_array_equal(normalize(flat), np.zeros((3, 4)))
    panel = depth_panel(np.zeros((3, 3, 4)), flat)
    assert (panel[3:6] == 0).all()


def test_panel_stacks_three_views():
    image = np.full((3, 8, 16), 0.5)
    depth = np.linspace(1.0, 10.0, 8 * 16).reshape(8, 16)
    panel = depth_panel(image, depth)
    assert panel.shape == (24, 16, 3)
    assert panel.dtype == np.uint8
    assert (panel[:8] == 128).all()
    # near pixels are dark in the grayscale view
    assert panel[8, 0, 0] < panel[15, 15, 0]


def test_invalid_depth_is_colorized():
    depth = np.array([[1.0, 0.0], [np.nan, 2.0]])
    assert colorize_inverse_depth(depth).shape == (2, 2, 3)


def test_panel_shape_errors():
    with pytest.raises(ShapeError):
        depth_panel(np.zeros((8, 16)), np.ones((8, 16)))
    with pytest.raises(ShapeError):
        depth_panel(np.zeros((3, 8, 16)), np.ones((8, 8)))
    with pytest.raises(ShapeError):
        colorize_inverse_depth(np.ones((1, 8, 8)))


def test_save_panel_creates_directories(tmp_path):
    path = tmp_path / "depth" / "000001.png"
    save_depth_panel(str(path), np.zeros((3, 8, 16)), np.ones((8, 16)))
    with Image.open(path) as img:
        assert img.size == (16, 24)
        assert img.mode == "RGB"
