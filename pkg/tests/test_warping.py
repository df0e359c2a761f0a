import numpy as np
import pytest

from src.engine.gradcheck import gradcheck
from src.engine.tensor import parameter
from src.models.geometry import Intrinsics, SE3Params
from src.services.geometry import translation_pose
from src.services.warping import bilinear_sample, nearest_sample, warp
from src.utils.errors import ShapeError


def test_identity_warp_is_exact(rng, intrinsics):
    source = rng.uniform(size=(3, 16, 48))
    depth = rng.uniform(2.0, 8.0, (16, 48))
    result = warp(source, depth, SE3Params.zero(), intrinsics)
    np.testing.assert_allclose(result.image.data, source, atol=1e-9)
    assert result.valid_mask().all()


def test_lateral_translation_shifts_image(rng):
    K = Intrinsics(fx=20.0, fy=20.0, cx=23.5, cy=7.5)
    source = rng.uniform(size=(1, 16, 48))
    depth = np.full((16, 48), 10.0)
    # 0.5 m at 10 m depth with fx 20 moves every sample one pixel to the right
    result = warp(source, depth, translation_pose([0.5, 0.0, 0.0]), K)
    np.testing.assert_allclose(result.image.data[0, :, :-1], source[0, :, 1:], atol=1e-9)
    assert not result.valid_mask()[:, -1].any()
    assert result.valid_mask()[:, :-1].all()
    np.testing.assert_array_equal(result.image.data[0, :, -1], 0.0)


def test_inverse_warp_undoes_motion(rng):
    K = Intrinsics(fx=20.0, fy=20.0, cx=23.5, cy=7.5)
    depth = np.full((16, 48), 10.0)
    motion = translation_pose([0.5, 0.0, 0.0])
    forward = warp(rng.uniform(size=(1, 16, 48)), depth, motion, K)
    backward = warp(rng.uniform(size=(1, 16, 48)), depth, motion, K, inverse=True)
    np.testing.assert_allclose(forward.coords.data[0] - 1.0, backward.coords.data[0] + 1.0, atol=1e-9)


def test_points_behind_camera_are_invalid(rng, intrinsics):
    depth = np.full((16, 48), 1.0)
    result = warp(rng.uniform(size=(3, 16, 48)), depth, translation_pose([0.0, 0.0, -2.0]), intrinsics)
    assert not result.valid_mask().any()
    np.testing.assert_array_equal(result.image.data, 0.0)


def test_bilinear_sample_interpolates(rng):
    image = rng.uniform(size=(1, 4, 5))
    coords = np.array([[[1.5]], [[2.25]]])
    sampled, valid = bilinear_sample(image, coords)
    top = 0.5 * image[0, 2, 1] + 0.5 * image[0, 2, 2]
    bottom = 0.5 * image[0, 3, 1] + 0.5 * image[0, 3, 2]
    assert sampled.data[0, 0, 0] == pytest.approx(0.75 * top + 0.25 * bottom)
    assert valid[0, 0]


def test_bilinear_sample_outside_is_zero_and_invalid(rng):
    image = rng.uniform(size=(2, 4, 5))
    coords = np.array([[[-1.0, 4.0, np.nan]], [[0.0, 0.0, 1.0]]])
    sampled, valid = bilinear_sample(image, coords)
    np.testing.assert_array_equal(valid, [[False, True, False]])
    np.testing.assert_array_equal(sampled.data[:, 0, 0], 0.0)
    np.testing.assert_array_equal(sampled.data[:, 0, 2], 0.0)


def test_bilinear_sample_rejects_bad_shapes(rng):
    with pytest.raises(ShapeError):
        bilinear_sample(rng.uniform(size=(4, 5)), np.zeros((2, 1, 1)))
    with pytest.raises(ShapeError):
        bilinear_sample(rng.uniform(size=(1, 1, 5)), np.zeros((2, 1, 1)))


def test_nearest_sample_rounds_and_masks():
    labels = np.arange(20).reshape(4, 5)
    coords = np.array([[[1.4, 3.6, 9.0]], [[0.6, 2.2, 0.0]]])
    np.testing.assert_array_equal(nearest_sample(labels, coords), [[6, 14, 0]])


def test_warp_gradients_reach_depth_and_motion(rng):
    K = Intrinsics(fx=10.0, fy=10.0, cx=3.5, cy=3.5)
    source = rng.uniform(size=(1, 8, 8))
    depth = parameter(rng.uniform(4.0, 6.0, (8, 8)))
    motion = parameter(np.array([0.013, -0.021, 0.017, 0.004, -0.003, 0.002]))

    def loss():
        return (warp(source, depth, motion, K).image ** 2).sum()

    errors = gradcheck(loss, [depth, motion], step=1e-6)
    assert max(errors) < 1e-3


def test_warp_rejects_mismatched_sizes(rng, intrinsics):
    with pytest.raises(ShapeError):
        warp(rng.uniform(size=(3, 8, 8)), np.ones((16, 48)), SE3Params.zero(), intrinsics)
