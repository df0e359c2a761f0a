import numpy as np
import pytest

from src.engine.gradcheck import gradcheck
from src.engine.tensor import as_tensor, parameter
from src.models.geometry import Intrinsics
from src.models.settings import LossWeights
from src.services.losses import (
    NUM_SCALES,
    HeightPriors,
    ScaleLosses,
    approximate_depth,
    mask_height,
    min_combine,
    normalize_depth,
    reconstruction_loss,
    size_constraint_loss,
    size_constraint_terms,
    smoothness_loss,
    ssim_loss,
    ssim_map,
    total_loss,
)
from src.services.warping import WarpResult
from src.utils.errors import DatasetError, ShapeError


def _warp_result(image: np.ndarray, valid: np.ndarray) -> WarpResult:
    return WarpResult(image=as_tensor(image), valid=valid[None].astype(np.float64), coords=as_tensor(np.zeros((2,) + valid.shape)))


def test_min_combine_respects_validity():
    a = as_tensor(np.array([[1.0, 2.0, 3.0, 4.0]]))
    b = as_tensor(np.array([[2.0, 1.0, 5.0, 6.0]]))
    valid_a = np.array([[True, True, False, False]])
    valid_b = np.array([[True, True, True, False]])
    np.testing.assert_array_equal(min_combine(a, b, valid_a, valid_b).data, [[1.0, 1.0, 5.0, 0.0]])


def test_reconstruction_loss_is_zero_for_perfect_warps(rng):
    target = rng.uniform(size=(3, 8, 8))
    valid = np.ones((8, 8), dtype=bool)
    loss = reconstruction_loss(_warp_result(target, valid), _warp_result(target + 0.5, valid), target)
    assert loss.item() == pytest.approx(0.0)


def test_reconstruction_loss_averages_over_all_pixels(rng):
    target = np.zeros((1, 2, 2))
    valid = np.array([[True, False], [False, False]])
    loss = reconstruction_loss(_warp_result(np.ones((1, 2, 2)), valid), _warp_result(np.ones((1, 2, 2)), valid), target)
    assert loss.item() == pytest.approx(0.25)


def test_ssim_of_identical_images_is_zero(rng):
    image = rng.uniform(size=(3, 8, 10))
    np.testing.assert_allclose(ssim_map(image, image).data, 0.0, atol=1e-12)
    assert ssim_loss(image, 1.0 - image).item() > 0.1


def test_ssim_stays_within_unit_interval(rng):
    value = ssim_map(rng.uniform(size=(3, 8, 8)), rng.uniform(size=(3, 8, 8))).data
    assert value.min() >= 0.0 and value.max() <= 1.0


def test_ssim_gradient(rng):
    a = parameter(rng.uniform(0.2, 0.8, (1, 5, 6)))
    b = rng.uniform(0.2, 0.8, (1, 5, 6))
    assert gradcheck(lambda: ssim_loss(a, b), [a])[0] < 1e-4


def test_ssim_rejects_mismatched_images(rng):
    with pytest.raises(ShapeError):
        ssim_map(rng.uniform(size=(3, 4, 4)), rng.uniform(size=(3, 4, 5)))


def test_smoothness_is_zero_for_constant_depth(rng):
    assert smoothness_loss(np.full((8, 8), 3.0), rng.uniform(size=(3, 8, 8))).item() == pytest.approx(0.0)


def test_smoothness_is_scale_invariant(rng):
    depth = rng.uniform(1.0, 5.0, (8, 8))
    image = rng.uniform(size=(3, 8, 8))
    assert smoothness_loss(depth, image).item() == pytest.approx(smoothness_loss(3.0 * depth, image).item())


def test_smoothness_is_damped_by_image_edges(rng):
    depth = rng.uniform(1.0, 5.0, (8, 8))
    flat = np.zeros((3, 8, 8))
    busy = np.tile(np.array([0.0, 1.0]), (3, 8, 4))
    assert smoothness_loss(depth, busy).item() < smoothness_loss(depth, flat).item()


def test_smoothness_gradient(rng):
    depth = parameter(rng.uniform(1.0, 5.0, (5, 6)))
    image = rng.uniform(size=(3, 5, 6))
    assert gradcheck(lambda: smoothness_loss(depth, image), [depth])[0] < 1e-4


def test_mask_height_and_approximate_depth():
    mask = np.zeros((10, 10), dtype=bool)
    mask[2:7, 4] = True
    mask[4, 1:9] = True
    assert mask_height(mask) == 5
    assert mask_height(np.zeros((3, 3), dtype=bool)) == 0
    assert approximate_depth(1.5, 10, 100.0) == pytest.approx(15.0)


def test_size_constraint_vanishes_when_depth_matches_prior():
    K = Intrinsics(fx=100.0, fy=100.0, cx=7.5, cy=7.5)
    masks = np.zeros((1, 16, 16), dtype=bool)
    masks[0, 4:14, 5:9] = True
    priors = HeightPriors(1, initial=1.5)
    depth = np.full((16, 16), 15.0)
    assert size_constraint_loss(depth, masks, [1], priors, K).item() == pytest.approx(0.0)


def test_size_constraint_value_and_gradients():
    K = Intrinsics(fx=100.0, fy=100.0, cx=7.5, cy=7.5)
    masks = np.zeros((1, 16, 16), dtype=bool)
    masks[0, 4:14, 5:9] = True
    priors = HeightPriors(1, initial=1.0)
    depth = parameter(np.full((16, 16), 20.0))
    loss = size_constraint_loss(depth, masks, [1], priors, K)
    # object depth 20, target 100 * 1 / 10 = 10, mean depth 20
    assert loss.item() == pytest.approx(0.5)
    errors = gradcheck(lambda: size_constraint_loss(depth, masks, [1], priors, K), [depth, priors.values])
    assert max(errors) < 1e-4


def _object_scene(object_depth, background=10.0):
    masks = np.zeros((1, 16, 16), dtype=bool)
    masks[0, 4:14, 5:9] = True
    depth = np.full((16, 16), background)
    depth[masks[0]] = object_depth
    return depth, masks


@pytest.mark.parametrize("scale", [0.1, 3.0, 40.0])
def test_size_constraint_ignores_global_scale(scale):
    K = Intrinsics(fx=100.0, fy=100.0, cx=7.5, cy=7.5)
    depth, masks = _object_scene(14.0)
    depth[0] = 25.0
    reference = size_constraint_loss(depth, masks, [1], HeightPriors(1, initial=1.3), K).item()
    scaled = size_constraint_loss(depth * scale, masks, [1], HeightPriors(1, initial=1.3 * scale), K).item()
    assert reference > 0.0
    assert scaled == pytest.approx(reference, rel=1e-12)


@pytest.mark.parametrize("direction", [1.0, -1.0])
def test_size_constraint_grows_with_depth_error(direction):
    # target depth is 100 * 1 / 10 = 10
    K = Intrinsics(fx=100.0, fy=100.0, cx=7.5, cy=7.5)
    losses = []
    for offset in (0.0, 1.0, 2.0, 4.0, 8.0):
        depth, masks = _object_scene(10.0 + direction * offset)
        losses.append(size_constraint_loss(depth, masks, [1], HeightPriors(1, initial=1.0), K).item())
    assert losses[0] == pytest.approx(0.0)
    assert all(later > earlier for earlier, later in zip(losses, losses[1:]))


def test_size_constraint_skips_empty_masks():
    K = Intrinsics(fx=10.0, fy=10.0, cx=3.5, cy=3.5)
    masks = np.zeros((2, 8, 8), dtype=bool)
    masks[1, 2:4, 2:4] = True
    loss, skipped = size_constraint_terms(np.ones((8, 8)), masks, [1, 1], HeightPriors(1), K)
    assert skipped == 1
    assert loss.item() > 0.0


def test_size_constraint_without_instances_is_zero():
    K = Intrinsics(fx=10.0, fy=10.0, cx=3.5, cy=3.5)
    loss, skipped = size_constraint_terms(np.ones((8, 8)), np.zeros((0, 8, 8), dtype=bool), [], HeightPriors(1), K)
    assert loss.item() == 0.0 and skipped == 0


def test_unknown_category_has_no_prior():
    priors = HeightPriors(2)
    with pytest.raises(DatasetError):
        priors.prior(3)
    with pytest.raises(DatasetError):
        priors.prior(0)


def test_priors_are_projected_to_positive_values():
    priors = HeightPriors(2)
    priors.values.data = np.array([-1.0, 2.0])
    priors.project()
    assert priors.values.data[0] > 0.0
    assert priors.values.data[1] == 2.0


def test_total_loss_weights_scales():
    weights = LossWeights(reconstruction=1.0, ssim=2.0, smoothness=4.0, size_constraint=10.0, l2_reg=0.5)
    scales = [ScaleLosses(reconstruction=1.0, ssim=1.0, smoothness=1.0) for _ in range(NUM_SCALES)]
    total, parts = total_loss(scales, weights, size_constraint=1.0, l2=2.0)
    smooth = 4.0 * (1.0 + 0.5 + 0.25 + 0.125)
    assert total.item() == pytest.approx(4 * (1.0 + 2.0) + smooth + 10.0 + 1.0)
    assert parts["rec"] == pytest.approx(4.0)
    assert parts["sm"] == pytest.approx(1.875)
    assert parts["sc"] == 1.0 and parts["l2"] == 2.0


def test_total_loss_needs_every_scale():
    with pytest.raises(ShapeError):
        total_loss([ScaleLosses()], LossWeights())


def test_normalized_depth_has_unit_mean():
    depth = np.array([[2.0, 4.0], [6.0, 8.0]])
    out = normalize_depth(depth)
    assert out.data.mean() == pytest.approx(1.0)
    np.testing.assert_allclose(out.data, depth / 5.0)
    np.testing.assert_allclose(normalize_depth(3.0 * depth).data, out.data)
