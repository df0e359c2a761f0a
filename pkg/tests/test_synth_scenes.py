import numpy as np
import pytest

from src.models.geometry import SE3Params
from src.models.settings import SceneConfig, ScenePreset, scene_config_for
from src.services.synth_scenes import (
    SAMPLE_SEED_STRIDE,
    apparent_motion,
    generate,
    generate_dynamic,
    generate_rigid,
    generate_samples,
    generate_sequence,
    make_texture,
)
from src.services.warping import warp, warp_coordinates
from src.utils.errors import DatasetError


def _residual(sample, motion, inverse=False):
    source = sample.images[2] if inverse else sample.images[0]
    result = warp(source, sample.depths[1], motion, sample.intrinsics, inverse=inverse)
    valid = result.valid_mask()
    return float(np.abs(result.image.data - sample.images[1])[:, valid].mean())


def test_rigid_sample_shapes(rigid_sample):
    assert rigid_sample.images.shape == (3, 3, 16, 48)
    assert rigid_sample.depths.shape == (3, 16, 48)
    assert rigid_sample.masks.num_instances == 0
    assert rigid_sample.images.min() >= 0.0 and rigid_sample.images.max() <= 1.0
    assert np.all(rigid_sample.depths > 0)


def test_generation_is_deterministic():
    a = generate(11, ScenePreset.RIGID, height=16, width=48)
    b = generate(11, ScenePreset.RIGID, height=16, width=48)
    np.testing.assert_array_equal(a.images, b.images)
    np.testing.assert_array_equal(a.depths, b.depths)
    assert a.ego_12 == b.ego_12


def test_ground_truth_ego_motion_explains_frames():
    sample = generate(9, ScenePreset.RIGID, height=32, width=96,
                      camera_translation=(0.3, 0.0, 0.5), camera_rotation=(0.0, 0.0, 0.0))
    for motion, inverse in ((sample.ego_12, False), (sample.ego_23, True)):
        aligned = _residual(sample, motion, inverse=inverse)
        assert aligned < 1e-2
        assert aligned < 0.5 * _residual(sample, SE3Params.zero(), inverse=inverse)


def test_random_rigid_motion_explains_frames(rigid_sample):
    assert _residual(rigid_sample, rigid_sample.ego_12) < 1e-2
    assert _residual(rigid_sample, rigid_sample.ego_23, inverse=True) < 1e-2


def test_fronto_plane_has_constant_canonical_depth():
    sample = generate(2, ScenePreset.FRONTO, height=16, width=48, camera_rotation=(0.0, 0.0, 0.0))
    np.testing.assert_allclose(sample.depths[1], 10.0)


def test_dynamic_sample_has_consistent_objects(dynamic_sample):
    assert dynamic_sample.masks.num_instances == 1
    assert len(dynamic_sample.objects) == 1
    obj = dynamic_sample.objects[0]
    assert obj.instance == 1 and obj.category == 1
    np.testing.assert_allclose(obj.motion_12.translation, (-0.2, 0.0, 0.0))
    for frame in range(3):
        assert dynamic_sample.masks.frame(frame)[0].any()
    assert apparent_motion(dynamic_sample)[1] > 0.2


def test_degenerate_objects_show_no_apparent_motion():
    sample = generate(5, ScenePreset.DEGENERATE, height=32, width=96)
    shifts = apparent_motion(sample)
    assert shifts
    assert all(obj.co_moving for obj in sample.objects[:1])
    assert shifts[1] < 0.5


def test_samples_use_strided_seeds():
    samples = generate_samples(2, seed=4, preset=ScenePreset.RIGID, height=16, width=48)
    assert samples[0].seed >= 4 and samples[1].seed >= 4 + SAMPLE_SEED_STRIDE


def test_sequence_has_poses_per_frame():
    sequence = generate_sequence(6, length=5, config=scene_config_for(ScenePreset.RIGID, height=16, width=48))
    assert len(sequence) == 5
    assert len(sequence.poses) == 5
    np.testing.assert_allclose(sequence.poses[2].matrix, np.eye(4), atol=1e-12)
    assert len(list(sequence.windows())) == 3


def test_sequence_needs_three_frames():
    with pytest.raises(DatasetError):
        generate_sequence(0, length=2)


def test_dynamic_generation_needs_objects():
    config = SceneConfig(height=16, width=48, num_objects=(0, 0))
    with pytest.raises(DatasetError):
        generate_dynamic(0, config)


def test_zero_contrast_texture_is_rejected(rng):
    with pytest.raises(DatasetError):
        make_texture(rng, (8, 8), SceneConfig(texture_contrast=0.0))


def test_scene_config_validates_ranges():
    with pytest.raises(ValueError):
        SceneConfig(height=20)
    with pytest.raises(ValueError):
        SceneConfig(min_depth=60.0)
    with pytest.raises(ValueError):
        SceneConfig(object_size=(2.0, 1.0))


def test_rigid_generator_ignores_object_settings(rigid_sample):
    config = SceneConfig(height=16, width=48, num_objects=(2, 3))
    sample = generate_rigid(7, config)
    assert sample.masks.num_instances == 0
    assert sample.objects == []
    np.testing.assert_array_equal(sample.images, rigid_sample.images)


@pytest.fixture(scope="module")
def sliding_object():
    # static camera, one box at depth 4 translating by 0.2 per frame
    return generate(
        1,
        ScenePreset.DYNAMIC,
        height=64,
        width=192,
        camera_translation=(0.0, 0.0, 0.0),
        camera_rotation=(0.0, 0.0, 0.0),
        object_depths=(4.0,),
        object_centers=((96.0, 32.0),),
        object_velocities=((0.2, 0.0, 0.0),),
        object_size=(1.5, 1.5),
    )


def test_object_centroid_shift_matches_pinhole(sliding_object):
    expected = sliding_object.intrinsics.fx * 0.2 / 4.0
    assert apparent_motion(sliding_object)[1] == pytest.approx(expected, abs=0.5)


def test_object_motion_carries_mask_onto_next_frame(sliding_object):
    obj = sliding_object.objects[0]
    mask_2 = sliding_object.masks.frame(1)[0]
    mask_3 = sliding_object.masks.frame(2)[0]
    coords, _ = warp_coordinates(sliding_object.depths[1], obj.motion_23, sliding_object.intrinsics, inverse=True)
    cols = np.rint(coords.data[0][mask_2]).astype(int)
    rows = np.rint(coords.data[1][mask_2]).astype(int)
    inside = (cols >= 0) & (cols < mask_3.shape[1]) & (rows >= 0) & (rows < mask_3.shape[0])
    moved = np.zeros_like(mask_3)
    moved[rows[inside], cols[inside]] = True
    iou = (moved & mask_3).sum() / (moved | mask_3).sum()
    assert iou > 0.9
