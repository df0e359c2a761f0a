import numpy as np
import pytest

from src.engine.gradcheck import gradcheck
from src.engine.tensor import parameter
from src.models.geometry import Intrinsics, Pose4x4, SE3Params
from src.services.geometry import (
    compose,
    decompose,
    invert,
    motion_to_rt,
    pixel_grid,
    project,
    rotation_matrix,
    se3_rotation_tensor,
    se3_to_matrix,
    transform_points,
    unproject,
)
from src.utils.errors import GeometryError, ShapeError


def _random_motion(rng) -> SE3Params:
    return SE3Params.from_vector(np.concatenate([rng.uniform(-1, 1, 3), rng.uniform(-0.3, 0.3, 3)]))


def test_rotation_is_orthonormal(rng):
    R = rotation_matrix(*rng.uniform(-np.pi, np.pi, 3))
    np.testing.assert_allclose(R.T @ R, np.eye(3), atol=1e-12)
    assert np.linalg.det(R) == pytest.approx(1.0)


def test_rotation_composition_order():
    rx, ry, rz = 0.1, -0.2, 0.3
    Rz = rotation_matrix(0.0, 0.0, rz)
    Ry = rotation_matrix(0.0, ry, 0.0)
    Rx = rotation_matrix(rx, 0.0, 0.0)
    np.testing.assert_allclose(rotation_matrix(rx, ry, rz), Rz @ Ry @ Rx, atol=1e-12)


def test_decompose_inverts_se3_to_matrix(rng):
    for _ in range(10):
        motion = _random_motion(rng)
        np.testing.assert_allclose(decompose(se3_to_matrix(motion)).to_vector(), motion.to_vector(), atol=1e-10)


def test_invert_and_compose_give_identity(rng):
    pose = se3_to_matrix(_random_motion(rng))
    np.testing.assert_allclose(compose(pose, invert(pose)).matrix, np.eye(4), atol=1e-12)
    np.testing.assert_allclose(compose(invert(pose), pose).matrix, np.eye(4), atol=1e-12)


def test_compose_applies_right_operand_first(rng):
    a = se3_to_matrix(_random_motion(rng))
    b = se3_to_matrix(_random_motion(rng))
    point = rng.uniform(-1, 1, (3, 1))
    np.testing.assert_allclose(compose(a, b).apply(point), a.apply(b.apply(point)), atol=1e-12)


def test_pose_rejects_non_rigid_matrices():
    skewed = np.eye(4)
    skewed[0, 1] = 0.5
    with pytest.raises(ValueError):
        Pose4x4(matrix=skewed)
    reflection = np.diag([-1.0, 1.0, 1.0, 1.0])
    with pytest.raises(ValueError):
        Pose4x4(matrix=reflection)
    with pytest.raises(ValueError):
        Pose4x4(matrix=np.eye(3))


def test_se3_params_reject_non_finite_values():
    with pytest.raises(GeometryError):
        SE3Params.from_vector([0.0, np.nan, 0.0, 0.0, 0.0, 0.0])
    with pytest.raises(GeometryError):
        SE3Params.from_vector(np.zeros(5))


def test_intrinsics_validation_and_line_format():
    with pytest.raises(ValueError):
        Intrinsics(fx=0.0, fy=1.0, cx=0.0, cy=0.0)
    K = Intrinsics(fx=100.0, fy=90.0, cx=31.5, cy=15.5)
    assert Intrinsics.from_line(K.to_line()) == K
    with pytest.raises(GeometryError):
        Intrinsics.from_line("1 2 3")


def test_scaled_intrinsics_keep_pixel_centers_aligned():
    K = Intrinsics(fx=100.0, fy=100.0, cx=47.5, cy=15.5)
    half = K.scaled(1)
    assert half.fx == 50.0
    assert half.cx == pytest.approx(23.5)
    assert half.cy == pytest.approx(7.5)


def test_flipped_intrinsics_mirror_principal_point():
    K = Intrinsics(fx=10.0, fy=10.0, cx=5.0, cy=3.0)
    assert K.flipped(48).cx == 42.0


def test_unproject_then_project_returns_pixel_grid(rng, intrinsics):
    depth = rng.uniform(1.0, 10.0, (16, 48))
    coords = project(unproject(depth, intrinsics), intrinsics)
    np.testing.assert_allclose(coords.data, pixel_grid(16, 48), atol=1e-9)


def test_unproject_rejects_non_positive_depth(intrinsics):
    depth = np.ones((16, 48))
    depth[3, 4] = 0.0
    with pytest.raises(GeometryError):
        unproject(depth, intrinsics)
    with pytest.raises(ShapeError):
        unproject(np.ones((2, 16, 48)), intrinsics)


def test_tensor_rotation_matches_matrix(rng):
    motion = _random_motion(rng)
    R = se3_rotation_tensor(parameter(motion.to_vector()))
    np.testing.assert_allclose(R.data, se3_to_matrix(motion).rotation, atol=1e-12)


def test_tensor_motion_inverse_matches_value_inverse(rng):
    motion = _random_motion(rng)
    R, t = motion_to_rt(parameter(motion.to_vector()), inverse=True)
    expected = invert(motion)
    np.testing.assert_allclose(R.data, expected.rotation, atol=1e-12)
    np.testing.assert_allclose(t.data.reshape(3), expected.translation, atol=1e-12)


def test_motion_to_rt_rejects_bad_tensor():
    with pytest.raises(ShapeError):
        motion_to_rt(parameter(np.zeros(4)))


def test_transform_is_differentiable_in_motion(rng):
    params = parameter(_random_motion(rng).to_vector())
    points = rng.uniform(1.0, 3.0, (3, 2, 3))

    def loss():
        R, t = motion_to_rt(params)
        return (transform_points(points, R, t) ** 2).sum()

    assert gradcheck(loss, [params])[0] < 1e-5
