"""Rigid transforms and the pinhole camera.

Camera frame: +x right, +y down, +z forward. Pixel centers sit on integer
coordinates. Rotations compose as R = Rz(r_z) @ Ry(r_y) @ Rx(r_x).
"""
import logging
from typing import Tuple, Union

import numpy as np

from src.engine import functional as F
from src.engine.tensor import Tensor, as_tensor
from src.models.geometry import Intrinsics, Pose4x4, SE3Params
from src.utils.errors import GeometryError, ShapeError

logger = logging.getLogger(__name__)

MotionLike = Union[SE3Params, Pose4x4, Tensor, np.ndarray]


def rotation_matrix(rx: float, ry: float, rz: float) -> np.ndarray:
    cx, sx = np.cos(rx), np.sin(rx)
    cy, sy = np.cos(ry), np.sin(ry)
    cz, sz = np.cos(rz), np.sin(rz)
    Rx = np.array([[1.0, 0.0, 0.0], [0.0, cx, -sx], [0.0, sx, cx]])
    Ry = np.array([[cy, 0.0, sy], [0.0, 1.0, 0.0], [-sy, 0.0, cy]])
    Rz = np.array([[cz, -sz, 0.0], [sz, cz, 0.0], [0.0, 0.0, 1.0]])
    return Rz @ Ry @ Rx


def se3_to_matrix(p: SE3Params) -> Pose4x4:
    values = p.to_vector()
    if not np.all(np.isfinite(values)):
        raise GeometryError(f"SE3 parameters must be finite, got {values.tolist()}")
    return Pose4x4.from_rotation_translation(rotation_matrix(*values[3:]), values[:3])


def decompose(pose: Pose4x4) -> SE3Params:
    """Recover (t, Euler angles) from a pose; exact inverse of se3_to_matrix for |r_y| < pi/2"""
    R = pose.rotation
    ry = np.arcsin(np.clip(-R[2, 0], -1.0, 1.0))
    rx = np.arctan2(R[2, 1], R[2, 2])
    rz = np.arctan2(R[1, 0], R[0, 0])
    return SE3Params(translation=tuple(pose.translation.tolist()), rotation=(float(rx), float(ry), float(rz)))


def as_pose(motion: Union[SE3Params, Pose4x4]) -> Pose4x4:
    if isinstance(motion, Pose4x4):
        return motion
    if isinstance(motion, SE3Params):
        return se3_to_matrix(motion)
    raise GeometryError(f"expected SE3Params or Pose4x4, got {type(motion).__name__}")


def invert(pose: Union[SE3Params, Pose4x4]) -> Pose4x4:
    pose = as_pose(pose)
    R_t = pose.rotation.T
    return Pose4x4.from_rotation_translation(R_t, -R_t @ pose.translation)


def compose(a: Union[SE3Params, Pose4x4], b: Union[SE3Params, Pose4x4]) -> Pose4x4:
    """a after b: points are transformed by b first"""
    return as_pose(a) @ as_pose(b)


def translation_pose(t) -> Pose4x4:
    return Pose4x4.from_rotation_translation(np.eye(3), t)


# -- differentiable versions for network outputs --------------------------------

def se3_rotation_tensor(params: Tensor) -> Tensor:
    """(3, 3) rotation built from the last three entries of a (6,) tensor"""
    rx, ry, rz = params[3], params[4], params[5]
    cx, sx = F.cos(rx), F.sin(rx)
    cy, sy = F.cos(ry), F.sin(ry)
    cz, sz = F.cos(rz), F.sin(rz)
    entries = [
        cz * cy, cz * sy * sx - sz * cx, cz * sy * cx + sz * sx,
        sz * cy, sz * sy * sx + cz * cx, sz * sy * cx - cz * sx,
        -sy, cy * sx, cy * cx,
    ]
    return F.stack(entries).reshape(3, 3)


def motion_to_rt(motion: MotionLike, inverse: bool = False) -> Tuple[Tensor, Tensor]:
    """Rotation (3, 3) and translation (3, 1) tensors for any motion representation.

    A (6,) tensor stays on the tape; value types become constants.
    """
    if isinstance(motion, (SE3Params, Pose4x4)):
        pose = invert(motion) if inverse else as_pose(motion)
        return as_tensor(pose.rotation.copy()), as_tensor(pose.translation.reshape(3, 1).copy())
    params = as_tensor(motion)
    if params.shape != (6,):
        raise ShapeError(f"motion tensor must have shape (6,), got {params.shape}")
    R = se3_rotation_tensor(params)
    t = params[0:3].reshape(3, 1)
    if inverse:
        R_t = R.transpose()
        return R_t, -(R_t @ t)
    return R, t


def transform_points(points: Tensor, R: Tensor, t: Tensor) -> Tensor:
    """Apply x -> R x + t to (3, ...) points"""
    points = as_tensor(points)
    flat = points.reshape(3, -1)
    return (R @ flat + t).reshape(points.shape)


def pixel_grid(height: int, width: int) -> np.ndarray:
    """(2, H, W) array of (x, y) pixel coordinates"""
    ys, xs = np.meshgrid(np.arange(height, dtype=np.float64), np.arange(width, dtype=np.float64), indexing="ij")
    return np.stack([xs, ys])


def unproject(depth: Union[Tensor, np.ndarray], K: Intrinsics) -> Tensor:
    """Camera-frame points (3, H, W) of a depth map"""
    depth = as_tensor(depth)
    if depth.ndim != 2:
        raise ShapeError(f"depth must have shape (H, W), got {depth.shape}")
    if np.any(depth.data <= 0) or not np.all(np.isfinite(depth.data)):
        raise GeometryError("depth must be finite and strictly positive to unproject")
    grid = pixel_grid(*depth.shape)
    rays = np.stack([
        (grid[0] - K.cx) / K.fx,
        (grid[1] - K.cy) / K.fy,
        np.ones(depth.shape),
    ])
    return depth.reshape((1,) + depth.shape) * rays


def project(points: Union[Tensor, np.ndarray], K: Intrinsics) -> Tensor:
    """Pixel coordinates (2, H, W) of camera-frame points (3, H, W).

    Points with Z near zero go through the guarded division and are expected to
    be masked by the caller.
    """
    points = as_tensor(points)
    if points.shape[0] != 3:
        raise ShapeError(f"points must have 3 leading channels, got {points.shape}")
    X, Y, Z = points[0], points[1], points[2]
    x = K.fx * X / Z + K.cx
    y = K.fy * Y / Z + K.cy
    return F.stack([x, y])
