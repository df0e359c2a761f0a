"""Inverse warping: reconstruct a target frame by sampling a source frame.

``E`` maps target-frame camera points into source-frame camera points, so the
sample position of target pixel p is K_src E (D_tgt(p) K^-1 p).
"""
import logging
from typing import Optional, Tuple, Union

import numpy as np
from pydantic import BaseModel, ConfigDict

from src.engine import functional as F
from src.engine.tensor import Tensor, as_tensor
from src.models.geometry import Intrinsics
from src.services.geometry import MotionLike, motion_to_rt, project, transform_points, unproject
from src.utils.errors import ShapeError

logger = logging.getLogger(__name__)

# Coordinates may overshoot the border by this much and still count as inside
BORDER_TOLERANCE = 1e-6
# Transformed points closer than this to the camera plane are invalid
MIN_DEPTH = 1e-3


class WarpResult(BaseModel):
    model_config = ConfigDict(arbitrary_types_allowed=True)

    image: Tensor
    valid: np.ndarray
    coords: Tensor
    uncovered_fraction: float = 0.0

    def valid_mask(self) -> np.ndarray:
        """(H, W) boolean validity"""
        return self.valid[0] > 0.5


def _inside(coords: np.ndarray, height: int, width: int) -> np.ndarray:
    x, y = coords[0], coords[1]
    return (
        np.isfinite(x) & np.isfinite(y)
        & (x >= -BORDER_TOLERANCE) & (x <= width - 1 + BORDER_TOLERANCE)
        & (y >= -BORDER_TOLERANCE) & (y <= height - 1 + BORDER_TOLERANCE)
    )


def bilinear_sample(image: Union[Tensor, np.ndarray], coords: Union[Tensor, np.ndarray]) -> Tuple[Tensor, np.ndarray]:
    """Sample (C, H, W) ``image`` at (2, H', W') pixel ``coords`` holding (x, y).

    Returns the sampled (C, H', W') tensor and an (H', W') validity mask; samples
    outside the image are 0 and invalid.
    """
    image = as_tensor(image)
    coords = as_tensor(coords)
    if image.ndim != 3 or coords.ndim != 3 or coords.shape[0] != 2:
        raise ShapeError(f"bilinear_sample expects (C, H, W) and (2, H', W'), got {image.shape} and {coords.shape}")
    c, h, w = image.shape
    if h < 2 or w < 2:
        raise ShapeError(f"source image must be at least 2x2, got {h}x{w}")

    valid = _inside(coords.data, h, w)
    x = F.clamp(coords[0], 0.0, w - 1.0)
    y = F.clamp(coords[1], 0.0, h - 1.0)
    with np.errstate(invalid="ignore"):
        x0 = np.clip(np.floor(np.nan_to_num(x.data)), 0, w - 2).astype(np.int64)
        y0 = np.clip(np.floor(np.nan_to_num(y.data)), 0, h - 2).astype(np.int64)
    wx = x - x0.astype(np.float64)
    wy = y - y0.astype(np.float64)

    flat = image.reshape(c, h * w)
    top_left = flat[:, y0 * w + x0]
    top_right = flat[:, y0 * w + x0 + 1]
    bottom_left = flat[:, (y0 + 1) * w + x0]
    bottom_right = flat[:, (y0 + 1) * w + x0 + 1]

    top = top_left * (1.0 - wx) + top_right * wx
    bottom = bottom_left * (1.0 - wx) + bottom_right * wx
    sampled = top * (1.0 - wy) + bottom * wy
    return F.where(valid[None], sampled, 0.0), valid


def nearest_sample(labels: np.ndarray, coords: np.ndarray, valid: Optional[np.ndarray] = None) -> np.ndarray:
    """Nearest-neighbour lookup of (..., H, W) ``labels``; invalid positions read 0/False"""
    h, w = labels.shape[-2:]
    inside = _inside(coords, h, w) if valid is None else valid
    with np.errstate(invalid="ignore"):
        xi = np.clip(np.rint(np.nan_to_num(coords[0])), 0, w - 1).astype(np.int64)
        yi = np.clip(np.rint(np.nan_to_num(coords[1])), 0, h - 1).astype(np.int64)
    picked = labels[..., yi, xi]
    return np.where(inside, picked, np.zeros((), dtype=labels.dtype))


def warp_coordinates(
    depth: Union[Tensor, np.ndarray],
    motion: MotionLike,
    K: Intrinsics,
    source_intrinsics: Optional[Intrinsics] = None,
    inverse: bool = False,
) -> Tuple[Tensor, np.ndarray]:
    """Source pixel coordinates (2, H, W) for every target pixel, and the positive-depth mask"""
    points = unproject(depth, K)
    R, t = motion_to_rt(motion, inverse=inverse)
    moved = transform_points(points, R, t)
    in_front = moved.data[2] > MIN_DEPTH
    coords = project(moved, source_intrinsics or K)
    return coords, in_front


def warp(
    source: Union[Tensor, np.ndarray],
    depth: Union[Tensor, np.ndarray],
    motion: MotionLike,
    K: Intrinsics,
    source_intrinsics: Optional[Intrinsics] = None,
    inverse: bool = False,
) -> WarpResult:
    """Reconstruct the target frame from ``source`` using target ``depth`` and ``motion``.

    With ``inverse`` the motion is inverted first (on the tape when it is a tensor).
    """
    source = as_tensor(source)
    depth = as_tensor(depth)
    if source.ndim != 3:
        raise ShapeError(f"source image must have shape (C, H, W), got {source.shape}")
    if source_intrinsics is None and source.shape[1:] != depth.shape:
        raise ShapeError(f"source image {source.shape} and depth {depth.shape} differ in size")
    coords, in_front = warp_coordinates(depth, motion, K, source_intrinsics, inverse=inverse)
    sampled, inside = bilinear_sample(source, coords)
    valid = inside & in_front
    image = F.where(valid[None], sampled, 0.0)
    return WarpResult(image=image, valid=valid[None].astype(np.float64), coords=coords)
