import logging
import os
from typing import Optional

import matplotlib
import numpy as np
from PIL import Image

from src.utils.errors import ShapeError

logger = logging.getLogger(__name__)

DEPTH_COLORMAP = "viridis"
FLAT_SPAN = 1e-12


def normalize(values: np.ndarray) -> np.ndarray:
    """Scale finite values to [0, 1]; non-finite values map to 0"""
    values = np.asarray(values, dtype=np.float64)
    finite = np.isfinite(values)
    if not finite.any():
        return np.zeros_like(values)
    low = float(values[finite].min())
    high = float(values[finite].max())
    if high - low < FLAT_SPAN:
        return np.zeros_like(values)
    return np.where(finite, (values - low) / (high - low), 0.0)


def colorize_inverse_depth(depth: np.ndarray, colormap: str = DEPTH_COLORMAP) -> np.ndarray:
    """(H, W, 3) uint8 image of 1/depth, normalized per image"""
    depth = np.asarray(depth, dtype=np.float64)
    if depth.ndim != 2:
        raise ShapeError(f"expected an (H, W) depth map, got {depth.shape}")
    with np.errstate(divide="ignore", invalid="ignore"):
        disparity = np.where(depth > 0, 1.0 / depth, np.nan)
    rgba = matplotlib.colormaps[colormap](normalize(disparity))
    return (rgba[..., :3] * 255.0).round().astype(np.uint8)


def grayscale_depth(depth: np.ndarray) -> np.ndarray:
    """(H, W, 3) uint8 image, near is dark"""
    gray = (normalize(depth) * 255.0).round().astype(np.uint8)
    return np.repeat(gray[..., None], 3, axis=-1)


def depth_panel(image: np.ndarray, depth: np.ndarray, colormap: str = DEPTH_COLORMAP) -> np.ndarray:
    """Input frame, grayscale depth and color-mapped inverse depth stacked vertically"""
    image = np.asarray(image, dtype=np.float64)
    if image.ndim != 3 or image.shape[0] != 3:
        raise ShapeError(f"expected a (3, H, W) image, got {image.shape}")
    if image.shape[1:] != np.shape(depth):
        raise ShapeError(f"image {image.shape[1:]} and depth {np.shape(depth)} differ in size")
    frame = (np.clip(image, 0.0, 1.0) * 255.0).round().astype(np.uint8).transpose(1, 2, 0)
    return np.concatenate([frame, grayscale_depth(depth), colorize_inverse_depth(depth, colormap)], axis=0)


def save_depth_panel(path: str, image: np.ndarray, depth: np.ndarray, colormap: Optional[str] = None) -> None:
    directory = os.path.dirname(path)
    if directory:
        os.makedirs(directory, exist_ok=True)
    Image.fromarray(depth_panel(image, depth, colormap or DEPTH_COLORMAP)).save(path, format="PNG")
    logger.debug(f"Saved depth panel to {path}")
