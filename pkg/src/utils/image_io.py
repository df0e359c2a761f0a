"""Frame, mask and depth file formats of the dataset directory"""
import os
import re
from typing import Optional

import numpy as np
from PIL import Image

from src.utils.errors import DatasetError

PFM_HEADER = re.compile(rb"^(PF|Pf)\s+(\d+)\s+(\d+)\s+([-+0-9.eE]+)\s")


def _ensure_parent(path: str) -> None:
    directory = os.path.dirname(path)
    if directory:
        os.makedirs(directory, exist_ok=True)


def write_rgb(path: str, image: np.ndarray) -> None:
    """Write a (3, H, W) image in [0, 1] as an 8-bit RGB PNG"""
    image = np.asarray(image, dtype=np.float64)
    if image.ndim != 3 or image.shape[0] != 3:
        raise DatasetError(f"expected a (3, H, W) image, got {image.shape}")
    pixels = np.round(np.clip(image, 0.0, 1.0) * 255.0).astype(np.uint8).transpose(1, 2, 0)
    _ensure_parent(path)
    Image.fromarray(pixels).save(path, format="PNG")


def read_rgb(path: str) -> np.ndarray:
    """(3, H, W) float64 image in [0, 1]"""
    try:
        with Image.open(path) as img:
            pixels = np.asarray(img.convert("RGB"), dtype=np.float64)
    except (OSError, ValueError) as e:
        raise DatasetError(f"cannot read image {path}: {e}") from e
    return pixels.transpose(2, 0, 1) / 255.0


def write_labels(path: str, labels: np.ndarray) -> None:
    """Write an (H, W) instance-index image; 0 is background"""
    labels = np.asarray(labels)
    if labels.ndim != 2:
        raise DatasetError(f"expected an (H, W) label image, got {labels.shape}")
    if labels.min(initial=0) < 0 or labels.max(initial=0) > 255:
        raise DatasetError("instance indices must fit in 0..255")
    _ensure_parent(path)
    Image.fromarray(labels.astype(np.uint8)).save(path, format="PNG")


def read_labels(path: str) -> np.ndarray:
    try:
        with Image.open(path) as img:
            if img.mode not in ("L", "P", "I", "I;16"):
                raise DatasetError(f"{path}: instance masks must be single-channel, got mode {img.mode}")
            return np.asarray(img, dtype=np.int64)
    except OSError as e:
        raise DatasetError(f"cannot read mask {path}: {e}") from e


def write_pfm(path: str, depth: np.ndarray, invalid: Optional[np.ndarray] = None) -> None:
    """Write an (H, W) map as a little-endian 32-bit PFM; ``invalid`` pixels become NaN"""
    depth = np.array(depth, dtype=np.float32)
    if depth.ndim != 2:
        raise DatasetError(f"expected an (H, W) depth map, got {depth.shape}")
    if invalid is not None:
        depth[np.asarray(invalid, dtype=bool)] = np.nan
    h, w = depth.shape
    _ensure_parent(path)
    with open(path, "wb") as f:
        f.write(f"Pf\n{w} {h}\n-1.0\n".encode("ascii"))
        # rows are stored bottom to top
        f.write(np.ascontiguousarray(depth[::-1]).astype("<f4").tobytes())


def read_pfm(path: str) -> np.ndarray:
    """(H, W) float64 map; NaN marks invalid pixels"""
    try:
        with open(path, "rb") as f:
            raw = f.read()
    except OSError as e:
        raise DatasetError(f"cannot read depth {path}: {e}") from e
    match = PFM_HEADER.match(raw)
    if match is None:
        raise DatasetError(f"{path}: not a PFM file")
    kind, w, h, scale = match.group(1), int(match.group(2)), int(match.group(3)), float(match.group(4))
    if kind != b"Pf":
        raise DatasetError(f"{path}: only single-channel PFM is supported")
    dtype = "<f4" if scale < 0 else ">f4"
    payload = raw[match.end():]
    if len(payload) != w * h * 4:
        raise DatasetError(f"{path}: expected {w * h * 4} bytes of depth, found {len(payload)}")
    values = np.frombuffer(payload, dtype=dtype).reshape(h, w)[::-1]
    return values.astype(np.float64)
