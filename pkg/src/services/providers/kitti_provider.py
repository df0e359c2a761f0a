"""Converter for real driving sequences that are already rasterized.

Nothing is downloaded and no LIDAR is projected. The source directory must hold::

    <source>/image/*.png     RGB frames, sorted by file name
    <source>/depth/*.png     optional; 16-bit, depth = value / 256, 0 = invalid
    <source>/mask/*.png      optional; instance-index images
    <source>/calib.txt       a ``P2:`` line (3x4 projection) or a ``K:`` line (3x3)
    <source>/poses.txt       optional; one row-major 3x4 camera-to-world pose per frame

and is written out as one ``sequence`` entry of the canonical dataset directory,
resized to the requested size.
"""
import glob
import logging
import os
from typing import Any, Dict, List, Optional, Tuple

import numpy as np
from PIL import Image

from src.models.geometry import Intrinsics, Pose4x4
from src.models.scene import DatasetEntry, FrameSequence
from src.services.providers.base_provider import DatasetProvider
from src.services.providers.directory_provider import DirectoryProvider
from src.utils.errors import DatasetError

logger = logging.getLogger(__name__)

DEPTH_PNG_SCALE = 256.0


def read_calibration(path: str) -> Intrinsics:
    if not os.path.isfile(path):
        raise DatasetError(f"calibration file not found: {path}")
    with open(path, "r") as f:
        for line in f:
            key, _, rest = line.partition(":")
            try:
                values = [float(v) for v in rest.split()]
            except ValueError:
                continue
            if key.strip() == "P2" and len(values) == 12:
                P = np.array(values).reshape(3, 4)
                return Intrinsics(fx=P[0, 0], fy=P[1, 1], cx=P[0, 2], cy=P[1, 2])
            if key.strip() == "K" and len(values) == 9:
                return Intrinsics.from_line(" ".join(rest.split()))
    raise DatasetError(f"{path} has no P2 or K line")


def read_trajectory(path: str) -> List[Pose4x4]:
    poses = []
    with open(path, "r") as f:
        for lineno, line in enumerate(f, start=1):
            if not line.strip():
                continue
            values = [float(v) for v in line.split()]
            if len(values) != 12:
                raise DatasetError(f"{path}:{lineno}: expected 12 numbers, got {len(values)}")
            matrix = np.eye(4)
            matrix[:3] = np.array(values).reshape(3, 4)
            try:
                poses.append(Pose4x4(matrix=matrix))
            except ValueError as e:
                raise DatasetError(f"{path}:{lineno}: {e}") from e
    return poses


def resize_intrinsics(K: Intrinsics, source: Tuple[int, int], target: Tuple[int, int]) -> Intrinsics:
    """Intrinsics after resizing a (height, width) image to ``target``"""
    sy = target[0] / source[0]
    sx = target[1] / source[1]
    return Intrinsics(fx=K.fx * sx, fy=K.fy * sy, cx=(K.cx + 0.5) * sx - 0.5, cy=(K.cy + 0.5) * sy - 0.5)


def _frame_paths(directory: str) -> List[str]:
    return sorted(glob.glob(os.path.join(directory, "*.png")))


def _load(path: str, size: Tuple[int, int], resample, mode: Optional[str] = None) -> np.ndarray:
    with Image.open(path) as img:
        if mode is not None:
            img = img.convert(mode)
        return np.asarray(img.resize((size[1], size[0]), resample=resample))


class KittiProvider(DatasetProvider):
    """Converts one rasterized driving sequence into the canonical layout"""

    name = "kitti"

    def execute(self, config: Dict[str, Any], inputs: Dict[str, Any] = None) -> Dict[str, Any]:
        source = config.get("source")
        out = config.get("out")
        if not source or not out:
            raise DatasetError("both a source directory and an output directory are required")
        entry = self.convert(source, int(config.get("height", 128)), int(config.get("width", 416)),
                             name=config.get("name", "kitti_0000"))
        return DirectoryProvider().execute({"path": out, "action": "write"}, {"entries": [entry]})

    def convert(self, source: str, height: int, width: int, name: str = "kitti_0000") -> DatasetEntry:
        if height % 8 or width % 8:
            raise DatasetError(f"target size must be divisible by 8, got {height}x{width}")
        frames = _frame_paths(os.path.join(source, "image"))
        if len(frames) < 3:
            raise DatasetError(f"{source}/image holds {len(frames)} frames; at least 3 are needed")
        with Image.open(frames[0]) as first:
            original = (first.height, first.width)
        size = (height, width)
        images = np.stack([
            _load(p, size, Image.BILINEAR, mode="RGB").transpose(2, 0, 1) / 255.0 for p in frames
        ])

        depths: Optional[np.ndarray] = None
        depth_paths = _frame_paths(os.path.join(source, "depth"))
        if depth_paths:
            if len(depth_paths) != len(frames):
                raise DatasetError(f"{len(depth_paths)} depth maps for {len(frames)} frames")
            raw = np.stack([_load(p, size, Image.NEAREST).astype(np.float64) for p in depth_paths])
            depths = np.where(raw > 0, raw / DEPTH_PNG_SCALE, np.nan)

        labels: Optional[np.ndarray] = None
        mask_paths = _frame_paths(os.path.join(source, "mask"))
        if mask_paths:
            if len(mask_paths) != len(frames):
                raise DatasetError(f"{len(mask_paths)} masks for {len(frames)} frames")
            labels = np.stack([_load(p, size, Image.NEAREST).astype(np.int64) for p in mask_paths])

        poses = None
        trajectory = os.path.join(source, "poses.txt")
        if os.path.isfile(trajectory):
            poses = read_trajectory(trajectory)
            if len(poses) != len(frames):
                raise DatasetError(f"{len(poses)} poses for {len(frames)} frames")

        K = resize_intrinsics(read_calibration(os.path.join(source, "calib.txt")), original, size)
        logger.info(f"Converted {len(frames)} frames from {source} at {height}x{width}")
        sequence = FrameSequence(images=images, intrinsics=K, labels=labels, depths=depths, poses=poses, name=name)
        return DatasetEntry(name=name, kind="sequence", sequence=sequence)
