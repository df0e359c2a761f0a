from typing import Iterator, List, Optional, Sequence, Tuple

import numpy as np
from pydantic import BaseModel, ConfigDict, Field, field_validator, model_validator

from src.models.geometry import Intrinsics, Pose4x4, SE3Params
from src.utils.errors import DatasetError, ShapeError


class InstanceMasks(BaseModel):
    """Per-frame instance masks of a triplet, aligned across frames by instance index.

    ``masks`` has shape (3, N, H, W); ``categories[i]`` is the category ID of instance i.
    """

    model_config = ConfigDict(arbitrary_types_allowed=True)

    masks: np.ndarray
    categories: List[int] = Field(default_factory=list)

    @field_validator("masks", mode="before")
    @classmethod
    def _binary(cls, value):
        m = np.asarray(value)
        if m.ndim != 4 or m.shape[0] != 3:
            raise ShapeError(f"instance masks must have shape (3, N, H, W), got {m.shape}")
        if m.dtype != bool:
            if not np.all((m == 0) | (m == 1)):
                raise DatasetError("instance masks must be binary")
            m = m.astype(bool)
        return m

    @model_validator(mode="after")
    def _check(self):
        count = self.masks.shape[1]
        if not self.categories:
            self.categories = [1] * count
        if len(self.categories) != count:
            raise DatasetError(f"{count} instances but {len(self.categories)} category IDs")
        if count and np.any(self.masks.sum(axis=1) > 1):
            raise DatasetError("instance masks within a frame must be pairwise disjoint")
        return self

    @property
    def num_instances(self) -> int:
        return int(self.masks.shape[1])

    @property
    def size(self) -> Tuple[int, int]:
        return int(self.masks.shape[2]), int(self.masks.shape[3])

    def frame(self, index: int) -> np.ndarray:
        """(N, H, W) masks of frame ``index`` (0, 1 or 2)"""
        return self.masks[index]

    def to_index_images(self) -> np.ndarray:
        """(3, H, W) uint8 label images; pixel value k > 0 marks instance k"""
        h, w = self.size
        labels = np.zeros((3, h, w), dtype=np.uint8)
        for i in range(self.num_instances):
            labels[self.masks[:, i]] = i + 1
        return labels

    @staticmethod
    def from_index_images(labels: np.ndarray, categories: Optional[Sequence[int]] = None) -> "InstanceMasks":
        labels = np.asarray(labels)
        if labels.ndim != 3 or labels.shape[0] != 3:
            raise ShapeError(f"label images must have shape (3, H, W), got {labels.shape}")
        count = int(labels.max()) if labels.size else 0
        if categories is not None and len(categories) > count:
            count = len(categories)
        masks = np.stack([labels == k for k in range(1, count + 1)], axis=1) if count else \
            np.zeros((3, 0) + labels.shape[1:], dtype=bool)
        return InstanceMasks(masks=masks, categories=list(categories) if categories is not None else [])

    @staticmethod
    def empty(height: int, width: int) -> "InstanceMasks":
        return InstanceMasks(masks=np.zeros((3, 0, height, width), dtype=bool))

    def flipped(self) -> "InstanceMasks":
        return InstanceMasks(masks=self.masks[..., ::-1].copy(), categories=list(self.categories))


class ObjectMotionGT(BaseModel):
    """Ground-truth motion of one object between consecutive frames"""

    instance: int
    category: int = 1
    motion_12: SE3Params
    motion_23: SE3Params
    co_moving: bool = False


class FrameTriplet(BaseModel):
    """Three aligned RGB frames (values in [0, 1]) with intrinsics and optional masks/GT depth"""

    model_config = ConfigDict(arbitrary_types_allowed=True)

    images: np.ndarray
    intrinsics: Intrinsics
    masks: Optional[InstanceMasks] = None
    depths: Optional[np.ndarray] = None
    name: str = ""

    @field_validator("images", mode="before")
    @classmethod
    def _images(cls, value):
        images = np.asarray(value, dtype=np.float64)
        if images.ndim != 4 or images.shape[:2] != (3, 3):
            raise ShapeError(f"triplet images must have shape (3, 3, H, W), got {images.shape}")
        if not np.all(np.isfinite(images)):
            raise DatasetError("triplet images contain non-finite values")
        return images

    @model_validator(mode="after")
    def _aligned(self):
        h, w = self.size
        if self.masks is not None and self.masks.size != (h, w):
            raise ShapeError(f"masks of size {self.masks.size} do not match images of size {(h, w)}")
        if self.depths is not None:
            depths = np.asarray(self.depths, dtype=np.float64)
            if depths.shape != (3, h, w):
                raise ShapeError(f"depth maps must have shape (3, {h}, {w}), got {depths.shape}")
            self.depths = depths
        return self

    @property
    def size(self) -> Tuple[int, int]:
        return int(self.images.shape[2]), int(self.images.shape[3])

    def instance_masks(self) -> InstanceMasks:
        h, w = self.size
        return self.masks if self.masks is not None else InstanceMasks.empty(h, w)

    def flipped(self) -> "FrameTriplet":
        """Horizontally mirrored copy with matching intrinsics and masks"""
        _, w = self.size
        return FrameTriplet(
            images=self.images[..., ::-1].copy(),
            intrinsics=self.intrinsics.flipped(w),
            masks=self.masks.flipped() if self.masks is not None else None,
            depths=self.depths[..., ::-1].copy() if self.depths is not None else None,
            name=f"{self.name}_flipped" if self.name else "flipped",
        )


class SceneSample(BaseModel):
    """A synthetic triplet together with its exact ground truth"""

    model_config = ConfigDict(arbitrary_types_allowed=True)

    images: np.ndarray
    depths: np.ndarray
    intrinsics: Intrinsics
    masks: InstanceMasks
    ego_12: SE3Params
    ego_23: SE3Params
    objects: List[ObjectMotionGT] = Field(default_factory=list)
    seed: int = 0
    preset: str = "rigid"

    @model_validator(mode="after")
    def _positive_depth(self):
        if np.any(~np.isfinite(self.depths)) or np.any(self.depths <= 0):
            raise DatasetError("ground-truth depth must be finite and positive everywhere")
        return self

    def triplet(self, name: str = "") -> FrameTriplet:
        return FrameTriplet(
            images=self.images,
            intrinsics=self.intrinsics,
            masks=self.masks,
            depths=self.depths,
            name=name or f"seed_{self.seed}",
        )


class FrameSequence(BaseModel):
    """Consecutive frames of one video with optional ground truth.

    ``poses`` are camera-to-world transforms, one per frame.
    """

    model_config = ConfigDict(arbitrary_types_allowed=True)

    images: np.ndarray
    intrinsics: Intrinsics
    labels: Optional[np.ndarray] = None
    categories: List[int] = Field(default_factory=list)
    depths: Optional[np.ndarray] = None
    poses: Optional[List[Pose4x4]] = None
    name: str = "sequence"

    @field_validator("images", mode="before")
    @classmethod
    def _images(cls, value):
        images = np.asarray(value, dtype=np.float64)
        if images.ndim != 4 or images.shape[1] != 3:
            raise ShapeError(f"sequence images must have shape (T, 3, H, W), got {images.shape}")
        return images

    @model_validator(mode="after")
    def _aligned(self):
        t, _, h, w = self.images.shape
        if self.labels is not None and np.asarray(self.labels).shape != (t, h, w):
            raise ShapeError(f"label images must have shape {(t, h, w)}")
        if self.depths is not None and np.asarray(self.depths).shape != (t, h, w):
            raise ShapeError(f"depth maps must have shape {(t, h, w)}")
        if self.poses is not None and len(self.poses) != t:
            raise DatasetError(f"{t} frames but {len(self.poses)} poses")
        return self

    def __len__(self) -> int:
        return int(self.images.shape[0])

    def window(self, start: int) -> FrameTriplet:
        """The 3-frame window whose first frame is ``start``"""
        if start < 0 or start + 3 > len(self):
            raise DatasetError(f"window starting at {start} does not fit a sequence of {len(self)} frames")
        masks = None
        if self.labels is not None:
            masks = InstanceMasks.from_index_images(self.labels[start:start + 3], self.categories or None)
        depths = self.depths[start:start + 3] if self.depths is not None else None
        return FrameTriplet(
            images=self.images[start:start + 3],
            intrinsics=self.intrinsics,
            masks=masks,
            depths=depths,
            name=f"{self.name}_{start + 1:04d}",
        )

    def windows(self) -> Iterator[FrameTriplet]:
        if len(self) < 3:
            raise DatasetError(f"sequence {self.name} has {len(self)} frames; at least 3 are needed")
        for start in range(len(self) - 2):
            yield self.window(start)


class DatasetEntry(BaseModel):
    """One directory of a dataset: a triplet (three frames) or a longer sequence"""

    name: str
    kind: str = "triplet"
    sequence: FrameSequence
    seed: Optional[int] = None
    preset: Optional[str] = None
    ego_12: Optional[SE3Params] = None
    ego_23: Optional[SE3Params] = None
    objects: List[ObjectMotionGT] = Field(default_factory=list)

    def triplets(self) -> List[FrameTriplet]:
        return list(self.sequence.windows())
