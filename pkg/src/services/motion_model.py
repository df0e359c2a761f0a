"""Mask algebra, masked ego-motion, per-object motion and the composite warp.

Frames are numbered 1, 2, 3 with frame 2 the reconstruction target. ``E_12``
warps frame 1 into frame 2; ``E_23`` warps frame 2 into frame 3, so frame 3 is
brought into frame 2 with its inverse. Object motions follow the same
convention relative to the ego-compensated frames.
"""
import logging
from typing import List, Optional, Sequence, Tuple, Union

import numpy as np
from pydantic import BaseModel, ConfigDict, Field

from src.engine import functional as F
from src.engine.tensor import Tensor, as_tensor, no_grad
from src.models.geometry import Intrinsics, SE3Params
from src.models.scene import InstanceMasks
from src.services.geometry import MotionLike, motion_to_rt, transform_points, unproject
from src.services.warping import WarpResult, bilinear_sample, nearest_sample, warp
from src.utils.errors import GeometryError, ShapeError

logger = logging.getLogger(__name__)


def static_mask(frame_masks: np.ndarray) -> np.ndarray:
    """Complement of the union of a frame's (N, H, W) instance masks"""
    frame_masks = np.asarray(frame_masks, dtype=bool)
    if frame_masks.ndim != 3:
        raise ShapeError(f"frame masks must have shape (N, H, W), got {frame_masks.shape}")
    return ~frame_masks.any(axis=0)


def ego_input_mask(s1: np.ndarray, s2: np.ndarray, s3: np.ndarray) -> np.ndarray:
    """Pixels static in all three frames"""
    if not (np.shape(s1)[1:] == np.shape(s2)[1:] == np.shape(s3)[1:]):
        raise ShapeError(f"mask sizes differ: {np.shape(s1)}, {np.shape(s2)}, {np.shape(s3)}")
    return static_mask(s1) & static_mask(s2) & static_mask(s3)


def _masked(image, mask: np.ndarray) -> Tensor:
    return as_tensor(image) * mask.astype(np.float64)[None]


def estimate_ego(i1, i2, i3, valid: np.ndarray, ego_net) -> Tuple[Tensor, Tensor]:
    """E_12 and E_23 from one forward pass over the masked, channel-stacked triplet"""
    stacked = F.concat([_masked(i1, valid), _masked(i2, valid), _masked(i3, valid)], axis=0)
    motions = ego_net(stacked.reshape((1,) + stacked.shape))
    return motions[0, 0], motions[0, 1]


def warp_masks(frame_masks: np.ndarray, result: WarpResult) -> np.ndarray:
    """Carry (N, H, W) source masks into the target frame with the warp's coordinates"""
    return nearest_sample(np.asarray(frame_masks, dtype=bool), result.coords.data, result.valid_mask())


class ObjectMotions(BaseModel):
    """Per-instance motions; ``present[i]`` is False where the instance was missing and its motion zeroed"""

    model_config = ConfigDict(arbitrary_types_allowed=True)

    motions_12: List[Tensor] = Field(default_factory=list)
    motions_23: List[Tensor] = Field(default_factory=list)
    present: List[bool] = Field(default_factory=list)

    def __len__(self) -> int:
        return len(self.motions_12)

    def as_params(self) -> List[Tuple[SE3Params, SE3Params]]:
        return [
            (SE3Params.from_vector(m12.data), SE3Params.from_vector(m23.data))
            for m12, m23 in zip(self.motions_12, self.motions_23)
        ]


def estimate_object_motion(
    warped_prev: WarpResult,
    target: Union[Tensor, np.ndarray],
    warped_next: WarpResult,
    masks_prev: np.ndarray,
    masks_target: np.ndarray,
    masks_next: np.ndarray,
    object_net,
) -> ObjectMotions:
    """One motion pair per instance from the ego-compensated, instance-masked triplet.

    ``masks_prev`` and ``masks_next`` are the instance masks already warped into frame 2.
    """
    count = int(np.shape(masks_target)[0])
    zero = as_tensor(np.zeros(6))
    result = ObjectMotions(motions_12=[zero] * count, motions_23=[zero] * count, present=[False] * count)
    if count == 0:
        return result

    inputs = []
    present = []
    for i in range(count):
        if not (masks_prev[i].any() and masks_target[i].any() and masks_next[i].any()):
            logger.warning(f"Instance {i + 1} is missing from a warped frame; its motion is set to zero")
            continue
        inputs.append(F.concat([
            _masked(warped_prev.image, masks_prev[i]),
            _masked(target, masks_target[i]),
            _masked(warped_next.image, masks_next[i]),
        ], axis=0))
        present.append(i)
    if not inputs:
        return result

    motions = object_net(F.stack(inputs))
    for row, i in enumerate(present):
        result.motions_12[i] = motions[row, 0]
        result.motions_23[i] = motions[row, 1]
        result.present[i] = True
    return result


def _detached(motion: MotionLike) -> MotionLike:
    return motion.detach() if isinstance(motion, Tensor) else motion


def full_warp(
    source: Union[Tensor, np.ndarray],
    depth: Union[Tensor, np.ndarray],
    ego: MotionLike,
    object_motions: Sequence[MotionLike],
    masks: InstanceMasks,
    K: Intrinsics,
    inverse: bool = False,
    ego_result: Optional[WarpResult] = None,
) -> WarpResult:
    """Composite reconstruction of frame 2: ego warp on V plus one object warp per O_i(S_2).

    Object warps resample the ego-warped image. They read it through a copy of the
    ego motion that is off the tape, so ego parameters only receive gradient from
    static pixels. Pixels outside V and every object mask are uncovered: 0 and invalid.
    """
    if len(object_motions) != masks.num_instances:
        raise ShapeError(f"{len(object_motions)} object motions for {masks.num_instances} instances")
    if ego_result is None:
        ego_result = warp(source, depth, ego, K, inverse=inverse)
    V = ego_input_mask(masks.frame(0), masks.frame(1), masks.frame(2))
    composite = ego_result.image * V.astype(np.float64)[None]
    valid = ego_result.valid_mask() & V
    covered = V.copy()

    if masks.num_instances:
        if isinstance(ego, Tensor) and ego.requires_grad:
            base = warp(source, depth, _detached(ego), K, inverse=inverse)
        else:
            base = ego_result
        base_valid = base.valid.astype(np.float64)
        for i, motion in enumerate(object_motions):
            region = masks.frame(1)[i]
            object_result = warp(base.image, depth, motion, K, inverse=inverse)
            with no_grad():
                coverage, _ = bilinear_sample(base_valid, object_result.coords.data)
            object_valid = object_result.valid_mask() & (coverage.data[0] > 1.0 - 1e-9)
            composite = composite + object_result.image * region.astype(np.float64)[None]
            valid |= object_valid & region
            covered |= region

    uncovered = float(1.0 - covered.mean())
    if uncovered > 0:
        logger.debug(f"Composite warp leaves {uncovered:.2%} of pixels uncovered")
    return WarpResult(
        image=composite,
        valid=valid[None].astype(np.float64),
        coords=ego_result.coords,
        uncovered_fraction=uncovered,
    )


def object_motion_vectors(
    motion: MotionLike,
    depth: Union[Tensor, np.ndarray],
    mask: np.ndarray,
    K: Intrinsics,
) -> Tuple[np.ndarray, np.ndarray]:
    """Mean 3D displacement of the object's points under ``motion`` and its unit direction"""
    mask = np.asarray(mask, dtype=bool)
    if not mask.any():
        raise GeometryError("cannot compute a motion vector for an empty mask")
    with no_grad():
        points = unproject(as_tensor(depth).detach(), K)
        R, t = motion_to_rt(_detached(motion))
        moved = transform_points(points, R, t)
    displacement = (moved.data - points.data)[:, mask].mean(axis=1)
    norm = np.linalg.norm(displacement)
    unit = displacement / norm if norm > 1e-12 else np.zeros(3)
    return displacement, unit
