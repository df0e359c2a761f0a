"""Training objectives.

Image tensors are (C, H, W) with values in [0, 1]; depth maps are (H, W).
"""
import logging
from typing import Dict, List, Optional, Sequence, Tuple, Union

import numpy as np
from pydantic import BaseModel, ConfigDict

from src.engine import functional as F
from src.engine.conv import avg_pool2d
from src.engine.tensor import Tensor, as_tensor, parameter
from src.models.geometry import Intrinsics
from src.models.settings import LossWeights
from src.services.warping import WarpResult
from src.utils.errors import DatasetError, ShapeError

logger = logging.getLogger(__name__)

SSIM_C1 = 0.01 ** 2
SSIM_C2 = 0.03 ** 2
NUM_SCALES = 4
MIN_PRIOR = 1e-3


def _channel_mean_abs(a: Tensor, b: Tensor) -> Tensor:
    if a.shape != b.shape:
        raise ShapeError(f"cannot compare images of shapes {a.shape} and {b.shape}")
    return F.absolute(a - b).mean(axis=0)


def min_combine(map_prev: Tensor, map_next: Tensor, valid_prev: np.ndarray, valid_next: np.ndarray) -> Tensor:
    """Per-pixel minimum of two (H, W) loss maps under their validity masks.

    A pixel valid in one warp only takes that warp's value; a pixel valid in neither is 0.
    """
    both = valid_prev & valid_next
    single = F.where(valid_prev, map_prev, F.where(valid_next, map_next, 0.0))
    return F.where(both, F.minimum(map_prev, map_next), single)


def reconstruction_loss(warp_prev: WarpResult, warp_next: WarpResult, target: Union[Tensor, np.ndarray]) -> Tensor:
    """Min-reprojection L1 over two warps, averaged over all pixels"""
    target = as_tensor(target)
    residual_prev = _channel_mean_abs(warp_prev.image, target)
    residual_next = _channel_mean_abs(warp_next.image, target)
    combined = min_combine(residual_prev, residual_next, warp_prev.valid_mask(), warp_next.valid_mask())
    return combined.mean()


def ssim_map(a: Union[Tensor, np.ndarray], b: Union[Tensor, np.ndarray]) -> Tensor:
    """(H, W) map of (1 - SSIM) / 2 over 3x3 windows, averaged over channels"""
    a = as_tensor(a)
    b = as_tensor(b)
    if a.shape != b.shape or a.ndim != 3:
        raise ShapeError(f"ssim expects two (C, H, W) tensors of equal shape, got {a.shape} and {b.shape}")
    a = F.pad2d(a, 1, mode="reflect")
    b = F.pad2d(b, 1, mode="reflect")

    def pool(x: Tensor) -> Tensor:
        return avg_pool2d(x, kernel=3, stride=1)

    mu_a = pool(a)
    mu_b = pool(b)
    sigma_a = pool(a * a) - mu_a * mu_a
    sigma_b = pool(b * b) - mu_b * mu_b
    sigma_ab = pool(a * b) - mu_a * mu_b

    numerator = (2.0 * mu_a * mu_b + SSIM_C1) * (2.0 * sigma_ab + SSIM_C2)
    denominator = (mu_a * mu_a + mu_b * mu_b + SSIM_C1) * (sigma_a + sigma_b + SSIM_C2)
    dissimilarity = F.clamp((1.0 - numerator / denominator) / 2.0, 0.0, 1.0)
    return dissimilarity.mean(axis=0)


def ssim_loss(a: Union[Tensor, np.ndarray], b: Union[Tensor, np.ndarray]) -> Tensor:
    return ssim_map(a, b).mean()


def min_ssim_loss(warp_prev: WarpResult, warp_next: WarpResult, target: Union[Tensor, np.ndarray]) -> Tensor:
    """SSIM term of both warps, min-combined per pixel like the L1 term"""
    target = as_tensor(target)
    combined = min_combine(
        ssim_map(warp_prev.image, target),
        ssim_map(warp_next.image, target),
        warp_prev.valid_mask(),
        warp_next.valid_mask(),
    )
    return combined.mean()


def normalize_depth(depth: Union[Tensor, np.ndarray]) -> Tensor:
    depth = as_tensor(depth)
    return depth / depth.mean()


def smoothness_loss(depth: Union[Tensor, np.ndarray], image: Union[Tensor, np.ndarray]) -> Tensor:
    """Edge-aware first-order smoothness of mean-normalized disparity"""
    depth = as_tensor(depth)
    image = as_tensor(image)
    if depth.ndim != 2 or image.ndim != 3 or image.shape[1:] != depth.shape:
        raise ShapeError(f"depth {depth.shape} and image {image.shape} are not aligned")
    disparity = normalize_depth(1.0 / depth)
    grad_dx = F.absolute(disparity[:, 1:] - disparity[:, :-1])
    grad_dy = F.absolute(disparity[1:, :] - disparity[:-1, :])
    image_dx = F.absolute(image[:, :, 1:] - image[:, :, :-1]).mean(axis=0)
    image_dy = F.absolute(image[:, 1:, :] - image[:, :-1, :]).mean(axis=0)
    return (grad_dx * F.exp(-image_dx)).mean() + (grad_dy * F.exp(-image_dy)).mean()


class HeightPriors:
    """Learnable positive height prior per object category (category IDs start at 1)"""

    def __init__(self, num_categories: int = 1, initial: float = 1.0):
        if num_categories < 1:
            raise ValueError(f"need at least one category, got {num_categories}")
        self.values = parameter(np.full(num_categories, float(initial)), name="height_priors")

    @property
    def num_categories(self) -> int:
        return self.values.size

    def prior(self, category: int) -> Tensor:
        if not 1 <= category <= self.num_categories:
            raise DatasetError(f"category {category} has no height prior (known: 1..{self.num_categories})")
        return self.values[category - 1]

    def project(self) -> None:
        self.values.data = np.maximum(self.values.data, MIN_PRIOR)

    def parameters(self) -> List[Tensor]:
        return [self.values]


def mask_height(mask: np.ndarray) -> int:
    """Vertical extent of the mask's bounding box in pixels"""
    rows = np.flatnonzero(mask.any(axis=1))
    if rows.size == 0:
        return 0
    return int(rows[-1] - rows[0] + 1)


def approximate_depth(prior, height: int, fy: float):
    """Pinhole depth of an object of metric height ``prior`` spanning ``height`` pixels"""
    return fy * prior / float(height)


def size_constraint_terms(
    depth: Union[Tensor, np.ndarray],
    masks: np.ndarray,
    categories: Sequence[int],
    priors: HeightPriors,
    K: Intrinsics,
) -> Tuple[Tensor, int]:
    """Object-size loss and the number of instances skipped for having an empty mask"""
    depth = as_tensor(depth)
    masks = np.asarray(masks, dtype=bool)
    if masks.ndim != 3 or masks.shape[1:] != depth.shape:
        raise ShapeError(f"masks {masks.shape} do not match depth {depth.shape}")
    mean_depth = depth.mean()
    total: Optional[Tensor] = None
    skipped = 0
    for index in range(masks.shape[0]):
        mask = masks[index]
        count = int(mask.sum())
        if count == 0:
            skipped += 1
            continue
        object_depth = (depth * mask.astype(np.float64)).sum() / float(count)
        target = approximate_depth(priors.prior(categories[index]), mask_height(mask), K.fy)
        term = F.absolute(object_depth - target) / mean_depth
        total = term if total is None else total + term
    if skipped:
        logger.warning(f"Skipped {skipped} empty instance mask(s) in the size constraint")
    return (total if total is not None else as_tensor(0.0)), skipped


def size_constraint_loss(depth, masks, categories, priors: HeightPriors, K: Intrinsics) -> Tensor:
    return size_constraint_terms(depth, masks, categories, priors, K)[0]


class ScaleLosses(BaseModel):
    """Loss components of one pyramid scale"""

    model_config = ConfigDict(arbitrary_types_allowed=True)

    reconstruction: Union[Tensor, float] = 0.0
    ssim: Union[Tensor, float] = 0.0
    smoothness: Union[Tensor, float] = 0.0


def _value(x) -> float:
    return x.item() if isinstance(x, Tensor) else float(x)


def total_loss(
    scales: Sequence[ScaleLosses],
    weights: LossWeights,
    size_constraint: Union[Tensor, float] = 0.0,
    l2: Union[Tensor, float] = 0.0,
) -> Tuple[Tensor, Dict[str, float]]:
    """Weighted multi-scale objective and its unweighted component sums.

    Every scale contributes all three photometric terms; smoothness at scale i is
    further divided by 2^i.
    """
    if len(scales) != NUM_SCALES:
        raise ShapeError(f"total loss needs exactly {NUM_SCALES} scales, got {len(scales)}")
    total = as_tensor(0.0)
    parts = {"rec": 0.0, "ssim": 0.0, "sm": 0.0}
    for i, scale in enumerate(scales):
        smooth_factor = 1.0 / 2 ** i
        total = total + weights.reconstruction * scale.reconstruction
        total = total + weights.ssim * scale.ssim
        total = total + weights.smoothness * smooth_factor * scale.smoothness
        parts["rec"] += _value(scale.reconstruction)
        parts["ssim"] += _value(scale.ssim)
        parts["sm"] += smooth_factor * _value(scale.smoothness)
    total = total + weights.size_constraint * size_constraint + weights.l2_reg * l2
    parts["sc"] = _value(size_constraint)
    parts["l2"] = _value(l2)
    parts["total"] = total.item()
    return total, parts
