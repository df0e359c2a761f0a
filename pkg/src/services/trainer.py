import csv
import logging
import os
from typing import Dict, List, Optional, Sequence, Tuple, Union

import numpy as np
from pydantic import BaseModel, ConfigDict, Field
from tqdm import tqdm

from src.engine.conv import avg_pool2d
from src.engine.optim import Adam
from src.engine.tensor import Tensor, no_grad
from src.models.geometry import Intrinsics, SE3Params
from src.models.scene import FrameSequence, FrameTriplet, InstanceMasks
from src.models.settings import RefineConfig, TrainConfig, TrainMode
from src.services.losses import (
    NUM_SCALES,
    ScaleLosses,
    min_ssim_loss,
    reconstruction_loss,
    size_constraint_terms,
    smoothness_loss,
    total_loss,
)
from src.services.motion_model import (
    ObjectMotions,
    ego_input_mask,
    estimate_ego,
    estimate_object_motion,
    full_warp,
    warp_masks,
)
from src.services.networks import ModelBundle, l2_penalty
from src.services.warping import warp
from src.utils.errors import DatasetError, TrainingError

logger = logging.getLogger(__name__)

LOSS_CURVE_COLUMNS = ("step", "L_rec", "L_ssim", "L_sm", "L_sc", "total")


def image_pyramid(images: np.ndarray, levels: int = NUM_SCALES) -> List[np.ndarray]:
    """Images at full resolution followed by successive 2x average-pooled copies"""
    pyramid = [np.asarray(images, dtype=np.float64)]
    with no_grad():
        for _ in range(levels - 1):
            pyramid.append(avg_pool2d(pyramid[-1], kernel=2, stride=2).data)
    return pyramid


def downsample_masks(masks: np.ndarray, level: int) -> np.ndarray:
    """Shrink (..., H, W) boolean masks by 2^level; a cell is set when most of it is covered"""
    masks = np.asarray(masks, dtype=bool)
    factor = 2 ** level
    if factor == 1:
        return masks
    h, w = masks.shape[-2:]
    blocks = masks.reshape(masks.shape[:-2] + (h // factor, factor, w // factor, factor))
    return blocks.mean(axis=(-3, -1)) > 0.5


def _estimate_objects(models: ModelBundle, images, masks: InstanceMasks, depth, e12, e23,
                      K: Intrinsics) -> ObjectMotions:
    # ψ_M sees the ego-compensated frames as observations
    i1, i2, i3 = images
    base_prev = warp(i1, depth, e12, K)
    base_next = warp(i3, depth, e23, K, inverse=True)
    masks_prev = warp_masks(masks.frame(0), base_prev)
    masks_next = warp_masks(masks.frame(2), base_next)
    return estimate_object_motion(base_prev, i2, base_next, masks_prev, masks.frame(1), masks_next, models.object)


class TripletLosses(BaseModel):
    """Loss components of one triplet before batch averaging"""

    model_config = ConfigDict(arbitrary_types_allowed=True)

    scales: List[ScaleLosses]
    size_constraint: Union[Tensor, float] = 0.0
    skipped_masks: int = 0
    uncovered_fraction: float = 0.0


class Trainer:
    """Runs the depth / ego-motion (and, in motion mode, object-motion) optimization"""

    def __init__(self, models: ModelBundle, config: TrainConfig, learning_rate: Optional[float] = None,
                 parameter_groups: Optional[Sequence[str]] = None):
        self.models = models
        self.config = config
        if parameter_groups is None:
            parameter_groups = ("depth", "ego", "object", "priors") if config.mode == TrainMode.MOTION else ("depth", "ego")
        self.params = models.parameters(parameter_groups)
        rate = config.learning_rate if learning_rate is None else learning_rate
        self.optimizer = Adam(self.params, learning_rate=rate)
        self.updates_priors = "priors" in parameter_groups

    # -- forward pass ------------------------------------------------------------
    def _triplet_losses(self, triplet: FrameTriplet, depths: List[Tensor]) -> TripletLosses:
        motion_mode = self.config.mode == TrainMode.MOTION
        images = image_pyramid(triplet.images)
        K = triplet.intrinsics
        masks = triplet.instance_masks() if motion_mode else InstanceMasks.empty(*triplet.size)
        i1, i2, i3 = triplet.images

        V = ego_input_mask(masks.frame(0), masks.frame(1), masks.frame(2))
        e12, e23 = estimate_ego(i1, i2, i3, V, self.models.ego)

        motions_12: List = []
        motions_23: List = []
        if motion_mode and masks.num_instances:
            objects = _estimate_objects(self.models, triplet.images, masks, depths[0].detach(),
                                        e12.detach(), e23.detach(), K)
            motions_12, motions_23 = objects.motions_12, objects.motions_23

        scales = []
        uncovered = 0.0
        for level in range(NUM_SCALES):
            K_s = K.scaled(level)
            s1, s2, s3 = images[level]
            depth = depths[level]
            if motion_mode and masks.num_instances:
                scaled_masks = InstanceMasks(masks=downsample_masks(masks.masks, level), categories=masks.categories)
                prev = full_warp(s1, depth, e12, motions_12, scaled_masks, K_s)
                nxt = full_warp(s3, depth, e23, motions_23, scaled_masks, K_s, inverse=True)
                if level == 0:
                    uncovered = max(prev.uncovered_fraction, nxt.uncovered_fraction)
            else:
                prev = warp(s1, depth, e12, K_s)
                nxt = warp(s3, depth, e23, K_s, inverse=True)
            scales.append(ScaleLosses(
                reconstruction=reconstruction_loss(prev, nxt, s2),
                ssim=min_ssim_loss(prev, nxt, s2),
                smoothness=smoothness_loss(depth, s2),
            ))

        size_constraint: Union[Tensor, float] = 0.0
        skipped = 0
        if motion_mode and masks.num_instances:
            size_constraint, skipped = size_constraint_terms(
                depths[0], masks.frame(1), masks.categories, self.models.priors, K
            )
        return TripletLosses(scales=scales, size_constraint=size_constraint, skipped_masks=skipped,
                             uncovered_fraction=uncovered)

    def compute_loss(self, batch: Sequence[FrameTriplet]) -> Tuple[Tensor, Dict[str, float]]:
        """Batch-averaged total objective and its component values"""
        if not batch:
            raise DatasetError("cannot compute a loss on an empty batch")
        size = batch[0].size
        for triplet in batch:
            if triplet.size != size:
                raise DatasetError(f"batch mixes image sizes {size} and {triplet.size}")
        targets = np.stack([t.images[1] for t in batch])
        depth_maps = self.models.depth(targets)

        per_triplet = []
        for index, triplet in enumerate(batch):
            depths = [scale[index] for scale in depth_maps]
            per_triplet.append(self._triplet_losses(triplet, depths))

        n = float(len(batch))
        scales = []
        for level in range(NUM_SCALES):
            scales.append(ScaleLosses(
                reconstruction=sum(t.scales[level].reconstruction for t in per_triplet) / n,
                ssim=sum(t.scales[level].ssim for t in per_triplet) / n,
                smoothness=sum(t.scales[level].smoothness for t in per_triplet) / n,
            ))
        size_constraint = sum(t.size_constraint for t in per_triplet) / n
        l2 = l2_penalty(self.models.kernels())
        total, parts = total_loss(scales, self.config.weights, size_constraint, l2)
        parts["skipped_masks"] = float(sum(t.skipped_masks for t in per_triplet))
        parts["uncovered"] = max(t.uncovered_fraction for t in per_triplet)
        return total, parts

    # -- optimization ------------------------------------------------------------
    def train_step(self, batch: Sequence[FrameTriplet]) -> Dict[str, float]:
        """One optimizer step; returns the loss components measured before the update"""
        total, parts = self.compute_loss(batch)
        if not np.isfinite(total.item()):
            logger.error(f"Non-finite loss; components: {parts}")
            raise TrainingError("training loss is not finite", components=parts)
        self.optimizer.zero_grad()
        total.backward()
        self.optimizer.fill_missing_grads()
        self.optimizer.step()
        if self.updates_priors:
            self.models.priors.project()
        return parts

    def train(self, samples: Sequence[FrameTriplet], curve_path: Optional[str] = None) -> List[Dict[str, float]]:
        """Run ``config.steps`` steps with seeded batch sampling; returns the loss curve"""
        if not samples:
            raise DatasetError("cannot train on an empty dataset")
        rng = np.random.default_rng(self.config.seed)
        batch_size = min(self.config.batch_size, len(samples))
        curve = []
        progress = tqdm(range(self.config.steps), desc="train", disable=None if self.config.progress else True)
        for step in progress:
            indices = rng.choice(len(samples), size=batch_size, replace=False)
            parts = self.train_step([samples[i] for i in indices])
            parts["step"] = step
            curve.append(parts)
            if step % self.config.log_every == 0 or step == self.config.steps - 1:
                logger.info(
                    f"step {step}: total={parts['total']:.5f} rec={parts['rec']:.5f} "
                    f"ssim={parts['ssim']:.5f} sm={parts['sm']:.5f} sc={parts['sc']:.5f}"
                )
        if curve_path:
            write_loss_curve(curve_path, curve)
        return curve


def write_loss_curve(path: str, curve: Sequence[Dict[str, float]]) -> None:
    directory = os.path.dirname(path)
    if directory:
        os.makedirs(directory, exist_ok=True)
    with open(path, "w", newline="") as f:
        writer = csv.writer(f)
        writer.writerow(LOSS_CURVE_COLUMNS)
        for row in curve:
            writer.writerow([row["step"]] + [repr(float(row[k])) for k in ("rec", "ssim", "sm", "sc", "total")])


def train_step(batch: Sequence[FrameTriplet], models: ModelBundle, config: TrainConfig,
               trainer: Optional[Trainer] = None) -> float:
    """One optimization step on ``batch``; pass a Trainer to keep optimizer state between calls"""
    trainer = trainer or Trainer(models, config)
    return trainer.train_step(batch)["total"]


def train(samples: Sequence[FrameTriplet], config: TrainConfig, models: Optional[ModelBundle] = None,
          curve_path: Optional[str] = None) -> Tuple[ModelBundle, List[Dict[str, float]]]:
    models = models or ModelBundle(seed=config.seed, num_categories=config.num_categories,
                                   prior_init=config.size_prior_init)
    curve = Trainer(models, config).train(samples, curve_path=curve_path)
    return models, curve


# -- inference -------------------------------------------------------------------

def predict_depth(models: ModelBundle, images: np.ndarray) -> np.ndarray:
    """Full-resolution depth for (3, H, W) or (N, 3, H, W) images"""
    images = np.asarray(images, dtype=np.float64)
    single = images.ndim == 3
    with no_grad():
        depth = models.depth(images[None] if single else images)[0].data
    return depth[0] if single else depth


def predict_motion(models: ModelBundle, triplet: FrameTriplet, mode: TrainMode = TrainMode.BASELINE) -> Tuple[SE3Params, SE3Params]:
    masks = triplet.instance_masks() if mode == TrainMode.MOTION else InstanceMasks.empty(*triplet.size)
    V = ego_input_mask(masks.frame(0), masks.frame(1), masks.frame(2))
    with no_grad():
        e12, e23 = estimate_ego(*triplet.images, V, models.ego)
    return SE3Params.from_vector(e12.data), SE3Params.from_vector(e23.data)


def predict_object_motion(models: ModelBundle, triplet: FrameTriplet) -> List[Tuple[SE3Params, SE3Params]]:
    """(M_12, M_23) per instance of ``triplet``, estimated on the ego-compensated frames"""
    masks = triplet.instance_masks()
    if not masks.num_instances:
        return []
    V = ego_input_mask(masks.frame(0), masks.frame(1), masks.frame(2))
    with no_grad():
        e12, e23 = estimate_ego(*triplet.images, V, models.ego)
        depth = models.depth(triplet.images[1][None])[0][0]
        objects = _estimate_objects(models, triplet.images, masks, depth, e12, e23, triplet.intrinsics)
    return objects.as_params()


# -- online refinement -------------------------------------------------------------

class WindowPrediction(BaseModel):
    model_config = ConfigDict(arbitrary_types_allowed=True)

    name: str
    index: int
    depth: np.ndarray
    baseline_depth: np.ndarray
    ego_12: SE3Params
    ego_23: SE3Params
    baseline_ego_12: SE3Params
    baseline_ego_23: SE3Params
    refined: bool
    photometric_change: float


class RefineResult(BaseModel):
    model_config = ConfigDict(arbitrary_types_allowed=True)

    windows: List[WindowPrediction] = Field(default_factory=list)
    state: Dict[str, np.ndarray] = Field(default_factory=dict)


def photometric_change(triplet: FrameTriplet) -> float:
    """Mean absolute frame-to-frame difference over the window"""
    i1, i2, i3 = triplet.images
    return float((np.abs(i2 - i1).mean() + np.abs(i3 - i2).mean()) / 2.0)


def online_refine(
    sequence: Union[FrameSequence, Sequence[FrameTriplet]],
    checkpoint: Dict[str, np.ndarray],
    config: Optional[RefineConfig] = None,
    train_config: Optional[TrainConfig] = None,
) -> RefineResult:
    """Keep optimizing while predicting: N steps per sliding window, weights carried across windows.

    ``checkpoint`` is a model state dict; it is loaded fresh for every call, so refinement
    never leaks between sequences.
    """
    config = config or RefineConfig()
    train_config = train_config or TrainConfig()
    windows = list(sequence.windows()) if isinstance(sequence, FrameSequence) else list(sequence)
    if not windows:
        raise DatasetError("online refinement needs at least one 3-frame window")

    num_categories = int(np.asarray(checkpoint["priors"]).size) if "priors" in checkpoint else 1
    baseline = ModelBundle(num_categories=num_categories)
    baseline.load_state_dict(checkpoint)
    models = ModelBundle(num_categories=num_categories)
    models.load_state_dict(checkpoint)

    groups = ("depth",) if config.update == "depth" else None
    if groups is None and train_config.mode == TrainMode.BASELINE:
        groups = ("depth", "ego")
    trainer = Trainer(models, train_config, learning_rate=config.learning_rate, parameter_groups=groups)

    result = RefineResult()
    progress = tqdm(windows, desc="refine", disable=None if train_config.progress else True)
    for index, window in enumerate(progress):
        base_e12, base_e23 = predict_motion(baseline, window, train_config.mode)
        base_depth = predict_depth(baseline, window.images[1])
        change = photometric_change(window)
        refined = change >= config.static_threshold
        if refined:
            batch = [window, window.flipped()] if config.flip_augmentation else [window]
            for _ in range(config.steps):
                trainer.train_step(batch)
        else:
            logger.warning(f"Window {window.name} looks static (change {change:.5f}); refinement skipped")
        e12, e23 = predict_motion(models, window, train_config.mode)
        result.windows.append(WindowPrediction(
            name=window.name or f"window_{index:04d}",
            index=index,
            depth=predict_depth(models, window.images[1]),
            baseline_depth=base_depth,
            ego_12=e12,
            ego_23=e23,
            baseline_ego_12=base_e12,
            baseline_ego_23=base_e23,
            refined=refined,
            photometric_change=change,
        ))
    result.state = models.state_dict()
    return result
