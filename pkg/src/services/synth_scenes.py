"""Synthetic scenes with exact ground truth.

The world frame is the camera frame of the canonical (middle) frame. The
background is the inside of a box (ground, back wall and optional side walls)
or a single fronto-parallel plane. Objects are fronto-parallel textured
rectangles that translate at a constant velocity.

Every frame is rendered with the warp operator: each pixel is ray-cast for its
depth, carried into the canonical camera and sampled from a band-limited noise
texture painted on an oversized canvas around the canonical view.
"""
import logging
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np
from pydantic import BaseModel, ConfigDict
from scipy.ndimage import gaussian_filter

from src.engine.tensor import no_grad
from src.models.geometry import Intrinsics, Pose4x4, SE3Params
from src.models.scene import FrameSequence, InstanceMasks, ObjectMotionGT, SceneSample
from src.models.settings import SceneConfig, SceneLayout, ScenePreset, scene_config_for
from src.services.geometry import decompose, invert, pixel_grid, rotation_matrix
from src.services.warping import warp
from src.utils.errors import DatasetError

logger = logging.getLogger(__name__)

MIN_CONTRAST = 0.3
# Seeds of consecutive samples in a generated set are this far apart, leaving room for retries
SAMPLE_SEED_STRIDE = 1000


class RenderRejected(Exception):
    """A drawn scene violates a generator constraint; the caller retries with the next seed"""


class Plane(BaseModel):
    """Points X with normal . X == offset"""

    normal: Tuple[float, float, float]
    offset: float


class SceneObject(BaseModel):
    center: Tuple[float, float, float]
    width: float
    height: float
    velocity: Tuple[float, float, float]
    category: int = 1
    co_moving: bool = False


class CameraMotion(BaseModel):
    """Per-frame camera velocity in the world frame"""

    translation: Tuple[float, float, float]
    rotation: Tuple[float, float, float]

    def camera_to_world(self, offset: int) -> Pose4x4:
        R = rotation_matrix(*(offset * np.asarray(self.rotation)))
        return Pose4x4.from_rotation_translation(R, offset * np.asarray(self.translation))


class SceneLayoutDraw(BaseModel):
    """Everything random about a scene, drawn once from the seed"""

    model_config = ConfigDict(arbitrary_types_allowed=True)

    planes: List[Plane]
    objects: List[SceneObject]
    camera: CameraMotion
    background: np.ndarray
    object_textures: List[np.ndarray]


def default_intrinsics(config: SceneConfig) -> Intrinsics:
    f = config.focal_scale * config.width
    return Intrinsics(fx=f, fy=f, cx=(config.width - 1) / 2.0, cy=(config.height - 1) / 2.0)


def canvas_intrinsics(K: Intrinsics, margin: int) -> Intrinsics:
    return Intrinsics(fx=K.fx, fy=K.fy, cx=K.cx + margin, cy=K.cy + margin)


def make_texture(rng: np.random.Generator, shape: Tuple[int, int], config: SceneConfig) -> np.ndarray:
    """(3, H, W) band-limited noise with the configured mean and peak-to-peak contrast"""
    if config.texture_contrast < 1e-6:
        raise DatasetError("degenerate scene config: texture contrast is zero")
    if config.texture_contrast < MIN_CONTRAST:
        logger.warning(f"Texture contrast {config.texture_contrast} is below {MIN_CONTRAST}; depth may be unobservable")
    noise = gaussian_filter(rng.standard_normal((3,) + shape), sigma=(0, config.texture_sigma, config.texture_sigma))
    noise = noise / max(np.abs(noise).max(), 1e-12)
    return np.clip(config.texture_mean + 0.5 * config.texture_contrast * noise, 0.0, 1.0)


def _uniform(rng: np.random.Generator, bounds: Tuple[float, float]) -> float:
    low, high = bounds
    return float(low) if low == high else float(rng.uniform(low, high))


def _draw_planes(rng: np.random.Generator, config: SceneConfig) -> List[Plane]:
    if config.layout == SceneLayout.FRONTO:
        return [Plane(normal=(0.0, 0.0, 1.0), offset=config.fronto_depth)]
    planes = [
        Plane(normal=(0.0, 1.0, 0.0), offset=_uniform(rng, config.ground_height)),
        Plane(normal=(0.0, 0.0, 1.0), offset=_uniform(rng, config.back_wall_depth)),
    ]
    count = int(rng.integers(config.num_planes[0], config.num_planes[1] + 1))
    sides = [(-1.0, _uniform(rng, config.wall_offset)), (1.0, _uniform(rng, config.wall_offset))]
    if count == 3:
        sides = [sides[int(rng.integers(0, 2))]]
    for sign, distance in sides[:count - 2]:
        planes.append(Plane(normal=(1.0, 0.0, 0.0), offset=sign * distance))
    return planes


def _draw_camera(rng: np.random.Generator, config: SceneConfig) -> CameraMotion:
    if config.camera_translation is not None:
        translation = tuple(float(v) for v in config.camera_translation)
    else:
        lateral = config.max_translation * (1.0 - config.forward_bias)
        translation = (
            float(rng.uniform(-1, 1) * lateral),
            float(rng.uniform(-1, 1) * lateral * 0.25),
            float(rng.uniform(config.forward_bias, 1.0) * config.max_translation),
        )
    if config.camera_rotation is not None:
        rotation = tuple(float(v) for v in config.camera_rotation)
    else:
        rotation = tuple(float(v) for v in rng.uniform(-1, 1, 3) * config.max_rotation)
    return CameraMotion(translation=translation, rotation=rotation)


def _draw_objects(rng: np.random.Generator, config: SceneConfig, K: Intrinsics,
                  planes: List[Plane], camera: CameraMotion) -> List[SceneObject]:
    count = int(rng.integers(config.num_objects[0], config.num_objects[1] + 1))
    for name in ("object_velocities", "object_depths", "object_centers"):
        given = getattr(config, name)
        if given is not None:
            count = len(given)
    ground = next((p.offset for p in planes if p.normal == (0.0, 1.0, 0.0)), None)
    objects = []
    for i in range(count):
        depth = config.object_depths[i] if config.object_depths is not None else _uniform(rng, config.object_depth)
        width = _uniform(rng, config.object_size)
        height = _uniform(rng, config.object_size)
        width_px = K.fx * width / depth
        if config.object_centers is not None:
            u, v = config.object_centers[i]
            center_y = (v - K.cy) * depth / K.fy
        else:
            low, high = width_px / 2 + 4, config.width - width_px / 2 - 4
            if low >= high:
                raise RenderRejected(f"object {i} is wider than the image")
            u = rng.uniform(low, high)
            if ground is not None:
                center_y = ground - height / 2.0
            else:
                v = rng.uniform(config.height * 0.3, config.height * 0.7)
                center_y = (v - K.cy) * depth / K.fy
        center = ((u - K.cx) * depth / K.fx, center_y, depth)

        co_moving = i < config.co_moving
        if config.object_velocities is not None:
            velocity = tuple(float(x) for x in config.object_velocities[i])
        elif co_moving:
            velocity = camera.translation
        else:
            drawn = rng.uniform(-1, 1, 3) * config.object_speed
            velocity = (float(drawn[0]), 0.0, float(drawn[2]))
        objects.append(SceneObject(
            center=center, width=width, height=height, velocity=velocity,
            category=config.object_category, co_moving=co_moving,
        ))
    return objects


def draw_layout(seed: int, config: SceneConfig, margin: int) -> SceneLayoutDraw:
    rng = np.random.default_rng(seed)
    K = default_intrinsics(config)
    planes = _draw_planes(rng, config)
    camera = _draw_camera(rng, config)
    objects = _draw_objects(rng, config, K, planes, camera)
    canvas = (config.height + 2 * margin, config.width + 2 * margin)
    background = make_texture(rng, canvas, config)
    textures = [make_texture(rng, canvas, config) for _ in objects]
    return SceneLayoutDraw(planes=planes, objects=objects, camera=camera, background=background,
                           object_textures=textures)


def _ray_directions(K: Intrinsics, height: int, width: int) -> np.ndarray:
    grid = pixel_grid(height, width)
    return np.stack([(grid[0] - K.cx) / K.fx, (grid[1] - K.cy) / K.fy, np.ones((height, width))])


def _intersect_planes(origin: np.ndarray, directions: np.ndarray, planes: Sequence[Plane]) -> np.ndarray:
    """Nearest positive ray parameter over all planes; directions have unit camera z"""
    nearest = np.full(directions.shape[1:], np.inf)
    for plane in planes:
        n = np.asarray(plane.normal)
        denom = np.tensordot(n, directions, axes=1)
        with np.errstate(divide="ignore", invalid="ignore"):
            s = (plane.offset - n @ origin) / denom
        s = np.where((np.abs(denom) > 1e-12) & (s > 1e-6), s, np.inf)
        nearest = np.minimum(nearest, s)
    return nearest


def _intersect_object(origin: np.ndarray, directions: np.ndarray, obj: SceneObject, shift: np.ndarray) -> np.ndarray:
    center = np.asarray(obj.center) + shift
    with np.errstate(divide="ignore", invalid="ignore"):
        s = (center[2] - origin[2]) / directions[2]
    hit = origin[:, None, None] + s[None] * directions
    inside = (
        (s > 1e-6)
        & (np.abs(hit[0] - center[0]) <= obj.width / 2.0)
        & (np.abs(hit[1] - center[1]) <= obj.height / 2.0)
    )
    return np.where(inside, s, np.inf)


class RenderedFrame(BaseModel):
    model_config = ConfigDict(arbitrary_types_allowed=True)

    image: np.ndarray
    depth: np.ndarray
    labels: np.ndarray


def render_frame(layout: SceneLayoutDraw, offset: int, K: Intrinsics, height: int, width: int,
                 margin: int) -> RenderedFrame:
    """Render the frame ``offset`` steps away from the canonical one"""
    pose = layout.camera.camera_to_world(offset)
    origin = pose.translation
    directions = np.tensordot(pose.rotation, _ray_directions(K, height, width), axes=1)
    # with unit camera z, the ray parameter equals the camera-frame depth
    background = _intersect_planes(origin, directions, layout.planes)
    if not np.all(np.isfinite(background)):
        raise RenderRejected("some rays miss every background plane")

    depth = background.copy()
    labels = np.zeros((height, width), dtype=np.uint8)
    object_depths = []
    for index, obj in enumerate(layout.objects):
        shift = offset * np.asarray(obj.velocity)
        hit = _intersect_object(origin, directions, obj, shift)
        object_depths.append(hit)
        closer = hit < depth
        depth = np.where(closer, hit, depth)
        labels[closer] = index + 1

    K_canvas = canvas_intrinsics(K, margin)
    with no_grad():
        result = warp(layout.background, background, pose, K, source_intrinsics=K_canvas)
        image = result.image.data
        valid = result.valid_mask() | (labels > 0)
        for index, obj in enumerate(layout.objects):
            region = labels == index + 1
            if not region.any():
                continue
            shift = offset * np.asarray(obj.velocity)
            # back to the object's canonical position before looking up its texture
            motion = Pose4x4.from_rotation_translation(pose.rotation, origin - shift)
            object_depth = np.where(np.isfinite(object_depths[index]), object_depths[index], background)
            obj_result = warp(layout.object_textures[index], object_depth, motion, K, source_intrinsics=K_canvas)
            image = np.where(region[None], obj_result.image.data, image)
            valid &= ~region | obj_result.valid_mask()
    if not valid.all():
        raise RenderRejected(f"{int((~valid).sum())} pixels fall outside the texture canvas")
    return RenderedFrame(image=image, depth=depth, labels=labels)


def _check_objects(frames: Sequence[RenderedFrame], layout: SceneLayoutDraw, canonical: int) -> None:
    labels = frames[canonical].labels
    boxes = []
    for index in range(len(layout.objects)):
        for frame in frames:
            if not (frame.labels == index + 1).any():
                raise RenderRejected(f"object {index + 1} is not visible in every frame")
        rows, cols = np.nonzero(labels == index + 1)
        boxes.append((rows.min(), rows.max(), cols.min(), cols.max()))
    for a in range(len(boxes)):
        for b in range(a + 1, len(boxes)):
            ra, rb = boxes[a], boxes[b]
            apart = ra[1] + 1 < rb[0] or rb[1] + 1 < ra[0] or ra[3] + 1 < rb[2] or rb[3] + 1 < ra[2]
            if not apart:
                raise RenderRejected(f"objects {a + 1} and {b + 1} overlap in the canonical frame")


def _render_offsets(seed: int, config: SceneConfig, offsets: Sequence[int]) -> Tuple[SceneLayoutDraw, List[RenderedFrame], int]:
    """Draw and render, moving on to the next seed whenever a draw is rejected"""
    margin = config.canvas_margin * max(1, max(abs(o) for o in offsets))
    K = default_intrinsics(config)
    reasons = []
    for attempt in range(config.max_retries):
        current = seed + attempt
        layout = draw_layout(current, config, margin)
        try:
            frames = [render_frame(layout, o, K, config.height, config.width, margin) for o in offsets]
            _check_objects(frames, layout, list(offsets).index(0))
        except RenderRejected as exc:
            logger.debug(f"Seed {current} rejected: {exc}")
            reasons.append(str(exc))
            continue
        if attempt:
            logger.info(f"Seed {seed} regenerated as seed {current} after {attempt} rejection(s)")
        return layout, frames, current
    raise DatasetError(f"no valid scene after {config.max_retries} attempts from seed {seed}: {reasons[-1]}")


def _translation_motion(t) -> SE3Params:
    return SE3Params(translation=tuple(float(v) for v in t), rotation=(0.0, 0.0, 0.0))


def _build_sample(seed: int, config: SceneConfig, preset: str) -> SceneSample:
    layout, frames, used = _render_offsets(seed, config, (-1, 0, 1))
    K = default_intrinsics(config)
    world_from_1 = layout.camera.camera_to_world(-1)
    world_from_3 = layout.camera.camera_to_world(1)
    labels = np.stack([f.labels for f in frames])
    categories = [obj.category for obj in layout.objects]
    objects = [
        ObjectMotionGT(
            instance=i + 1,
            category=obj.category,
            motion_12=_translation_motion(-np.asarray(obj.velocity)),
            motion_23=_translation_motion(-np.asarray(obj.velocity)),
            co_moving=obj.co_moving,
        )
        for i, obj in enumerate(layout.objects)
    ]
    return SceneSample(
        images=np.stack([f.image for f in frames]),
        depths=np.stack([f.depth for f in frames]),
        intrinsics=K,
        masks=InstanceMasks.from_index_images(labels, categories),
        ego_12=decompose(invert(world_from_1)),
        ego_23=decompose(world_from_3),
        objects=objects,
        seed=used,
        preset=preset,
    )


def generate_rigid(seed: int, config: Optional[SceneConfig] = None) -> SceneSample:
    """Static scene seen by a moving camera; no objects"""
    config = config or SceneConfig()
    config = config.model_copy(update={"num_objects": (0, 0), "object_velocities": None,
                                       "object_depths": None, "object_centers": None})
    return _build_sample(seed, config, ScenePreset.RIGID.value)


def generate_dynamic(seed: int, config: Optional[SceneConfig] = None, preset: str = ScenePreset.DYNAMIC.value) -> SceneSample:
    """Scene with 1-3 independently moving objects"""
    config = config or scene_config_for(ScenePreset.DYNAMIC)
    explicit = config.object_velocities or config.object_depths or config.object_centers
    if config.num_objects[1] < 1 and not explicit:
        raise DatasetError("dynamic scenes need at least one object")
    return _build_sample(seed, config, preset)


def generate(seed: int, preset: ScenePreset = ScenePreset.RIGID, **overrides) -> SceneSample:
    preset = ScenePreset(preset)
    config = scene_config_for(preset, **overrides)
    if preset in (ScenePreset.RIGID, ScenePreset.SHIFTED, ScenePreset.FRONTO):
        sample = generate_rigid(seed, config)
        return sample.model_copy(update={"preset": preset.value})
    return generate_dynamic(seed, config, preset=preset.value)


def generate_samples(count: int, seed: int = 0, preset: ScenePreset = ScenePreset.RIGID, **overrides) -> List[SceneSample]:
    return [generate(seed + i * SAMPLE_SEED_STRIDE, preset, **overrides) for i in range(count)]


def generate_sequence(seed: int, length: int = 7, config: Optional[SceneConfig] = None,
                      name: str = "sequence") -> FrameSequence:
    """A constant-velocity video of ``length`` frames with GT depth and camera-to-world poses"""
    if length < 3:
        raise DatasetError(f"sequences need at least 3 frames, got {length}")
    config = config or SceneConfig()
    canonical = length // 2
    offsets = [k - canonical for k in range(length)]
    layout, frames, _ = _render_offsets(seed, config, offsets)
    return FrameSequence(
        images=np.stack([f.image for f in frames]),
        intrinsics=default_intrinsics(config),
        labels=np.stack([f.labels for f in frames]),
        categories=[obj.category for obj in layout.objects],
        depths=np.stack([f.depth for f in frames]),
        poses=[layout.camera.camera_to_world(o) for o in offsets],
        name=name,
    )


def apparent_motion(sample: SceneSample) -> Dict[int, float]:
    """Mean pixel displacement of each object's mask centroid between frames 1 and 3"""
    shifts = {}
    for i in range(sample.masks.num_instances):
        first = np.argwhere(sample.masks.frame(0)[i]).mean(axis=0)
        last = np.argwhere(sample.masks.frame(2)[i]).mean(axis=0)
        shifts[i + 1] = float(np.linalg.norm(last - first) / 2.0)
    return shifts
