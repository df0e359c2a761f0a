from enum import Enum
from typing import Dict, List, Optional, Tuple

from pydantic import BaseModel, ConfigDict, Field, field_validator, model_validator


class TrainMode(str, Enum):
    BASELINE = "baseline"
    MOTION = "motion"


class ScenePreset(str, Enum):
    RIGID = "rigid"
    DYNAMIC = "dynamic"
    DEGENERATE = "degenerate"
    SHIFTED = "shifted"
    FRONTO = "fronto"


class SceneLayout(str, Enum):
    CORRIDOR = "corridor"
    FRONTO = "fronto"


class LossWeights(BaseModel):
    model_config = ConfigDict(extra="forbid")

    reconstruction: float = Field(0.85, ge=0)
    ssim: float = Field(0.15, ge=0)
    smoothness: float = Field(0.04, ge=0)
    size_constraint: float = Field(0.0005, ge=0)
    l2_reg: float = Field(0.05, ge=0)


class TrainConfig(BaseModel):
    model_config = ConfigDict(extra="forbid")

    learning_rate: float = Field(0.0002, ge=0)
    weights: LossWeights = Field(default_factory=LossWeights)
    batch_size: int = Field(4, ge=1)
    steps: int = Field(1000, ge=0)
    seed: int = 0
    mode: TrainMode = TrainMode.BASELINE
    num_scales: int = Field(4, ge=1)
    num_categories: int = Field(1, ge=1)
    size_prior_init: float = Field(1.0, gt=0)
    log_every: int = Field(50, ge=1)
    progress: bool = True

    @property
    def l2_reg(self) -> float:
        return self.weights.l2_reg


class RefineConfig(BaseModel):
    model_config = ConfigDict(extra="forbid")

    steps: int = Field(20, ge=1)
    learning_rate: float = Field(0.0002, ge=0)
    update: str = "all"
    reset_per_sequence: bool = True
    flip_augmentation: bool = True
    static_threshold: float = Field(0.01, ge=0)

    @field_validator("update")
    @classmethod
    def _known_update(cls, value):
        if value not in ("all", "depth"):
            raise ValueError(f"update must be 'all' or 'depth', got {value!r}")
        return value


class EvalConfig(BaseModel):
    model_config = ConfigDict(extra="forbid")

    cap: float = Field(80.0, gt=0)
    min_depth: float = Field(1e-3, gt=0)
    median_scale: bool = True
    snippet_length: int = Field(5, ge=2)


class SceneConfig(BaseModel):
    """Parameters of the synthetic triplet renderer"""

    model_config = ConfigDict(extra="forbid")

    height: int = Field(128, ge=8)
    width: int = Field(416, ge=8)
    focal_scale: float = Field(0.58, gt=0)
    layout: SceneLayout = SceneLayout.CORRIDOR
    min_depth: float = Field(1.0, gt=0)
    max_depth: float = Field(50.0, gt=0)
    fronto_depth: float = Field(10.0, gt=0)
    ground_height: Tuple[float, float] = (1.2, 2.0)
    wall_offset: Tuple[float, float] = (3.0, 6.0)
    back_wall_depth: Tuple[float, float] = (20.0, 50.0)
    num_planes: Tuple[int, int] = (2, 4)
    texture_mean: float = Field(0.5, ge=0, le=1)
    texture_contrast: float = Field(0.6, ge=0, le=1)
    texture_sigma: float = Field(2.0, gt=0)
    max_translation: float = Field(0.3, ge=0)
    max_rotation: float = Field(0.01, ge=0)
    forward_bias: float = Field(0.5, ge=0, le=1)
    camera_translation: Optional[Tuple[float, float, float]] = None
    camera_rotation: Optional[Tuple[float, float, float]] = None
    num_objects: Tuple[int, int] = (0, 0)
    object_depth: Tuple[float, float] = (4.0, 12.0)
    object_size: Tuple[float, float] = (0.8, 1.8)
    object_speed: float = Field(0.3, ge=0)
    object_velocities: Optional[Tuple[Tuple[float, float, float], ...]] = None
    object_depths: Optional[Tuple[float, ...]] = None
    object_centers: Optional[Tuple[Tuple[float, float], ...]] = None
    co_moving: int = Field(0, ge=0)
    object_category: int = Field(1, ge=1)
    canvas_margin: int = Field(64, ge=0)
    max_retries: int = Field(10, ge=1)

    @model_validator(mode="after")
    def _check_ranges(self):
        if self.min_depth >= self.max_depth:
            raise ValueError("min_depth must be below max_depth")
        if self.height % 8 or self.width % 8:
            raise ValueError(f"image size must be divisible by 8, got {self.height}x{self.width}")
        for name in ("ground_height", "wall_offset", "back_wall_depth", "num_planes",
                     "num_objects", "object_depth", "object_size"):
            low, high = getattr(self, name)
            if low > high:
                raise ValueError(f"{name} range is inverted: {low} > {high}")
        if not 2 <= self.num_planes[0] <= self.num_planes[1] <= 4:
            raise ValueError("num_planes must lie within 2..4")
        return self


class ScenePresetDefinition(BaseModel):
    preset: ScenePreset
    description: str
    overrides: Dict[str, object] = {}


# Presets available to the generator and the generate command
SCENE_PRESETS: Dict[ScenePreset, ScenePresetDefinition] = {
    ScenePreset.RIGID: ScenePresetDefinition(
        preset=ScenePreset.RIGID,
        description="Static textured corridor, moving camera, no objects",
        overrides={"num_objects": (0, 0)},
    ),
    ScenePreset.DYNAMIC: ScenePresetDefinition(
        preset=ScenePreset.DYNAMIC,
        description="Corridor with 1-3 independently moving textured boxes",
        overrides={"num_objects": (1, 3)},
    ),
    ScenePreset.DEGENERATE: ScenePresetDefinition(
        preset=ScenePreset.DEGENERATE,
        description="Objects moving with the camera, so they show no apparent motion",
        overrides={"num_objects": (1, 2), "co_moving": 1, "forward_bias": 1.0, "max_rotation": 0.0},
    ),
    ScenePreset.SHIFTED: ScenePresetDefinition(
        preset=ScenePreset.SHIFTED,
        description="Rigid corridor with shifted texture statistics and a shallower depth range",
        overrides={
            "num_objects": (0, 0),
            "texture_mean": 0.45,
            "texture_contrast": 0.9,
            "texture_sigma": 1.2,
            "ground_height": (0.8, 1.2),
            "wall_offset": (1.5, 3.0),
            "back_wall_depth": (8.0, 16.0),
        },
    ),
    ScenePreset.FRONTO: ScenePresetDefinition(
        preset=ScenePreset.FRONTO,
        description="Single fronto-parallel textured plane",
        overrides={"layout": SceneLayout.FRONTO, "num_objects": (0, 0)},
    ),
}


def scene_config_for(preset: ScenePreset, **overrides) -> SceneConfig:
    """Build a SceneConfig from a preset plus explicit overrides"""
    values = dict(SCENE_PRESETS[ScenePreset(preset)].overrides)
    values.update(overrides)
    return SceneConfig(**values)


class RunConfig(BaseModel):
    """Flat command configuration; file values are overridden by command-line flags"""

    model_config = ConfigDict(extra="forbid")

    command: str
    config: Optional[str] = None
    dataset: Optional[str] = None
    checkpoint: Optional[str] = None
    out: Optional[str] = None
    seed: int = 0
    steps: int = Field(1000, ge=0)
    mode: TrainMode = TrainMode.BASELINE
    learning_rate: float = Field(0.0002, ge=0)
    batch_size: int = Field(4, ge=1)
    l2_reg: float = Field(0.05, ge=0)
    reconstruction_weight: float = Field(0.85, ge=0)
    ssim_weight: float = Field(0.15, ge=0)
    smoothness_weight: float = Field(0.04, ge=0)
    size_constraint_weight: float = Field(0.0005, ge=0)
    size_prior_init: float = Field(1.0, gt=0)
    num_categories: int = Field(1, ge=1)
    log_every: int = Field(50, ge=1)
    refine_steps: int = Field(20, ge=1)
    refine_learning_rate: float = Field(0.0002, ge=0)
    refine_update: str = "all"
    static_threshold: float = Field(0.01, ge=0)
    flip_augmentation: bool = True
    reset_per_sequence: bool = True
    median_scale: bool = True
    cap: float = Field(80.0, gt=0)
    n: int = Field(1, ge=1)
    preset: ScenePreset = ScenePreset.RIGID
    height: int = Field(128, ge=8)
    width: int = Field(416, ge=8)
    sequence_length: int = Field(0, ge=0)
    from_kitti: Optional[str] = None
    runs: List[str] = Field(default_factory=list)
    name: Optional[str] = None
    progress: bool = True

    @field_validator("command")
    @classmethod
    def _known_command(cls, value):
        if value not in ("generate", "train", "refine", "eval", "report"):
            raise ValueError(f"unknown command {value!r}")
        return value

    @field_validator("runs", mode="before")
    @classmethod
    def _split_runs(cls, value):
        if isinstance(value, str):
            return [part.strip() for part in value.split(",") if part.strip()]
        return value

    def train_config(self) -> TrainConfig:
        return TrainConfig(
            learning_rate=self.learning_rate,
            weights=LossWeights(
                reconstruction=self.reconstruction_weight,
                ssim=self.ssim_weight,
                smoothness=self.smoothness_weight,
                size_constraint=self.size_constraint_weight,
                l2_reg=self.l2_reg,
            ),
            batch_size=self.batch_size,
            steps=self.steps,
            seed=self.seed,
            mode=self.mode,
            num_categories=self.num_categories,
            size_prior_init=self.size_prior_init,
            log_every=self.log_every,
            progress=self.progress,
        )

    def refine_config(self) -> RefineConfig:
        return RefineConfig(
            steps=self.refine_steps,
            learning_rate=self.refine_learning_rate,
            update=self.refine_update,
            flip_augmentation=self.flip_augmentation,
            static_threshold=self.static_threshold,
            reset_per_sequence=self.reset_per_sequence,
        )

    def eval_config(self) -> EvalConfig:
        return EvalConfig(cap=self.cap, median_scale=self.median_scale)
