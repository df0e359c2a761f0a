# Models package
from src.models.geometry import Intrinsics, Pose4x4, SE3Params
from src.models.metrics import DepthMetrics, OdometrySummary, RunMetrics
from src.models.scene import DatasetEntry, FrameSequence, FrameTriplet, InstanceMasks, ObjectMotionGT, SceneSample
from src.models.settings import (
    EvalConfig,
    LossWeights,
    RefineConfig,
    RunConfig,
    SceneConfig,
    ScenePreset,
    TrainConfig,
    TrainMode,
)
