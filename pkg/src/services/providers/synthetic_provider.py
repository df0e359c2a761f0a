import logging
from typing import Any, Dict, List

from src.models.geometry import Pose4x4
from src.models.scene import DatasetEntry, FrameSequence, SceneSample
from src.models.settings import ScenePreset, scene_config_for
from src.services.geometry import as_pose
from src.services.providers.base_provider import DatasetProvider
from src.services.synth_scenes import SAMPLE_SEED_STRIDE, generate, generate_sequence
from src.utils.errors import DatasetError

logger = logging.getLogger(__name__)


def sample_entry(sample: SceneSample, name: str) -> DatasetEntry:
    """A synthetic triplet as a 3-frame dataset entry; poses are relative to frame 1"""
    first = Pose4x4.identity()
    second = as_pose(sample.ego_12)
    third = second @ as_pose(sample.ego_23)
    sequence = FrameSequence(
        images=sample.images,
        intrinsics=sample.intrinsics,
        labels=sample.masks.to_index_images(),
        categories=list(sample.masks.categories),
        depths=sample.depths,
        poses=[first, second, third],
        name=name,
    )
    return DatasetEntry(
        name=name,
        kind="triplet",
        sequence=sequence,
        seed=sample.seed,
        preset=sample.preset,
        ego_12=sample.ego_12,
        ego_23=sample.ego_23,
        objects=sample.objects,
    )


class SyntheticProvider(DatasetProvider):
    """Renders preset scenes; entry k is drawn from seed + k * SAMPLE_SEED_STRIDE"""

    name = "synthetic"

    def execute(self, config: Dict[str, Any], inputs: Dict[str, Any] = None) -> Dict[str, Any]:
        preset = ScenePreset(config.get("preset", ScenePreset.RIGID))
        count = int(config.get("n", 1))
        seed = int(config.get("seed", 0))
        length = int(config.get("sequence_length", 0) or 0)
        overrides = {key: config[key] for key in ("height", "width") if config.get(key) is not None}
        if count < 1:
            raise DatasetError(f"need at least one sample, got n={count}")

        entries: List[DatasetEntry] = []
        samples: List[SceneSample] = []
        for k in range(count):
            entry_seed = seed + k * SAMPLE_SEED_STRIDE
            if length:
                name = f"seq_{k:04d}"
                sequence = generate_sequence(entry_seed, length, scene_config_for(preset, **overrides), name=name)
                entries.append(DatasetEntry(name=name, kind="sequence", sequence=sequence,
                                            seed=entry_seed, preset=preset.value))
            else:
                sample = generate(entry_seed, preset, **overrides)
                samples.append(sample)
                entries.append(sample_entry(sample, f"{k:06d}"))
        logger.info(f"Generated {len(entries)} {preset.value} entries from seed {seed}")
        return {"entries": entries, "samples": samples}
