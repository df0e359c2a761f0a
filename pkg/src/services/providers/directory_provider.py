"""Canonical dataset directory.

::

    <root>/manifest.json
    <root>/<entry>/frame_<k>.png     8-bit RGB, k = 1..T
    <root>/<entry>/mask_<k>.png      instance-index image, 0 = background
    <root>/<entry>/depth_<k>.pfm     float32, NaN = invalid
    <root>/<entry>/poses.txt
    <root>/<entry>/intrinsics.txt    one row-major 3x3 line

``poses.txt`` lines are ``ego_12 <6>``, ``ego_23 <6>``, ``object <instance> <category>
<6> <6>`` and ``pose <k> <12>`` (row-major 3x4 camera-to-world).
"""
import json
import logging
import os
from typing import Any, Dict, List, Optional, Tuple

import numpy as np
from jsonschema import ValidationError, validate

from src.models.geometry import Intrinsics, Pose4x4, SE3Params
from src.models.scene import DatasetEntry, FrameSequence, ObjectMotionGT
from src.services.geometry import as_pose
from src.services.providers.base_provider import DatasetProvider
from src.utils.errors import DatasetError
from src.utils.image_io import read_labels, read_pfm, read_rgb, write_labels, write_pfm, write_rgb

logger = logging.getLogger(__name__)

MANIFEST_FILE = "manifest.json"
FORMAT_NAME = "depthmotion"
FORMAT_VERSION = 1

MANIFEST_SCHEMA = {
    "type": "object",
    "required": ["format", "version", "entries"],
    "properties": {
        "format": {"const": FORMAT_NAME},
        "version": {"const": FORMAT_VERSION},
        "preset": {"type": "string"},
        "seed": {"type": "integer"},
        "height": {"type": "integer", "minimum": 8},
        "width": {"type": "integer", "minimum": 8},
        "entries": {
            "type": "array",
            "items": {
                "type": "object",
                "required": ["name", "kind", "frames"],
                "properties": {
                    "name": {"type": "string", "pattern": "^[A-Za-z0-9_.-]+$"},
                    "kind": {"enum": ["triplet", "sequence"]},
                    "frames": {"type": "integer", "minimum": 3},
                    "seed": {"type": "integer"},
                    "preset": {"type": "string"},
                    "categories": {"type": "array", "items": {"type": "integer", "minimum": 1}},
                    "objects": {
                        "type": "array",
                        "items": {
                            "type": "object",
                            "required": ["instance", "category", "co_moving"],
                            "properties": {
                                "instance": {"type": "integer", "minimum": 1},
                                "category": {"type": "integer", "minimum": 1},
                                "co_moving": {"type": "boolean"},
                                "apparent_motion": {"type": "number", "minimum": 0},
                            },
                        },
                    },
                },
            },
        },
    },
}


def _format_numbers(values) -> str:
    return " ".join(repr(float(v)) for v in values)


def _poses_lines(entry: DatasetEntry) -> List[str]:
    lines = []
    if entry.ego_12 is not None and entry.ego_23 is not None:
        lines.append(f"ego_12 {_format_numbers(entry.ego_12.to_vector())}")
        lines.append(f"ego_23 {_format_numbers(entry.ego_23.to_vector())}")
    for obj in entry.objects:
        lines.append(
            f"object {obj.instance} {obj.category} "
            f"{_format_numbers(obj.motion_12.to_vector())} {_format_numbers(obj.motion_23.to_vector())}"
        )
    for k, pose in enumerate(entry.sequence.poses or [], start=1):
        lines.append(f"pose {k} {_format_numbers(pose.matrix[:3].reshape(-1))}")
    return lines


def write_entry(root: str, entry: DatasetEntry, apparent: Optional[Dict[int, float]] = None) -> Dict[str, Any]:
    """Write one entry directory and return its manifest record"""
    directory = os.path.join(root, entry.name)
    os.makedirs(directory, exist_ok=True)
    sequence = entry.sequence
    for k in range(len(sequence)):
        write_rgb(os.path.join(directory, f"frame_{k + 1}.png"), sequence.images[k])
        if sequence.labels is not None:
            write_labels(os.path.join(directory, f"mask_{k + 1}.png"), sequence.labels[k])
        if sequence.depths is not None:
            depth = np.asarray(sequence.depths[k])
            with np.errstate(invalid="ignore"):
                invalid = ~np.isfinite(depth) | (depth <= 0)
            write_pfm(os.path.join(directory, f"depth_{k + 1}.pfm"), depth, invalid=invalid)
    with open(os.path.join(directory, "poses.txt"), "w") as f:
        f.writelines(line + "\n" for line in _poses_lines(entry))
    with open(os.path.join(directory, "intrinsics.txt"), "w") as f:
        f.write(sequence.intrinsics.to_line() + "\n")

    record: Dict[str, Any] = {"name": entry.name, "kind": entry.kind, "frames": len(sequence)}
    if entry.seed is not None:
        record["seed"] = entry.seed
    if entry.preset is not None:
        record["preset"] = entry.preset
    if sequence.categories:
        record["categories"] = list(sequence.categories)
    if entry.objects:
        record["objects"] = [
            {
                "instance": obj.instance,
                "category": obj.category,
                "co_moving": obj.co_moving,
                **({"apparent_motion": apparent[obj.instance]} if apparent and obj.instance in apparent else {}),
            }
            for obj in entry.objects
        ]
    return record


def write_manifest(root: str, records: List[Dict[str, Any]], **fields) -> str:
    manifest = {"format": FORMAT_NAME, "version": FORMAT_VERSION, **fields, "entries": records}
    validate(manifest, MANIFEST_SCHEMA)
    path = os.path.join(root, MANIFEST_FILE)
    with open(path, "w") as f:
        json.dump(manifest, f, indent=2, sort_keys=True)
        f.write("\n")
    return path


def read_manifest(root: str) -> Dict[str, Any]:
    path = os.path.join(root, MANIFEST_FILE)
    if not os.path.isfile(path):
        raise DatasetError(f"no {MANIFEST_FILE} in dataset directory {root}")
    try:
        with open(path, "r") as f:
            manifest = json.load(f)
        validate(manifest, MANIFEST_SCHEMA)
    except json.JSONDecodeError as e:
        raise DatasetError(f"{path} is not valid JSON: {e}") from e
    except ValidationError as e:
        raise DatasetError(f"{path} does not match the manifest schema: {e.message}") from e
    return manifest


def _parse_numbers(parts: List[str], count: int, path: str, lineno: int) -> np.ndarray:
    if len(parts) != count:
        raise DatasetError(f"{path}:{lineno}: expected {count} numbers, got {len(parts)}")
    try:
        return np.array([float(v) for v in parts])
    except ValueError as e:
        raise DatasetError(f"{path}:{lineno}: {e}") from e


def read_poses(path: str) -> Tuple[Optional[SE3Params], Optional[SE3Params], List[ObjectMotionGT], Dict[int, Pose4x4]]:
    ego: Dict[str, SE3Params] = {}
    objects: List[ObjectMotionGT] = []
    poses: Dict[int, Pose4x4] = {}
    if not os.path.isfile(path):
        return None, None, objects, poses
    with open(path, "r") as f:
        for lineno, raw in enumerate(f, start=1):
            parts = raw.split()
            if not parts:
                continue
            tag, rest = parts[0], parts[1:]
            try:
                if tag in ("ego_12", "ego_23"):
                    ego[tag] = SE3Params.from_vector(_parse_numbers(rest, 6, path, lineno))
                elif tag == "object":
                    values = _parse_numbers(rest[2:], 12, path, lineno)
                    objects.append(ObjectMotionGT(
                        instance=int(rest[0]),
                        category=int(rest[1]),
                        motion_12=SE3Params.from_vector(values[:6]),
                        motion_23=SE3Params.from_vector(values[6:]),
                    ))
                elif tag == "pose":
                    matrix = np.eye(4)
                    matrix[:3] = _parse_numbers(rest[1:], 12, path, lineno).reshape(3, 4)
                    poses[int(rest[0])] = Pose4x4(matrix=matrix)
                else:
                    raise DatasetError(f"{path}:{lineno}: unknown line type {tag!r}")
            except DatasetError:
                raise
            except (ValueError, IndexError) as e:
                raise DatasetError(f"{path}:{lineno}: {e}") from e
    return ego.get("ego_12"), ego.get("ego_23"), objects, poses


def read_entry(root: str, record: Dict[str, Any]) -> DatasetEntry:
    directory = os.path.join(root, record["name"])
    if not os.path.isdir(directory):
        raise DatasetError(f"entry directory {directory} is missing")
    frames = record["frames"]

    images = np.stack([read_rgb(os.path.join(directory, f"frame_{k}.png")) for k in range(1, frames + 1)])
    mask_paths = [os.path.join(directory, f"mask_{k}.png") for k in range(1, frames + 1)]
    labels = np.stack([read_labels(p) for p in mask_paths]) if all(os.path.isfile(p) for p in mask_paths) else None
    depth_paths = [os.path.join(directory, f"depth_{k}.pfm") for k in range(1, frames + 1)]
    depths = np.stack([read_pfm(p) for p in depth_paths]) if all(os.path.isfile(p) for p in depth_paths) else None

    intrinsics_path = os.path.join(directory, "intrinsics.txt")
    if not os.path.isfile(intrinsics_path):
        raise DatasetError(f"{intrinsics_path} is missing")
    with open(intrinsics_path, "r") as f:
        try:
            intrinsics = Intrinsics.from_line(f.readline())
        except ValueError as e:
            raise DatasetError(f"{intrinsics_path}: {e}") from e

    ego_12, ego_23, objects, pose_map = read_poses(os.path.join(directory, "poses.txt"))
    poses = None
    if pose_map:
        if sorted(pose_map) != list(range(1, frames + 1)):
            raise DatasetError(f"{directory}: poses do not cover frames 1..{frames}")
        poses = [pose_map[k] for k in range(1, frames + 1)]
    elif ego_12 is not None and ego_23 is not None and frames == 3:
        second = as_pose(ego_12)
        poses = [Pose4x4.identity(), second, second @ as_pose(ego_23)]

    co_moving = {o["instance"]: o.get("co_moving", False) for o in record.get("objects", [])}
    objects = [o.model_copy(update={"co_moving": co_moving.get(o.instance, False)}) for o in objects]
    sequence = FrameSequence(
        images=images,
        intrinsics=intrinsics,
        labels=labels,
        categories=record.get("categories", []),
        depths=depths,
        poses=poses,
        name=record["name"],
    )
    return DatasetEntry(
        name=record["name"],
        kind=record["kind"],
        sequence=sequence,
        seed=record.get("seed"),
        preset=record.get("preset"),
        ego_12=ego_12,
        ego_23=ego_23,
        objects=objects,
    )


class DirectoryProvider(DatasetProvider):
    """Reads (``action=read``) or writes (``action=write``) a canonical dataset directory"""

    name = "directory"

    def execute(self, config: Dict[str, Any], inputs: Dict[str, Any] = None) -> Dict[str, Any]:
        inputs = inputs or {}
        root = config.get("path")
        if not root:
            raise DatasetError("a dataset path is required")
        if config.get("action", "read") == "write":
            return self._write(root, inputs.get("entries", []), inputs.get("apparent", {}), config.get("manifest", {}))
        return self._read(root)

    def _read(self, root: str) -> Dict[str, Any]:
        if not os.path.isdir(root):
            raise DatasetError(f"dataset directory not found: {root}")
        manifest = read_manifest(root)
        entries = [read_entry(root, record) for record in manifest["entries"]]
        logger.info(f"Loaded {len(entries)} entries from {root}")
        return {"entries": entries, "manifest": manifest}

    def _write(self, root: str, entries: List[DatasetEntry], apparent: Dict[str, Dict[int, float]],
               fields: Dict[str, Any]) -> Dict[str, Any]:
        try:
            os.makedirs(root, exist_ok=True)
            records = [write_entry(root, entry, apparent.get(entry.name)) for entry in entries]
            path = write_manifest(root, records, **fields)
        except ValidationError as e:
            raise DatasetError(f"manifest for {root} does not match the schema: {e.message}") from e
        except OSError as e:
            raise DatasetError(f"cannot write dataset to {root}: {e}") from e
        logger.info(f"Wrote {len(records)} entries to {root}")
        return {"manifest": path, "records": records}


def load_dataset(root: str) -> List[DatasetEntry]:
    return DirectoryProvider().execute({"path": root})["entries"]
