"""Implementations of the generate, train, refine, eval and report commands"""
import logging
import os
from typing import Any, Dict, List, Optional, Tuple

import numpy as np
from pydantic import BaseModel, ConfigDict, Field

from src.components.visualize import save_depth_panel
from src.models.geometry import SE3Params
from src.models.metrics import DepthMetrics, OdometrySummary, RunMetrics
from src.models.scene import DatasetEntry, FrameTriplet
from src.models.settings import RunConfig, TrainMode
from src.services.checkpoint import load_checkpoint, save_checkpoint
from src.services.evaluator import (
    compare_report,
    depth_metrics,
    odometry_ate,
    relative_poses_from_windows,
    write_metrics_csv,
    write_odometry_csv,
    write_report_csv,
)
from src.services.networks import ModelBundle
from src.services.providers.directory_provider import DirectoryProvider, load_dataset
from src.services.providers.kitti_provider import KittiProvider
from src.services.providers.synthetic_provider import SyntheticProvider
from src.services.report_manager import ReportManager
from src.services.synth_scenes import apparent_motion
from src.services.trainer import Trainer, online_refine, predict_depth, predict_motion
from src.utils.config import get_config_value
from src.utils.errors import CheckpointError, ConfigError, DatasetError, EvaluationError

logger = logging.getLogger(__name__)

CHECKPOINT_FILE = "checkpoint.bin"
LOSS_CURVE_FILE = "loss_curve.csv"
METRICS_CSV = "metrics.csv"
ODOMETRY_CSV = "odometry.csv"
PANEL_DIR = "depth"


class EntryPrediction(BaseModel):
    """Per-window predictions of one dataset entry"""

    model_config = ConfigDict(arbitrary_types_allowed=True)

    entry: DatasetEntry
    windows: List[FrameTriplet]
    depths: List[np.ndarray]
    motions: List[Tuple[SE3Params, SE3Params]] = Field(default_factory=list)


# -- validation --------------------------------------------------------------------

def _output_dir(run: RunConfig) -> str:
    out = run.out or os.path.join(get_config_value("app.out_dir", "runs"), run.command)
    try:
        os.makedirs(out, exist_ok=True)
    except OSError as e:
        raise ConfigError(f"cannot create output directory {out}: {e}") from e
    if not os.access(out, os.W_OK):
        raise ConfigError(f"output directory {out} is not writable")
    return out


def _require_dataset(run: RunConfig) -> str:
    if not run.dataset:
        raise ConfigError(f"the {run.command} command needs --dataset")
    if not os.path.isdir(run.dataset):
        raise DatasetError(f"dataset directory not found: {run.dataset}")
    return run.dataset


def _require_checkpoint(run: RunConfig) -> str:
    if not run.checkpoint:
        raise ConfigError(f"the {run.command} command needs --checkpoint")
    if not os.path.isfile(run.checkpoint):
        raise CheckpointError(f"checkpoint not found: {run.checkpoint}")
    return run.checkpoint


def _load_models(path: str) -> Tuple[ModelBundle, Dict[str, np.ndarray]]:
    state = load_checkpoint(path)
    num_categories = int(np.asarray(state["priors"]).size) if "priors" in state else 1
    models = ModelBundle(num_categories=num_categories)
    models.load_state_dict(state)
    return models, state


def _dataset_categories(entries: List[DatasetEntry]) -> int:
    categories = [c for e in entries for c in e.sequence.categories]
    return max(categories) if categories else 1


# -- generate ----------------------------------------------------------------------

def cmd_generate(run: RunConfig) -> str:
    """Render ``n`` synthetic entries, or convert a driving sequence, into a canonical dataset directory"""
    out = _output_dir(run)
    if run.from_kitti:
        if not os.path.isdir(run.from_kitti):
            raise DatasetError(f"source directory not found: {run.from_kitti}")
        KittiProvider().execute({"source": run.from_kitti, "out": out, "height": run.height, "width": run.width,
                                 "name": run.name or "kitti_0000"})
        logger.info(f"Converted {run.from_kitti} into {out}")
        return out
    result = SyntheticProvider().execute({
        "preset": run.preset,
        "n": run.n,
        "seed": run.seed,
        "height": run.height,
        "width": run.width,
        "sequence_length": run.sequence_length,
    })
    apparent = {
        entry.name: apparent_motion(sample)
        for entry, sample in zip(result["entries"], result["samples"])
    }
    DirectoryProvider().execute(
        {
            "path": out,
            "action": "write",
            "manifest": {"preset": run.preset.value, "seed": run.seed, "height": run.height, "width": run.width},
        },
        {"entries": result["entries"], "apparent": apparent},
    )
    logger.info(f"Dataset with {len(result['entries'])} entries written to {out}")
    return out


# -- train -------------------------------------------------------------------------

def cmd_train(run: RunConfig) -> str:
    """Train from scratch on every 3-frame window of the dataset; returns the checkpoint path"""
    dataset = _require_dataset(run)
    out = _output_dir(run)
    entries = load_dataset(dataset)
    triplets = [t for entry in entries for t in entry.triplets()]
    config = run.train_config()
    needed = _dataset_categories(entries)
    if needed > config.num_categories:
        logger.info(f"Dataset uses {needed} categories; widening the prior table from {config.num_categories}")
        config = config.model_copy(update={"num_categories": needed})

    models = ModelBundle(seed=config.seed, num_categories=config.num_categories, prior_init=config.size_prior_init)
    logger.info(f"Training {config.mode.value} model ({models.num_parameters()} weights) "
                f"on {len(triplets)} triplets for {config.steps} steps")
    Trainer(models, config).train(triplets, curve_path=os.path.join(out, LOSS_CURVE_FILE))
    path = os.path.join(out, CHECKPOINT_FILE)
    save_checkpoint(path, models.state_dict())
    return path


# -- eval / refine -----------------------------------------------------------------

def _predict_entries(models: ModelBundle, entries: List[DatasetEntry], mode: TrainMode) -> List[EntryPrediction]:
    predictions = []
    for entry in entries:
        windows = entry.triplets()
        predictions.append(EntryPrediction(
            entry=entry,
            windows=windows,
            depths=[predict_depth(models, w.images[1]) for w in windows],
            motions=[predict_motion(models, w, mode) for w in windows],
        ))
    return predictions


def _refine_entries(run: RunConfig, state: Dict[str, np.ndarray], entries: List[DatasetEntry]) -> List[EntryPrediction]:
    refine_config = run.refine_config()
    train_config = run.train_config()
    predictions = []
    for entry in entries:
        result = online_refine(entry.sequence, state, refine_config, train_config)
        if not refine_config.reset_per_sequence:
            state = result.state
        predictions.append(EntryPrediction(
            entry=entry,
            windows=entry.triplets(),
            depths=[w.depth for w in result.windows],
            motions=[(w.ego_12, w.ego_23) for w in result.windows],
        ))
    return predictions


def write_evaluation(run: RunConfig, out: str, predictions: List[EntryPrediction]) -> RunMetrics:
    """Depth panels, metrics CSV, odometry CSV and metrics.json for a set of predictions"""
    eval_config = run.eval_config()
    names: List[str] = []
    metrics: List[DepthMetrics] = []
    snippets: List[float] = []
    for prediction in predictions:
        for window, depth in zip(prediction.windows, prediction.depths):
            save_depth_panel(os.path.join(out, PANEL_DIR, f"{window.name}.png"), window.images[1], depth)
            if window.depths is None:
                continue
            try:
                metrics.append(depth_metrics(depth, window.depths[1], cap=eval_config.cap,
                                             median_scale=eval_config.median_scale,
                                             min_depth=eval_config.min_depth))
                names.append(window.name)
            except EvaluationError as e:
                logger.warning(f"{window.name}: {e}")

        poses = prediction.entry.sequence.poses
        if poses is not None and len(poses) >= eval_config.snippet_length:
            relative = relative_poses_from_windows(prediction.motions)
            snippets.extend(odometry_ate(relative, poses, eval_config.snippet_length).per_snippet)

    if not metrics:
        raise EvaluationError("no window has usable ground-truth depth")
    write_metrics_csv(os.path.join(out, METRICS_CSV), names, metrics)
    odometry: Optional[OdometrySummary] = None
    if snippets:
        odometry = OdometrySummary(mean=float(np.mean(snippets)), std=float(np.std(snippets)), per_snippet=snippets)
        write_odometry_csv(os.path.join(out, ODOMETRY_CSV), odometry)

    summary = RunMetrics(
        name=run.name or os.path.basename(os.path.normpath(out)),
        depth=DepthMetrics.mean_of(metrics),
        odometry=odometry,
        num_samples=len(metrics),
        config={"mode": run.mode.value, "median_scale": eval_config.median_scale, "cap": eval_config.cap},
    )
    manager = ReportManager()
    try:
        manager.save_run(summary, out, command=run.command, checkpoint=run.checkpoint, dataset=run.dataset)
    finally:
        manager.close()
    logger.info(f"{summary.name}: abs_rel={summary.depth.abs_rel:.4f} rmse={summary.depth.rmse:.4f} "
                f"d1={summary.depth.delta1:.4f} over {len(metrics)} windows")
    return summary


def cmd_eval(run: RunConfig) -> RunMetrics:
    """Evaluate a checkpoint on the dataset's ground truth"""
    checkpoint = _require_checkpoint(run)
    dataset = _require_dataset(run)
    out = _output_dir(run)
    models, _ = _load_models(checkpoint)
    predictions = _predict_entries(models, load_dataset(dataset), run.mode)
    return write_evaluation(run, out, predictions)


def cmd_refine(run: RunConfig) -> RunMetrics:
    """Evaluate with online refinement; each entry starts again from the checkpoint"""
    checkpoint = _require_checkpoint(run)
    dataset = _require_dataset(run)
    out = _output_dir(run)
    _, state = _load_models(checkpoint)
    predictions = _refine_entries(run, state, load_dataset(dataset))
    return write_evaluation(run, out, predictions)


# -- report ------------------------------------------------------------------------

def cmd_report(run: RunConfig) -> str:
    """Comparison table over evaluated runs, best abs_rel first"""
    manager = ReportManager()
    try:
        runs = manager.load_runs(run.runs) if run.runs else manager.load_registered_runs()
    finally:
        manager.close()
    if not runs:
        raise EvaluationError("no runs to report; pass run directories with --runs")
    text, rows = compare_report(runs)
    if run.out:
        out = _output_dir(run)
        write_report_csv(os.path.join(out, "report.csv"), rows)
        with open(os.path.join(out, "report.txt"), "w") as f:
            f.write(text + "\n")
    print(text)
    return text


COMMANDS: Dict[str, Any] = {
    "generate": cmd_generate,
    "train": cmd_train,
    "refine": cmd_refine,
    "eval": cmd_eval,
    "report": cmd_report,
}
