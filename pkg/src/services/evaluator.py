import csv
import logging
import os
from typing import List, Optional, Sequence, Tuple, Union

import numpy as np

from src.models.geometry import Pose4x4, SE3Params
from src.models.metrics import DEPTH_METRIC_NAMES, LOWER_IS_BETTER, DepthMetrics, OdometrySummary, RunMetrics
from src.models.settings import EvalConfig
from src.services.geometry import as_pose, invert
from src.utils.errors import EvaluationError, ShapeError

logger = logging.getLogger(__name__)


def depth_metrics(
    pred: np.ndarray,
    gt: np.ndarray,
    valid_mask: Optional[np.ndarray] = None,
    cap: float = 80.0,
    median_scale: bool = True,
    min_depth: float = 1e-3,
) -> DepthMetrics:
    """Standard depth error statistics over valid ground-truth pixels up to ``cap``"""
    pred = np.asarray(pred, dtype=np.float64)
    gt = np.asarray(gt, dtype=np.float64)
    if pred.shape != gt.shape:
        raise ShapeError(f"prediction {pred.shape} and ground truth {gt.shape} differ in shape")
    with np.errstate(invalid="ignore"):
        valid = np.isfinite(gt) & (gt > 0) & (gt <= cap)
    if valid_mask is not None:
        valid &= np.asarray(valid_mask, dtype=bool)
    if not valid.any():
        raise EvaluationError("no valid ground-truth pixels to evaluate")

    gt = gt[valid]
    pred = pred[valid]
    if median_scale:
        pred = pred * (np.median(gt) / np.median(pred))
    pred = np.clip(pred, min_depth, cap)

    thresh = np.maximum(gt / pred, pred / gt)
    a1 = (thresh < 1.25).mean()
    a2 = (thresh < 1.25 ** 2).mean()
    a3 = (thresh < 1.25 ** 3).mean()

    rmse = np.sqrt(((gt - pred) ** 2).mean())
    rmse_log = np.sqrt(((np.log(gt) - np.log(pred)) ** 2).mean())
    abs_rel = np.mean(np.abs(gt - pred) / gt)
    sq_rel = np.mean(((gt - pred) ** 2) / gt)
    return DepthMetrics(abs_rel=abs_rel, sq_rel=sq_rel, rmse=rmse, rmse_log=rmse_log,
                        delta1=a1, delta2=a2, delta3=a3)


def evaluate_depths(preds: Sequence[np.ndarray], gts: Sequence[np.ndarray],
                    config: Optional[EvalConfig] = None) -> Tuple[List[DepthMetrics], DepthMetrics]:
    """Per-sample metrics and their mean"""
    config = config or EvalConfig()
    if len(preds) != len(gts):
        raise EvaluationError(f"{len(preds)} predictions for {len(gts)} ground-truth maps")
    per_sample = [
        depth_metrics(p, g, cap=config.cap, median_scale=config.median_scale, min_depth=config.min_depth)
        for p, g in zip(preds, gts)
    ]
    return per_sample, DepthMetrics.mean_of(per_sample)


PoseLike = Union[Pose4x4, SE3Params]


def relative_poses_from_windows(motions: Sequence[Tuple[PoseLike, PoseLike]]) -> List[Pose4x4]:
    """Consecutive-frame motions from per-window (E_12, E_23) pairs.

    Pair k uses the E_12 of window k; the final pair uses the E_23 of the last window.
    """
    if not motions:
        raise EvaluationError("no window motions to chain")
    relative = [as_pose(e12) for e12, _ in motions]
    relative.append(as_pose(motions[-1][1]))
    return relative


def snippet_ate(relative: Sequence[PoseLike], gt_poses: Sequence[Pose4x4]) -> float:
    """Scale-aligned RMSE of camera positions over one snippet.

    ``relative[j]`` carries frame j+1 into frame j; ``gt_poses`` are camera-to-world.
    Both trajectories start at the origin.
    """
    if len(relative) != len(gt_poses) - 1:
        raise EvaluationError(f"{len(relative)} relative poses for {len(gt_poses)} frames")
    pose = np.eye(4)
    predicted = [pose[:3, 3].copy()]
    for step in relative:
        pose = pose @ as_pose(step).matrix
        predicted.append(pose[:3, 3].copy())
    origin = invert(gt_poses[0])
    actual = [(origin @ g).translation for g in gt_poses]
    pred = np.array(predicted)
    gt = np.array(actual)
    denominator = np.sum(pred ** 2)
    scale = np.sum(gt * pred) / denominator if denominator > 0 else 0.0
    errors = gt - scale * pred
    return float(np.sqrt(np.sum(errors ** 2) / len(gt)))


def odometry_ate(relative: Sequence[PoseLike], gt_poses: Sequence[Pose4x4], snippet_length: int = 5) -> OdometrySummary:
    """Mean and standard deviation of snippet ATE over every window of ``snippet_length`` frames (stride 1)"""
    if len(gt_poses) < snippet_length:
        raise EvaluationError(f"odometry needs at least {snippet_length} frames, got {len(gt_poses)}")
    if len(relative) != len(gt_poses) - 1:
        raise EvaluationError(f"{len(relative)} relative poses for {len(gt_poses)} frames")
    errors = [
        snippet_ate(relative[s:s + snippet_length - 1], gt_poses[s:s + snippet_length])
        for s in range(len(gt_poses) - snippet_length + 1)
    ]
    return OdometrySummary(mean=float(np.mean(errors)), std=float(np.std(errors)), per_snippet=errors)


def _header(name: str) -> str:
    if name not in LOWER_IS_BETTER:
        return name
    return f"{name} {'↓' if LOWER_IS_BETTER[name] else '↑'}"


def compare_report(runs: Sequence[RunMetrics]) -> Tuple[str, List[List[str]]]:
    """Aligned text table and CSV rows, best abs_rel first.

    Odometry columns appear only when some run has odometry; runs without it show '-'.
    """
    ordered = sorted(runs, key=lambda r: r.depth.abs_rel)
    with_odometry = any(r.odometry is not None for r in ordered)
    columns = list(DEPTH_METRIC_NAMES) + (["ate_mean", "ate_std"] if with_odometry else [])
    header = ["run"] + [_header(c) for c in columns]
    rows = []
    for run in ordered:
        row = [run.name] + [f"{v:.4f}" for v in run.depth.as_row()]
        if with_odometry:
            if run.odometry is None:
                row += ["-", "-"]
            else:
                row += [f"{run.odometry.mean:.4f}", f"{run.odometry.std:.4f}"]
        rows.append(row)
    widths = [max(len(str(cell)) for cell in col) for col in zip(header, *rows)]
    lines = ["  ".join(cell.ljust(w) for cell, w in zip(line, widths)).rstrip() for line in [header] + rows]
    lines.insert(1, "  ".join("-" * w for w in widths))
    return "\n".join(lines), [header] + rows


def _open_csv(path: str):
    directory = os.path.dirname(path)
    if directory:
        os.makedirs(directory, exist_ok=True)
    return open(path, "w", newline="")


def write_metrics_csv(path: str, names: Sequence[str], metrics: Sequence[DepthMetrics]) -> None:
    with _open_csv(path) as f:
        writer = csv.writer(f)
        writer.writerow(("sample",) + DEPTH_METRIC_NAMES)
        for name, m in zip(names, metrics):
            writer.writerow([name] + [repr(float(v)) for v in m.as_row()])


def write_odometry_csv(path: str, summary: OdometrySummary) -> None:
    with _open_csv(path) as f:
        writer = csv.writer(f)
        writer.writerow(("snippet_index", "ate"))
        for index, ate in enumerate(summary.per_snippet):
            writer.writerow([index, repr(float(ate))])


def write_report_csv(path: str, rows: Sequence[Sequence[str]]) -> None:
    with _open_csv(path) as f:
        csv.writer(f).writerows(rows)
