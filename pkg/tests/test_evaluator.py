import csv

import numpy as np
import pytest

from src.models.geometry import Pose4x4, SE3Params
from src.models.metrics import DepthMetrics, OdometrySummary, RunMetrics
from src.models.settings import EvalConfig
from src.services.evaluator import (
    compare_report,
    depth_metrics,
    evaluate_depths,
    odometry_ate,
    relative_poses_from_windows,
    snippet_ate,
    write_metrics_csv,
    write_odometry_csv,
)
from src.services.geometry import translation_pose
from src.utils.errors import EvaluationError, ShapeError


def _gt(rng):
    return rng.uniform(2.0, 60.0, (16, 48))


def _straight_line(count: int, step: float = 1.0):
    return [translation_pose([0.0, 0.0, step * k]) for k in range(count)]


def test_perfect_prediction_scores_zero(rng):
    gt = _gt(rng)
    m = depth_metrics(gt, gt)
    assert m.abs_rel == pytest.approx(0.0) and m.rmse == pytest.approx(0.0)
    assert m.delta1 == 1.0 and m.delta3 == 1.0


def test_median_scaling_removes_global_scale(rng):
    gt = _gt(rng)
    assert depth_metrics(2.0 * gt, gt).abs_rel == pytest.approx(0.0, abs=1e-12)
    assert depth_metrics(2.0 * gt, gt, median_scale=False, cap=200.0).abs_rel == pytest.approx(1.0)


def test_unscaled_relative_error(rng):
    gt = _gt(rng)
    m = depth_metrics(1.1 * gt, gt, median_scale=False, cap=200.0)
    assert m.abs_rel == pytest.approx(0.1)
    assert m.delta1 == 1.0


def test_invalid_and_capped_pixels_are_ignored(rng):
    gt = _gt(rng)
    pred = gt.copy()
    gt[0, :] = np.nan
    gt[1, :] = 0.0
    gt[2, :] = 500.0
    pred[:3] = 1e6
    assert depth_metrics(pred, gt).abs_rel == pytest.approx(0.0)
    mask = np.ones_like(gt, dtype=bool)
    mask[3:] = False
    with pytest.raises(EvaluationError):
        depth_metrics(pred, gt, valid_mask=mask)


def test_predictions_are_clamped_to_the_cap(rng):
    gt = np.full((4, 4), 10.0)
    pred = np.full((4, 4), 1000.0)
    m = depth_metrics(pred, gt, median_scale=False, cap=80.0)
    assert m.abs_rel == pytest.approx(7.0)


def test_shape_mismatch(rng):
    with pytest.raises(ShapeError):
        depth_metrics(np.ones((4, 4)), np.ones((4, 5)))


def test_evaluate_depths_averages(rng):
    gt = _gt(rng)
    per_sample, mean = evaluate_depths([gt, 1.1 * gt], [gt, gt], EvalConfig(median_scale=False, cap=200.0))
    assert len(per_sample) == 2
    assert mean.abs_rel == pytest.approx(0.05)
    with pytest.raises(EvaluationError):
        evaluate_depths([gt], [gt, gt])


def test_delta_accuracies_must_be_ordered():
    with pytest.raises(ValueError):
        DepthMetrics(abs_rel=0, sq_rel=0, rmse=0, rmse_log=0, delta1=0.9, delta2=0.5, delta3=1.0)


def test_ate_of_standing_still_against_a_line():
    relative = [Pose4x4.identity()] * 4
    assert snippet_ate(relative, _straight_line(5)) == pytest.approx(np.sqrt(6.0))


def test_ate_is_scale_invariant():
    relative = [translation_pose([0.0, 0.0, 2.0])] * 4
    assert snippet_ate(relative, _straight_line(5)) == pytest.approx(0.0, abs=1e-12)


def test_ate_is_relative_to_the_first_frame():
    relative = [translation_pose([0.0, 0.0, 1.0])] * 4
    shifted = [translation_pose([5.0, 1.0, 3.0 + k]) for k in range(5)]
    assert snippet_ate(relative, shifted) == pytest.approx(0.0, abs=1e-12)


def test_odometry_uses_every_snippet():
    gt = _straight_line(7)
    relative = [translation_pose([0.0, 0.0, 1.0])] * 6
    summary = odometry_ate(relative, gt)
    assert len(summary.per_snippet) == 3
    assert summary.mean == pytest.approx(0.0, abs=1e-12)
    assert summary.std == pytest.approx(0.0, abs=1e-12)


def test_odometry_needs_enough_frames():
    with pytest.raises(EvaluationError):
        odometry_ate([Pose4x4.identity()] * 3, _straight_line(4))
    with pytest.raises(EvaluationError):
        odometry_ate([Pose4x4.identity()] * 3, _straight_line(5))


def test_relative_poses_chain_windows():
    a = SE3Params(translation=(1.0, 0.0, 0.0))
    b = SE3Params(translation=(2.0, 0.0, 0.0))
    c = SE3Params(translation=(3.0, 0.0, 0.0))
    relative = relative_poses_from_windows([(a, b), (b, c)])
    assert [p.translation[0] for p in relative] == [1.0, 2.0, 3.0]
    with pytest.raises(EvaluationError):
        relative_poses_from_windows([])


def _run(name: str, abs_rel: float, odometry: bool = False) -> RunMetrics:
    depth = DepthMetrics(abs_rel=abs_rel, sq_rel=0.1, rmse=1.0, rmse_log=0.1, delta1=0.8, delta2=0.9, delta3=0.95)
    summary = OdometrySummary(mean=0.02, std=0.01, per_snippet=[0.01, 0.03]) if odometry else None
    return RunMetrics(name=name, depth=depth, odometry=summary, num_samples=2)


def test_report_sorts_by_abs_rel():
    text, rows = compare_report([_run("worse", 0.3), _run("better", 0.1)])
    assert rows[1][0] == "better" and rows[2][0] == "worse"
    assert "abs_rel ↓" in rows[0] and "d1 ↑" in rows[0]
    assert "ate_mean ↓" not in rows[0]
    lines = text.splitlines()
    assert lines[0].startswith("run")
    assert set(lines[1].replace(" ", "")) == {"-"}
    assert lines[2].startswith("better")
    assert "0.1000" in lines[2]


def test_report_shows_odometry_when_available():
    _, rows = compare_report([_run("plain", 0.2), _run("odo", 0.1, odometry=True)])
    assert rows[0][-2:] == ["ate_mean ↓", "ate_std ↓"]
    assert rows[1][-2:] == ["0.0200", "0.0100"]
    assert rows[2][-2:] == ["-", "-"]


def test_metrics_csv(tmp_path, rng):
    gt = _gt(rng)
    path = tmp_path / "nested" / "metrics.csv"
    write_metrics_csv(str(path), ["a"], [depth_metrics(gt, gt)])
    with open(path) as f:
        rows = list(csv.reader(f))
    assert rows[0] == ["sample", "abs_rel", "sq_rel", "rmse", "rmse_log", "d1", "d2", "d3"]
    assert rows[1][0] == "a" and float(rows[1][5]) == 1.0


def test_odometry_csv(tmp_path):
    path = tmp_path / "odometry.csv"
    write_odometry_csv(str(path), OdometrySummary(mean=0.5, std=0.5, per_snippet=[0.0, 1.0]))
    with open(path) as f:
        rows = list(csv.reader(f))
    assert rows == [["snippet_index", "ate"], ["0", "0.0"], ["1", "1.0"]]
