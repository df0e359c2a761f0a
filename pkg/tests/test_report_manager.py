import json

import pytest

from src.models.metrics import DepthMetrics, OdometrySummary, RunMetrics
from src.services.report_manager import METRICS_FILE, ReportManager
from src.utils.errors import EvaluationError


def _run(name: str, abs_rel: float = 0.1, odometry: bool = False) -> RunMetrics:
    depth = DepthMetrics(abs_rel=abs_rel, sq_rel=0.2, rmse=3.0, rmse_log=0.2, delta1=0.7, delta2=0.9, delta3=0.97)
    summary = OdometrySummary(mean=0.01, std=0.002, per_snippet=[0.01]) if odometry else None
    return RunMetrics(name=name, depth=depth, odometry=summary, num_samples=4, config={"mode": "baseline"})


def test_metrics_file_round_trip(tmp_path):
    manager = ReportManager(use_database=False)
    path = manager.save_run(_run("a", odometry=True), str(tmp_path / "a"))
    data = json.loads(open(path).read())
    assert data["name"] == "a"
    assert list(data) == sorted(data)
    runs = manager.load_runs([str(tmp_path / "a"), path])
    assert runs[0] == runs[1]
    assert runs[0].odometry.mean == 0.01


def test_missing_or_broken_metrics(tmp_path):
    manager = ReportManager(use_database=False)
    with pytest.raises(EvaluationError):
        manager.load_runs([str(tmp_path / "nothing")])
    (tmp_path / METRICS_FILE).write_text("{}")
    with pytest.raises(EvaluationError):
        manager.load_runs([str(tmp_path)])


def test_registry_keeps_latest_run_per_name(tmp_path):
    manager = ReportManager(use_database=True, db_url=f"sqlite:///{tmp_path / 'runs.db'}")
    assert manager.use_database
    manager.save_run(_run("a", abs_rel=0.3), str(tmp_path / "a1"), command="eval")
    manager.save_run(_run("a", abs_rel=0.2, odometry=True), str(tmp_path / "a2"), command="refine")
    manager.save_run(_run("b", abs_rel=0.1), str(tmp_path / "b"), command="eval")
    runs = {run.name: run for run in manager.load_registered_runs()}
    manager.close()
    assert set(runs) == {"a", "b"}
    assert runs["a"].depth.abs_rel == pytest.approx(0.2)
    assert runs["a"].odometry.mean == pytest.approx(0.01)
    assert runs["b"].odometry is None
    assert runs["b"].config == {"mode": "baseline"}


def test_unusable_registry_falls_back_to_files(tmp_path):
    manager = ReportManager(use_database=True, db_url="nosuchdialect://")
    assert not manager.use_database
    assert manager.load_registered_runs() == []
    manager.save_run(_run("c"), str(tmp_path / "c"))
    assert (tmp_path / "c" / METRICS_FILE).is_file()
