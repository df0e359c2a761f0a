import json
import os

import numpy as np
import pytest
from PIL import Image

from src.components import cli
from src.components.cli import EXIT_CRASH, EXIT_ERROR, EXIT_OK, build_parser, build_run_config, main
from src.components.commands import METRICS_CSV, ODOMETRY_CSV, EntryPrediction, cmd_report, write_evaluation
from src.models.metrics import DepthMetrics, RunMetrics
from src.models.settings import RunConfig, TrainMode
from src.services.checkpoint import save_checkpoint
from src.services.geometry import decompose, invert
from src.services.networks import ModelBundle
from src.services.providers.synthetic_provider import SyntheticProvider, sample_entry
from src.services.report_manager import METRICS_FILE, ReportManager
from src.utils.errors import ConfigError

MICRO = ["--height", "16", "--width", "48", "--progress", "off"]


def _files(root):
    found = {}
    for directory, _, names in os.walk(root):
        for name in names:
            path = os.path.join(directory, name)
            with open(path, "rb") as f:
                found[os.path.relpath(path, root)] = f.read()
    return found


def test_generate_is_deterministic(tmp_path):
    for name in ("a", "b"):
        code = main(["generate", "--n", "2", "--seed", "11", "--out", str(tmp_path / name)] + MICRO)
        assert code == EXIT_OK
    first, second = _files(tmp_path / "a"), _files(tmp_path / "b")
    assert first == second
    manifest = json.loads(first["manifest.json"])
    assert [e["name"] for e in manifest["entries"]] == ["000000", "000001"]


def test_generate_sequences(tmp_path):
    code = main(["generate", "--n", "1", "--sequence-length", "5", "--out", str(tmp_path)] + MICRO)
    assert code == EXIT_OK
    manifest = json.loads((tmp_path / "manifest.json").read_text())
    assert manifest["entries"][0]["kind"] == "sequence"


def test_missing_dataset_is_a_user_error(tmp_path):
    assert main(["train", "--out", str(tmp_path), "--progress", "off"]) == EXIT_ERROR
    assert main(["train", "--dataset", str(tmp_path / "absent"), "--out", str(tmp_path)]) == EXIT_ERROR


def test_missing_checkpoint_is_a_user_error(tmp_path):
    main(["generate", "--out", str(tmp_path / "data")] + MICRO)
    code = main(["eval", "--dataset", str(tmp_path / "data"), "--checkpoint", str(tmp_path / "none.bin"),
                 "--out", str(tmp_path / "eval")])
    assert code == EXIT_ERROR


def test_missing_config_file_is_a_user_error(tmp_path):
    assert main(["generate", "--config", str(tmp_path / "absent.conf"), "--out", str(tmp_path)]) == EXIT_ERROR


def test_invalid_values_are_user_errors(tmp_path):
    assert main(["generate", "--n", "0", "--out", str(tmp_path)]) == EXIT_ERROR
    conf = tmp_path / "bad.conf"
    conf.write_text("no_such_key=1\n")
    assert main(["generate", "--config", str(conf), "--out", str(tmp_path)]) == EXIT_ERROR


def test_unexpected_failure_is_a_crash(tmp_path, monkeypatch):
    def explode(run):
        raise RuntimeError("boom")

    monkeypatch.setitem(cli.COMMANDS, "generate", explode)
    assert main(["generate", "--out", str(tmp_path)]) == EXIT_CRASH


def test_flags_override_file_values():
    args = build_parser().parse_args(["train", "--steps", "3", "--mode", "motion"])
    run = build_run_config(args, {"steps": 7, "learning_rate": 0.01})
    assert run.steps == 3
    assert run.learning_rate == 0.01
    assert run.mode == TrainMode.MOTION


def test_invalid_flag_combination_raises_config_error():
    args = build_parser().parse_args(["train", "--batch-size", "0"])
    with pytest.raises(ConfigError):
        build_run_config(args, {})


def test_ground_truth_predictions_score_zero(tmp_path, rigid_sample):
    entry = sample_entry(rigid_sample, "000000")
    windows = entry.triplets()
    prediction = EntryPrediction(
        entry=entry,
        windows=windows,
        depths=[w.depths[1] for w in windows],
        motions=[(rigid_sample.ego_12, rigid_sample.ego_23)],
    )
    run = RunConfig(command="eval", out=str(tmp_path), name="oracle")
    summary = write_evaluation(run, str(tmp_path), [prediction])
    assert summary.name == "oracle"
    assert summary.depth.abs_rel == pytest.approx(0.0, abs=1e-9)
    assert summary.depth.delta1 == pytest.approx(1.0)
    assert summary.odometry is None
    assert (tmp_path / METRICS_FILE).is_file()
    assert (tmp_path / METRICS_CSV).is_file()
    assert (tmp_path / "depth" / f"{windows[0].name}.png").is_file()


def test_ground_truth_motion_has_zero_trajectory_error(tmp_path):
    result = SyntheticProvider().execute({"n": 1, "seed": 4, "height": 16, "width": 48, "sequence_length": 6})
    entry = result["entries"][0]
    poses = entry.sequence.poses
    windows = entry.triplets()
    motions = [
        (decompose(invert(poses[k]) @ poses[k + 1]), decompose(invert(poses[k + 1]) @ poses[k + 2]))
        for k in range(len(windows))
    ]
    prediction = EntryPrediction(entry=entry, windows=windows, depths=[w.depths[1] for w in windows],
                                 motions=motions)
    run = RunConfig(command="refine", out=str(tmp_path), name="oracle")
    summary = write_evaluation(run, str(tmp_path), [prediction])
    assert summary.num_samples == 4
    assert len(summary.odometry.per_snippet) == 2
    assert summary.odometry.mean == pytest.approx(0.0, abs=1e-6)
    assert (tmp_path / ODOMETRY_CSV).is_file()


def test_report_orders_runs(tmp_path, capsys):
    manager = ReportManager(use_database=False)
    for name, abs_rel in (("worse", 0.3), ("better", 0.1)):
        depth = DepthMetrics(abs_rel=abs_rel, sq_rel=1.0, rmse=4.0, rmse_log=0.2, delta1=0.8, delta2=0.9, delta3=0.95)
        manager.save_run(RunMetrics(name=name, depth=depth, num_samples=1), str(tmp_path / name))
    run = RunConfig(command="report", runs=[str(tmp_path / "worse"), str(tmp_path / "better")],
                    out=str(tmp_path / "report"))
    text = cmd_report(run)
    assert text.index("better") < text.index("worse")
    assert "better" in capsys.readouterr().out
    assert (tmp_path / "report" / "report.csv").is_file()
    assert (tmp_path / "report" / "report.txt").read_text().strip() == text.strip()


def test_report_without_runs_is_a_user_error(tmp_path):
    assert main(["report", "--out", str(tmp_path)]) == EXIT_ERROR


def test_generate_converts_driving_sequences(tmp_path):
    source = tmp_path / "raw"
    (source / "image").mkdir(parents=True)
    rng = np.random.default_rng(0)
    for k in range(3):
        pixels = (rng.uniform(size=(32, 64, 3)) * 255).astype(np.uint8)
        Image.fromarray(pixels).save(source / "image" / f"{k:06d}.png")
    (source / "calib.txt").write_text("K: 50 0 31.5 0 50 15.5 0 0 1\n")

    out = tmp_path / "converted"
    code = main(["generate", "--from-kitti", str(source), "--height", "16", "--width", "32",
                 "--name", "drive", "--out", str(out)])
    assert code == EXIT_OK
    manifest = json.loads((out / "manifest.json").read_text())
    assert [(e["name"], e["kind"], e["frames"]) for e in manifest["entries"]] == [("drive", "sequence", 3)]
    assert main(["generate", "--from-kitti", str(tmp_path / "absent"), "--out", str(out)]) == EXIT_ERROR


def test_refinement_without_learning_rate_reproduces_eval(tmp_path):
    main(["generate", "--n", "1", "--sequence-length", "5", "--out", str(tmp_path / "data")] + MICRO)
    checkpoint = str(tmp_path / "fresh.bin")
    save_checkpoint(checkpoint, ModelBundle(seed=3).state_dict())
    shared = ["--dataset", str(tmp_path / "data"), "--checkpoint", checkpoint, "--progress", "off"]
    assert main(["eval", "--out", str(tmp_path / "eval")] + shared) == EXIT_OK
    code = main(["refine", "--out", str(tmp_path / "refine"), "--refine-steps", "2",
                 "--refine-learning-rate", "0"] + shared)
    assert code == EXIT_OK
    plain = json.loads((tmp_path / "eval" / METRICS_FILE).read_text())
    refined = json.loads((tmp_path / "refine" / METRICS_FILE).read_text())
    assert refined["depth"] == plain["depth"]
    assert refined["odometry"] == plain["odometry"]
    assert (tmp_path / "eval" / METRICS_CSV).read_text() == (tmp_path / "refine" / METRICS_CSV).read_text()
