import numpy as np
import pytest

from src.services.checkpoint import SEPARATOR, load_checkpoint, save_checkpoint
from src.services.networks import ModelBundle
from src.utils.errors import CheckpointError


def test_model_state_survives_a_checkpoint(tmp_path):
    models = ModelBundle(seed=2, num_categories=2)
    path = tmp_path / "run" / "checkpoint.bin"
    save_checkpoint(str(path), models.state_dict())
    restored = ModelBundle(seed=9, num_categories=2)
    restored.load_state_dict(load_checkpoint(str(path)))
    for name, value in models.state_dict().items():
        np.testing.assert_array_equal(restored.state_dict()[name], value)


def test_identical_states_give_identical_bytes(tmp_path):
    state = {"b": np.arange(6.0).reshape(2, 3), "a": np.array(1.5)}
    save_checkpoint(str(tmp_path / "one.bin"), state)
    save_checkpoint(str(tmp_path / "two.bin"), dict(reversed(list(state.items()))))
    assert (tmp_path / "one.bin").read_bytes() == (tmp_path / "two.bin").read_bytes()


def test_file_layout(tmp_path):
    path = tmp_path / "c.bin"
    save_checkpoint(str(path), {"w": np.array([[1.0, 2.0]]), "s": np.array(3.0)})
    raw = path.read_bytes()
    assert raw.startswith(b"s\nw 1 2\n---\n")
    assert np.frombuffer(raw[len(b"s\nw 1 2\n---\n"):], dtype="<f8").tolist() == [3.0, 1.0, 2.0]
    loaded = load_checkpoint(str(path))
    assert loaded["s"].shape == ()
    assert loaded["w"].shape == (1, 2)


def test_empty_state(tmp_path):
    path = tmp_path / "empty.bin"
    save_checkpoint(str(path), {})
    assert path.read_bytes() == SEPARATOR
    assert load_checkpoint(str(path)) == {}


def test_invalid_names_are_rejected(tmp_path):
    with pytest.raises(CheckpointError):
        save_checkpoint(str(tmp_path / "x.bin"), {"two words": np.zeros(1)})


@pytest.mark.parametrize("raw", [
    b"w 2\n",
    b"w 2\n---\n" + np.zeros(1, dtype="<f8").tobytes(),
    b"w two\n---\n" + np.zeros(2, dtype="<f8").tobytes(),
    b"w 1\nw 1\n---\n" + np.zeros(2, dtype="<f8").tobytes(),
    b"\xff\xfe 1\n---\n" + np.zeros(1, dtype="<f8").tobytes(),
])
def test_corrupt_files_are_rejected(tmp_path, raw):
    path = tmp_path / "bad.bin"
    path.write_bytes(raw)
    with pytest.raises(CheckpointError):
        load_checkpoint(str(path))


def test_missing_file(tmp_path):
    with pytest.raises(CheckpointError):
        load_checkpoint(str(tmp_path / "absent.bin"))
