import struct

import numpy as np
import pytest

from flowinv.checkpoint import (
    load_checkpoint,
    load_null_schedule,
    save_checkpoint,
    save_null_schedule,
)
from flowinv.dataset import default_spec
from flowinv.errors import CheckpointError, CheckpointVersionError
from flowinv.nti import NullSchedule
from flowinv.training import TrainConfig, train


@pytest.fixture(scope="module")
def tiny_checkpoint():
    return train(default_spec(seed=0), TrainConfig(iterations=50, seed=2))


class TestCheckpointRoundTrip:
    def test_parameters_bitwise(self, tiny_checkpoint, tmp_path):
        path = tmp_path / "model.finv"
        save_checkpoint(tiny_checkpoint, path)
        loaded = load_checkpoint(path)
        for wa, wb in zip(tiny_checkpoint.field.weights, loaded.field.weights):
            assert np.array_equal(wa, wb)
        for ba, bb in zip(tiny_checkpoint.field.biases, loaded.field.biases):
            assert np.array_equal(ba, bb)
        assert np.array_equal(tiny_checkpoint.field.embeddings, loaded.field.embeddings)

    def test_spec_and_config_roundtrip(self, tiny_checkpoint, tmp_path):
        path = tmp_path / "model.finv"
        save_checkpoint(tiny_checkpoint, path)
        loaded = load_checkpoint(path)
        assert loaded.spec == tiny_checkpoint.spec
        assert loaded.config == tiny_checkpoint.config
        assert loaded.version == 1

    def test_save_is_byte_deterministic(self, tiny_checkpoint, tmp_path):
        a, b = tmp_path / "a.finv", tmp_path / "b.finv"
        save_checkpoint(tiny_checkpoint, a)
        save_checkpoint(tiny_checkpoint, b)
        assert a.read_bytes() == b.read_bytes()


class TestCheckpointErrors:
    def test_truncated_file(self, tiny_checkpoint, tmp_path):
        path = tmp_path / "model.finv"
        save_checkpoint(tiny_checkpoint, path)
        data = path.read_bytes()
        for cut in (0, 3, 8, 40, len(data) - 17):
            clipped = tmp_path / f"cut{cut}.finv"
            clipped.write_bytes(data[:cut])
            with pytest.raises(CheckpointError):
                load_checkpoint(clipped)

    def test_bad_magic(self, tmp_path):
        path = tmp_path / "bad.finv"
        path.write_bytes(b"NOPE" + b"\0" * 32)
        with pytest.raises(CheckpointError):
            load_checkpoint(path)

    def test_unknown_version_names_both(self, tiny_checkpoint, tmp_path):
        path = tmp_path / "model.finv"
        save_checkpoint(tiny_checkpoint, path)
        data = bytearray(path.read_bytes())
        data[4:8] = struct.pack("<I", 9)
        path.write_bytes(bytes(data))
        with pytest.raises(CheckpointVersionError) as err:
            load_checkpoint(path)
        assert "9" in str(err.value) and "1" in str(err.value)
        assert err.value.found == 9 and err.value.supported == 1

    def test_trailing_garbage(self, tiny_checkpoint, tmp_path):
        path = tmp_path / "model.finv"
        save_checkpoint(tiny_checkpoint, path)
        path.write_bytes(path.read_bytes() + b"extra")
        with pytest.raises(CheckpointError):
            load_checkpoint(path)

    def test_wrong_kind(self, tmp_path):
        schedule = NullSchedule(embeddings=np.zeros((3, 4)),
                                initial_losses=np.zeros(3), final_losses=np.zeros(3))
        path = tmp_path / "sched.finv"
        save_null_schedule(schedule, 5.0, path)
        with pytest.raises(CheckpointError):
            load_checkpoint(path)


class TestNullScheduleRoundTrip:
    def test_bitwise(self, tmp_path):
        rng = np.random.default_rng(0)
        schedule = NullSchedule(
            embeddings=rng.standard_normal((7, 16)),
            initial_losses=rng.uniform(size=7),
            final_losses=rng.uniform(size=7),
        )
        path = tmp_path / "sched.finv"
        save_null_schedule(schedule, 5.0, path)
        loaded, guidance = load_null_schedule(path)
        assert guidance == 5.0
        assert np.array_equal(loaded.embeddings, schedule.embeddings)
        assert np.array_equal(loaded.initial_losses, schedule.initial_losses)
        assert np.array_equal(loaded.final_losses, schedule.final_losses)
