import numpy as np
import pytest

from adaptgauge.checkpoint import (CheckpointError, load_arrays, load_module,
                                   save_arrays, save_module)
from adaptgauge.nn import BatchNorm1d, Dense, Module


def test_round_trip_exact(tmp_path):
    rng = np.random.default_rng(0)
    arrays = {
        "w": rng.normal(size=(3, 4)),
        "deep.bias": rng.normal(size=7),
        "scalar": np.array(3.5),
    }
    path = tmp_path / "params.ckpt"
    save_arrays(path, arrays, {"note": "x"})
    loaded, meta = load_arrays(path)
    assert meta == {"note": "x"}
    assert set(loaded) == set(arrays)
    for k in arrays:
        assert loaded[k].tobytes() == np.asarray(arrays[k], dtype="<f8").tobytes()


def test_truncated_rejected(tmp_path):
    path = tmp_path / "params.ckpt"
    save_arrays(path, {"w": np.ones((8, 8))})
    blob = path.read_bytes()
    path.write_bytes(blob[:-17])
    with pytest.raises(CheckpointError, match="truncated"):
        load_arrays(path)


def test_bad_magic_rejected(tmp_path):
    path = tmp_path / "junk.ckpt"
    path.write_bytes(b"NOTAMAGC" + b"\x00" * 64)
    with pytest.raises(CheckpointError, match="magic"):
        load_arrays(path)


def test_version_mismatch_names_both_versions(tmp_path):
    path = tmp_path / "params.ckpt"
    save_arrays(path, {"w": np.ones(2)})
    blob = bytearray(path.read_bytes())
    blob[8] = 99  # format version byte
    path.write_bytes(bytes(blob))
    with pytest.raises(CheckpointError, match="99.*1"):
        load_arrays(path)


class SmallNet(Module):
    def __init__(self, rng):
        super().__init__()
        self.add_child("d", Dense(rng, 4, 3))
        self.add_child("bn", BatchNorm1d(3))


def test_module_round_trip_with_running_stats(tmp_path):
    rng = np.random.default_rng(1)
    net = SmallNet(rng)
    net._children["bn"].running_mean[:] = [1.0, 2.0, 3.0]
    net._children["bn"].running_var[:] = [0.5, 0.25, 2.0]
    path = tmp_path / "net.ckpt"
    save_module(path, net, {"kind": "test"})

    fresh = SmallNet(np.random.default_rng(99))
    meta = load_module(path, fresh)
    assert meta["kind"] == "test"
    for k, p in net.parameters().items():
        assert np.array_equal(fresh.parameters()[k].data, p.data)
    assert np.array_equal(fresh._children["bn"].running_mean, [1.0, 2.0, 3.0])
    assert np.array_equal(fresh._children["bn"].running_var, [0.5, 0.25, 2.0])


def test_missing_parameter_rejected(tmp_path):
    rng = np.random.default_rng(2)
    path = tmp_path / "net.ckpt"
    save_arrays(path, {"unrelated": np.zeros(3)})
    with pytest.raises(CheckpointError, match="missing parameter"):
        load_module(path, SmallNet(rng))
