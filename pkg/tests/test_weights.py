import struct

import numpy as np
import pytest

from wafernet.errors import MagicError, MissingTensorError, PayloadError, ShapeMismatchError
from wafernet.models import ModelGraph, build_model, count_params
from wafernet.weights import HEADER_SIZE, MAGIC, expected_file_size, load_weights, read_records, save_weights


def _state_equal(a, b):
    sa, sb = a.state_dict(), b.state_dict()
    assert list(sa) == list(sb)
    for k in sa:
        assert sa[k].tobytes() == sb[k].tobytes(), k


@pytest.mark.parametrize("arch", ["BaseNet", "BaseNet8Plus", "IncNet", "ResiNet"])
def test_round_trip_bit_exact(tmp_path, arch):
    m = build_model(arch, 5, 32, seed=1)
    # disturb running stats so they are not the defaults
    for _, buf in m.buffers():
        buf += np.float32(0.25)
    path = tmp_path / "w.bin"
    n = save_weights(m, path)
    assert n == path.stat().st_size == expected_file_size(m)
    other = build_model(arch, 5, 32, seed=2)
    load_weights(other, path)
    _state_equal(m, other)
    assert count_params(other) == count_params(m)


def test_layout_by_hand(tmp_path):
    from wafernet.layers import Dense

    m = ModelGraph("t", [Dense(2, 1, name="fc", rng=np.random.SeedSequence(0))], (2,))
    m.parameters()[0].data = np.array([[1.5, -2.0]], np.float32)
    path = tmp_path / "w.bin"
    save_weights(m, path)
    raw = path.read_bytes()
    expect = b"WVML1\x01"
    expect += struct.pack("<I", 9) + b"fc.weight" + struct.pack("<III", 2, 1, 2) + struct.pack("<ff", 1.5, -2.0)
    expect += struct.pack("<I", 7) + b"fc.bias" + struct.pack("<II", 1, 1) + struct.pack("<f", 0.0)
    assert raw == expect


def test_empty_model_is_header_only(tmp_path):
    m = ModelGraph("empty", [], (3,))
    path = tmp_path / "e.bin"
    save_weights(m, path)
    assert path.stat().st_size == HEADER_SIZE
    assert read_records(path) == {}


def test_basenet8_size_within_5_percent(tmp_path):
    m = build_model("BaseNet8", 8, 256)
    path = tmp_path / "b8.bin"
    save_weights(m, path)
    ideal = 4 * count_params(m)
    assert abs(path.stat().st_size - ideal) <= 0.05 * ideal


def test_bad_magic(tmp_path):
    p = tmp_path / "x.bin"
    p.write_bytes(b"NOPE!\x01")
    with pytest.raises(MagicError):
        read_records(p)
    p.write_bytes(MAGIC + b"\x02")
    with pytest.raises(MagicError, match="version"):
        read_records(p)


def test_truncated_leaves_model_untouched(tmp_path):
    m = build_model("BaseNet", 3, 16, seed=0)
    path = tmp_path / "w.bin"
    save_weights(m, path)
    path.write_bytes(path.read_bytes()[:-3])
    target = build_model("BaseNet", 3, 16, seed=9)
    before = target.state_dict()
    with pytest.raises(PayloadError):
        load_weights(target, path)
    after = target.state_dict()
    assert all(before[k].tobytes() == after[k].tobytes() for k in before)


def test_missing_and_mismatched_tensors(tmp_path):
    path = tmp_path / "w.bin"
    save_weights(build_model("BaseNet", 3, 16), path)
    with pytest.raises(MissingTensorError):
        load_weights(build_model("ResiNet", 3, 16), path)
    with pytest.raises(ShapeMismatchError):
        load_weights(build_model("BaseNet", 5, 16), path)
