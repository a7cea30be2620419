import struct

import numpy as np
import pytest

from darl import checkpoint


def test_round_trip_bit_exact(tmp_path):
    rng = np.random.default_rng(0)
    groups = {
        "encoder.conv0.w": rng.standard_normal((4, 3, 3, 3)),
        "log_alpha": np.array(np.log(0.1)),
        "fc.b": rng.standard_normal(7),
    }
    path = tmp_path / "ckpt.bin"
    checkpoint.save_groups(path, groups)
    back = checkpoint.load_groups(path)
    assert list(back) == list(groups)
    for name in groups:
        assert back[name].shape == np.asarray(groups[name]).shape
        assert back[name].tobytes() == np.asarray(groups[name], dtype=np.float64).tobytes()


def test_header_layout(tmp_path):
    path = tmp_path / "c.bin"
    checkpoint.save_groups(path, {"ab": np.zeros((2, 3))})
    raw = path.read_bytes()
    assert raw[:4] == b"DARL"
    version, count = struct.unpack("<II", raw[4:12])
    assert (version, count) == (1, 1)
    (name_len,) = struct.unpack("<I", raw[12:16])
    assert raw[16 : 16 + name_len] == b"ab"
    rank, d0, d1 = struct.unpack("<III", raw[18:30])
    assert (rank, d0, d1) == (2, 2, 3)


def test_bad_magic_rejected(tmp_path):
    path = tmp_path / "junk.bin"
    path.write_bytes(b"NOPE" + b"\x00" * 16)
    with pytest.raises(checkpoint.CheckpointError):
        checkpoint.load_groups(path)


def test_save_load_save_identical_bytes(tmp_path):
    rng = np.random.default_rng(3)
    groups = {"a": rng.standard_normal((5, 5)), "b": rng.standard_normal(2)}
    p1, p2 = tmp_path / "1.bin", tmp_path / "2.bin"
    checkpoint.save_groups(p1, groups)
    checkpoint.save_groups(p2, checkpoint.load_groups(p1))
    assert p1.read_bytes() == p2.read_bytes()
