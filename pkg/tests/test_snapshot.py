import struct

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from floodkit.snapshot import Snapshot, SnapshotFormatError, decode, encode, read_snapshot, state_snapshot, write_snapshot
from floodkit.swe import StaggeredState


def _snap(rows=3, cols=4):
    rng = np.random.default_rng(0)
    return Snapshot(rows, cols, 480.0, 300.0, {"h": rng.random((rows, cols)), "qx": rng.normal(size=(rows, cols))})


def test_header_layout():
    data = encode(_snap())
    magic, version, rows, cols, cell, t, nf = struct.unpack_from("<4sIIIddI", data, 0)
    assert (magic, version, rows, cols, cell, t, nf) == (b"FCSN", 1, 3, 4, 480.0, 300.0, 2)
    assert len(data) == struct.calcsize("<4sIIIddI") + (2 + 1) + (2 + 2) + 2 * 12 * 8


def test_file_round_trip(tmp_path):
    s = _snap()
    write_snapshot(tmp_path / "a.fcsn", s)
    back = read_snapshot(tmp_path / "a.fcsn")
    assert back.names == ("h", "qx") and back.t_seconds == 300.0
    assert np.array_equal(back["qx"], s["qx"])


@settings(max_examples=40, deadline=None)
@given(st.integers(1, 6), st.integers(1, 6), st.data())
def test_round_trip_bit_exact(rows, cols, data):
    vals = data.draw(arrays(np.float64, (rows, cols)))
    s = Snapshot(rows, cols, 1.0, 0.0, {"f": vals})
    back = decode(encode(s))
    assert back["f"].tobytes() == vals.tobytes()


def test_bad_magic():
    data = bytearray(encode(_snap()))
    data[:4] = b"XXXX"
    with pytest.raises(SnapshotFormatError, match="magic"):
        decode(bytes(data))


def test_truncated_payload():
    with pytest.raises(SnapshotFormatError, match="payload"):
        decode(encode(_snap())[:-8])


def test_wrong_version():
    data = bytearray(encode(_snap()))
    data[4:8] = struct.pack("<I", 9)
    with pytest.raises(SnapshotFormatError, match="version"):
        decode(bytes(data))


def test_field_shape_checked():
    with pytest.raises(ValueError):
        Snapshot(2, 2, 1.0, 0.0, {"h": np.zeros((3, 2))})


def test_state_snapshot_fields():
    st_ = StaggeredState(np.ones((2, 3)), np.array([[0.0, 2.0, 2.0, 0.0]] * 2), np.zeros((3, 3)), t=60.0)
    s = state_snapshot(st_, 10.0, z=np.full((2, 3), 5.0))
    assert s.names == ("h", "qx", "qy", "wse")
    assert s["qx"][0].tolist() == [1.0, 2.0, 1.0]
    assert np.all(s["wse"] == 6.0)
