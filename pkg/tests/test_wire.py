import struct

import numpy as np
import pytest

from cooploc import wire


def test_round_trip():
    rng = np.random.default_rng(0)
    arrays = [rng.standard_normal(3), rng.standard_normal((3, 3)), np.zeros((0, 0))]
    buf = wire.encode(7, 9, 123456, arrays)
    sender, counterpart, step, out = wire.decode(buf)
    assert (sender, counterpart, step) == (7, 9, 123456)
    assert np.array_equal(out[0].ravel(), arrays[0])
    assert np.array_equal(out[1], arrays[1])
    assert out[2].shape == (0, 0)


def test_layout_is_little_endian_row_major():
    buf = wire.encode(1, 2, 3, [np.array([[1.0, 2.0], [3.0, 4.0]])])
    assert buf[:wire.HEADER_SIZE] == struct.pack("<HHHI", wire.SCHEMA_VERSION, 1, 2, 3)
    rows, cols = struct.unpack_from("<HH", buf, wire.HEADER_SIZE)
    assert (rows, cols) == (2, 2)
    vals = struct.unpack_from("<4d", buf, wire.HEADER_SIZE + 4)
    assert vals == (1.0, 2.0, 3.0, 4.0)
    assert len(buf) == wire.HEADER_SIZE + wire.array_size(2, 2)


def test_truncated_buffers_rejected():
    buf = wire.encode(1, 2, 3, [np.eye(3)])
    with pytest.raises(wire.WireFormatError):
        wire.decode(buf[:5])
    with pytest.raises(wire.WireFormatError):
        wire.decode(buf[:-1])
    with pytest.raises(wire.WireFormatError):
        wire.decode(buf[:wire.HEADER_SIZE + 2])


def test_unknown_version_rejected():
    buf = bytearray(wire.encode(1, 2, 3, []))
    buf[0] = 99
    with pytest.raises(wire.WireFormatError):
        wire.decode(bytes(buf))


def test_three_d_arrays_rejected():
    with pytest.raises(wire.WireFormatError):
        wire.encode(1, 2, 3, [np.zeros((2, 2, 2))])
