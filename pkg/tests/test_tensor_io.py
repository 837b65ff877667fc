"""Binary tensor file format: round trips and defect reporting."""

import struct

import numpy as np
import pytest

from scamnet.errors import ContractViolationError, DataError
from scamnet.numerics import load_tensor, save_tensor


@pytest.mark.parametrize(
    "shape", [(), (1,), (5,), (3, 4), (2, 3, 4), (1, 0, 2)]
)
def test_round_trip_bit_exact(tmp_path, shape):
    rng = np.random.default_rng(0)
    arr = rng.normal(size=shape).astype(np.float32)
    path = tmp_path / "t.bin"
    save_tensor(path, arr)
    back = load_tensor(path)
    assert back.shape == arr.shape
    assert back.dtype == np.float32
    np.testing.assert_array_equal(back, arr)
    assert back.tobytes() == arr.tobytes()


def test_header_layout(tmp_path):
    arr = np.arange(6, dtype=np.float32).reshape(2, 3)
    path = tmp_path / "t.bin"
    save_tensor(path, arr)
    raw = path.read_bytes()
    assert raw[:4] == b"SCAM"
    version, dtype_code, rank = struct.unpack_from("<IBB", raw, 4)
    assert (version, dtype_code, rank) == (1, 0, 2)
    assert struct.unpack_from("<2Q", raw, 10) == (2, 3)
    assert len(raw) == 10 + 16 + 6 * 4


def test_loaded_array_is_writable(tmp_path):
    path = tmp_path / "t.bin"
    save_tensor(path, np.zeros(3, dtype=np.float32))
    back = load_tensor(path)
    back[0] = 1.0  # must not raise


def test_non_float32_rejected(tmp_path):
    with pytest.raises(ContractViolationError):
        save_tensor(tmp_path / "t.bin", np.zeros(3, dtype=np.float64))


def test_truncated_payload_names_file(tmp_path):
    path = tmp_path / "t.bin"
    save_tensor(path, np.ones(10, dtype=np.float32))
    path.write_bytes(path.read_bytes()[:-8])
    with pytest.raises(DataError, match="t.bin"):
        load_tensor(path)


def test_truncated_header(tmp_path):
    path = tmp_path / "t.bin"
    path.write_bytes(b"SCA")
    with pytest.raises(DataError, match="header"):
        load_tensor(path)


def test_bad_magic(tmp_path):
    path = tmp_path / "t.bin"
    save_tensor(path, np.ones(2, dtype=np.float32))
    raw = bytearray(path.read_bytes())
    raw[:4] = b"NOPE"
    path.write_bytes(bytes(raw))
    with pytest.raises(DataError, match="magic"):
        load_tensor(path)


def test_bad_version(tmp_path):
    path = tmp_path / "t.bin"
    save_tensor(path, np.ones(2, dtype=np.float32))
    raw = bytearray(path.read_bytes())
    raw[4:8] = struct.pack("<I", 9)
    path.write_bytes(bytes(raw))
    with pytest.raises(DataError, match="version"):
        load_tensor(path)


def test_missing_file(tmp_path):
    with pytest.raises(DataError, match="nothere"):
        load_tensor(tmp_path / "nothere.bin")
