import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from hypothesis.extra import numpy as hnp

from nested_opinf import io


@settings(max_examples=40, deadline=None)
@given(hnp.arrays(np.float64, hnp.array_shapes(min_dims=2, max_dims=2, max_side=8),
                  elements=st.floats(allow_nan=True, allow_infinity=True, width=64)))
def test_binary_roundtrip_bit_exact(tmp_path_factory, A):
    path = tmp_path_factory.mktemp("bin") / "m.opnf"
    io.write_matrix_binary(path, A)
    B = io.read_matrix_binary(path)
    assert B.shape == A.shape
    assert A.tobytes() == B.tobytes()


def test_binary_layout(tmp_path):
    path = tmp_path / "m.opnf"
    io.write_matrix_binary(path, np.array([[1.0, 2.0, 3.0]]))
    raw = path.read_bytes()
    assert raw[:4] == b"OPNF"
    assert int.from_bytes(raw[4:12], "little") == 1
    assert int.from_bytes(raw[12:20], "little") == 3
    assert np.frombuffer(raw[20:], "<f8").tolist() == [1.0, 2.0, 3.0]


def test_binary_rejects_corruption(tmp_path):
    path = tmp_path / "m.opnf"
    io.write_matrix_binary(path, np.eye(2))
    raw = path.read_bytes()
    (tmp_path / "bad_magic.opnf").write_bytes(b"XXXX" + raw[4:])
    (tmp_path / "short.opnf").write_bytes(raw[:-8])
    with pytest.raises(ValueError, match="magic"):
        io.read_matrix_binary(tmp_path / "bad_magic.opnf")
    with pytest.raises(ValueError, match="bytes"):
        io.read_matrix_binary(tmp_path / "short.opnf")


def test_csv_roundtrip(tmp_path):
    X = np.random.default_rng(1).standard_normal((4, 3))
    path = tmp_path / "s.csv"
    io.write_snapshots_csv(path, X)
    assert path.read_text().splitlines()[0] == "# n=4 K=3"
    np.testing.assert_array_equal(io.read_snapshots_csv(path), X)


def test_float_encoding():
    assert io.encode_float(float("inf")) == "inf"
    assert io.decode_float("inf") == float("inf")
    assert np.isnan(io.decode_float(io.encode_float(float("nan"))))
    assert io.decode_float(io.encode_float(0.1)) == 0.1
