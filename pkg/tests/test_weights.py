import struct

import numpy as np
import pytest

from deformtab.errors import DecodeError, ShapeError
from deformtab.tensor import Tensor
from deformtab.weights import assign, load_weights, pack_weights, save_weights, unpack_weights


class TestFormat:
    def test_round_trip(self, tmp_path, rng):
        named = {"b": rng.normal(size=(3,)), "a": rng.normal(size=(2, 1, 3, 3)), "s": np.float32(4.0)}
        save_weights(tmp_path / "w.bin", named)
        loaded = load_weights(tmp_path / "w.bin")
        assert sorted(loaded) == ["a", "b", "s"]
        for name, value in named.items():
            np.testing.assert_array_equal(loaded[name], np.asarray(value, np.float32))

    def test_deterministic_bytes(self, rng):
        named = {"x": rng.normal(size=4), "y": Tensor(np.ones((2, 2)))}
        assert pack_weights(named) == pack_weights(dict(reversed(list(named.items()))))

    def test_header_layout(self):
        blob = pack_weights({"w": np.arange(3.0)})
        (length,) = struct.unpack_from("<I", blob)
        assert len(blob) == 4 + length + 12
        np.testing.assert_array_equal(np.frombuffer(blob[4 + length:], "<f4"), [0, 1, 2])


class TestCorruption:
    def test_truncated_prefix(self):
        with pytest.raises(DecodeError):
            unpack_weights(b"\x01")

    def test_header_past_end(self):
        with pytest.raises(DecodeError):
            unpack_weights(struct.pack("<I", 99) + b"{}")

    def test_bad_json(self):
        with pytest.raises(DecodeError):
            unpack_weights(struct.pack("<I", 3) + b"{x}")

    def test_truncated_data(self):
        blob = pack_weights({"w": np.arange(6.0)})
        with pytest.raises(DecodeError) as info:
            unpack_weights(blob[:-4])
        assert info.value.offset > 4

    def test_wrong_dtype(self):
        header = b'{"dtype": "<f8", "tensors": []}'
        with pytest.raises(DecodeError):
            unpack_weights(struct.pack("<I", len(header)) + header)


class TestAssign:
    def test_copies_into_tensors(self):
        params = {"w": Tensor(np.zeros((2, 2)))}
        assign(params, {"w": np.full((2, 2), 3.0, np.float32)})
        assert (params["w"].data == 3).all()

    def test_shape_mismatch_and_missing(self):
        params = {"w": Tensor(np.zeros((2, 2)))}
        with pytest.raises(ShapeError):
            assign(params, {"w": np.zeros(4, np.float32)})
        with pytest.raises(ShapeError):
            assign(params, {})
