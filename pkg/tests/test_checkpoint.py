# -*- coding: utf-8 -*-
# rpsft - rotation-preserving fine-tuning toolkit
# (C) 2026 The rpsft authors.
#
# Licensed under the Apache License, Version 2.0 (the "License");
# you may not use this file except in compliance with the License.
# You may obtain a copy of the License at
#
#     http://www.apache.org/licenses/LICENSE-2.0
#
# Unless required by applicable law or agreed to in writing, software
# distributed under the License is distributed on an "AS IS" BASIS,
# WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
# See the License for the specific language governing permissions and
# limitations under the License.

"""Tests for the RPSV checkpoint container."""

import os
import struct

import numpy as np
import pytest

from rpsft.checkpoint import (MAGIC, decode_tensors, describe, encode_tensors,
                              load_checkpoint, load_tensors, save_checkpoint,
                              save_tensors)
from rpsft.datatypes import ModelParams
from rpsft.error import CheckpointFormatError, ParameterError
from rpsft.protected import ProtectedBasis, build_basis


def _tensors(seed=0):
    rng = np.random.default_rng(seed)
    return {"fc2": rng.normal(size=(2, 5)), "fc1": rng.normal(size=(5, 3))}


class TestEncode:
    """Tests for the byte layout."""

    def test_layout(self):
        data = encode_tensors({"w": np.array([[1.0, 2.0]])})
        assert data[:4] == MAGIC
        assert struct.unpack("<II", data[4:12]) == (1, 1)
        assert struct.unpack("<H", data[12:14]) == (1,)
        assert data[14:15] == b"w"
        assert struct.unpack("<QQ", data[15:31]) == (1, 2)
        assert struct.unpack("<2d", data[31:]) == (1.0, 2.0)

    def test_sorted_names(self):
        data = encode_tensors(_tensors())
        assert data.index(b"fc1") < data.index(b"fc2")

    def test_deterministic(self):
        assert encode_tensors(_tensors(1)) == encode_tensors(_tensors(1))

    def test_round_trip_bit_exact(self):
        tensors = _tensors(2)
        tensors["tiny"] = np.array([[5e-324, -0.0, 1e308]])
        decoded = decode_tensors(encode_tensors(tensors))
        assert sorted(decoded) == sorted(tensors)
        for name, matrix in tensors.items():
            assert decoded[name].tobytes() == matrix.tobytes()

    def test_re_encode_identical(self):
        data = encode_tensors(_tensors(3))
        assert encode_tensors(decode_tensors(data)) == data

    def test_empty_name(self):
        with pytest.raises(ParameterError):
            encode_tensors({"": np.ones((1, 1))})


class TestDecode:
    """Tests for malformed containers."""

    def test_bad_magic(self):
        data = b"XXXX" + encode_tensors(_tensors())[4:]
        with pytest.raises(CheckpointFormatError) as info:
            decode_tensors(data)
        assert info.value.offset == 0

    def test_bad_version(self):
        data = bytearray(encode_tensors(_tensors()))
        data[4:8] = struct.pack("<I", 2)
        with pytest.raises(CheckpointFormatError) as info:
            decode_tensors(bytes(data))
        assert info.value.offset == 4

    def test_truncated(self):
        data = encode_tensors({"w": np.ones((2, 2))})
        with pytest.raises(CheckpointFormatError) as info:
            decode_tensors(data[:-3])
        assert info.value.offset == 31
        assert "truncated" in str(info.value)

    def test_truncated_header(self):
        with pytest.raises(CheckpointFormatError) as info:
            decode_tensors(MAGIC)
        assert info.value.offset == 0

    def test_trailing_bytes(self):
        data = encode_tensors({"w": np.ones((1, 1))}) + b"\x00"
        with pytest.raises(CheckpointFormatError):
            decode_tensors(data)

    def test_duplicate_name(self):
        entry = encode_tensors({"w": np.ones((1, 1))})[12:]
        data = struct.pack("<4sII", MAGIC, 1, 2) + entry + entry
        with pytest.raises(CheckpointFormatError) as info:
            decode_tensors(data)
        assert info.value.offset == 12 + len(entry)

    def test_bad_utf8(self):
        data = struct.pack("<4sIIH", MAGIC, 1, 1, 1) + b"\xff" + \
            struct.pack("<QQ", 0, 0)
        with pytest.raises(CheckpointFormatError):
            decode_tensors(data)


class TestFiles:
    """Tests for file save/load."""

    def test_save_load(self, tmp_path):
        path = str(tmp_path / "sub" / "t.rpsv")
        tensors = _tensors(4)
        save_tensors(tensors, path)
        loaded = load_tensors(path)
        for name, matrix in tensors.items():
            np.testing.assert_array_equal(loaded[name], matrix)
        assert not os.path.exists(path + ".part.rpsft")
        with open(path, "rb") as file:
            assert file.read() == encode_tensors(tensors)

    def test_model_round_trip(self, tmp_path):
        path = str(tmp_path / "model.rpsv")
        model = ModelParams("two_layer_tanh", _tensors(5))
        save_checkpoint(model, path)
        assert load_checkpoint(path, arch="two_layer_tanh") == model

    def test_bases_round_trip(self, tmp_path):
        path = str(tmp_path / "bases.rpsv")
        rng = np.random.default_rng(6)
        bases = {"fc1": build_basis("fc1", rng.normal(size=(5, 3)), 2)}
        save_checkpoint(bases, path)
        loaded = load_checkpoint(path)
        assert list(loaded) == ["fc1"]
        assert isinstance(loaded["fc1"], ProtectedBasis)
        np.testing.assert_array_equal(loaded["fc1"].U_k.columns,
                                      bases["fc1"].U_k.columns)
        np.testing.assert_array_equal(loaded["fc1"].S_ref, bases["fc1"].S_ref)
        assert loaded["fc1"].sigma_gap == bases["fc1"].sigma_gap

    def test_plain_mapping(self, tmp_path):
        path = str(tmp_path / "plain.rpsv")
        save_checkpoint({"a": np.eye(2)}, path)
        loaded = load_checkpoint(path)
        np.testing.assert_array_equal(loaded["a"], np.eye(2))

    def test_wrong_arch(self, tmp_path):
        path = str(tmp_path / "model.rpsv")
        save_checkpoint({"a": np.eye(2)}, path)
        with pytest.raises(ParameterError):
            load_checkpoint(path, arch="linear")

    def test_describe(self, tmp_path):
        path = str(tmp_path / "d.rpsv")
        save_tensors({"w": np.array([[3.0, 4.0]])}, path)
        assert describe(path) == [("w", 1, 2, 5.0)]
