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

"""
Checkpoint container for named float64 matrices.

Layout (all integers little-endian)::

    magic        4 bytes  b"RPSV"
    version      u32      1
    tensor_count u32
    per tensor:
        name_len u16, name (UTF-8), rows u64, cols u64,
        rows * cols float64, row-major
"""

from __future__ import absolute_import, annotations

import os
import struct
from typing import Mapping

import numpy as np

from .datatypes import ModelParams
from .error import CheckpointFormatError, ParameterError
from .helpers import as_matrix, makedirs
from .protected import ProtectedBasis, basis_tensors, bases_from_tensors

MAGIC = b"RPSV"
VERSION = 1
_HEADER = struct.Struct("<4sII")
_NAME_LEN = struct.Struct("<H")
_DIMS = struct.Struct("<QQ")
_FLOAT = np.dtype("<f8")


def encode_tensors(tensors: Mapping[str, np.ndarray]) -> bytes:
    """Serialize tensors in sorted name order."""
    chunks = [_HEADER.pack(MAGIC, VERSION, len(tensors))]
    for name in sorted(tensors):
        encoded = name.encode("utf-8")
        if not encoded or len(encoded) > 0xFFFF:
            raise ParameterError(f"invalid tensor name {name!r}", "name")
        matrix = as_matrix(tensors[name], name)
        chunks.append(_NAME_LEN.pack(len(encoded)))
        chunks.append(encoded)
        chunks.append(_DIMS.pack(*matrix.shape))
        chunks.append(matrix.astype(_FLOAT, copy=False).tobytes(order="C"))
    return b"".join(chunks)


def _take(data: bytes, offset: int, size: int, what: str) -> bytes:
    if offset + size > len(data):
        raise CheckpointFormatError(
            f"truncated checkpoint while reading {what}", offset,
        )
    return data[offset:offset + size]


def decode_tensors(data: bytes) -> dict[str, np.ndarray]:
    """Parse a container, validating magic, version, lengths and names."""
    magic, version, count = _HEADER.unpack(
        _take(data, 0, _HEADER.size, "header"))
    if magic != MAGIC:
        raise CheckpointFormatError(f"bad magic {magic!r}", 0)
    if version != VERSION:
        raise CheckpointFormatError(f"unsupported version {version}", 4)
    offset = _HEADER.size
    tensors: dict[str, np.ndarray] = {}
    for _ in range(count):
        entry_offset = offset
        (name_len,) = _NAME_LEN.unpack(
            _take(data, offset, _NAME_LEN.size, "name length"))
        offset += _NAME_LEN.size
        try:
            name = _take(data, offset, name_len, "name").decode("utf-8")
        except UnicodeDecodeError as exc:
            raise CheckpointFormatError("tensor name is not UTF-8",
                                        offset) from exc
        offset += name_len
        if name in tensors:
            raise CheckpointFormatError(
                f"duplicate tensor name {name!r}", entry_offset,
            )
        rows, cols = _DIMS.unpack(_take(data, offset, _DIMS.size, "dims"))
        offset += _DIMS.size
        size = rows * cols * _FLOAT.itemsize
        payload = _take(data, offset, size, f"payload of {name}")
        tensors[name] = np.frombuffer(payload, dtype=_FLOAT).astype(
            np.float64).reshape(rows, cols)
        offset += size
    if offset != len(data):
        raise CheckpointFormatError(
            f"{len(data) - offset} trailing bytes after last tensor", offset,
        )
    return tensors


def save_tensors(tensors: Mapping[str, np.ndarray], path: str):
    """Write a container, going through a temporary file."""
    payload = encode_tensors(tensors)
    makedirs(os.path.dirname(path))
    tmp_path = f"{path}.part.rpsft"
    with open(tmp_path, "wb") as tmp_file:
        tmp_file.write(payload)
    os.replace(tmp_path, path)


def load_tensors(path: str) -> dict[str, np.ndarray]:
    """Read a container."""
    with open(path, "rb") as file:
        return decode_tensors(file.read())


def save_checkpoint(obj, path: str):
    """
    Save a :class:`ModelParams`, a mapping of layer name to
    :class:`ProtectedBasis`, or a plain mapping of tensors.
    """
    if isinstance(obj, ModelParams):
        tensors = obj.layers
    elif obj and all(isinstance(v, ProtectedBasis) for v in obj.values()):
        tensors = {}
        for basis in obj.values():
            tensors.update(basis_tensors(basis))
    else:
        tensors = obj
    save_tensors(tensors, path)


def load_checkpoint(path: str, arch: str | None = None):
    """
    Load a checkpoint. With arch the tensors are returned as a
    :class:`ModelParams`; containers holding "{layer}.Uk" tensors come
    back as bases; anything else as a tensor mapping.
    """
    tensors = load_tensors(path)
    if arch is not None:
        return ModelParams(arch, tensors)
    if any(name.endswith(".Uk") for name in tensors):
        return bases_from_tensors(tensors)
    return tensors


def describe(path: str) -> list[tuple[str, int, int, float]]:
    """(name, rows, cols, Frobenius norm) per tensor."""
    return [
        (name, t.shape[0], t.shape[1], float(np.linalg.norm(t)))
        for name, t in load_tensors(path).items()
    ]
