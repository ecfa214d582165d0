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

"""Helper functions."""

from __future__ import absolute_import, annotations

import errno
import os
from typing import Any

import numpy as np

from .error import ParameterError, ValidationError


def as_matrix(data: Any, name: str = "matrix") -> np.ndarray:
    """
    Convert data to a C-contiguous 2D float64 array and validate that every
    entry is finite.
    """
    try:
        matrix = np.ascontiguousarray(data, dtype=np.float64)
    except (TypeError, ValueError) as exc:
        raise ValidationError(f"{name} is not numeric", name) from exc
    if matrix.ndim != 2:
        raise ValidationError(
            f"{name} must be 2-dimensional; got shape {matrix.shape}", name,
        )
    if matrix.shape[0] < 1 or matrix.shape[1] < 1:
        raise ValidationError(f"{name} must not be empty", name)
    if not np.all(np.isfinite(matrix)):
        raise ValidationError(f"{name} has non-finite entries", name)
    return matrix


def check_rank(k: int, limit: int, name: str = "k", allow_zero: bool = False):
    """Check 1 <= k <= limit (or 0 <= k when allow_zero)."""
    low = 0 if allow_zero else 1
    if isinstance(k, bool) or not isinstance(k, (int, np.integer)):
        raise ParameterError(f"{name} must be an integer; got {k!r}", name)
    if not low <= k <= limit:
        raise ParameterError(
            f"{name}={k} out of range; allowed {low}..{limit}", name,
        )


def check_positive(value: float, name: str):
    """Check value is a finite number strictly greater than zero."""
    if not np.isfinite(value) or value <= 0:
        raise ParameterError(f"{name} must be positive; got {value}", name)


def check_non_negative(value: float, name: str):
    """Check value is a finite number greater than or equal to zero."""
    if not np.isfinite(value) or value < 0:
        raise ParameterError(
            f"{name} must be non-negative; got {value}", name,
        )


def check_positive_int(value: int, name: str):
    """Check value is an integer >= 1."""
    if (
            isinstance(value, bool)
            or not isinstance(value, (int, np.integer))
            or value < 1
    ):
        raise ParameterError(
            f"{name} must be a positive integer; got {value!r}", name,
        )


def check_same_shape(left: np.ndarray, right: np.ndarray, name: str):
    """Check two arrays share one shape."""
    if left.shape != right.shape:
        raise ParameterError(
            f"shape mismatch for {name}: {left.shape} vs {right.shape}", name,
        )


def check_choice(value: str, choices: tuple[str, ...], name: str):
    """Check value is one of the allowed choices."""
    if value not in choices:
        raise ParameterError(
            f"{name} must be one of {', '.join(choices)}; got {value!r}",
            name,
        )


def frobenius_sq(matrix: np.ndarray) -> float:
    """Squared Frobenius norm."""
    return float(np.sum(matrix * matrix))


def makedirs(path: str):
    """Wrapper of os.makedirs() ignores errno.EEXIST."""
    try:
        if path:
            os.makedirs(path)
    except OSError as exc:
        if exc.errno != errno.EEXIST:
            raise

        if not os.path.isdir(path):
            raise ValueError(f"path {path} is not a directory") from exc
