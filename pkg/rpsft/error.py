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
rpsft.error
~~~~~~~~~~~

This module provides custom exception classes for the rpsft library.
Every error carries the context needed to point at the offending input
and pickles cleanly so it can cross worker boundaries.

:license: Apache 2.0, see LICENSE for more details.

"""

from __future__ import absolute_import, annotations


class RpsftException(Exception):
    """Base rpsft exception."""


class ParameterError(RpsftException, ValueError):
    """Raised to indicate an out-of-range or mismatched argument."""

    def __init__(self, message: str, name: str | None = None):
        self._name = name
        super().__init__(message)

    def __reduce__(self):
        return type(self), (str(self), self._name)

    @property
    def name(self) -> str | None:
        """Get name of the offending parameter."""
        return self._name


class ValidationError(ParameterError):
    """Raised to indicate non-finite or malformed input data."""


class NumericalError(RpsftException):
    """Raised to indicate that a numerical routine failed to converge."""

    def __init__(
            self,
            message: str,
            matrix_name: str | None = None,
            sweeps: int | None = None,
    ):
        self._matrix_name = matrix_name
        self._sweeps = sweeps
        super().__init__(message)

    def __reduce__(self):
        return type(self), (str(self), self._matrix_name, self._sweeps)

    @property
    def matrix_name(self) -> str | None:
        """Get name of the matrix being decomposed."""
        return self._matrix_name

    @property
    def sweeps(self) -> int | None:
        """Get number of sweeps performed before giving up."""
        return self._sweeps


class UndefinedRatioError(NumericalError):
    """Raised when an energy ratio has a zero denominator."""


class TrainingError(RpsftException):
    """Raised to indicate a diverged or non-converged training run."""

    def __init__(
            self,
            message: str,
            step: int | None = None,
            loss: float | None = None,
    ):
        self._step = step
        self._loss = loss
        super().__init__(message)

    def __reduce__(self):
        return type(self), (str(self), self._step, self._loss)

    @property
    def step(self) -> int | None:
        """Get step index where training failed."""
        return self._step

    @property
    def loss(self) -> float | None:
        """Get loss value at failure."""
        return self._loss


class IntegrationError(RpsftException):
    """Raised when the gradient-flow state becomes non-finite."""

    def __init__(self, message: str, time: float | None = None):
        self._time = time
        super().__init__(message)

    def __reduce__(self):
        return type(self), (str(self), self._time)

    @property
    def time(self) -> float | None:
        """Get flow time stamp of the failure."""
        return self._time


class ConfigError(RpsftException):
    """Raised to indicate an invalid configuration entry."""

    def __init__(
            self,
            message: str,
            key: str | None = None,
            line: int | None = None,
    ):
        self._key = key
        self._line = line
        location = f" (line {line})" if line is not None else ""
        keyinfo = f"{key}: " if key else ""
        super().__init__(f"{keyinfo}{message}{location}")
        self._message = message

    def __reduce__(self):
        return type(self), (self._message, self._key, self._line)

    @property
    def key(self) -> str | None:
        """Get configuration key."""
        return self._key

    @property
    def line(self) -> int | None:
        """Get line number in the config file, if any."""
        return self._line


class CheckpointFormatError(RpsftException):
    """Raised to indicate a corrupt or unsupported checkpoint file."""

    def __init__(self, message: str, offset: int | None = None):
        self._offset = offset
        self._message = message
        super().__init__(
            f"{message}; byte offset: {offset}" if offset is not None
            else message
        )

    def __reduce__(self):
        return type(self), (self._message, self._offset)

    @property
    def offset(self) -> int | None:
        """Get byte offset where decoding failed."""
        return self._offset


class PresetError(RpsftException):
    """Raised when a stage of a preset pipeline fails."""

    def __init__(self, preset: str, stage: str, cause: BaseException):
        self._preset = preset
        self._stage = stage
        self._cause = cause
        super().__init__(
            f"preset {preset} failed at stage {stage}: "
            f"{type(cause).__name__}: {cause}"
        )

    def __reduce__(self):
        return type(self), (self._preset, self._stage, self._cause)

    @property
    def preset(self) -> str:
        """Get preset name."""
        return self._preset

    @property
    def stage(self) -> str:
        """Get failing stage name."""
        return self._stage

    @property
    def cause(self) -> BaseException:
        """Get underlying exception."""
        return self._cause
