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
Models, tasks, traces and measurement inputs.
"""

from __future__ import absolute_import, annotations

from typing import Iterator, Mapping, Sequence

import numpy as np
from typing_extensions import Literal

from .error import ParameterError, ValidationError
from .helpers import as_matrix, check_choice, check_positive_int

Architecture = Literal["linear", "two_layer_tanh", "linear_softmax_classifier"]
ARCHITECTURES: tuple[str, ...] = (
    "linear", "two_layer_tanh", "linear_softmax_classifier",
)
Split = Literal["train", "eval"]

_LAYER_NAMES = {
    "linear": ("w",),
    "linear_softmax_classifier": ("w",),
    "two_layer_tanh": ("fc1", "fc2"),
}


class ModelParams:
    """Named weight matrices of a toy model."""

    def __init__(self, arch: str, layers: Mapping[str, np.ndarray]):
        check_choice(arch, ARCHITECTURES, "arch")
        expected = _LAYER_NAMES[arch]
        if tuple(sorted(layers)) != expected:
            raise ParameterError(
                f"{arch} expects layers {expected}; got {tuple(sorted(layers))}",
                "layers",
            )
        checked = {name: as_matrix(layers[name], name) for name in expected}
        if arch == "two_layer_tanh" and \
                checked["fc2"].shape[1] != checked["fc1"].shape[0]:
            raise ParameterError(
                f"fc2 expects {checked['fc2'].shape[1]} hidden units; "
                f"fc1 provides {checked['fc1'].shape[0]}",
                "fc2",
            )
        self._arch = arch
        self._layers = checked

    @property
    def arch(self) -> str:
        """Get architecture tag."""
        return self._arch

    @property
    def layers(self) -> dict[str, np.ndarray]:
        """Get layers in layer-name order."""
        return self._layers

    @property
    def names(self) -> list[str]:
        """Get sorted layer names."""
        return list(self._layers)

    @property
    def input_dim(self) -> int:
        """Get input dimension."""
        first = "fc1" if self._arch == "two_layer_tanh" else "w"
        return self._layers[first].shape[1]

    @property
    def output_dim(self) -> int:
        """Get output dimension."""
        last = "fc2" if self._arch == "two_layer_tanh" else "w"
        return self._layers[last].shape[0]

    def copy(self) -> ModelParams:
        """Deep copy."""
        return ModelParams(
            self._arch, {k: v.copy() for k, v in self._layers.items()},
        )

    def replace(self, layers: Mapping[str, np.ndarray]) -> ModelParams:
        """Return a model of the same architecture with new layers."""
        return ModelParams(self._arch, layers)

    def __getitem__(self, name: str) -> np.ndarray:
        return self._layers[name]

    def __iter__(self) -> Iterator[str]:
        return iter(self._layers)

    def __eq__(self, other):
        if not isinstance(other, ModelParams):
            return NotImplemented
        return self._arch == other.arch and self.names == other.names and all(
            np.array_equal(self._layers[n], other[n]) for n in self.names
        )

    def __repr__(self):
        shapes = ", ".join(f"{n}={v.shape}" for n, v in self._layers.items())
        return f"{type(self).__name__}('{self._arch}', {shapes})"


class RegressionTask:
    """Inputs and targets of one task, split into train and eval."""

    def __init__(
            self,
            name: str,
            x_train: np.ndarray,
            y_train: np.ndarray,
            x_eval: np.ndarray,
            y_eval: np.ndarray,
    ):
        self._name = name
        self._data = {
            "train": (as_matrix(x_train, "x_train"),
                      as_matrix(y_train, "y_train")),
            "eval": (as_matrix(x_eval, "x_eval"), as_matrix(y_eval, "y_eval")),
        }
        for split, (x, y) in self._data.items():
            if x.shape[0] != y.shape[0]:
                raise ParameterError(
                    f"{split} split has {x.shape[0]} inputs but "
                    f"{y.shape[0]} targets", split,
                )

    @property
    def name(self) -> str:
        """Get task name."""
        return self._name

    @property
    def n_train(self) -> int:
        """Get number of training samples."""
        return self._data["train"][0].shape[0]

    def split(self, split: str) -> tuple[np.ndarray, np.ndarray]:
        """Get (inputs, targets) of a split."""
        check_choice(split, ("train", "eval"), "split")
        return self._data[split]


class QuadraticTask:
    """
    Analytic objective f(W) = (curvature / 2) ||W - target||_F^2 on a
    single-layer linear model. Both splits are the same objective.
    """

    def __init__(self, target, curvature: float = 1.0, layer: str = "w"):
        if not curvature > 0:
            raise ParameterError("curvature must be positive", "curvature")
        self._target = as_matrix(target, "target")
        self._curvature = float(curvature)
        self._layer = layer

    @property
    def name(self) -> str:
        """Get task name."""
        return "quadratic"

    @property
    def target(self) -> np.ndarray:
        """Get target weight."""
        return self._target

    @property
    def curvature(self) -> float:
        """Get Hessian scale h (Hessian = h I)."""
        return self._curvature

    @property
    def layer(self) -> str:
        """Get the layer the objective acts on."""
        return self._layer

    @property
    def n_train(self) -> int:
        """A single deterministic 'sample'."""
        return 1


class SyntheticTaskPair:
    """Two linear teachers related by a planar rotation, with sampled data."""

    def __init__(  # pylint: disable=too-many-arguments
            self,
            teacher_a: np.ndarray,
            teacher_b: np.ndarray,
            rotation_angle: float,
            noise_std: float,
            seed: int,
            task_a: RegressionTask,
            task_b: RegressionTask,
    ):
        self._teacher_a = teacher_a
        self._teacher_b = teacher_b
        self._rotation_angle = rotation_angle
        self._noise_std = noise_std
        self._seed = seed
        self._task_a = task_a
        self._task_b = task_b

    @property
    def teacher_a(self) -> np.ndarray:
        """Get task-A teacher (output_dim x input_dim)."""
        return self._teacher_a

    @property
    def teacher_b(self) -> np.ndarray:
        """Get task-B teacher."""
        return self._teacher_b

    @property
    def input_dim(self) -> int:
        """Get input dimension."""
        return self._teacher_a.shape[1]

    @property
    def output_dim(self) -> int:
        """Get output dimension."""
        return self._teacher_a.shape[0]

    @property
    def rotation_angle(self) -> float:
        """Get rotation angle in degrees."""
        return self._rotation_angle

    @property
    def noise_std(self) -> float:
        """Get target noise standard deviation."""
        return self._noise_std

    @property
    def seed(self) -> int:
        """Get generating seed."""
        return self._seed

    @property
    def task_a(self) -> RegressionTask:
        """Get pretraining task."""
        return self._task_a

    @property
    def task_b(self) -> RegressionTask:
        """Get fine-tuning task."""
        return self._task_b


class StepRecord:
    """
    One optimization step of a training run. penalty and the drift of
    protected layers are None on steps that skip the penalty evaluation.
    """

    __slots__ = ("step", "task_loss", "penalty", "total_loss",
                 "penalty_applied", "drift", "grad_norm")

    def __init__(  # pylint: disable=too-many-arguments
            self,
            step: int,
            task_loss: float,
            penalty: float | None,
            total_loss: float,
            penalty_applied: bool,
            drift: dict[str, float | None],
            grad_norm: dict[str, float],
    ):
        self.step = step
        self.task_loss = task_loss
        self.penalty = penalty
        self.total_loss = total_loss
        self.penalty_applied = penalty_applied
        self.drift = drift
        self.grad_norm = grad_norm


class TrainTrace:
    """Per-step records of a training run, in step order."""

    def __init__(self, layer_names: Sequence[str]):
        self._layer_names = list(layer_names)
        self._records: list[StepRecord] = []

    @property
    def layer_names(self) -> list[str]:
        """Get layer names in column order."""
        return self._layer_names

    @property
    def records(self) -> list[StepRecord]:
        """Get step records."""
        return self._records

    def append(self, record: StepRecord):
        """Add the record of the next step."""
        if record.step != len(self._records):
            raise ParameterError(
                f"expected step {len(self._records)}; got {record.step}",
                "step",
            )
        self._records.append(record)

    def __len__(self):
        return len(self._records)

    def columns(self) -> list[str]:
        """CSV header columns."""
        return (
            ["step", "task_loss", "penalty", "total_loss"]
            + [f"drift.{n}" for n in self._layer_names]
            + [f"grad_norm.{n}" for n in self._layer_names]
        )

    def rows(self) -> Iterator[list]:
        """CSV rows, one per step."""
        for rec in self._records:
            yield (
                [rec.step, rec.task_loss, rec.penalty, rec.total_loss]
                + [rec.drift[n] for n in self._layer_names]
                + [rec.grad_norm[n] for n in self._layer_names]
            )


class GradientBatch:
    """Per-sample gradients of one weight matrix."""

    def __init__(self, samples: Sequence[np.ndarray] | np.ndarray):
        stacked = np.asarray(samples, dtype=np.float64)
        if stacked.ndim != 3 or stacked.shape[0] < 1:
            raise ValidationError(
                "gradient batch needs N >= 1 matrices of one shape", "samples",
            )
        if not np.all(np.isfinite(stacked)):
            raise ValidationError("gradient batch has non-finite entries",
                                  "samples")
        stacked.setflags(write=False)
        self._samples = stacked

    @property
    def samples(self) -> np.ndarray:
        """Get N x m x n stacked gradients."""
        return self._samples

    @property
    def count(self) -> int:
        """Get N."""
        return self._samples.shape[0]

    @property
    def shape(self) -> tuple[int, int]:
        """Get per-sample gradient shape."""
        return self._samples.shape[1], self._samples.shape[2]

    def mean(self) -> np.ndarray:
        """Batch-mean gradient, summed in sample order."""
        total = np.zeros(self.shape)
        for sample in self._samples:
            total += sample
        return total / self.count


class HiddenStateSet:
    """Pooled hidden vectors of one model on one dataset."""

    def __init__(self, model: str, dataset: str, rows):
        self._model = model
        self._dataset = dataset
        self._rows = as_matrix(rows, f"hidden[{model}]")

    @property
    def model(self) -> str:
        """Get model tag."""
        return self._model

    @property
    def dataset(self) -> str:
        """Get dataset tag."""
        return self._dataset

    @property
    def rows(self) -> np.ndarray:
        """Get N_d x p hidden vectors."""
        return self._rows

    @property
    def dim(self) -> int:
        """Get p."""
        return self._rows.shape[1]

    def centroid(self) -> np.ndarray:
        """Mean hidden vector."""
        return self._rows.mean(axis=0)


DEFAULT_SEQUENCE_CAP = 128


class ProbSequence:
    """Per-step next-token distributions of one generated sequence."""

    def __init__(self, steps, cap: int = DEFAULT_SEQUENCE_CAP):
        check_positive_int(cap, "cap")
        probs = as_matrix(steps, "steps")
        if probs.shape[0] > cap:
            raise ValidationError(
                f"sequence has {probs.shape[0]} steps; cap is {cap}", "steps",
            )
        if np.any(probs < 0):
            raise ValidationError("probabilities must be non-negative",
                                  "steps")
        sums = probs.sum(axis=1)
        if np.max(np.abs(sums - 1.0)) > 1e-9:
            raise ValidationError("each step must sum to 1 within 1e-9",
                                  "steps")
        self._probs = probs
        self._cap = cap

    @property
    def probs(self) -> np.ndarray:
        """Get T x V probability matrix."""
        return self._probs

    @property
    def length(self) -> int:
        """Get T."""
        return self._probs.shape[0]

    @property
    def cap(self) -> int:
        """Get configured length cap."""
        return self._cap
