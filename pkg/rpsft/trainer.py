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

# pylint: disable=too-many-arguments,too-many-locals

"""
Desk-scale continual-learning harness.

A small model is pretrained on task A and fine-tuned on task B with plain
gradient descent on

    L(theta) = L_task(theta) + lambda * sum_l ||U_k^T W_l V_k - S_ref||_F^2,

where the penalty term (and its gradient) is only added on steps whose
index is a multiple of the update period. Regression losses are
(1 / 2N) sum_i ||y_hat_i - y_i||^2; the classifier uses mean
cross-entropy against the argmax of the regression targets.
"""

from __future__ import absolute_import, annotations

import logging
import math
from dataclasses import dataclass, field
from typing import Mapping, Union

import numpy as np

from .datatypes import (ARCHITECTURES, GradientBatch, ModelParams,
                        QuadraticTask, RegressionTask, StepRecord,
                        SyntheticTaskPair, TrainTrace)
from .error import ParameterError, TrainingError
from .helpers import (check_choice, check_non_negative, check_positive,
                      check_positive_int)
from .linalg import OrthonormalBasis, complete_basis, svd_full
from .protected import (ProtectedBasis, RegularizerConfig, penalty,
                        penalty_gradient)

_LOGGER = logging.getLogger(__name__)

Task = Union[RegressionTask, QuadraticTask]
MODES: tuple[str, ...] = ("sft", "rpsft", "l2_init")


@dataclass
class TrainConfig:
    """Gradient-descent settings of one training run."""
    lr: float = 0.05
    steps: int = 400
    batch_size: int = 256
    reg: RegularizerConfig = field(default_factory=RegularizerConfig)
    seed: int = 0
    mode: str = "rpsft"
    target_loss: float | None = None
    max_final_loss: float = math.inf
    log_every: int = 100

    def __post_init__(self):
        check_positive(self.lr, "lr")
        check_positive_int(self.steps, "steps")
        check_positive_int(self.batch_size, "batch_size")
        check_choice(self.mode, MODES, "mode")
        check_positive_int(self.log_every, "log_every")
        if self.target_loss is not None:
            check_non_negative(self.target_loss, "target_loss")

    @property
    def effective_lambda(self) -> float:
        """Penalty coefficient actually applied (0 in sft mode)."""
        return 0.0 if self.mode == "sft" else self.reg.lam


class StationarityReport:
    """Stationarity and drift-bound measurements of a model."""

    def __init__(self, grad_norm: float, per_layer: dict[str, dict]):
        self._grad_norm = grad_norm
        self._per_layer = per_layer

    @property
    def grad_norm(self) -> float:
        """Get Frobenius norm of the full task gradient."""
        return self._grad_norm

    @property
    def per_layer(self) -> dict[str, dict]:
        """
        Get per-layer records with keys drift_lhs, bound_rhs (None when
        lambda = 0) and stationary_residual.
        """
        return self._per_layer


def make_task_pair(
        input_dim: int,
        output_dim: int,
        rotation_angle: float,
        noise_std: float,
        n_train: int,
        n_eval: int,
        seed: int,
        input_rank: int = 0,
        tilt: float = 0.0,
) -> SyntheticTaskPair:
    """
    Build two linear regression tasks whose teachers differ by a planar
    rotation of the output space.

    With input_rank = 0 both tasks draw isotropic inputs. Otherwise task A
    inputs span the top input_rank right singular directions of teacher_A
    and task B inputs span those directions tilted by ``tilt`` degrees
    towards an equal number of directions teacher_A responds to least
    (its null space when input_dim >= output_dim + input_rank).

    :param rotation_angle: Angle in degrees of the rotation R with
        teacher_B = R teacher_A.
    :return: :class:`SyntheticTaskPair` object.
    """
    for value, name in ((input_dim, "input_dim"), (output_dim, "output_dim"),
                        (n_train, "n_train"), (n_eval, "n_eval")):
        check_positive_int(value, name)
    check_non_negative(noise_std, "noise_std")
    check_non_negative(input_rank, "input_rank")
    if not math.isfinite(rotation_angle):
        raise ParameterError("rotation_angle must be finite", "rotation_angle")
    if output_dim < 2 and rotation_angle % 360 != 0:
        raise ParameterError(
            "a planar rotation needs output_dim >= 2", "rotation_angle",
        )
    if 2 * input_rank > input_dim:
        raise ParameterError(
            f"input_rank {input_rank} needs input_dim >= {2 * input_rank}",
            "input_rank",
        )
    if not 0.0 <= tilt <= 90.0:
        raise ParameterError(f"tilt must be in [0, 90]; got {tilt}", "tilt")

    rng = np.random.default_rng(seed)
    teacher_rng, plane_rng, data_a_rng, data_b_rng = rng.spawn(4)

    teacher_a = teacher_rng.standard_normal((output_dim, input_dim))
    if output_dim == input_dim:
        svd = svd_full(teacher_a, "teacher_A")
        teacher_a = svd.U @ svd.V.T
    else:
        teacher_a /= math.sqrt(input_dim)

    if rotation_angle == 0:
        teacher_b = teacher_a.copy()
    else:
        raw = plane_rng.standard_normal((output_dim, 2))
        p1 = raw[:, 0] / np.linalg.norm(raw[:, 0])
        p2 = raw[:, 1] - (p1 @ raw[:, 1]) * p1
        p2 /= np.linalg.norm(p2)
        theta = math.radians(rotation_angle)
        rotation = (
            np.eye(output_dim)
            + (math.cos(theta) - 1.0) * (np.outer(p1, p1) + np.outer(p2, p2))
            + math.sin(theta) * (np.outer(p2, p1) - np.outer(p1, p2))
        )
        teacher_b = rotation @ teacher_a

    basis_a = basis_b = None
    if input_rank > 0:
        right = svd_full(teacher_a, "teacher_A").V
        # Trailing completion columns are the directions of least gain.
        full = complete_basis(OrthonormalBasis(right, name="V_teacher"))
        basis_a = full[:, :input_rank]
        fresh = full[:, input_dim - input_rank:]
        angle = math.radians(tilt)
        basis_b = math.cos(angle) * basis_a + math.sin(angle) * fresh

    def sample(task_rng, teacher, name, basis):
        x_rng, noise_rng = task_rng.spawn(2)
        if basis is None:
            x_all = x_rng.standard_normal((n_train + n_eval, input_dim))
        else:
            x_all = x_rng.standard_normal((n_train + n_eval, input_rank))
            x_all = x_all @ basis.T
        y_all = x_all @ teacher.T
        if noise_std > 0:
            y_all = y_all + noise_std * noise_rng.standard_normal(y_all.shape)
        return RegressionTask(
            name, x_all[:n_train], y_all[:n_train],
            x_all[n_train:], y_all[n_train:],
        )

    return SyntheticTaskPair(
        teacher_a, teacher_b, rotation_angle, noise_std, seed,
        sample(data_a_rng, teacher_a, "A", basis_a),
        sample(data_b_rng, teacher_b, "B", basis_b),
    )


def init_model(
        arch: str,
        input_dim: int,
        output_dim: int,
        seed: int,
        hidden_dim: int = 32,
        scale: float = 1.0,
) -> ModelParams:
    """
    Seeded Gaussian initialization scaled by scale/sqrt(fan_in); scale = 0
    gives an all-zero model.
    """
    check_choice(arch, ARCHITECTURES, "arch")
    check_non_negative(scale, "scale")
    rng = np.random.default_rng(seed)
    if arch == "two_layer_tanh":
        check_positive_int(hidden_dim, "hidden_dim")
        return ModelParams(arch, {
            "fc1": rng.standard_normal((hidden_dim, input_dim))
            * (scale / math.sqrt(input_dim)),
            "fc2": rng.standard_normal((output_dim, hidden_dim))
            * (scale / math.sqrt(hidden_dim)),
        })
    return ModelParams(arch, {
        "w": rng.standard_normal((output_dim, input_dim))
        * (scale / math.sqrt(input_dim)),
    })


def hidden_states(model: ModelParams, x: np.ndarray) -> np.ndarray:
    """Last hidden representation: tanh activations or linear outputs."""
    if model.arch == "two_layer_tanh":
        return np.tanh(x @ model["fc1"].T)
    return x @ model["w"].T


def predict(model: ModelParams, x: np.ndarray) -> np.ndarray:
    """Model outputs (logits for the classifier)."""
    if model.arch == "two_layer_tanh":
        return hidden_states(model, x) @ model["fc2"].T
    return x @ model["w"].T


def _softmax(logits: np.ndarray) -> np.ndarray:
    shifted = logits - logits.max(axis=1, keepdims=True)
    exp = np.exp(shifted)
    return exp / exp.sum(axis=1, keepdims=True)


def predict_proba(model: ModelParams, x: np.ndarray) -> np.ndarray:
    """Softmax of the model outputs, one distribution per row."""
    return _softmax(predict(model, x))


def loss_and_grads(
        model: ModelParams,
        task: Task,
        split: str = "train",
        index: np.ndarray | None = None,
) -> tuple[float, dict[str, np.ndarray]]:
    """
    Task loss and its gradient per layer on a split (or a subset of its
    rows given by index).
    """
    if isinstance(task, QuadraticTask):
        if model.arch != "linear":
            raise ParameterError(
                "the quadratic task needs a linear model", "arch",
            )
        diff = model[task.layer] - task.target
        return (
            0.5 * task.curvature * float(np.sum(diff * diff)),
            {task.layer: task.curvature * diff},
        )

    x, y = task.split(split)
    if index is not None:
        x, y = x[index], y[index]
    if x.shape[1] != model.input_dim or y.shape[1] != model.output_dim:
        raise ParameterError(
            f"task {task.name} has dims {x.shape[1]}->{y.shape[1]}; model is "
            f"{model.input_dim}->{model.output_dim}", "task",
        )
    count = x.shape[0]

    if model.arch == "linear_softmax_classifier":
        probs = _softmax(x @ model["w"].T)
        labels = np.argmax(y, axis=1)
        picked = probs[np.arange(count), labels]
        loss = float(-np.mean(np.log(np.maximum(picked, 1e-300))))
        delta = probs.copy()
        delta[np.arange(count), labels] -= 1.0
        return loss, {"w": delta.T @ x / count}

    if model.arch == "linear":
        resid = x @ model["w"].T - y
        loss = 0.5 * float(np.sum(resid * resid)) / count
        return loss, {"w": resid.T @ x / count}

    hidden = np.tanh(x @ model["fc1"].T)
    resid = hidden @ model["fc2"].T - y
    loss = 0.5 * float(np.sum(resid * resid)) / count
    d_out = resid / count
    d_hidden = (d_out @ model["fc2"]) * (1.0 - hidden * hidden)
    return loss, {"fc1": d_hidden.T @ x, "fc2": d_out.T @ hidden}


def evaluate(model: ModelParams, task: Task, split: str = "eval") -> float:
    """Mean task loss over a split."""
    check_choice(split, ("train", "eval"), "split")
    return loss_and_grads(model, task, split)[0]


def per_sample_gradients(
        model: ModelParams,
        task: RegressionTask,
        layer: str,
        split: str = "train",
        limit: int | None = None,
) -> GradientBatch:
    """Gradient of one layer for each sample of a split, in row order."""
    x, _ = task.split(split)
    count = x.shape[0] if limit is None else min(limit, x.shape[0])
    samples = [
        loss_and_grads(model, task, split, np.array([i]))[1][layer]
        for i in range(count)
    ]
    return GradientBatch(samples)


def _minibatches(n: int, batch_size: int, rng: np.random.Generator):
    """Endless stream of index arrays; None means the full batch."""
    if batch_size >= n:
        while True:
            yield None
    while True:
        order = rng.permutation(n)
        for start in range(0, n - batch_size + 1, batch_size):
            yield order[start:start + batch_size]


def _check_bases(
        model: ModelParams,
        bases: Mapping[str, ProtectedBasis],
        mode: str,
):
    for name, basis in bases.items():
        if name not in model.layers:
            raise ParameterError(f"basis for unknown layer {name}", name)
        if basis.weight_shape != model[name].shape:
            raise ParameterError(
                f"basis for {name} expects {basis.weight_shape}; "
                f"layer is {model[name].shape}", name,
            )
        if mode == "l2_init" and basis.k != min(basis.weight_shape):
            raise ParameterError(
                f"l2_init needs full-rank bases; {name} has k={basis.k}", name,
            )


def _drift_cell(name, layer_penalty, bases, evaluated):
    if name not in bases:
        return 0.0
    return float(np.sqrt(layer_penalty[name])) if evaluated else None


def train_rpsft(
        model0: ModelParams,
        task: Task,
        bases: Mapping[str, ProtectedBasis],
        config: TrainConfig,
) -> tuple[ModelParams, TrainTrace]:
    """
    Fine-tune model0 on task with the projected-block penalty.

    :param model0: Pretrained model; its weights define W0.
    :param task: Fine-tuning task.
    :param bases: Protected basis per selected layer (empty for k = 0).
    :param config: Training configuration.
    :return: Fine-tuned model and its per-step trace.
    """
    _check_bases(model0, bases, config.mode)
    lam = config.effective_lambda
    use_penalty = lam > 0 and bool(bases)
    period = config.reg.update_period

    layers = {name: w.copy() for name, w in model0.layers.items()}
    model = model0.replace(layers)
    trace = TrainTrace(model0.names)
    batches = _minibatches(
        task.n_train, config.batch_size, np.random.default_rng(config.seed),
    )

    for step in range(config.steps):
        index = next(batches)
        task_loss, grads = loss_and_grads(model, task, "train", index)
        if not math.isfinite(task_loss):
            raise TrainingError(
                f"non-finite task loss {task_loss} at step {step}",
                step=step, loss=task_loss,
            )
        if config.target_loss is not None:
            full_loss = task_loss if index is None else evaluate(
                model, task, "train")
            if full_loss <= config.target_loss:
                _LOGGER.debug("target loss reached at step %d", step)
                break

        # Off-period steps skip the penalty; their trace cells stay empty.
        evaluated = step % period == 0
        layer_penalty = {
            name: penalty(layers[name], bases[name]) for name in sorted(bases)
        } if evaluated else {}
        reg_value = float(sum(layer_penalty.values())) if evaluated else None
        applied = use_penalty and evaluated
        total = task_loss
        if applied:
            total = task_loss + lam * reg_value
            for name in sorted(bases):
                grads[name] = grads[name] + lam * penalty_gradient(
                    layers[name], bases[name])
        if not math.isfinite(total):
            raise TrainingError(
                f"non-finite total loss {total} at step {step}",
                step=step, loss=total,
            )

        trace.append(StepRecord(
            step, task_loss, reg_value, total, applied,
            {n: _drift_cell(n, layer_penalty, bases, evaluated)
             for n in model.names},
            {n: float(np.linalg.norm(grads[n])) if n in grads else 0.0
             for n in model.names},
        ))
        for name, grad in grads.items():
            layers[name] = layers[name] - config.lr * grad
            if not np.all(np.isfinite(layers[name])):
                raise TrainingError(
                    f"non-finite weights in {name} after step {step}",
                    step=step, loss=total,
                )
        model = model0.replace(layers)
        if step % config.log_every == 0:
            _LOGGER.debug(
                "step %d task %.6e penalty %s total %.6e",
                step, task_loss,
                "-" if reg_value is None else f"{reg_value:.6e}", total,
            )
    return model, trace


def pretrain(
        arch: str,
        task: Task,
        config: TrainConfig,
        hidden_dim: int = 32,
        model: ModelParams | None = None,
) -> ModelParams:
    """
    Train from a seeded initialization with plain gradient descent.

    :raises TrainingError: if the evaluation loss stays above
        ``config.max_final_loss``.
    """
    if config.mode != "sft" and config.effective_lambda != 0:
        raise ParameterError("pretraining must run in sft mode", "mode")
    if model is None:
        if isinstance(task, QuadraticTask):
            rows, cols = task.target.shape
        else:
            x, y = task.split("train")
            rows, cols = y.shape[1], x.shape[1]
        model = init_model(arch, cols, rows, config.seed, hidden_dim)
    trained, _ = train_rpsft(model, task, {}, config)
    final = evaluate(trained, task, "eval")
    if not final <= config.max_final_loss:
        raise TrainingError(
            f"pretraining reached eval loss {final:.6e}; "
            f"required {config.max_final_loss:.6e}",
            step=config.steps, loss=final,
        )
    return trained


def stationarity_check(
        model: ModelParams,
        task: Task,
        bases: Mapping[str, ProtectedBasis],
        lam: float,
) -> StationarityReport:
    """
    Measure how close model is to a stationary point of the regularized
    objective and check the drift bound
    ||U_k^T (W - W0) V_k||_F <= ||grad f(W)||_F / (2 lambda).
    """
    check_non_negative(lam, "lambda")
    _, grads = loss_and_grads(model, task, "train")
    grad_norm = math.sqrt(sum(float(np.sum(g * g)) for g in grads.values()))
    per_layer = {}
    for name in sorted(bases):
        basis = bases[name]
        weight = model[name]
        grad = grads.get(name, np.zeros_like(weight))
        drift = basis.block(weight) - basis.S_ref
        projected = basis.block(grad)
        per_layer[name] = {
            "drift_lhs": float(np.linalg.norm(drift)),
            "bound_rhs": (
                float(np.linalg.norm(grad)) / (2.0 * lam) if lam > 0 else None
            ),
            "stationary_residual": float(
                np.linalg.norm(projected + 2.0 * lam * drift)),
        }
    return StationarityReport(grad_norm, per_layer)


def regularized_minimizer(
        task: QuadraticTask,
        basis: ProtectedBasis | None,
        lam: float,
) -> np.ndarray:
    """
    Exact minimizer of (h/2)||W - T||^2 + lambda ||U_k^T (W - W0) V_k||^2:
    the protected block moves to (h A_T + 2 lambda A_0) / (h + 2 lambda)
    and every other block equals the target.
    """
    check_non_negative(lam, "lambda")
    target = task.target
    if basis is None or lam == 0:
        return target.copy()
    h = task.curvature
    drift = basis.block(target) - basis.S_ref
    shrink = 2.0 * lam / (h + 2.0 * lam)
    return target - shrink * (basis.U_k.columns @ drift) @ basis.V_k.columns.T


def quadratic_expansion(
        model: ModelParams,
        task: QuadraticTask,
        delta: np.ndarray,
) -> dict[str, float]:
    """
    Split the loss change of a step delta into the first-order
    (adaptation) and second-order (forgetting) terms of the local
    expansion, next to the exact change.
    """
    before, grads = loss_and_grads(model, task)
    grad = grads[task.layer]
    moved = model.replace({task.layer: model[task.layer] + delta})
    after, _ = loss_and_grads(moved, task)
    first = float(np.sum(grad * delta))
    second = 0.5 * task.curvature * float(np.sum(delta * delta))
    return {
        "actual": after - before,
        "first_order": first,
        "second_order": second,
        "remainder": (after - before) - first - second,
    }
