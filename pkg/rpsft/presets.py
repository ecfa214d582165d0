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
Preset experiment pipelines.

Each preset runs its stages in order and writes CSV files plus a
``manifest.csv`` into the output directory. A failing stage is reported
as :class:`PresetError` naming the preset and the stage.
"""

from __future__ import absolute_import, annotations

import logging
import math
import os
import time
from concurrent.futures import ThreadPoolExecutor
from contextlib import contextmanager
from typing import Callable, Iterable, Sequence

import numpy as np

from .checkpoint import save_checkpoint
from .config import ExperimentConfig
from .csvio import write_csv
from .datatypes import (GradientBatch, HiddenStateSet, ModelParams,
                        ProbSequence, QuadraticTask, SyntheticTaskPair)
from .diagnostics import (entropy_profile, fisher_energy_curve,
                          first_order_signal, hidden_drift, mean_rotation,
                          rotation_layerwise, rotation_rankwise)
from .error import ParameterError, PresetError, RpsftException
from .gradflow import (ConstantForcing, FlowConfig, QuadraticForcing,
                       SinusoidalForcing, closed_form_constant,
                       integrate_flow, steady_state_amplitude,
                       volterra_residual)
from .helpers import makedirs
from .linalg import svd_full
from .protected import (ProtectedBasis, RegularizerConfig, build_basis,
                        build_bases, select_layers)
from .rankselect import (CoordinateProfile, RankChoice, TradeoffConfig,
                         curves, rank_boundary, rank_from_energy)
from .trainer import (TrainConfig, evaluate, hidden_states, init_model,
                      make_task_pair, per_sample_gradients, predict_proba,
                      pretrain, regularized_minimizer, stationarity_check,
                      train_rpsft)

_LOGGER = logging.getLogger(__name__)

DRIFT_LAMBDAS = (0.5, 1.0, 2.0, 4.0, 8.0)
DRIFT_CURVATURE = 0.1
ORDER_STEPS = (0.2, 0.1, 0.05)
MATCH_TOLERANCE = 0.05
SEED_FRACTION = 0.9


class PresetRun:
    """Output directory, resolved config and file list of one run."""

    def __init__(self, name: str, config: ExperimentConfig, out_dir: str):
        self._name = name
        self._config = config
        self._out_dir = out_dir
        self._files: list[str] = []

    @property
    def name(self) -> str:
        """Get preset or command name."""
        return self._name

    @property
    def config(self) -> ExperimentConfig:
        """Get resolved config."""
        return self._config

    @property
    def out_dir(self) -> str:
        """Get output directory."""
        return self._out_dir

    @property
    def files(self) -> list[str]:
        """Get files written so far, in order."""
        return list(self._files)

    @contextmanager
    def stage(self, stage: str):
        """Wrap errors raised inside a stage into PresetError."""
        _LOGGER.info("%s: stage %s", self._name, stage)
        try:
            yield
        except PresetError:
            raise
        except (RpsftException, ValueError, ArithmeticError, OSError) as exc:
            raise PresetError(self._name, stage, exc) from exc

    def header(self, **extra) -> dict[str, object]:
        """Config echo plus extra keys."""
        header: dict[str, object] = dict(self._config.header())
        header.update(extra)
        return header

    def write(self, filename: str, columns: Sequence[str],
              rows: Iterable[Sequence], **extra) -> str:
        """Write one CSV below the output directory."""
        path = os.path.join(self._out_dir, filename)
        write_csv(path, self.header(**extra), columns, rows)
        self._files.append(filename)
        return path

    def add_file(self, filename: str):
        """Record a file written by a worker."""
        self._files.append(filename)

    def write_manifest(self) -> str:
        """Write manifest.csv listing every output file."""
        path = os.path.join(self._out_dir, "manifest.csv")
        write_csv(
            path,
            self.header(command=self._name),
            ["file"],
            [[name] for name in self._files],
        )
        return path


def task_pair(config: ExperimentConfig, seed: int | None = None,
              **inputs) -> SyntheticTaskPair:
    """Task pair of the configured dimensions."""
    return make_task_pair(
        config["data.input_dim"], config["data.output_dim"],
        config["data.rotation_angle"], config["data.noise_std"],
        config["data.n_train"], config["data.n_eval"],
        config["seed"] if seed is None else seed, **inputs,
    )


def regularizer(config: ExperimentConfig, k: int) -> RegularizerConfig:
    """Regularizer settings with protected rank k."""
    return RegularizerConfig(
        lam=config["reg.lambda"], k=k,
        update_period=config["reg.update_period"],
        layer_selector=tuple(config["reg.layers"]),
    )


def pretrain_config(config: ExperimentConfig, seed: int) -> TrainConfig:
    """Full-batch plain descent settings for pretraining."""
    return TrainConfig(
        lr=config["pretrain.lr"], steps=config["pretrain.steps"],
        batch_size=config["data.n_train"],
        reg=RegularizerConfig(lam=0.0, k=0), seed=seed, mode="sft",
    )


def finetune_config(
        config: ExperimentConfig,
        mode: str,
        k: int,
        seed: int,
        target_loss: float | None = None,
) -> TrainConfig:
    """Fine-tuning settings of one arm."""
    return TrainConfig(
        lr=config["train.lr"], steps=config["train.steps"],
        batch_size=config["train.batch_size"], reg=regularizer(config, k),
        seed=seed, mode=mode, target_loss=target_loss,
    )


def pretrained_model(config: ExperimentConfig,
                     pair: SyntheticTaskPair, seed: int) -> ModelParams:
    """Model pretrained on task A."""
    return pretrain(config["arch"], pair.task_a, pretrain_config(config, seed),
                    hidden_dim=config["data.hidden_dim"])


def protected_layers(config: ExperimentConfig, model: ModelParams) -> list[str]:
    """Layers matched by reg.layers."""
    names = select_layers(model.names, config["reg.layers"])
    if not names:
        raise ParameterError(
            f"reg.layers {config['reg.layers']} matches no layer of "
            f"{model.arch}", "reg.layers",
        )
    return names


def full_rank(config: ExperimentConfig, model: ModelParams) -> int:
    """Largest rank valid for every protected layer."""
    return min(min(model[name].shape)
               for name in protected_layers(config, model))


def energy_curve(config: ExperimentConfig, model: ModelParams, task,
                 layer: str):
    """Fisher energy curve of one layer over ranks 1..min(m, n)."""
    batch = per_sample_gradients(model, task, layer, "train",
                                 config["energy.samples"])
    svd = svd_full(model[layer], layer)
    return fisher_energy_curve(batch, svd, range(1, svd.rank + 1))


def energy_rank(config: ExperimentConfig, model: ModelParams,
                task) -> RankChoice:
    """Energy-rule rank measured on the first protected layer."""
    layer = protected_layers(config, model)[0]
    points = energy_curve(config, model, task, layer)
    return rank_from_energy([(p.r, p.y) for p in points],
                            config["energy.target"])


def protected_rank(config: ExperimentConfig, model: ModelParams,
                   task) -> int:
    """
    reg.k for the fixed rule; otherwise the energy-rule rank, lowered to
    the smallest protected layer when it does not fit there.
    """
    limit = full_rank(config, model)
    if config["reg.rank_rule"] == "fixed":
        return config["reg.k"]
    rank = energy_rank(config, model, task).rank
    if rank > limit:
        _LOGGER.warning("energy rank %d lowered to %d to fit every layer",
                        rank, limit)
        rank = limit
    return rank


def finetune(config: ExperimentConfig, base: ModelParams, task,
             mode: str, k: int, seed: int,
             target_loss: float | None = None):
    """Fine-tune one arm; the sft arm gets no bases."""
    bases = {} if mode == "sft" else build_bases(
        base.layers, regularizer(config, k))
    return train_rpsft(base, task, bases,
                       finetune_config(config, mode, k, seed, target_loss))


def top_rotation(config: ExperimentConfig, base: ModelParams,
                 tuned: ModelParams, k: int) -> float:
    """Mean top-k U-space rotation over the protected layers."""
    names = protected_layers(config, base)
    return math.fsum(mean_rotation(base[n], tuned[n], k)
                     for n in names) / len(names)


def run_fig2_energy(run: PresetRun):
    """Fisher-projected energy curves of task-A gradients at the base model."""
    config = run.config
    seed = config["seed"]
    with run.stage("data"):
        pair = task_pair(config)
    with run.stage("pretrain"):
        base = pretrained_model(config, pair, seed)
    with run.stage("energy"):
        curve_rows, rank_rows = [], []
        for layer in protected_layers(config, base):
            points = energy_curve(config, base, pair.task_a, layer)
            curve_rows += [[layer, p.r, p.x, p.y] for p in points]
            choice = rank_from_energy([(p.r, p.y) for p in points],
                                      config["energy.target"])
            rank_rows.append([layer, choice.rank, choice.reached])
    with run.stage("write"):
        run.write("fisher_energy.csv", ["layer", "r", "x", "y"], curve_rows)
        run.write("energy_rank.csv", ["layer", "rank", "reached"], rank_rows)


def _sweep_ranks(config: ExperimentConfig, limit: int) -> list[int]:
    ranks = []
    for item in config["sweep.ranks"]:
        rank = limit if item == "full" else int(item)
        if rank > limit:
            _LOGGER.warning("rank %d exceeds %d; skipped", rank, limit)
            continue
        if rank not in ranks:
            ranks.append(rank)
    return ranks


def run_rank_sweep(run: PresetRun):
    """Fine-tune over a sweep of protected ranks next to plain SFT."""
    config = run.config
    seed = config["seed"]
    with run.stage("data"):
        pair = task_pair(config)
    with run.stage("pretrain"):
        base = pretrained_model(config, pair, seed)
        loss_a0 = evaluate(base, pair.task_a)
        ranks = _sweep_ranks(config, full_rank(config, base))

    rows = []

    def record(label, k, tuned, trace):
        run.write(f"trace_{label}.csv", trace.columns(), trace.rows(), k=k)
        rows.append([
            label, k, evaluate(tuned, pair.task_a) - loss_a0,
            evaluate(tuned, pair.task_b),
            top_rotation(config, base, tuned, max(k, 1)),
        ])

    with run.stage("sft"):
        record("sft", 0, *finetune(config, base, pair.task_b, "sft", 0, seed))
    for k in ranks:
        with run.stage(f"rpsft-k{k}"):
            record(f"k{k}", k,
                   *finetune(config, base, pair.task_b, "rpsft", k, seed))
    with run.stage("write"):
        run.write("rank_sweep.csv",
                  ["run", "k", "task_a_increase", "task_b_loss", "rotation"],
                  rows)


def run_drift_bound(run: PresetRun):
    """Drift bound and 1/lambda scaling on the quadratic task."""
    config = run.config
    with run.stage("setup"):
        rng = np.random.default_rng(config["seed"])
        dim, k = config["flow.dim"], config["flow.k"]
        w0 = rng.standard_normal((dim, dim))
        target = w0 + rng.standard_normal((dim, dim))
        task = QuadraticTask(target, curvature=DRIFT_CURVATURE)
        basis = build_basis("w", w0, k)
    rows = []
    with run.stage("sweep"):
        for lam in DRIFT_LAMBDAS:
            minimizer = regularized_minimizer(task, basis, lam)
            model = ModelParams("linear", {"w": minimizer})
            layer = stationarity_check(model, task, {"w": basis},
                                       lam).per_layer["w"]
            rows.append([lam, layer["drift_lhs"], layer["bound_rhs"],
                         layer["stationary_residual"]])
        slope = float(np.polyfit(np.log([r[0] for r in rows]),
                                 np.log([r[1] for r in rows]), 1)[0])
    with run.stage("write"):
        run.write("drift_bound.csv",
                  ["lambda", "drift_lhs", "bound_rhs", "stationary_residual"],
                  rows, slope=slope, curvature=DRIFT_CURVATURE)


def _flow_setup(config: ExperimentConfig):
    rng = np.random.default_rng(config["seed"])
    dim, k = config["flow.dim"], config["flow.k"]
    w0 = rng.standard_normal((dim, dim))
    basis = build_basis("w", w0, k)
    grad = rng.standard_normal((dim, dim))
    target = w0 + rng.standard_normal((dim, dim))
    amplitude = rng.standard_normal((dim, dim))
    return w0, basis, {
        "constant_G": (ConstantForcing(grad), "constant_G"),
        "zero": (ConstantForcing(np.zeros((dim, dim))), "constant_G"),
        "quadratic_task": (QuadraticForcing(target), "quadratic_task"),
        "sinusoidal": (SinusoidalForcing(amplitude, config["flow.omega"]),
                       "sinusoidal"),
    }


def _closed_form_deviation(trace, basis: ProtectedBasis, grad, lam: float):
    projected = basis.block(grad)
    a0 = trace.A_series[0]
    return max(
        float(np.linalg.norm(a - closed_form_constant(projected, lam, a0, t)))
        for t, a in zip(trace.times, trace.A_series)
    )


def run_gradflow(run: PresetRun):
    """Integrate the regularized flow under several forcings."""
    config = run.config
    lam = config["flow.lambda"]
    with run.stage("setup"):
        w0, basis, forcings = _flow_setup(config)
    rows = []
    for label, (forcing, mode) in forcings.items():
        with run.stage(f"flow-{label}"):
            flow = FlowConfig(lam, config["flow.t_end"], config["flow.dt"],
                              mode)
            trace = integrate_flow(w0, basis, forcing, flow)
            deviation = None
            if isinstance(forcing, ConstantForcing):
                deviation = _closed_form_deviation(
                    trace, basis, forcing.gradient(w0, 0.0), lam)
            rows.append([
                label, lam, volterra_residual(trace, lam), deviation,
                steady_state_amplitude(trace, 0.5 * config["flow.t_end"]),
            ])
            if label == "constant_G":
                run.write("flow_trace.csv", trace.columns(), trace.rows(),
                          forcing=label)

    with run.stage("order"):
        forcing, mode = forcings["constant_G"]
        errors = []
        for dt in ORDER_STEPS:
            trace = integrate_flow(
                w0, basis, forcing, FlowConfig(lam, 1.0, dt, mode))
            errors.append(float(np.linalg.norm(
                trace.A_series[-1] - closed_form_constant(
                    basis.block(forcing.gradient(w0, 0.0)), lam,
                    trace.A_series[0], trace.times[-1]))))
        positive = [(dt, e) for dt, e in zip(ORDER_STEPS, errors) if e > 0]
        slope = (
            float(np.polyfit(np.log([p[0] for p in positive]),
                             np.log([p[1] for p in positive]), 1)[0])
            if len(positive) >= 2 else None
        )
    with run.stage("write"):
        run.write("gradflow_residuals.csv",
                  ["forcing", "lambda", "volterra_residual",
                   "closed_form_deviation", "steady_amplitude"], rows)
        run.write("gradflow_order.csv", ["dt", "error"],
                  [[dt, e] for dt, e in zip(ORDER_STEPS, errors)],
                  slope=slope)


FORGETTING_COLUMNS = [
    "seed", "k", "target_loss", "task_b_loss_sft", "task_b_loss_rpsft",
    "task_a_increase_sft", "task_a_increase_rpsft", "rotation_sft",
    "rotation_rpsft", "matched", "lower_rotation", "lower_forgetting",
]


def forgetting_config(config: ExperimentConfig) -> ExperimentConfig:
    """Config with the forget.* architecture and fine-tuning settings."""
    return config.with_overrides(
        arch=config["forget.arch"], train__lr=config["forget.lr"],
        train__steps=config["forget.steps"],
    )


def forgetting_setup(config: ExperimentConfig,
                     seed: int) -> tuple[SyntheticTaskPair, ModelParams]:
    """
    Task pair with task A on a low-rank input subspace and task B on a
    tilted copy of it, plus the model pretrained on task A from a scaled
    initialization.
    """
    pair = task_pair(config, seed, input_rank=config["forget.input_rank"],
                     tilt=config["forget.tilt"])
    start = init_model(
        config["arch"], config["data.input_dim"], config["data.output_dim"],
        seed, config["data.hidden_dim"], scale=config["forget.init_scale"],
    )
    base = pretrain(config["arch"], pair.task_a, pretrain_config(config, seed),
                    hidden_dim=config["data.hidden_dim"], model=start)
    return pair, base


def forgetting_seed(config: ExperimentConfig, seed: int) -> list:
    """
    One seed of the forgetting trade-off: both arms are rerun to the
    higher of their final task-B training losses so they end matched.
    """
    config = forgetting_config(config)
    pair, base = forgetting_setup(config, seed)
    loss_a0 = evaluate(base, pair.task_a)
    k = protected_rank(config, base, pair.task_a)

    first = {mode: finetune(config, base, pair.task_b, mode, k, seed)[0]
             for mode in ("sft", "rpsft")}
    target = max(evaluate(m, pair.task_b, "train") for m in first.values())
    tuned = {mode: finetune(config, base, pair.task_b, mode, k, seed,
                            target_loss=target)[0]
             for mode in ("sft", "rpsft")}

    loss_b = {m: evaluate(t, pair.task_b, "train") for m, t in tuned.items()}
    increase = {m: evaluate(t, pair.task_a) - loss_a0
                for m, t in tuned.items()}
    rotation = {m: top_rotation(config, base, t, max(k, 1))
                for m, t in tuned.items()}
    matched = abs(loss_b["sft"] - loss_b["rpsft"]) <= (
        MATCH_TOLERANCE * max(loss_b.values()))
    return [
        seed, k, target, loss_b["sft"], loss_b["rpsft"],
        increase["sft"], increase["rpsft"], rotation["sft"],
        rotation["rpsft"], matched, rotation["rpsft"] < rotation["sft"],
        increase["rpsft"] <= increase["sft"],
    ]


def run_forgetting_tradeoff(run: PresetRun):
    """Forgetting trade-off of SFT and RPSFT over a seed sweep."""
    config = run.config
    seeds = [config["seed"] + i for i in range(config["sweep.seeds"])]

    def work(seed: int) -> tuple[str, list]:
        with run.stage(f"seed-{seed}"):
            row = forgetting_seed(config, seed)
            filename = f"forgetting_seed{seed}.csv"
            write_csv(os.path.join(run.out_dir, filename),
                      run.header(run_seed=seed), FORGETTING_COLUMNS, [row])
        return filename, row

    with ThreadPoolExecutor(max_workers=config["workers"]) as executor:
        results = list(executor.map(work, seeds))
    for filename, _ in results:
        run.add_file(filename)

    rows = [row for _, row in results]
    with run.stage("write"):
        run.write("forgetting.csv", FORGETTING_COLUMNS, rows)
        count = len(rows)
        summary = [
            ["matched", sum(r[9] for r in rows) / count],
            ["lower_rotation", sum(r[10] for r in rows) / count],
            ["lower_forgetting", sum(r[11] for r in rows) / count],
        ]
        run.write("forgetting_summary.csv",
                  ["criterion", "fraction", "meets"],
                  [[name, frac, frac >= SEED_FRACTION]
                   for name, frac in summary])


def _tuned_models(run: PresetRun):
    config = run.config
    seed = config["seed"]
    with run.stage("data"):
        pair = task_pair(config)
    with run.stage("pretrain"):
        base = pretrained_model(config, pair, seed)
        k = protected_rank(config, base, pair.task_a)
    models = {"base": base}
    for mode in ("sft", "rpsft"):
        with run.stage(mode):
            models[mode] = finetune(config, base, pair.task_b, mode, k,
                                    seed)[0]
    return pair, models, k


def run_rotation(run: PresetRun):
    """Layer-wise and rank-wise U-space rotation of both arms."""
    config = run.config
    _, models, k = _tuned_models(run)
    base = models["base"]
    layer_rows, rank_rows = [], []
    with run.stage("rotation"):
        cap = min(config["diag.cap"], max(k, 1))
        for arm in ("sft", "rpsft"):
            for layer, value in rotation_layerwise(base, models[arm],
                                                   cap=cap).items():
                layer_rows.append([arm, layer, value])
            for layer in protected_layers(config, base):
                limit = min(config["diag.cap"], *base[layer].shape)
                for r, value in rotation_rankwise(
                        base[layer], models[arm][layer],
                        range(1, limit + 1), config["diag.cap"]):
                    rank_rows.append([arm, layer, r, value])
    with run.stage("write"):
        run.write("rotation_layerwise.csv", ["run", "layer", "degrees"],
                  layer_rows, k=k, cap=cap)
        run.write("rotation_rankwise.csv", ["run", "layer", "r", "degrees"],
                  rank_rows, k=k)


def run_hidden_drift(run: PresetRun):
    """Hidden-state centroid drift on task-A inputs."""
    pair, models, k = _tuned_models(run)
    x_eval, _ = pair.task_a.split("eval")
    with run.stage("drift"):
        sets = [HiddenStateSet(tag, "A_eval", hidden_states(model, x_eval))
                for tag, model in models.items()]
        report = hidden_drift(sets, "base")
        coords = [
            [tag, i, float(row[0]), float(row[1])]
            for tag, points in report.pca_coords.items()
            for i, row in enumerate(points)
        ]
    with run.stage("write"):
        run.write("hidden_drift.csv",
                  ["run", "d_hidden", "d_pca", "centroid_x", "centroid_y"],
                  report.rows(), k=k)
        run.write("hidden_pca.csv", ["run", "index", "pc1", "pc2"], coords,
                  k=k)


def run_first_order(run: PresetRun):
    """First-order signal of each fine-tuning update on both tasks."""
    config = run.config
    pair, models, k = _tuned_models(run)
    base = models["base"]
    rows = []
    with run.stage("first-order"):
        for task in (pair.task_a, pair.task_b):
            grads: dict[str, GradientBatch] = {
                layer: per_sample_gradients(base, task, layer, "eval",
                                            config["energy.samples"])
                for layer in base.names
            }
            for arm in ("sft", "rpsft"):
                for group, value in first_order_signal(
                        base, models[arm], grads).items():
                    rows.append([task.name, arm, group, value])
    with run.stage("write"):
        run.write("first_order.csv", ["dataset", "run", "group", "signal"],
                  rows, k=k)


def _sequences(probs: np.ndarray, count: int,
               length: int) -> list[ProbSequence]:
    total = probs.shape[0]
    return [
        ProbSequence(probs[[(i * length + j) % total for j in range(length)]])
        for i in range(count)
    ]


def run_entropy(run: PresetRun):
    """Token-entropy profiles of output distributions on task-A inputs."""
    config = run.config
    pair, models, k = _tuned_models(run)
    x_eval, _ = pair.task_a.split("eval")
    value_rows, kde_rows = [], []
    with run.stage("entropy"):
        for tag, model in models.items():
            profile = entropy_profile(_sequences(
                predict_proba(model, x_eval), config["diag.seqs"],
                config["diag.seq_len"]))
            value_rows += [[tag, i, e] for i, e in
                           enumerate(profile.e_values)]
            if profile.has_kde:
                kde_rows += [[tag, profile.bandwidth, g, d] for g, d in
                             zip(profile.grid, profile.density)]
    with run.stage("write"):
        run.write("entropy.csv", ["run", "sequence", "mean_entropy"],
                  value_rows, k=k)
        run.write("entropy_kde.csv", ["run", "bandwidth", "grid", "density"],
                  kde_rows, k=k)


def run_train(run: PresetRun):
    """Pretrain on task A, fine-tune on task B and save checkpoints."""
    config = run.config
    seed, mode = config["seed"], config["train.mode"]
    with run.stage("data"):
        pair = task_pair(config)
    with run.stage("pretrain"):
        base = pretrained_model(config, pair, seed)
    with run.stage("rank"):
        if mode == "l2_init":
            k = full_rank(config, base)
        elif mode == "sft":
            k = 0
        else:
            k = protected_rank(config, base, pair.task_a)
        bases = build_bases(base.layers, regularizer(config, k))
    with run.stage("finetune"):
        tuned, trace = train_rpsft(base, pair.task_b, bases,
                                   finetune_config(config, mode, k, seed))
    with run.stage("write"):
        for filename, obj in (("base.rpsv", base), ("tuned.rpsv", tuned),
                              ("bases.rpsv", bases)):
            if obj:
                save_checkpoint(obj, os.path.join(run.out_dir, filename))
                run.add_file(filename)
        run.write("trace.csv", trace.columns(), trace.rows(), k=k)
        run.write("losses.csv", ["model", "task_a_loss", "task_b_loss"], [
            [tag, evaluate(model, pair.task_a), evaluate(model, pair.task_b)]
            for tag, model in (("base", base), ("tuned", tuned))
        ], k=k)


def run_rankselect(run: PresetRun):
    """Trade-off curves and rank boundary of a seeded coordinate profile."""
    config = run.config
    size, support = config["rank.R"], config["rank.support"]
    with run.stage("profile"):
        if support > size:
            raise ParameterError(
                f"rank.support={support} exceeds rank.R={size}",
                "rank.support",
            )
        rng = np.random.default_rng(config["seed"])
        g = rng.standard_normal((size, size))
        h = rng.uniform(0.5, 2.0, (size, size))
        c = np.zeros((size, size))
        c[:support, :support] = rng.uniform(0.0, 2.0, (support, support))
        profile = CoordinateProfile(g, h, c)
    with run.stage("curves"):
        tradeoff = TradeoffConfig(config["rank.lambda"], config["rank.beta"])
        table = curves(profile, tradeoff.lam, tradeoff.beta)
        boundary = rank_boundary(profile, tradeoff)
    with run.stage("write"):
        run.write("rankselect_curves.csv", ["k", "F_ood", "G_id", "Phi"],
                  table.rows(), k_star=boundary.k_star, q=boundary.q)


PRESETS: dict[str, Callable[[PresetRun], None]] = {
    "drift-bound": run_drift_bound,
    "fig2-energy": run_fig2_energy,
    "forgetting-tradeoff": run_forgetting_tradeoff,
    "gradflow": run_gradflow,
    "hidden-drift": run_hidden_drift,
    "rank-sweep": run_rank_sweep,
    "rotation": run_rotation,
}


def run_pipeline(name: str, function: Callable[[PresetRun], None],
                 config: ExperimentConfig) -> PresetRun:
    """Run one pipeline into config['out'] and write its manifest."""
    out_dir = config["out"]
    makedirs(out_dir)
    run = PresetRun(name, config, out_dir)
    started = time.monotonic()
    function(run)
    run.write_manifest()
    _LOGGER.info("%s: %d files in %.2f s", name, len(run.files),
                 time.monotonic() - started)
    return run


def run_preset(name: str, config: ExperimentConfig) -> PresetRun:
    """
    Run a named preset.

    :raises ParameterError: for an unknown name; the message lists the
        valid presets.
    """
    if name not in PRESETS:
        raise ParameterError(
            f"unknown preset {name!r}; valid presets: "
            f"{', '.join(sorted(PRESETS))}", "preset",
        )
    return run_pipeline(name, PRESETS[name], config)


DIAGNOSTICS: dict[str, Callable[[PresetRun], None]] = {
    "drift": run_hidden_drift,
    "entropy": run_entropy,
    "firstorder": run_first_order,
    "fisher": run_fig2_energy,
    "rotation": run_rotation,
}
