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

# pylint: disable=too-many-locals

"""
Measurements comparing a base model with tuned checkpoints: gradient
energy in the top singular block, first-order alignment of updates,
left-singular subspace rotation, hidden-state centroid drift and the
distribution of per-sequence token entropy.

All reductions run in a fixed (layer name, sample index) order.
"""

from __future__ import absolute_import, annotations

import logging
import math
from dataclasses import dataclass
from typing import Iterable, Iterator, Mapping, Sequence

import numpy as np

from .datatypes import GradientBatch, HiddenStateSet, ModelParams, ProbSequence
from .error import ParameterError, UndefinedRatioError
from .helpers import as_matrix, check_rank, check_same_shape
from .linalg import OrthonormalBasis, SvdResult, principal_angles, svd_full

_LOGGER = logging.getLogger(__name__)

DEFAULT_ROTATION_CAP = 512
KDE_GRID_POINTS = 256


@dataclass(frozen=True)
class EnergyPoint:
    """One point of the Fisher-projected energy curve."""
    r: int
    x: float
    y: float


@dataclass(frozen=True)
class HiddenDriftReport:
    """Centroid drift in hidden space and in the shared 2D PCA plane."""
    d_hidden: dict[str, float]
    d_pca: dict[str, float]
    pca_coords: dict[str, np.ndarray]
    pca_centroids: dict[str, np.ndarray]

    def rows(self) -> Iterator[list]:
        """CSV rows (model, D_hidden, D_pca, centroid_x, centroid_y)."""
        for model, d_hidden in self.d_hidden.items():
            centroid = self.pca_centroids[model]
            yield [model, d_hidden, self.d_pca[model],
                   float(centroid[0]), float(centroid[1])]


@dataclass(frozen=True)
class EntropyProfile:
    """Per-sequence mean entropies and their Gaussian KDE."""
    e_values: np.ndarray
    bandwidth: float | None
    grid: np.ndarray | None
    density: np.ndarray | None

    @property
    def has_kde(self) -> bool:
        """Whether the KDE could be formed."""
        return self.density is not None


def _as_model_layers(model) -> Mapping[str, np.ndarray]:
    return model.layers if isinstance(model, ModelParams) else model


def _check_conformable(batch: GradientBatch, u_r: OrthonormalBasis,
                       v_r: OrthonormalBasis):
    m, n = batch.shape
    if u_r.shape[0] != m or v_r.shape[0] != n or u_r.rank != v_r.rank:
        raise ParameterError(
            f"bases {u_r.shape}, {v_r.shape} do not fit gradients of shape "
            f"{(m, n)}", "basis",
        )


def _total_energy(batch: GradientBatch) -> float:
    total = 0.0
    for sample in batch.samples:
        total += float(np.sum(sample * sample))
    if total == 0.0:
        raise UndefinedRatioError(
            "all gradients are zero; energy ratio undefined",
            matrix_name="gradients",
        )
    return total


def fisher_energy_ratio(
        batch: GradientBatch,
        u_r: OrthonormalBasis,
        v_r: OrthonormalBasis,
) -> float:
    """
    Fraction sum_t ||U_r^T G_t V_r||_F^2 / sum_t ||G_t||_F^2 of gradient
    energy inside the strict top r x r singular block.
    """
    _check_conformable(batch, u_r, v_r)
    total = _total_energy(batch)
    captured = 0.0
    for sample in batch.samples:
        block = (u_r.columns.T @ sample) @ v_r.columns
        captured += float(np.sum(block * block))
    return min(captured / total, 1.0)


def fisher_energy_curve(
        batch: GradientBatch,
        svd: SvdResult,
        ranks: Iterable[int],
) -> list[EnergyPoint]:
    """
    Energy fraction y(r) against block size x(r) = r^2 / R^2 for each r.

    The block energy grows by adding the new row/column strip of the
    per-coordinate energy map, so y is non-decreasing by construction.
    """
    wanted = sorted(set(ranks))
    if not wanted:
        raise ParameterError("ranks must not be empty", "ranks")
    big_r = svd.rank
    for r in wanted:
        check_rank(r, big_r, "r")
    u_full = OrthonormalBasis(svd.U, name="U")
    v_full = OrthonormalBasis(svd.V, name="V")
    _check_conformable(batch, u_full, v_full)
    total = _total_energy(batch)

    energy_map = np.zeros((big_r, big_r))
    for sample in batch.samples:
        block = (svd.U.T @ sample) @ svd.V
        energy_map += block * block

    points = []
    captured = 0.0
    done = 0
    for r in wanted:
        while done < r:
            captured += float(np.sum(energy_map[done, :done + 1]))
            captured += float(np.sum(energy_map[:done, done]))
            done += 1
        points.append(EnergyPoint(r, r * r / (big_r * big_r),
                                  min(captured / total, 1.0)))
    return points


def default_layer_groups(names: Iterable[str]) -> dict[str, list[str]]:
    """One group per layer-name prefix (text before the first '.')."""
    groups: dict[str, list[str]] = {}
    for name in sorted(names):
        groups.setdefault(name.split(".", 1)[0], []).append(name)
    return groups


def first_order_signal(
        base,
        ckpt,
        grads: Mapping[str, GradientBatch],
        layer_groups: Mapping[str, Sequence[str]] | None = None,
) -> dict[str, float]:
    """
    Mean over each group's matrices of <g_W, W_ckpt - W_base>, g_W being
    the batch-mean gradient. Negative values mean the update descends the
    dataset loss at first order.
    """
    base_layers = _as_model_layers(base)
    ckpt_layers = _as_model_layers(ckpt)
    groups = layer_groups or default_layer_groups(grads)
    result = {}
    for group, names in groups.items():
        if not names:
            raise ParameterError(f"group {group} is empty", "layer_groups")
        values = []
        for name in names:
            if name not in base_layers or name not in ckpt_layers:
                raise ParameterError(f"layer {name} missing from a model",
                                     name)
            if name not in grads:
                raise ParameterError(f"no gradients for layer {name}", name)
            w_base = as_matrix(base_layers[name], name)
            w_ckpt = as_matrix(ckpt_layers[name], name)
            if w_base.shape != w_ckpt.shape or \
                    grads[name].shape != w_base.shape:
                raise ParameterError(f"shape mismatch for layer {name}", name)
            delta = w_ckpt - w_base
            values.append(float(np.sum(grads[name].mean() * delta)))
        result[group] = math.fsum(values) / len(values)
    return result


def _left_basis(weight: np.ndarray, k: int, name: str) -> OrthonormalBasis:
    return OrthonormalBasis(svd_full(weight, name).U[:, :k], name=name)


def mean_rotation(w_base, w_tuned, k: int) -> float:
    """Mean principal angle (degrees) between the top-k left bases."""
    w_base = as_matrix(w_base, "W_base")
    w_tuned = as_matrix(w_tuned, "W_tuned")
    check_same_shape(w_base, w_tuned, "W_tuned")
    check_rank(k, min(w_base.shape), "k")
    angles = principal_angles(_left_basis(w_base, k, "U_base"),
                              _left_basis(w_tuned, k, "U_tuned"))
    return float(np.mean(angles))


def _split_type(name: str) -> tuple[str, str]:
    layer, _, kind = name.rpartition(".")
    return (layer, kind) if layer else (name, "")


def rotation_layerwise(
        base,
        tuned,
        types: Iterable[str] | None = None,
        cap: int = DEFAULT_ROTATION_CAP,
) -> dict[str, float]:
    """
    Mean U-space rotation per layer, averaged over the layer's matrix
    types. Names of the form "{layer}.{type}" are grouped by layer; a
    name without a dot is its own layer with an empty type.
    """
    base_layers = _as_model_layers(base)
    tuned_layers = _as_model_layers(tuned)
    wanted = None if types is None else set(types)
    per_layer: dict[str, list[float]] = {}
    seen: set[str] = set()
    for name in sorted(base_layers):
        layer, kind = _split_type(name)
        seen.add(layer)
        if wanted is not None and kind not in wanted:
            continue
        if name not in tuned_layers:
            continue
        w_base = as_matrix(base_layers[name], name)
        k = min(cap, *w_base.shape)
        per_layer.setdefault(layer, []).append(
            mean_rotation(w_base, tuned_layers[name], k))
    for layer in sorted(seen - set(per_layer)):
        _LOGGER.warning("no matching matrix types in layer %s; omitted", layer)
    return {layer: float(np.mean(vals)) for layer, vals in
            sorted(per_layer.items())}


def rotation_rankwise(
        w_base,
        w_tuned,
        ranks: Iterable[int],
        cap: int = DEFAULT_ROTATION_CAP,
) -> list[tuple[int, float]]:
    """Mean principal angle between the first r left singular vectors."""
    w_base = as_matrix(w_base, "W_base")
    w_tuned = as_matrix(w_tuned, "W_tuned")
    check_same_shape(w_base, w_tuned, "W_tuned")
    limit = min(cap, *w_base.shape)
    u_base = svd_full(w_base, "W_base").U
    u_tuned = svd_full(w_tuned, "W_tuned").U
    result = []
    for r in ranks:
        check_rank(r, limit, "r")
        angles = principal_angles(
            OrthonormalBasis(u_base[:, :r], name="U_base"),
            OrthonormalBasis(u_tuned[:, :r], name="U_tuned"),
        )
        result.append((int(r), float(np.mean(angles))))
    return result


def hidden_drift(
        sets: Sequence[HiddenStateSet],
        base_tag: str,
) -> HiddenDriftReport:
    """
    Centroid distance of every model's hidden states from the base model,
    plus coordinates in the top-2 PCA plane of all stacked, centered rows.
    """
    if not sets:
        raise ParameterError("no hidden-state sets given", "sets")
    models = [s.model for s in sets]
    if len(set(models)) != len(models):
        raise ParameterError("model tags must be unique", "sets")
    if base_tag not in models:
        raise ParameterError(f"no set tagged {base_tag}", "base_tag")
    dim, dataset = sets[0].dim, sets[0].dataset
    for hset in sets:
        if hset.dim != dim:
            raise ParameterError(
                f"{hset.model} has dimension {hset.dim}; expected {dim}",
                "sets",
            )
        if hset.dataset != dataset:
            raise ParameterError(
                f"{hset.model} is from dataset {hset.dataset}; "
                f"expected {dataset}", "sets",
            )

    centroids = {s.model: s.centroid() for s in sets}
    base_centroid = centroids[base_tag]
    d_hidden = {m: float(np.linalg.norm(c - base_centroid))
                for m, c in centroids.items()}

    stacked = np.vstack([s.rows for s in sets])
    centered = stacked - stacked.mean(axis=0)
    directions = svd_full(centered, "hidden").V[:, :min(2, dim)]
    coords_all = centered @ directions
    if coords_all.shape[1] < 2:
        coords_all = np.hstack(
            [coords_all, np.zeros((coords_all.shape[0],
                                   2 - coords_all.shape[1]))])

    pca_coords, pca_centroids = {}, {}
    start = 0
    for hset in sets:
        stop = start + hset.rows.shape[0]
        pca_coords[hset.model] = coords_all[start:stop]
        pca_centroids[hset.model] = coords_all[start:stop].mean(axis=0)
        start = stop
    d_pca = {m: float(np.linalg.norm(c - pca_centroids[base_tag]))
             for m, c in pca_centroids.items()}
    return HiddenDriftReport(d_hidden, d_pca, pca_coords, pca_centroids)


def token_entropy(probs: np.ndarray) -> np.ndarray:
    """Natural-log entropy of each row; 0 log 0 counts as 0."""
    logs = np.zeros_like(probs)
    np.log(probs, out=logs, where=probs > 0)
    return -np.sum(probs * logs, axis=1)


def silverman_bandwidth(std: float, count: int) -> float:
    """Rule-of-thumb bandwidth 1.06 s N^(-1/5)."""
    return 1.06 * std / count ** 0.2


def entropy_profile(
        seqs: Sequence[ProbSequence],
        grid_points: int = KDE_GRID_POINTS,
) -> EntropyProfile:
    """
    Mean token entropy per sequence and a Gaussian KDE over those means on
    a uniform grid spanning [min e - 3 h, max e + 3 h].
    """
    if not seqs:
        raise ParameterError("no sequences given", "seqs")
    e_values = np.array([float(np.mean(token_entropy(s.probs)))
                         for s in seqs])
    count = len(e_values)
    std = float(np.std(e_values, ddof=1)) if count >= 2 else 0.0
    if count < 2 or std == 0.0:
        _LOGGER.warning(
            "KDE unavailable: N=%d, sample std=%.3e", count, std,
        )
        return EntropyProfile(e_values, None, None, None)

    bandwidth = silverman_bandwidth(std, count)
    grid = np.linspace(e_values.min() - 3 * bandwidth,
                       e_values.max() + 3 * bandwidth, grid_points)
    z = (grid[:, None] - e_values[None, :]) / bandwidth
    density = np.exp(-0.5 * z * z).sum(axis=1) / (
        count * bandwidth * math.sqrt(2.0 * math.pi))
    return EntropyProfile(e_values, bandwidth, grid, density)
