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
Protected subspaces of pretrained weights and the projected-block penalty.

For a pretrained weight W0 with top-k singular bases U_k, V_k the penalty
of a fine-tuned weight W is

    ||U_k^T W V_k - S_ref||_F^2,   S_ref = U_k^T W0 V_k,

which only sees drift acting between the two protected subspaces.
A ``None`` basis stands for k = 0 and contributes nothing.
"""

from __future__ import absolute_import, annotations

import fnmatch
import logging
from dataclasses import dataclass, field
from typing import Iterable, Mapping

import numpy as np

from .error import ParameterError, ValidationError
from .helpers import (as_matrix, check_non_negative, check_positive_int,
                      check_rank, frobenius_sq)
from .linalg import OrthonormalBasis, complete_basis, svd_full, truncate

_LOGGER = logging.getLogger(__name__)

DEGENERATE_GAP_TOL = 1e-8
DIAGONAL_TOL = 1e-8


class ProtectedBasis:
    """
    Cached top-k singular bases and reference block of one weight matrix.

    Instances are immutable and safe to share between threads.
    """

    def __init__(
            self,
            layer_name: str,
            u_k: OrthonormalBasis,
            v_k: OrthonormalBasis,
            s_ref: np.ndarray,
            sigma_gap: float,
            degenerate: bool = False,
    ):
        k = u_k.rank
        if v_k.rank != k:
            raise ParameterError(
                f"U_k has {k} columns but V_k has {v_k.rank}", "V_k",
            )
        s_ref = as_matrix(s_ref, "S_ref").copy()
        if s_ref.shape != (k, k):
            raise ParameterError(
                f"S_ref must be {k}x{k}; got {s_ref.shape}", "S_ref",
            )
        s_ref.setflags(write=False)
        self._layer_name = layer_name
        self._u_k = u_k
        self._v_k = v_k
        self._s_ref = s_ref
        self._sigma_gap = float(sigma_gap)
        self._degenerate = degenerate

    @property
    def layer_name(self) -> str:
        """Get layer name."""
        return self._layer_name

    @property
    def k(self) -> int:
        """Get protected rank."""
        return self._u_k.rank

    @property
    def U_k(self) -> OrthonormalBasis:  # pylint: disable=invalid-name
        """Get left protected basis (m x k)."""
        return self._u_k

    @property
    def V_k(self) -> OrthonormalBasis:  # pylint: disable=invalid-name
        """Get right protected basis (n x k)."""
        return self._v_k

    @property
    def S_ref(self) -> np.ndarray:  # pylint: disable=invalid-name
        """Get reference block U_k^T W0 V_k."""
        return self._s_ref

    @property
    def sigma_gap(self) -> float:
        """Get sigma_k - sigma_{k+1}."""
        return self._sigma_gap

    @property
    def degenerate(self) -> bool:
        """Whether the cut at k splits a (numerically) repeated value."""
        return self._degenerate

    @property
    def weight_shape(self) -> tuple[int, int]:
        """Get (m, n) of the weight this basis protects."""
        return self._u_k.shape[0], self._v_k.shape[0]

    def block(self, weight: np.ndarray) -> np.ndarray:
        """Projected block U_k^T W V_k, evaluated left to right."""
        return (self._u_k.columns.T @ weight) @ self._v_k.columns

    def __repr__(self):
        return (
            f"{type(self).__name__}('{self._layer_name}', k={self.k}, "
            f"shape={self.weight_shape})"
        )


@dataclass
class RegularizerConfig:
    """Penalty strength, protected rank, update period and layer set."""
    lam: float = 1.0
    k: int = 0
    update_period: int = 1
    layer_selector: tuple[str, ...] = field(default_factory=tuple)

    def __post_init__(self):
        check_non_negative(self.lam, "lambda")
        if isinstance(self.k, bool) or not isinstance(self.k, (int, np.integer)) \
                or self.k < 0:
            raise ParameterError(
                f"k must be a non-negative integer; got {self.k!r}", "k",
            )
        check_positive_int(self.update_period, "update_period")
        self.layer_selector = tuple(self.layer_selector)

    @property
    def active(self) -> bool:
        """Whether the penalty can change the objective at all."""
        return self.lam > 0 and self.k > 0


@dataclass(frozen=True)
class CostReport:
    """Memory and FLOP accounting of the penalty for one layer."""
    extra_floats_per_layer: int
    flops_per_eval: int
    amortized_flops_per_step: float
    heuristic_relative_overhead: float


def _check_weight(weight, basis: ProtectedBasis, name: str = "W") -> np.ndarray:
    weight = as_matrix(weight, name)
    if weight.shape != basis.weight_shape:
        raise ParameterError(
            f"{name} has shape {weight.shape}; basis for "
            f"{basis.layer_name} expects {basis.weight_shape}",
            name,
        )
    return weight


def build_basis(layer_name: str, w0, k: int) -> ProtectedBasis:
    """
    Build the protected basis of a pretrained weight.

    :param layer_name: Name of the layer.
    :param w0: Pretrained m x n weight.
    :param k: Protected rank, 1 <= k <= min(m, n).
    :return: :class:`ProtectedBasis` object.
    """
    w0 = as_matrix(w0, layer_name)
    check_rank(k, min(w0.shape), "k")
    svd = svd_full(w0, layer_name)
    u_k, v_k, sigma_k = truncate(svd, k)
    next_sigma = svd.sigma[k] if k < svd.rank else 0.0
    sigma_gap = float(sigma_k[-1] - next_sigma)
    sigma_1 = float(svd.sigma[0])

    s_ref = (u_k.columns.T @ w0) @ v_k.columns
    off_diagonal = s_ref - np.diag(np.diag(s_ref))
    if np.max(np.abs(off_diagonal)) >= DIAGONAL_TOL * max(sigma_1, 1e-300):
        raise ValidationError(
            f"reference block of {layer_name} is not diagonal", layer_name,
        )

    degenerate = sigma_gap < DEGENERATE_GAP_TOL * sigma_1
    if degenerate:
        _LOGGER.warning(
            "degenerate protected boundary for %s: sigma_k - sigma_k+1 = "
            "%.3e at k=%d; subspace choice follows Jacobi ordering",
            layer_name, sigma_gap, k,
        )
    return ProtectedBasis(layer_name, u_k, v_k, s_ref, sigma_gap, degenerate)


def penalty(weight, basis: ProtectedBasis | None) -> float:
    """Return ||U_k^T W V_k - S_ref||_F^2 (0.0 when basis is None)."""
    if basis is None:
        return 0.0
    weight = _check_weight(weight, basis)
    return frobenius_sq(basis.block(weight) - basis.S_ref)


def penalty_gradient(weight, basis: ProtectedBasis | None) -> np.ndarray:
    """Return 2 U_k (U_k^T (W - W0) V_k) V_k^T."""
    if basis is None:
        return np.zeros_like(as_matrix(weight, "W"))
    weight = _check_weight(weight, basis)
    drift = basis.block(weight) - basis.S_ref
    return 2.0 * (basis.U_k.columns @ drift) @ basis.V_k.columns.T


def penalty_lora(a, b, w0, basis: ProtectedBasis | None) -> float:
    """
    Penalty of the effective weight W0 + B A of a low-rank adapter.

    :param a: r x n adapter factor.
    :param b: m x r adapter factor.
    :param w0: Pretrained m x n weight.
    """
    a = as_matrix(a, "A")
    b = as_matrix(b, "B")
    w0 = as_matrix(w0, "W0")
    if b.shape[1] != a.shape[0]:
        raise ParameterError(
            f"adapter ranks differ: B is {b.shape}, A is {a.shape}", "A",
        )
    if (b.shape[0], a.shape[1]) != w0.shape:
        raise ParameterError(
            f"B A has shape {(b.shape[0], a.shape[1])}; W0 is {w0.shape}",
            "B",
        )
    return penalty(w0 + b @ a, basis)


def drift_norm(weight, basis: ProtectedBasis | None) -> float:
    """Return ||U_k^T (W - W0) V_k||_F."""
    return float(np.sqrt(penalty(weight, basis)))


def cost_accounting(m: int, n: int, k: int, s: int) -> CostReport:
    """
    Extra memory and FLOPs of the penalty for an m x n layer.

    FLOPs count multiply-adds as two operations for the evaluation order
    (U_k^T W) then (.) V_k, plus the k^2 squared differences:
    2 (m n k + n k^2 + k^2).
    """
    for value, name in ((m, "m"), (n, "n"), (k, "k"), (s, "s")):
        check_positive_int(value, name)
    check_rank(k, min(m, n), "k")
    flops = 2 * (m * n * k + n * k * k + k * k)
    return CostReport(
        extra_floats_per_layer=(m + n) * k + k * k,
        flops_per_eval=flops,
        amortized_flops_per_step=flops / s,
        heuristic_relative_overhead=k / (s * min(m, n)),
    )


def select_layers(names: Iterable[str], selector: Iterable[str]) -> list[str]:
    """Layer names matching any glob in selector (all when empty), sorted."""
    patterns = tuple(selector)
    return sorted(
        name for name in names
        if not patterns or any(fnmatch.fnmatchcase(name, p) for p in patterns)
    )


def build_bases(
        layers: Mapping[str, np.ndarray],
        config: RegularizerConfig,
) -> dict[str, ProtectedBasis]:
    """Build a basis for every selected layer; empty when k = 0."""
    if config.k == 0:
        return {}
    selected = select_layers(layers.keys(), config.layer_selector)
    if not selected:
        raise ParameterError(
            f"layer selector {config.layer_selector} matches no layer",
            "layer_selector",
        )
    return {
        name: build_basis(name, layers[name], config.k) for name in selected
    }


def total_penalty(
        layers: Mapping[str, np.ndarray],
        bases: Mapping[str, ProtectedBasis],
) -> float:
    """Sum of per-layer penalties in layer-name order."""
    total = 0.0
    for name in sorted(bases):
        total += penalty(layers[name], bases[name])
    return total


def project_out_protected(weight, basis: ProtectedBasis | None) -> np.ndarray:
    """
    Nearest weight (in Frobenius norm) with zero protected drift:
    W - U_k U_k^T (W - W0) V_k V_k^T.
    """
    weight = as_matrix(weight, "W")
    if basis is None:
        return weight.copy()
    return weight - 0.5 * penalty_gradient(weight, basis)


def block_decomposition(
        weight,
        basis: ProtectedBasis,
) -> tuple[np.ndarray, np.ndarray, np.ndarray, np.ndarray]:
    """
    Blocks (A, B, C, D) of U^T W V for orthogonal completions U, V of the
    protected bases; A is the k x k protected block.
    """
    weight = _check_weight(weight, basis)
    u_full = complete_basis(basis.U_k)
    v_full = complete_basis(basis.V_k)
    rotated = u_full.T @ weight @ v_full
    k = basis.k
    return rotated[:k, :k], rotated[:k, k:], rotated[k:, :k], rotated[k:, k:]


def basis_tensors(basis: ProtectedBasis) -> dict[str, np.ndarray]:
    """Checkpoint tensors of a basis."""
    name = basis.layer_name
    return {
        f"{name}.Uk": np.array(basis.U_k.columns),
        f"{name}.Vk": np.array(basis.V_k.columns),
        f"{name}.Sref": np.array(basis.S_ref),
        f"{name}.gap": np.array([[basis.sigma_gap]]),
    }


def bases_from_tensors(
        tensors: Mapping[str, np.ndarray],
) -> dict[str, ProtectedBasis]:
    """Rebuild bases from checkpoint tensors named {layer}.Uk/.Vk/.Sref."""
    bases = {}
    for key in sorted(tensors):
        if not key.endswith(".Uk"):
            continue
        layer = key[:-len(".Uk")]
        try:
            u_k = OrthonormalBasis(tensors[f"{layer}.Uk"], name=f"{layer}.Uk")
            v_k = OrthonormalBasis(tensors[f"{layer}.Vk"], name=f"{layer}.Vk")
            s_ref = tensors[f"{layer}.Sref"]
        except KeyError as exc:
            raise ParameterError(
                f"incomplete basis tensors for {layer}: missing {exc}",
                layer,
            ) from exc
        gap = tensors.get(f"{layer}.gap")
        sigma_gap = float(gap[0, 0]) if gap is not None else float("nan")
        sigma_1 = float(s_ref[0, 0]) if s_ref.size else 0.0
        bases[layer] = ProtectedBasis(
            layer, u_k, v_k, s_ref, sigma_gap,
            degenerate=bool(sigma_gap < DEGENERATE_GAP_TOL * sigma_1),
        )
    return bases
