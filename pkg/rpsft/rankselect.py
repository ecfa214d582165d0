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
Protected-rank selection on a separable local model.

Each coordinate s = (i, j) of the R x R singular grid has a learning drive
g_s, curvature h_s > 0 and out-of-domain sensitivity c_s >= 0. Protecting
the top-left k x k block S_k shrinks the local step on those coordinates
from g/h to g/(h + 2 lambda), trading in-domain gain for out-of-domain
retention. Coordinates are laid out row-major.
"""

from __future__ import absolute_import, annotations

import logging
from dataclasses import dataclass
from typing import Iterator, Sequence

import numpy as np

from .error import NumericalError, ParameterError
from .helpers import check_non_negative, check_positive, check_rank

_LOGGER = logging.getLogger(__name__)


class CoordinateProfile:
    """Per-coordinate (g, h, c) arrays over an R x R grid."""

    def __init__(self, g, h, c):
        g = np.asarray(g, dtype=np.float64)
        h = np.asarray(h, dtype=np.float64)
        c = np.asarray(c, dtype=np.float64)
        if g.ndim != 2 or g.shape[0] != g.shape[1] or g.shape[0] < 1:
            raise ParameterError(f"g must be R x R; got {g.shape}", "g")
        if h.shape != g.shape or c.shape != g.shape:
            raise ParameterError("g, h and c must share one shape", "h")
        for arr, name in ((g, "g"), (h, "h"), (c, "c")):
            if not np.all(np.isfinite(arr)):
                raise ParameterError(f"{name} has non-finite entries", name)
        if np.any(h <= 0):
            raise ParameterError("curvature h must be positive", "h")
        if np.any(c < 0):
            raise ParameterError("sensitivity c must be non-negative", "c")
        self._g, self._h, self._c = g, h, c

    @property
    def R(self) -> int:  # pylint: disable=invalid-name
        """Get full rank R."""
        return self._g.shape[0]

    @property
    def g(self) -> np.ndarray:
        """Get learning drive."""
        return self._g

    @property
    def h(self) -> np.ndarray:
        """Get curvature."""
        return self._h

    @property
    def c(self) -> np.ndarray:
        """Get out-of-domain sensitivity."""
        return self._c

    def protected_mask(self, k: int) -> np.ndarray:
        """Boolean mask of the top-left k x k block."""
        check_rank(k, self.R, "k", allow_zero=True)
        mask = np.zeros(self._g.shape, dtype=bool)
        mask[:k, :k] = True
        return mask


@dataclass(frozen=True)
class TradeoffConfig:
    """Penalty strength and forgetting weight of the utility."""
    lam: float = 1.0
    beta: float = 1.0

    def __post_init__(self):
        check_non_negative(self.lam, "lambda")
        check_positive(self.beta, "beta")


@dataclass(frozen=True)
class TradeoffCurves:
    """F_ood, G_id and Phi for k = 0..R."""
    F_ood: np.ndarray  # pylint: disable=invalid-name
    G_id: np.ndarray  # pylint: disable=invalid-name
    Phi: np.ndarray  # pylint: disable=invalid-name

    def rows(self) -> Iterator[list]:
        """CSV rows (k, F_ood, G_id, Phi)."""
        for k, (f, g, p) in enumerate(zip(self.F_ood, self.G_id, self.Phi)):
            yield [k, float(f), float(g), float(p)]


@dataclass(frozen=True)
class RankBoundary:
    """Smallest maximizer of Phi and the OOD support rank."""
    k_star: int
    q: int | None


@dataclass(frozen=True)
class ThresholdDecision:
    """Per-coordinate protection decision."""
    protect: bool
    delta_id: float
    delta_ood: float
    threshold: float


@dataclass(frozen=True)
class RankChoice:
    """Rank picked from an energy curve."""
    rank: int
    reached: bool


def optimal_step(profile: CoordinateProfile, k: int, lam: float) -> np.ndarray:
    """delta*_s = g/(h + 2 lambda) on S_k and g/h elsewhere."""
    check_non_negative(lam, "lambda")
    mask = profile.protected_mask(k)
    return np.where(mask, profile.g / (profile.h + 2.0 * lam),
                    profile.g / profile.h)


def _coordinate_terms(profile: CoordinateProfile, lam: float):
    """Unprotected OOD and ID terms, and their non-negative drops on S_k."""
    g2 = profile.g * profile.g
    h, c = profile.h, profile.c
    a = h + 2.0 * lam
    ood_free = 0.5 * c * g2 / (h * h)
    id_free = 0.5 * g2 / h
    drop_ood = 2.0 * c * lam * (h + lam) * g2 / (h * h * a * a)
    drop_id = 2.0 * lam * lam * g2 / (h * a * a)
    return ood_free, id_free, drop_ood, drop_id


def curves(profile: CoordinateProfile, lam: float, beta: float) -> TradeoffCurves:
    """
    OOD increase F_ood(k), ID gain G_id(k) and utility
    Phi(k) = G_id(k) - beta F_ood(k) for every k in 0..R.

    Both curves start from the unprotected sums and lose the drop of each
    newly protected shell, so they never increase with k.
    """
    config = TradeoffConfig(lam, beta)
    ood_free, id_free, drop_ood, drop_id = _coordinate_terms(profile, config.lam)
    f_ood = np.empty(profile.R + 1)
    g_id = np.empty(profile.R + 1)
    f_ood[0] = np.sum(ood_free)
    g_id[0] = np.sum(id_free)
    for k in range(1, profile.R + 1):
        shell = profile.protected_mask(k) & ~profile.protected_mask(k - 1)
        f_ood[k] = f_ood[k - 1] - np.sum(drop_ood[shell])
        g_id[k] = g_id[k - 1] - np.sum(drop_id[shell])
    return TradeoffCurves(f_ood, g_id, g_id - config.beta * f_ood)


def support_rank(profile: CoordinateProfile) -> int | None:
    """Smallest q < R with c supported on S_q, or None."""
    nonzero = np.argwhere(profile.c != 0)
    q = 0 if nonzero.size == 0 else int(nonzero.max()) + 1
    return q if q < profile.R else None


def rank_boundary(
        profile: CoordinateProfile,
        config: TradeoffConfig,
) -> RankBoundary:
    """
    Smallest maximizer k_star of Phi, and the support rank q of c.
    Every maximizer lies at or below q when lambda > 0.
    """
    phi = curves(profile, config.lam, config.beta).Phi
    k_star = int(np.argmax(phi))
    q = support_rank(profile)
    if q is not None and config.lam > 0 and k_star > q:
        raise NumericalError(
            f"rank boundary violated: k_star={k_star} > q={q}",
            matrix_name="Phi",
        )
    return RankBoundary(k_star, q)


def threshold_decision(
        g_s: float,
        h_s: float,
        c_s: float,
        lam: float,
        beta: float,
) -> ThresholdDecision:
    """
    Decide whether one coordinate is worth protecting.

    Protection pays off when beta * delta_ood > delta_id, which for g != 0
    is equivalent to c > lambda h / (beta (h + lambda)). With lambda = 0 or
    g = 0 protection changes nothing and is never chosen.
    """
    check_positive(h_s, "h_s")
    check_non_negative(c_s, "c_s")
    check_non_negative(lam, "lambda")
    check_positive(beta, "beta")
    if lam == 0:
        return ThresholdDecision(False, 0.0, 0.0, 0.0)
    a = h_s + 2.0 * lam
    g2 = g_s * g_s
    delta_id = 2.0 * lam * lam * g2 / (h_s * a * a)
    delta_ood = 2.0 * c_s * lam * (h_s + lam) * g2 / (h_s * h_s * a * a)
    threshold = lam * h_s / (beta * (h_s + lam))
    protect = bool(beta * delta_ood > delta_id)
    if g2 > 0 and protect != (c_s > threshold):
        gap = abs(c_s - threshold)
        if gap > 1e-12 * max(threshold, 1e-300):
            raise NumericalError(
                f"threshold rule disagrees with utility at c={c_s}, "
                f"threshold={threshold}",
                matrix_name="threshold",
            )
        _LOGGER.debug("threshold tie at c=%r; utility comparison kept", c_s)
    return ThresholdDecision(protect, delta_id, delta_ood, threshold)


def rank_from_energy(
        energy_curve: Sequence[tuple[int, float]],
        target_fraction: float = 0.20,
) -> RankChoice:
    """
    Smallest rank whose captured energy fraction reaches the target; the
    largest rank with reached=False when no entry does.
    """
    points = list(energy_curve)
    if not points:
        raise ParameterError("energy curve is empty", "energy_curve")
    if not 0 < target_fraction < 1:
        raise ParameterError(
            f"target_fraction must be in (0, 1); got {target_fraction}",
            "target_fraction",
        )
    for (r0, y0), (r1, y1) in zip(points, points[1:]):
        if r1 <= r0 or y1 < y0:
            raise ParameterError(
                "energy curve must be increasing in r and non-decreasing "
                "in fraction", "energy_curve",
            )
    for rank, fraction in points:
        if fraction >= target_fraction:
            return RankChoice(int(rank), True)
    _LOGGER.warning(
        "energy target %.3f not reached; largest fraction %.3f at r=%d",
        target_fraction, points[-1][1], points[-1][0],
    )
    return RankChoice(int(points[-1][0]), False)
