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
Continuous-time gradient flow of the regularized objective

    dW/dt = -grad f(W) - 2 lambda U_k (U_k^T (W - W0) V_k) V_k^T.

In protected coordinates A(t) = U_k^T (W(t) - W0) V_k the flow is the
linear ODE dA/dt = -G(t) - 2 lambda A(t) with G(t) = U_k^T grad f V_k,
whose solution is an exponentially weighted (low-pass) accumulation of G.
"""

from __future__ import absolute_import, annotations

import math
from dataclasses import dataclass
from typing import Iterator, Protocol

import numpy as np

from .error import IntegrationError, ParameterError
from .helpers import as_matrix, check_choice, check_non_negative, check_positive
from .protected import ProtectedBasis, penalty_gradient

FORCING_MODES: tuple[str, ...] = ("constant_G", "quadratic_task", "sinusoidal")


class Forcing(Protocol):  # pylint: disable=too-few-public-methods
    """Task gradient grad f(W) at flow time t."""

    def gradient(self, weight: np.ndarray, time: float) -> np.ndarray:
        """Return grad f at (W, t)."""


class ConstantForcing:
    """grad f(W) = G for every W and t."""

    mode = "constant_G"

    def __init__(self, grad):
        self._grad = as_matrix(grad, "G")

    def gradient(self, weight: np.ndarray, time: float) -> np.ndarray:
        """Return the constant gradient."""
        return self._grad


class QuadraticForcing:
    """grad f(W) = h (W - W_tgt)."""

    mode = "quadratic_task"

    def __init__(self, target, curvature: float = 1.0):
        check_positive(curvature, "curvature")
        self._target = as_matrix(target, "W_tgt")
        self._curvature = float(curvature)

    def gradient(self, weight: np.ndarray, time: float) -> np.ndarray:
        """Return h (W - W_tgt)."""
        return self._curvature * (weight - self._target)


class SinusoidalForcing:
    """grad f(W, t) = G_amp sin(omega t)."""

    mode = "sinusoidal"

    def __init__(self, amplitude, omega: float):
        check_positive(omega, "omega")
        self._amplitude = as_matrix(amplitude, "G_amp")
        self._omega = float(omega)

    @property
    def omega(self) -> float:
        """Get angular frequency."""
        return self._omega

    def gradient(self, weight: np.ndarray, time: float) -> np.ndarray:
        """Return G_amp sin(omega t)."""
        return self._amplitude * math.sin(self._omega * time)


@dataclass(frozen=True)
class FlowConfig:
    """Integration settings of one flow."""
    lam: float
    t_end: float
    dt: float
    forcing_mode: str = "constant_G"
    integrator: str = "rk4"
    keep_weights: bool = False

    def __post_init__(self):
        check_non_negative(self.lam, "lambda")
        check_positive(self.t_end, "t_end")
        check_positive(self.dt, "dt")
        if self.dt > self.t_end:
            raise ParameterError(
                f"dt={self.dt} exceeds t_end={self.t_end}", "dt",
            )
        check_choice(self.forcing_mode, FORCING_MODES, "forcing_mode")
        check_choice(self.integrator, ("rk4",), "integrator")

    @property
    def num_steps(self) -> int:
        """Number of fixed steps covering [0, t_end]."""
        return max(1, int(round(self.t_end / self.dt)))


class FlowTrace:
    """Time series of protected coordinates A(t) and forcing G(t)."""

    def __init__(
            self,
            times: np.ndarray,
            a_series: list[np.ndarray],
            g_series: list[np.ndarray],
            w_series: list[np.ndarray] | None = None,
    ):
        if not len(times) == len(a_series) == len(g_series):
            raise ParameterError("trace series lengths differ", "times")
        if len(times) and times[0] != 0.0:
            raise ParameterError("trace times must start at 0", "times")
        self._times = np.asarray(times, dtype=np.float64)
        self._a = np.asarray(a_series)
        self._g = np.asarray(g_series)
        self._w = w_series

    @property
    def times(self) -> np.ndarray:
        """Get recorded times."""
        return self._times

    @property
    def A_series(self) -> np.ndarray:  # pylint: disable=invalid-name
        """Get stacked k x k protected coordinates."""
        return self._a

    @property
    def G_series(self) -> np.ndarray:  # pylint: disable=invalid-name
        """Get stacked k x k projected forcing."""
        return self._g

    @property
    def W_series(self) -> list[np.ndarray] | None:  # pylint: disable=invalid-name
        """Get full weights, when retained."""
        return self._w

    def __len__(self):
        return len(self._times)

    def columns(self) -> list[str]:
        """CSV header: t, then row-major A and G entries."""
        k = self._a.shape[1]
        cells = [f"{i}_{j}" for i in range(k) for j in range(k)]
        return ["t"] + [f"A_{c}" for c in cells] + [f"G_{c}" for c in cells]

    def rows(self) -> Iterator[list]:
        """CSV rows, one per recorded time."""
        for t, a, g in zip(self._times, self._a, self._g):
            yield [float(t)] + a.ravel().tolist() + g.ravel().tolist()


def integrate_flow(
        w0,
        basis: ProtectedBasis,
        forcing: Forcing,
        config: FlowConfig,
) -> FlowTrace:
    """
    Integrate the regularized gradient flow from W0 with classical RK4.

    :param w0: Starting (pretrained) weight; also the anchor of the basis.
    :param basis: Protected basis of w0.
    :param forcing: Source of grad f(W, t).
    :param config: Step size, horizon and lambda.
    :return: :class:`FlowTrace` with A(t), G(t) at every grid point.
    """
    weight = as_matrix(w0, "W0").copy()
    lam = config.lam
    u_k, v_k = basis.U_k.columns, basis.V_k.columns

    def rhs(w, t):
        if not np.all(np.isfinite(w)):
            raise IntegrationError(f"non-finite flow state at t={t}", time=t)
        return -forcing.gradient(w, t) - lam * penalty_gradient(w, basis)

    def record(w, t):
        times.append(t)
        a_series.append(basis.block(w) - basis.S_ref)
        g_series.append((u_k.T @ forcing.gradient(w, t)) @ v_k)
        if w_series is not None:
            w_series.append(w.copy())

    times: list[float] = []
    a_series: list[np.ndarray] = []
    g_series: list[np.ndarray] = []
    w_series: list[np.ndarray] | None = [] if config.keep_weights else None

    h = config.dt
    record(weight, 0.0)
    for i in range(config.num_steps):
        t = i * h
        k1 = rhs(weight, t)
        k2 = rhs(weight + 0.5 * h * k1, t + 0.5 * h)
        k3 = rhs(weight + 0.5 * h * k2, t + 0.5 * h)
        k4 = rhs(weight + h * k3, t + h)
        weight = weight + (h / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4)
        t_next = (i + 1) * h
        if not np.all(np.isfinite(weight)):
            raise IntegrationError(
                f"non-finite flow state at t={t_next}", time=t_next,
            )
        record(weight, t_next)
    return FlowTrace(np.array(times), a_series, g_series, w_series)


def closed_form_constant(g, lam: float, a0, t: float) -> np.ndarray:
    """
    A(t) = e^{-2 lambda t} A0 - (1 - e^{-2 lambda t}) / (2 lambda) G for
    constant projected forcing; A0 - t G when lambda = 0.
    """
    g = as_matrix(g, "G")
    a0 = as_matrix(a0, "A0")
    if g.shape != a0.shape or g.shape[0] != g.shape[1]:
        raise ParameterError(
            f"G and A0 must be equal square shapes; got {g.shape}, "
            f"{a0.shape}", "G",
        )
    check_non_negative(lam, "lambda")
    check_non_negative(t, "t")
    if lam == 0:
        return a0 - t * g
    decay = math.exp(-2.0 * lam * t)
    return decay * a0 - (-math.expm1(-2.0 * lam * t)) / (2.0 * lam) * g


def volterra_residual(trace: FlowTrace, lam: float) -> float:
    """
    Max over recorded t of ||A(t) - [e^{-2 lambda t} A(0)
    - int_0^t e^{-2 lambda (t - s)} G(s) ds]||_F, with the integral taken
    by the trapezoidal rule on the trace grid.
    """
    if len(trace) < 2:
        raise ParameterError("trace needs at least 2 points", "trace")
    check_non_negative(lam, "lambda")
    times = trace.times
    a_series = trace.A_series
    g_series = trace.G_series
    integral = np.zeros_like(a_series[0])
    worst = 0.0
    for i in range(1, len(times)):
        h = times[i] - times[i - 1]
        decay = math.exp(-2.0 * lam * h)
        integral = decay * integral + 0.5 * h * (decay * g_series[i - 1]
                                                 + g_series[i])
        predicted = math.exp(-2.0 * lam * times[i]) * a_series[0] - integral
        worst = max(worst, float(np.linalg.norm(a_series[i] - predicted)))
    return worst


def steady_state_amplitude(trace: FlowTrace, t_from: float) -> float:
    """Largest ||A(t)||_F over recorded t >= t_from."""
    mask = trace.times >= t_from
    if not np.any(mask):
        raise ParameterError(f"no samples after t={t_from}", "t_from")
    return float(max(np.linalg.norm(a) for a in trace.A_series[mask]))
