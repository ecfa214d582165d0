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
Deterministic dense linear algebra.

The SVD is a one-sided (Hestenes) Jacobi iteration run on the smaller side
of the matrix. It is slower than LAPACK but bit-reproducible for a given
input, and its output is put in a canonical sign convention so that
downstream bases are comparable across runs.
"""

from __future__ import absolute_import, annotations

import math

import numpy as np

from .error import NumericalError, ParameterError, ValidationError
from .helpers import as_matrix, check_rank

MAX_SWEEPS = 60
OFF_DIAGONAL_TOL = 1e-14
ORTHONORMAL_TOL = 1e-10


class OrthonormalBasis:
    """Matrix whose columns are orthonormal."""

    def __init__(self, columns, tol: float = ORTHONORMAL_TOL,
                 name: str = "basis"):
        columns = as_matrix(columns, name)
        gram = columns.T @ columns
        err = np.max(np.abs(gram - np.eye(columns.shape[1])))
        if err >= tol:
            raise ValidationError(
                f"{name} columns are not orthonormal; "
                f"max |B^T B - I| = {err:.3e} >= {tol:.1e}",
                name,
            )
        columns.setflags(write=False)
        self._columns = columns
        self._tol = tol

    @property
    def columns(self) -> np.ndarray:
        """Get the column matrix (read-only)."""
        return self._columns

    @property
    def tol(self) -> float:
        """Get tolerance used at validation."""
        return self._tol

    @property
    def shape(self) -> tuple[int, int]:
        """Get (rows, rank)."""
        return self._columns.shape

    @property
    def rank(self) -> int:
        """Get number of columns."""
        return self._columns.shape[1]

    def prefix(self, r: int) -> OrthonormalBasis:
        """Return the basis spanned by the first r columns."""
        check_rank(r, self.rank, "r")
        return OrthonormalBasis(self._columns[:, :r], self._tol)

    def __repr__(self):
        return f"{type(self).__name__}(shape={self.shape})"


class SvdResult:
    """Thin SVD M = U diag(sigma) V^T with r = min(m, n)."""

    def __init__(self, u: np.ndarray, sigma: np.ndarray, v: np.ndarray):
        for arr in (u, sigma, v):
            arr.setflags(write=False)
        self._u = u
        self._sigma = sigma
        self._v = v

    @property
    def U(self) -> np.ndarray:  # pylint: disable=invalid-name
        """Get left singular vectors (m x r)."""
        return self._u

    @property
    def sigma(self) -> np.ndarray:
        """Get singular values, non-increasing."""
        return self._sigma

    @property
    def V(self) -> np.ndarray:  # pylint: disable=invalid-name
        """Get right singular vectors (n x r)."""
        return self._v

    @property
    def rank(self) -> int:
        """Get r = min(m, n)."""
        return self._sigma.shape[0]

    def reconstruct(self) -> np.ndarray:
        """Reconstruct the decomposed matrix."""
        return (self._u * self._sigma) @ self._v.T


def _complete_columns(q: np.ndarray, missing: list[int]) -> np.ndarray:
    """
    Fill the listed columns of q with unit vectors orthogonal to every other
    column, taking standard basis vectors in index order and applying
    modified Gram-Schmidt twice.
    """
    rows = q.shape[0]
    filled = [j for j in range(q.shape[1]) if j not in missing]
    candidate = 0
    for j in missing:
        while candidate < rows:
            vec = np.zeros(rows)
            vec[candidate] = 1.0
            candidate += 1
            for _ in range(2):
                for i in filled:
                    vec -= (q[:, i] @ vec) * q[:, i]
            norm = np.linalg.norm(vec)
            if norm > 1e-8:
                q[:, j] = vec / norm
                filled.append(j)
                break
        else:
            raise NumericalError("unable to complete orthonormal columns")
    return q


def _jacobi(a: np.ndarray, name: str) -> tuple[np.ndarray, np.ndarray]:
    """
    One-sided Jacobi on the columns of a (rows >= cols). Returns the
    orthogonalized columns and the accumulated right rotation.
    """
    n = a.shape[1]
    v = np.eye(n)
    scale = float(np.sum(a * a))
    if scale == 0.0:
        return a, v
    threshold = OFF_DIAGONAL_TOL * scale
    for sweep in range(MAX_SWEEPS + 1):
        gram = a.T @ a
        off = math.sqrt(float(np.sum(np.triu(gram, 1) ** 2)) * 2.0)
        if off < threshold:
            return a, v
        if sweep == MAX_SWEEPS:
            break
        rotated = False
        for p in range(n - 1):
            for q in range(p + 1, n):
                alpha = float(a[:, p] @ a[:, p])
                beta = float(a[:, q] @ a[:, q])
                gamma = float(a[:, p] @ a[:, q])
                if gamma == 0.0 or abs(gamma) <= 1e-16 * math.sqrt(
                        alpha * beta):
                    continue
                rotated = True
                zeta = (beta - alpha) / (2.0 * gamma)
                t = math.copysign(1.0, zeta) / (
                    abs(zeta) + math.sqrt(1.0 + zeta * zeta))
                c = 1.0 / math.sqrt(1.0 + t * t)
                s = c * t
                ap = a[:, p].copy()
                a[:, p] = c * ap - s * a[:, q]
                a[:, q] = s * ap + c * a[:, q]
                vp = v[:, p].copy()
                v[:, p] = c * vp - s * v[:, q]
                v[:, q] = s * vp + c * v[:, q]
        if not rotated:
            return a, v
    raise NumericalError(
        f"Jacobi SVD of {name} did not converge within {MAX_SWEEPS} sweeps",
        matrix_name=name,
        sweeps=MAX_SWEEPS,
    )


def svd_full(matrix, name: str = "matrix") -> SvdResult:
    """
    Compute the thin SVD of a dense matrix.

    Singular values are sorted non-increasing (stable on ties). For every
    left singular vector the entry of largest magnitude, first index on
    ties, is made non-negative; the paired right vector flips with it.

    :param matrix: m x n array of finite floats.
    :param name: Name used in error messages.
    :return: :class:`SvdResult` object.
    """
    m_arr = as_matrix(matrix, name)
    transposed = m_arr.shape[0] < m_arr.shape[1]
    work = (m_arr.T if transposed else m_arr).copy()
    # Power-of-two scaling keeps squared norms finite and is exact.
    peak = float(np.max(np.abs(work)))
    exponent = int(np.frexp(peak)[1]) if peak > 0.0 else 0
    work = np.ldexp(work, -exponent)

    cols, v = _jacobi(work, name)
    sigma = np.sqrt(np.sum(cols * cols, axis=0))
    order = np.argsort(-sigma, kind="stable")
    sigma = sigma[order]
    cols = cols[:, order]
    v = v[:, order]

    # Columns below the cutoff are too small to normalize to full
    # orthogonality; they are replaced by a completion instead.
    u = np.zeros_like(cols)
    cutoff = sigma[0] * 1e-13
    missing = []
    for j, value in enumerate(sigma):
        if value > cutoff:
            u[:, j] = cols[:, j] / value
        else:
            missing.append(j)
    if missing:
        u = _complete_columns(u, missing)

    if transposed:
        u, v = v, u
    for j in range(u.shape[1]):
        lead = int(np.argmax(np.abs(u[:, j])))
        if u[lead, j] < 0:
            u[:, j] = -u[:, j]
            v[:, j] = -v[:, j]
    sigma = np.ldexp(sigma, exponent)
    if not np.all(np.isfinite(sigma)):
        raise NumericalError(
            f"singular values of {name} overflow float64",
            matrix_name=name,
        )
    return SvdResult(u, sigma, v)


def truncate(
        svd: SvdResult,
        k: int,
) -> tuple[OrthonormalBasis, OrthonormalBasis, np.ndarray]:
    """Return the top-k left basis, right basis and singular values."""
    check_rank(k, svd.rank, "k")
    sigma_k = svd.sigma[:k].copy()
    return (
        OrthonormalBasis(svd.U[:, :k], name="U_k"),
        OrthonormalBasis(svd.V[:, :k], name="V_k"),
        sigma_k,
    )


def complete_basis(basis: OrthonormalBasis) -> np.ndarray:
    """Extend a basis with orthonormal columns to a square orthogonal matrix."""
    rows, rank = basis.shape
    full = np.zeros((rows, rows))
    full[:, :rank] = basis.columns
    if rank < rows:
        full = _complete_columns(full, list(range(rank, rows)))
    return full


def principal_angles(b1: OrthonormalBasis, b2: OrthonormalBasis) -> np.ndarray:
    """
    Principal angles in degrees between span(b1) and span(b2), ascending,
    each within [0, 90].
    """
    if b1.shape != b2.shape:
        raise ParameterError(
            f"basis shapes differ: {b1.shape} vs {b2.shape}", "basis",
        )
    if np.array_equal(b1.columns, b2.columns):
        return np.zeros(b1.rank)
    cross = b1.columns.T @ b2.columns
    cosines = np.clip(svd_full(cross, "B1^T B2").sigma, 0.0, 1.0)
    angles = np.arccos(cosines)
    # arccos loses accuracy near 1; small angles come from the sines of
    # the residual B2 - B1 B1^T B2 instead.
    residual = b2.columns - b1.columns @ cross
    sines = np.clip(svd_full(residual, "residual").sigma, 0.0, 1.0)
    small = np.arcsin(sines)[::-1]
    angles = np.where(small < math.pi / 4, small, angles)
    return np.sort(np.clip(np.degrees(angles), 0.0, 90.0))
