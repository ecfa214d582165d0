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

import logging

import numpy as np
import pytest

from rpsft.error import ParameterError
from rpsft.helpers import frobenius_sq
from rpsft.linalg import OrthonormalBasis
from rpsft.protected import (ProtectedBasis, RegularizerConfig, basis_tensors,
                             bases_from_tensors, block_decomposition,
                             build_bases, build_basis, cost_accounting,
                             drift_norm, penalty, penalty_gradient,
                             penalty_lora, project_out_protected,
                             select_layers, total_penalty)


def _instances(count, seed=0):
    rng = np.random.default_rng(seed)
    shapes = [(24, 16), (16, 24), (12, 12), (8, 10)]
    for i in range(count):
        m, n = shapes[i % len(shapes)]
        k = (1, 4, 8)[i % 3]
        w0 = rng.standard_normal((m, n))
        weight = w0 + rng.standard_normal((m, n))
        yield w0, weight, build_basis("layer", w0, k)


def _extended_sigma(matrix, count):
    """Leading singular values by deflated power iteration in long double."""
    a = np.asarray(matrix, dtype=np.longdouble)
    gram = a.T @ a
    values = []
    for _ in range(count):
        x = np.ones(gram.shape[0], dtype=np.longdouble)
        x += np.arange(gram.shape[0], dtype=np.longdouble) / 7
        x /= np.sqrt(x @ x)
        for _ in range(200000):
            y = gram @ x
            y /= np.sqrt(y @ y)
            done = np.max(np.abs(y - x)) < 1e-17
            x = y
            if done:
                break
        value = x @ gram @ x
        values.append(float(np.sqrt(value)))
        gram = gram - value * np.outer(x, x)
    return np.array(values)


def _orthogonal(rng, size):
    q, _ = np.linalg.qr(rng.standard_normal((size, size)))
    return q


class TestBuildBasis:
    def test_reference_block_is_leading_sigma(self):
        w0 = np.diag([3.0, 2.0, 1.0])
        basis = build_basis("w", w0, 2)
        np.testing.assert_allclose(basis.S_ref, np.diag([3.0, 2.0]),
                                   atol=1e-14)
        assert basis.sigma_gap == pytest.approx(1.0)
        assert not basis.degenerate
        assert basis.weight_shape == (3, 3)

    def test_extended_precision_reference_block(self):
        w0 = np.random.default_rng(16).standard_normal((16, 12))
        basis = build_basis("w", w0, 4)
        np.testing.assert_allclose(np.diag(basis.S_ref),
                                   _extended_sigma(w0, 4), rtol=0, atol=1e-9)

    def test_degenerate_boundary_warns(self, caplog):
        with caplog.at_level(logging.WARNING, logger="rpsft.protected"):
            basis = build_basis("w", np.eye(4), 2)
        assert basis.degenerate
        assert "degenerate" in caplog.text

    @pytest.mark.parametrize("k", [0, 4, 2.0, True])
    def test_rank_out_of_range(self, k):
        with pytest.raises(ParameterError):
            build_basis("w", np.eye(3), k)

    def test_immutable(self):
        basis = build_basis("w", np.diag([2.0, 1.0]), 1)
        with pytest.raises(ValueError):
            basis.S_ref[0, 0] = 0.0


class TestPenalty:
    def test_zero_at_initialization(self):
        for w0, _, basis in _instances(6):
            assert penalty(w0, basis) == 0.0

    def test_extended_precision_drift(self):
        rng = np.random.default_rng(17)
        w0 = rng.standard_normal((12, 10))
        weight = rng.standard_normal((12, 10))
        basis = build_basis("w", w0, 3)
        u_k = basis.U_k.columns.astype(np.longdouble)
        v_k = basis.V_k.columns.astype(np.longdouble)
        diff = weight.astype(np.longdouble) - w0.astype(np.longdouble)
        expected = float(np.sum((u_k.T @ diff @ v_k) ** 2))
        assert penalty(weight, basis) == pytest.approx(expected, rel=1e-12)

    def test_basis_rotation_invariance(self):
        rng = np.random.default_rng(18)
        for w0, weight, basis in _instances(12, seed=5):
            k = basis.k
            u_k = basis.U_k.columns @ _orthogonal(rng, k)
            v_k = basis.V_k.columns @ _orthogonal(rng, k)
            rotated = ProtectedBasis("layer", OrthonormalBasis(u_k),
                                     OrthonormalBasis(v_k),
                                     u_k.T @ w0 @ v_k, basis.sigma_gap)
            assert abs(penalty(weight, rotated)
                       - penalty(weight, basis)) < 1e-10

    def test_convex(self):
        rng = np.random.default_rng(19)
        for w0, _, basis in _instances(30, seed=6):
            a = w0 + rng.standard_normal(w0.shape)
            b = w0 + rng.standard_normal(w0.shape)
            mid = penalty(0.5 * (a + b), basis)
            assert mid >= 0.0
            bound = 0.5 * (penalty(a, basis) + penalty(b, basis))
            assert mid <= bound * (1 + 1e-12)

    def test_no_basis(self):
        assert penalty(np.ones((2, 2)), None) == 0.0

    def test_full_rank_is_l2_anchor(self):
        rng = np.random.default_rng(21)
        for _ in range(100):
            w0 = rng.standard_normal((32, 32))
            weight = w0 + rng.standard_normal((32, 32))
            basis = build_basis("w", w0, 32)
            assert abs(penalty(weight, basis)
                       - frobenius_sq(weight - w0)) < 1e-9

    def test_protected_entry(self):
        w0 = np.diag([3.0, 2.0, 1.0])
        basis = build_basis("w", w0, 1)
        weight = w0.copy()
        weight[0, 0] += 0.5
        assert penalty(weight, basis) == pytest.approx(0.25)

    def test_complement_is_free(self):
        w0 = np.diag([3.0, 2.0, 1.0])
        basis = build_basis("w", w0, 2)
        weight = w0.copy()
        weight[2, 2] += 10.0
        weight[0, 2] += 5.0
        assert penalty(weight, basis) == pytest.approx(0.0, abs=1e-24)

    def test_shape_mismatch(self):
        basis = build_basis("w", np.eye(3), 1)
        with pytest.raises(ParameterError):
            penalty(np.eye(4), basis)

    def test_drift_norm(self):
        for _, weight, basis in _instances(3, seed=4):
            assert drift_norm(weight, basis) == pytest.approx(
                np.sqrt(penalty(weight, basis)), rel=1e-15)


class TestPenaltyGradient:
    def test_central_differences(self):
        step = 1e-5
        for _, weight, basis in _instances(50, seed=1):
            grad = penalty_gradient(weight, basis)
            numeric = np.zeros_like(weight)
            for index in np.ndindex(weight.shape):
                plus, minus = weight.copy(), weight.copy()
                plus[index] += step
                minus[index] -= step
                numeric[index] = (penalty(plus, basis)
                                  - penalty(minus, basis)) / (2 * step)
            err = np.max(np.abs(numeric - grad)) / np.max(np.abs(grad))
            assert err < 1e-6

    def test_range(self):
        for _, weight, basis in _instances(20, seed=7):
            grad = penalty_gradient(weight, basis)
            u_k, v_k = basis.U_k.columns, basis.V_k.columns
            left = grad - u_k @ (u_k.T @ grad)
            right = grad - (grad @ v_k) @ v_k.T
            assert np.max(np.abs(left)) < 1e-10
            assert np.max(np.abs(right)) < 1e-10

    def test_zero_at_initialization(self):
        w0, _, basis = next(_instances(1))
        np.testing.assert_allclose(penalty_gradient(w0, basis), 0.0,
                                   atol=1e-12)

    def test_no_basis(self):
        np.testing.assert_array_equal(
            penalty_gradient(np.ones((2, 3)), None), np.zeros((2, 3)))


class TestPenaltyLora:
    def test_zero_adapter(self):
        w0, _, basis = next(_instances(1))
        a = np.random.default_rng(0).standard_normal((2, w0.shape[1]))
        b = np.zeros((w0.shape[0], 2))
        assert penalty_lora(a, b, w0, basis) == pytest.approx(0.0, abs=1e-20)

    def test_matches_merged_weight(self):
        rng = np.random.default_rng(8)
        w0, _, basis = next(_instances(1, seed=8))
        a = rng.standard_normal((3, w0.shape[1]))
        b = rng.standard_normal((w0.shape[0], 3))
        assert penalty_lora(a, b, w0, basis) == pytest.approx(
            penalty(w0 + b @ a, basis), rel=1e-13)

    def test_rank_mismatch(self):
        w0, _, basis = next(_instances(1))
        with pytest.raises(ParameterError):
            penalty_lora(np.zeros((2, w0.shape[1])),
                         np.zeros((w0.shape[0], 3)), w0, basis)


class TestCostAccounting:
    def test_counts(self):
        report = cost_accounting(4096, 4096, 768, 1)
        assert report.extra_floats_per_layer == 8192 * 768 + 768 * 768
        assert report.flops_per_eval == 2 * (
            4096 * 4096 * 768 + 4096 * 768 ** 2 + 768 ** 2)
        assert report.heuristic_relative_overhead == pytest.approx(768 / 4096)

    def test_update_period_amortizes(self):
        every = cost_accounting(64, 32, 8, 1)
        fourth = cost_accounting(64, 32, 8, 4)
        assert fourth.amortized_flops_per_step == pytest.approx(
            every.amortized_flops_per_step / 4)

    @pytest.mark.parametrize("args", [(4, 4, 5, 1), (4, 4, 2, 0),
                                      (0, 4, 1, 1)])
    def test_invalid(self, args):
        with pytest.raises(ParameterError):
            cost_accounting(*args)


class TestRegularizerConfig:
    def test_defaults(self):
        config = RegularizerConfig()
        assert config.lam == 1.0
        assert config.update_period == 1
        assert not config.active

    @pytest.mark.parametrize("kwargs", [{"lam": -1.0}, {"k": -1},
                                        {"k": True}, {"update_period": 0}])
    def test_invalid(self, kwargs):
        with pytest.raises(ParameterError):
            RegularizerConfig(**kwargs)


class TestLayerSets:
    def test_select_layers(self):
        names = ["fc2", "fc1", "head.w"]
        assert select_layers(names, ()) == ["fc1", "fc2", "head.w"]
        assert select_layers(names, ("fc*",)) == ["fc1", "fc2"]
        assert select_layers(names, ("head.*", "fc1")) == ["fc1", "head.w"]

    def test_build_bases(self):
        rng = np.random.default_rng(0)
        layers = {"fc1": rng.standard_normal((6, 4)),
                  "fc2": rng.standard_normal((3, 6))}
        assert build_bases(layers, RegularizerConfig(k=0)) == {}
        bases = build_bases(layers, RegularizerConfig(k=2))
        assert sorted(bases) == ["fc1", "fc2"]
        with pytest.raises(ParameterError):
            build_bases(layers, RegularizerConfig(k=2,
                                                  layer_selector=("x*",)))
        with pytest.raises(ParameterError):
            build_bases(layers, RegularizerConfig(k=4))

    def test_total_penalty(self):
        items = list(_instances(3, seed=2))
        layers = {f"l{i}": w for i, (_, w, _) in enumerate(items)}
        bases = {f"l{i}": b for i, (_, _, b) in enumerate(items)}
        expected = sum(penalty(w, b) for _, w, b in items)
        assert total_penalty(layers, bases) == pytest.approx(expected,
                                                             rel=1e-14)

    def test_project_out_protected(self):
        for w0, weight, basis in _instances(8, seed=6):
            projected = project_out_protected(weight, basis)
            assert penalty(projected, basis) < 1e-20
            # Only the protected block moves.
            u, v = basis.U_k.columns, basis.V_k.columns
            moved = projected - weight
            np.testing.assert_allclose(moved, u @ (u.T @ moved @ v) @ v.T,
                                       atol=1e-12)

    def test_block_decomposition(self):
        for w0, weight, basis in _instances(4, seed=3):
            a, b, c, d = block_decomposition(weight, basis)
            k = basis.k
            assert a.shape == (k, k)
            np.testing.assert_allclose(a, basis.block(weight), atol=1e-12)
            total = sum(frobenius_sq(x) for x in (a, b, c, d))
            assert total == pytest.approx(frobenius_sq(weight), rel=1e-12)
            a0, _, _, _ = block_decomposition(w0, basis)
            np.testing.assert_allclose(a0, basis.S_ref, atol=1e-12)


class TestBasisTensors:
    def test_round_trip(self):
        _, _, basis = next(_instances(1, seed=5))
        rebuilt = bases_from_tensors(basis_tensors(basis))["layer"]
        np.testing.assert_array_equal(rebuilt.U_k.columns, basis.U_k.columns)
        np.testing.assert_array_equal(rebuilt.V_k.columns, basis.V_k.columns)
        np.testing.assert_array_equal(rebuilt.S_ref, basis.S_ref)
        assert rebuilt.sigma_gap == basis.sigma_gap

    def test_incomplete(self):
        _, _, basis = next(_instances(1))
        tensors = basis_tensors(basis)
        del tensors["layer.Vk"]
        with pytest.raises(ParameterError):
            bases_from_tensors(tensors)
