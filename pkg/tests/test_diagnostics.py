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

"""Tests for rpsft.diagnostics."""

import logging
import math

import numpy as np
import pytest

from rpsft.datatypes import GradientBatch, HiddenStateSet, ProbSequence
from rpsft.diagnostics import (entropy_profile, first_order_signal,
                               fisher_energy_curve, fisher_energy_ratio,
                               hidden_drift, mean_rotation, rotation_layerwise,
                               rotation_rankwise, silverman_bandwidth,
                               token_entropy)
from rpsft.error import ParameterError, UndefinedRatioError
from rpsft.linalg import OrthonormalBasis, svd_full


def _planted(size, seed=0):
    """Square matrix with known singular vectors and values size..1."""
    rng = np.random.default_rng(seed)
    u, _ = np.linalg.qr(rng.normal(size=(size, size)))
    v, _ = np.linalg.qr(rng.normal(size=(size, size)))
    sigma = np.arange(size, 0, -1, dtype=float)
    return u, sigma, v, (u * sigma) @ v.T


def _plane_rotation(u, pairs, degrees):
    """Orthogonal Q turning u[:, a] toward u[:, b] for each (a, b)."""
    theta = math.radians(degrees)
    q = np.eye(u.shape[0])
    for a, b in pairs:
        ua, ub = u[:, a:a + 1], u[:, b:b + 1]
        q = q + (math.cos(theta) - 1) * (ua @ ua.T + ub @ ub.T) \
            + math.sin(theta) * (ub @ ua.T - ua @ ub.T)
    return q


class TestFisherEnergy:
    """Tests for the projected energy ratio and curve."""

    def test_gradient_inside_block(self):
        svd = svd_full(_planted(5)[3])
        grad = np.outer(svd.U[:, 0], svd.V[:, 0])
        ratio = fisher_energy_ratio(
            GradientBatch([grad]),
            OrthonormalBasis(svd.U[:, :1]), OrthonormalBasis(svd.V[:, :1]),
        )
        assert ratio == pytest.approx(1.0, abs=1e-12)

    def test_gradient_in_complement(self):
        svd = svd_full(_planted(5)[3])
        grad = np.outer(svd.U[:, 2], svd.V[:, 3])
        ratio = fisher_energy_ratio(
            GradientBatch([grad]),
            OrthonormalBasis(svd.U[:, :1]), OrthonormalBasis(svd.V[:, :1]),
        )
        assert ratio == pytest.approx(0.0, abs=1e-12)

    def test_full_rank(self):
        rng = np.random.default_rng(1)
        svd = svd_full(rng.normal(size=(6, 6)))
        batch = GradientBatch(rng.normal(size=(10, 6, 6)))
        ratio = fisher_energy_ratio(batch, OrthonormalBasis(svd.U),
                                    OrthonormalBasis(svd.V))
        assert ratio == pytest.approx(1.0, abs=1e-12)

    def test_zero_gradients(self):
        svd = svd_full(_planted(3)[3])
        with pytest.raises(UndefinedRatioError):
            fisher_energy_ratio(GradientBatch(np.zeros((2, 3, 3))),
                                OrthonormalBasis(svd.U[:, :1]),
                                OrthonormalBasis(svd.V[:, :1]))

    def test_bases_do_not_fit(self):
        svd = svd_full(_planted(3)[3])
        with pytest.raises(ParameterError):
            fisher_energy_ratio(GradientBatch(np.ones((1, 4, 3))),
                                OrthonormalBasis(svd.U[:, :1]),
                                OrthonormalBasis(svd.V[:, :1]))

    def test_curve_full_block(self):
        rng = np.random.default_rng(2)
        svd = svd_full(rng.normal(size=(4, 4)))
        points = fisher_energy_curve(
            GradientBatch(rng.normal(size=(5, 4, 4))), svd, [4])
        assert len(points) == 1
        assert points[0].r == 4
        assert points[0].x == 1.0
        assert points[0].y == pytest.approx(1.0, abs=1e-12)

    def test_curve_matches_ratio(self):
        rng = np.random.default_rng(3)
        svd = svd_full(rng.normal(size=(6, 5)))
        batch = GradientBatch(rng.normal(size=(7, 6, 5)))
        points = fisher_energy_curve(batch, svd, [3, 1, 5, 2])
        assert [p.r for p in points] == [1, 2, 3, 5]
        for point in points:
            direct = fisher_energy_ratio(
                batch, OrthonormalBasis(svd.U[:, :point.r]),
                OrthonormalBasis(svd.V[:, :point.r]))
            assert point.y == pytest.approx(direct, abs=1e-12)
            assert point.x == pytest.approx(point.r ** 2 / 25)
        ys = [p.y for p in points]
        assert ys == sorted(ys)

    def test_curve_non_square_below_one(self):
        rng = np.random.default_rng(4)
        svd = svd_full(rng.normal(size=(6, 4)))
        extra = rng.normal(size=(6, 1))
        q, _ = np.linalg.qr(np.hstack([svd.U, extra]))
        grad = np.outer(q[:, 4], svd.V[:, 0])
        points = fisher_energy_curve(GradientBatch([grad]), svd, [4])
        assert points[0].y == pytest.approx(0.0, abs=1e-12)

    def test_isotropic_monte_carlo(self):
        rng = np.random.default_rng(5)
        svd = svd_full(rng.normal(size=(8, 8)))
        batch = GradientBatch(rng.normal(size=(10000, 8, 8)))
        for point in fisher_energy_curve(batch, svd, range(1, 9)):
            assert abs(point.y - point.x) < 0.05

    def test_anisotropic_top_block(self):
        rng = np.random.default_rng(6)
        svd = svd_full(rng.normal(size=(6, 6)))
        samples = []
        for _ in range(50):
            core = rng.normal(size=(2, 2))
            noise = 0.05 * rng.normal(size=(6, 6))
            samples.append(svd.U[:, :2] @ core @ svd.V[:, :2].T + noise)
        points = fisher_energy_curve(GradientBatch(samples), svd, [2])
        assert points[0].y > 0.9

    def test_curve_rank_out_of_range(self):
        svd = svd_full(_planted(3)[3])
        with pytest.raises(ParameterError):
            fisher_energy_curve(GradientBatch(np.ones((1, 3, 3))), svd, [4])
        with pytest.raises(ParameterError):
            fisher_energy_curve(GradientBatch(np.ones((1, 3, 3))), svd, [])


class TestFirstOrderSignal:
    """Tests for gradient/update alignment."""

    def test_descent_step(self):
        rng = np.random.default_rng(0)
        base = {"w": rng.normal(size=(3, 4))}
        batch = GradientBatch(rng.normal(size=(5, 3, 4)))
        ckpt = {"w": base["w"] - batch.mean()}
        signal = first_order_signal(base, ckpt, {"w": batch})
        expected = -float(np.sum(batch.mean() ** 2))
        assert signal["w"] == pytest.approx(expected, rel=1e-12)
        assert signal["w"] < 0

    def test_no_update(self):
        rng = np.random.default_rng(1)
        base = {"w": rng.normal(size=(3, 3))}
        batch = GradientBatch(rng.normal(size=(2, 3, 3)))
        assert first_order_signal(base, base, {"w": batch})["w"] == 0.0

    def test_scalar_oracle(self):
        rng = np.random.default_rng(2)
        names = ["fc1", "fc2"]
        shapes = {"fc1": (4, 3), "fc2": (2, 4)}
        base = {n: rng.normal(size=shapes[n]) for n in names}
        ckpt = {n: base[n] + rng.normal(size=shapes[n]) for n in names}
        grads = {n: GradientBatch(rng.normal(size=(6,) + shapes[n]))
                 for n in names}
        signal = first_order_signal(base, ckpt, grads,
                                    {"all": names, "head": ["fc2"]})
        values = {}
        for name in names:
            samples = grads[name].samples
            rows, cols = shapes[name]
            total = 0.0
            for i in range(rows):
                for j in range(cols):
                    mean = sum(samples[t, i, j] for t in range(6)) / 6
                    total += mean * (ckpt[name][i, j] - base[name][i, j])
            values[name] = total
        assert signal["head"] == pytest.approx(values["fc2"], rel=1e-12)
        assert signal["all"] == pytest.approx(
            (values["fc1"] + values["fc2"]) / 2, rel=1e-12)

    def test_missing_gradients(self):
        base = {"w": np.ones((2, 2))}
        with pytest.raises(ParameterError):
            first_order_signal(base, base, {}, {"g": ["w"]})

    def test_shape_mismatch(self):
        base = {"w": np.ones((2, 2))}
        ckpt = {"w": np.ones((2, 3))}
        batch = GradientBatch(np.ones((1, 2, 2)))
        with pytest.raises(ParameterError):
            first_order_signal(base, ckpt, {"w": batch})


class TestRotation:
    """Tests for U-space rotation."""

    def test_identical(self):
        w = _planted(6)[3]
        assert rotation_layerwise({"w": w}, {"w": w.copy()}) == {"w": 0.0}

    def test_planted_rotation(self):
        u, _, _, w = _planted(6, seed=3)
        q = _plane_rotation(u, [(0, 2), (1, 3)], 25.0)
        result = rotation_layerwise({"w": w}, {"w": q @ w}, cap=2)
        assert result["w"] == pytest.approx(25.0, abs=0.1)

    def test_scaling_rotates_nothing(self):
        w = _planted(5, seed=4)[3]
        assert mean_rotation(w, 2.0 * w, 3) == pytest.approx(0.0, abs=1e-6)

    def test_layer_types(self, caplog):
        rng = np.random.default_rng(5)
        base = {"l0.q": rng.normal(size=(4, 4)),
                "l0.v": rng.normal(size=(4, 4)),
                "l1.o": rng.normal(size=(4, 4))}
        tuned = {k: v + 0.1 * rng.normal(size=v.shape)
                 for k, v in base.items()}
        with caplog.at_level(logging.WARNING, logger="rpsft.diagnostics"):
            result = rotation_layerwise(base, tuned, types={"q", "v"}, cap=2)
        assert list(result) == ["l0"]
        expected = (mean_rotation(base["l0.q"], tuned["l0.q"], 2)
                    + mean_rotation(base["l0.v"], tuned["l0.v"], 2)) / 2
        assert result["l0"] == pytest.approx(expected, rel=1e-12)
        assert "l1" in caplog.text

    def test_rankwise_identical(self):
        w = _planted(5, seed=6)[3]
        for _, angle in rotation_rankwise(w, w.copy(), [1, 2, 3, 4, 5]):
            assert angle == 0.0

    def test_rankwise_planted(self):
        u, _, _, w = _planted(6, seed=7)
        q = _plane_rotation(u, [(0, 5)], 40.0)
        result = rotation_rankwise(w, q @ w, [1, 2, 3, 4, 5])
        for r, angle in result:
            assert angle == pytest.approx(40.0 / r, rel=1e-7)

    def test_rankwise_second_implementation(self):
        rng = np.random.default_rng(8)
        w_base = rng.normal(size=(7, 5))
        w_tuned = w_base + 0.3 * rng.normal(size=w_base.shape)
        u_base = np.linalg.svd(w_base, full_matrices=False)[0]
        u_tuned = np.linalg.svd(w_tuned, full_matrices=False)[0]
        for r, angle in rotation_rankwise(w_base, w_tuned, [1, 3, 5]):
            cosines = np.linalg.svd(u_base[:, :r].T @ u_tuned[:, :r],
                                    compute_uv=False)
            expected = np.degrees(np.arccos(np.clip(cosines, -1, 1))).mean()
            assert angle == pytest.approx(expected, abs=1e-6)

    def test_shape_mismatch(self):
        with pytest.raises(ParameterError):
            mean_rotation(np.ones((3, 3)), np.ones((3, 4)), 1)


class TestHiddenDrift:
    """Tests for centroid drift."""

    def test_translation(self):
        rng = np.random.default_rng(0)
        rows = rng.normal(size=(40, 5))
        shift = np.array([0.3, -1.0, 2.0, 0.0, 0.5])
        report = hidden_drift([HiddenStateSet("base", "d", rows),
                               HiddenStateSet("tuned", "d", rows + shift)],
                              "base")
        assert report.d_hidden["base"] == 0.0
        assert report.d_hidden["tuned"] == pytest.approx(
            float(np.linalg.norm(shift)), rel=1e-12)

    def test_identical(self):
        rows = np.random.default_rng(1).normal(size=(10, 3))
        report = hidden_drift([HiddenStateSet("base", "d", rows),
                               HiddenStateSet("copy", "d", rows.copy())],
                              "base")
        assert report.d_hidden["copy"] == 0.0
        assert report.d_pca["copy"] == pytest.approx(0.0, abs=1e-12)

    def test_gaussian_clouds(self):
        rng = np.random.default_rng(2)
        sets = [HiddenStateSet(tag, "d", rng.normal(loc=i, size=(30, 6)))
                for i, tag in enumerate(["base", "sft", "rpsft"])]
        report = hidden_drift(sets, "base")
        base_centroid = [sum(row[j] for row in sets[0].rows) / 30
                         for j in range(6)]
        for hset in sets:
            centroid = [sum(row[j] for row in hset.rows) / 30
                        for j in range(6)]
            naive = math.sqrt(sum((a - b) ** 2
                                  for a, b in zip(centroid, base_centroid)))
            assert report.d_hidden[hset.model] == pytest.approx(
                naive, rel=1e-12, abs=1e-12)
            assert report.d_pca[hset.model] <= \
                report.d_hidden[hset.model] + 1e-12
            assert report.pca_coords[hset.model].shape == (30, 2)

    def test_rows(self):
        rows = np.random.default_rng(3).normal(size=(8, 4))
        report = hidden_drift([HiddenStateSet("base", "d", rows),
                               HiddenStateSet("t", "d", rows + 1.0)], "base")
        table = list(report.rows())
        assert [row[0] for row in table] == ["base", "t"]
        assert len(table[1]) == 5

    def test_mixed_datasets(self):
        rows = np.ones((3, 2))
        with pytest.raises(ParameterError):
            hidden_drift([HiddenStateSet("base", "a", rows),
                          HiddenStateSet("t", "b", rows)], "base")

    def test_missing_base(self):
        with pytest.raises(ParameterError):
            hidden_drift([HiddenStateSet("t", "a", np.ones((3, 2)))], "base")


class TestEntropy:
    """Tests for token entropy and its KDE."""

    def test_uniform(self):
        probs = np.full((5, 8), 1.0 / 8)
        np.testing.assert_allclose(token_entropy(probs), math.log(8),
                                   rtol=1e-14)

    def test_one_hot(self):
        probs = np.eye(4)
        np.testing.assert_array_equal(token_entropy(probs), np.zeros(4))

    def test_bandwidth(self):
        assert silverman_bandwidth(1.0, 32) == pytest.approx(0.53, rel=1e-12)

    def test_kde_mass(self):
        rng = np.random.default_rng(0)
        seqs = []
        for _ in range(32):
            logits = rng.normal(scale=rng.uniform(0.5, 3.0), size=(12, 10))
            probs = np.exp(logits)
            seqs.append(ProbSequence(probs / probs.sum(axis=1,
                                                       keepdims=True)))
        profile = entropy_profile(seqs)
        assert profile.has_kde
        assert profile.grid.shape == (256,)
        mass = float(np.sum((profile.density[1:] + profile.density[:-1])
                            * np.diff(profile.grid)) / 2)
        assert mass == pytest.approx(1.0, abs=1e-3)
        std = float(np.std(profile.e_values, ddof=1))
        assert profile.bandwidth == pytest.approx(
            silverman_bandwidth(std, 32))

    def test_kde_mass_two_sequences(self):
        seqs = [ProbSequence(np.full((3, 8), 1.0 / 8)),
                ProbSequence(np.full((3, 4), 1.0 / 4))]
        profile = entropy_profile(seqs)
        assert profile.has_kde
        mass = float(np.sum((profile.density[1:] + profile.density[:-1])
                            * np.diff(profile.grid)) / 2)
        gap = abs(profile.e_values[0] - profile.e_values[1])

        def normal_cdf(x):
            return 0.5 * (1.0 + math.erf(x / math.sqrt(2.0)))

        expected = (normal_cdf(gap / profile.bandwidth + 3.0)
                    - normal_cdf(-3.0))
        assert mass == pytest.approx(expected, abs=1e-5)
        assert 1.0 - mass > 1e-3

    def test_profile_values(self):
        seqs = [ProbSequence(np.full((3, 8), 1.0 / 8)),
                ProbSequence(np.eye(4)[:2])]
        profile = entropy_profile(seqs)
        assert profile.e_values[0] == pytest.approx(math.log(8))
        assert profile.e_values[1] == 0.0

    def test_single_sequence(self, caplog):
        with caplog.at_level(logging.WARNING, logger="rpsft.diagnostics"):
            profile = entropy_profile([ProbSequence(np.eye(3))])
        assert not profile.has_kde
        assert "KDE unavailable" in caplog.text

    def test_zero_spread(self):
        seqs = [ProbSequence(np.full((2, 4), 0.25)) for _ in range(5)]
        assert not entropy_profile(seqs).has_kde

    def test_empty(self):
        with pytest.raises(ParameterError):
            entropy_profile([])
