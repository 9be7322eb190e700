"""Score-function tests: frozen examples, independent oracles, invariants."""

import math

import numpy as np
import pytest

from geodin.errors import DomainError, ShapeError
from geodin.scores import (
    EPS_NORM,
    GeometryView,
    combined_score,
    concept_score,
    covariate_score,
    energy_score,
    geometry_view,
    kl_from_uniform,
    msp_score,
    score_batch,
    score_set,
)


def random_pair(rng, d=8, m=5):
    """Random nonnegative feature and weight matrix."""
    return rng.uniform(0.0, 2.0, d), rng.normal(0.0, 1.0, (m, d))


class TestGeometryView:
    def test_pythagorean(self):
        view = geometry_view([3.0, 4.0], [[1.0, 0.0], [0.0, 1.0]])
        assert view.feature_norm == 5.0
        np.testing.assert_allclose(view.weight_norms, [1.0, 1.0])
        np.testing.assert_allclose(view.cosines, [0.6, 0.8])
        np.testing.assert_allclose(view.logits, [3.0, 4.0])

    def test_zero_feature_convention(self):
        view = geometry_view([0.0, 0.0], [[1.0, 0.0], [0.0, 1.0]])
        assert view.feature_norm == 0.0
        assert np.all(view.cosines == 0.0)
        assert np.all(view.logits == 0.0)

    def test_zero_weight_row_convention(self):
        view = geometry_view([1.0, 2.0], [[0.0, 0.0], [1.0, 1.0]])
        assert view.cosines[0] == 0.0
        assert view.logits[0] == 0.0

    def test_logits_match_brute_force_inner_products(self):
        rng = np.random.default_rng(11)
        for _ in range(20):
            f, W = random_pair(rng, d=8, m=5)
            view = geometry_view(f, W)
            # independent oracle: explicit scalar loops
            for i in range(5):
                dot = sum(float(W[i, j]) * float(f[j]) for j in range(8))
                assert abs(view.logits[i] - dot) < 1e-12

    def test_decomposition_reconstructs_logits(self):
        rng = np.random.default_rng(12)
        f, W = random_pair(rng)
        view = geometry_view(f, W)
        np.testing.assert_allclose(
            view.feature_norm * view.weight_norms * view.cosines, view.logits, rtol=1e-9
        )
        assert np.all(np.abs(view.cosines) <= 1.0 + 1e-12)

    def test_shape_mismatch(self):
        with pytest.raises(ShapeError):
            geometry_view([1.0, 2.0, 3.0], [[1.0, 0.0], [0.0, 1.0]])

    def test_single_class_rejected(self):
        with pytest.raises(ShapeError):
            geometry_view([1.0], [[1.0]])

    def test_negative_feature_rejected(self):
        with pytest.raises(DomainError):
            geometry_view([-1.0, 2.0], [[1.0, 0.0], [0.0, 1.0]])

    def test_inconsistent_view_rejected(self):
        with pytest.raises(DomainError):
            GeometryView(
                feature_norm=1.0,
                weight_norms=np.array([1.0, 1.0]),
                cosines=np.array([0.5, 0.5]),
                logits=np.array([5.0, 5.0]),
            )


class TestCovariateScore:
    def test_zero(self):
        assert covariate_score([0.0, 0.0]) == 0.0

    def test_three_four_five(self):
        assert covariate_score([3.0, 4.0]) == 5.0

    def test_matches_summation_oracle(self):
        rng = np.random.default_rng(13)
        f = rng.uniform(0.0, 3.0, 32)
        oracle = math.sqrt(sum(float(x) * float(x) for x in f))
        assert abs(covariate_score(f) - oracle) < 1e-12


class TestConceptScore:
    def test_identical_classes(self):
        view = geometry_view([1.0, 2.0], [[0.3, 0.4], [0.3, 0.4]])
        assert concept_score(view) == 0.0

    def test_uniform_logits(self):
        view = geometry_view([1.0, 1.0], [[1.0, 0.0], [0.0, 1.0]])
        assert concept_score(view) == 0.0

    def test_matches_logit_path(self):
        rng = np.random.default_rng(14)
        for _ in range(50):
            f, W = random_pair(rng, d=6, m=10)
            view = geometry_view(f, W)
            expected = (view.logits.max() - view.logits.mean()) / view.feature_norm
            np.testing.assert_allclose(concept_score(view), expected, rtol=1e-9)


class TestCombinedScore:
    def test_uniform_logits(self):
        view = geometry_view([1.0, 1.0], [[1.0, 0.0], [0.0, 1.0]])
        assert combined_score(view) == 0.0

    def test_hand_arithmetic(self):
        # logits (2, 0, 0, 0) -> 2 - 0.5 = 1.5
        view = geometry_view([2.0], np.array([[1.0], [0.0], [0.0], [0.0]]))
        assert combined_score(view) == 1.5

    def test_two_path_equality(self):
        rng = np.random.default_rng(15)
        for _ in range(100):
            f, W = random_pair(rng)
            view = geometry_view(f, W)
            logit_path = combined_score(view)
            gh_path = covariate_score(f) * concept_score(view)
            np.testing.assert_allclose(gh_path, logit_path, rtol=1e-9, atol=1e-12)


class TestMspScore:
    def test_uniform(self):
        assert msp_score([7.0, 7.0, 7.0, 7.0]) == 0.25

    def test_overflow_stability(self):
        assert msp_score([1000.0, 0.0]) == pytest.approx(1.0)

    def test_matches_extended_precision_oracle(self):
        from mpmath import exp as mp_exp, mp

        mp.dps = 50
        rng = np.random.default_rng(16)
        for _ in range(20):
            logits = rng.normal(0.0, 5.0, 6)
            exps = [mp_exp(x) for x in logits]
            oracle = float(max(exps) / sum(exps))
            assert abs(msp_score(logits) - oracle) < 1e-12


class TestEnergyScore:
    def test_constant_logits(self):
        assert energy_score([2.0] * 3) == pytest.approx(2.0 + math.log(3), abs=1e-12)

    def test_dominance(self):
        assert energy_score([50.0, -50.0]) == pytest.approx(50.0, abs=1e-12)

    def test_lse_bounds(self):
        rng = np.random.default_rng(17)
        for _ in range(200):
            m = int(rng.integers(2, 21))
            logits = rng.normal(0.0, 3.0, m)
            lse = energy_score(logits)
            assert logits.max() - 1e-9 <= lse <= logits.max() + math.log(m) + 1e-9


class TestKlFromUniform:
    def test_uniform_is_zero(self):
        assert kl_from_uniform([0.25] * 4) == 0.0

    def test_direct_sum_oracle(self):
        p = [0.7, 0.1, 0.1, 0.1]
        oracle = -sum((1.0 / 4.0) * math.log(4.0 * pi) for pi in p)
        value = kl_from_uniform(p)
        assert abs(value - oracle) < 1e-12
        assert value == pytest.approx(0.42981319461032674, abs=1e-14)

    def test_rejects_nonpositive(self):
        with pytest.raises(DomainError):
            kl_from_uniform([0.5, 0.5, 0.0])

    def test_rejects_unnormalized(self):
        with pytest.raises(DomainError):
            kl_from_uniform([0.5, 0.6])

    def test_bounded_by_combined_score(self):
        rng = np.random.default_rng(18)
        for _ in range(300):
            m = int(rng.integers(2, 21))
            logits = rng.normal(0.0, 3.0, m)
            e = np.exp(logits - logits.max())
            probs = e / e.sum()
            u = logits.max() - logits.mean()
            kl = kl_from_uniform(probs)
            assert u - math.log(m) - 1e-9 <= kl <= u + 1e-9


class TestScoreSetAndBatch:
    def test_factorization_invariant(self):
        rng = np.random.default_rng(19)
        for _ in range(200):
            f, W = random_pair(rng)
            s = score_set(f, W)
            if s.g > EPS_NORM:
                np.testing.assert_allclose(s.u, s.g * s.h, rtol=1e-9, atol=1e-12)

    def test_msp_range(self):
        rng = np.random.default_rng(20)
        for _ in range(100):
            f, W = random_pair(rng, d=5, m=7)
            s = score_set(f, W)
            assert 1.0 / 7.0 - 1e-12 <= s.msp <= 1.0

    def test_nonnegativity(self):
        rng = np.random.default_rng(21)
        for _ in range(200):
            f, W = random_pair(rng)
            s = score_set(f, W)
            assert s.h >= 0.0
            assert s.u >= 0.0

    def test_scale_covariance(self):
        rng = np.random.default_rng(22)
        for _ in range(50):
            f, W = random_pair(rng)
            c = float(rng.uniform(0.1, 10.0))
            s1 = score_set(f, W)
            s2 = score_set(c * f, W)
            np.testing.assert_allclose(s2.g, c * s1.g, rtol=1e-9)
            np.testing.assert_allclose(s2.u, c * s1.u, rtol=1e-9, atol=1e-12)
            np.testing.assert_allclose(s2.h, s1.h, rtol=1e-9, atol=1e-12)

    def test_purity_bit_identical(self):
        rng = np.random.default_rng(23)
        f, W = random_pair(rng)
        a = score_set(f, W)
        b = score_set(f.copy(), W.copy())
        assert (a.g, a.h, a.u, a.msp, a.energy) == (b.g, b.h, b.u, b.msp, b.energy)

    def test_batch_matches_per_sample(self):
        rng = np.random.default_rng(24)
        W = rng.normal(0.0, 1.0, (6, 9))
        F = rng.uniform(0.0, 2.0, (64, 9))
        F[0] = 0.0  # degenerate row
        batch = score_batch(F, W)
        for i in range(F.shape[0]):
            s = score_set(F[i], W)
            for name, value in (("g", s.g), ("h", s.h), ("u", s.u), ("msp", s.msp), ("energy", s.energy)):
                np.testing.assert_allclose(batch[name][i], value, rtol=1e-12, atol=1e-13)

    def test_batch_shape_mismatch(self):
        with pytest.raises(ShapeError):
            score_batch(np.ones((4, 3)), np.ones((5, 2)))
