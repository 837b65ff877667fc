"""Elementary function contracts: exact examples, independent oracles,
and algebraic properties."""

import logging
import math

import numpy as np
import pytest

from scamnet.errors import ContractViolationError
from scamnet.numerics import (
    cosine,
    cross_entropy,
    logsumexp,
    mse,
    softmax,
    softplus_inverse,
)


class TestLogSumExp:
    def test_two_equal_terms(self):
        assert logsumexp(np.array([0.0, 0.0])) == pytest.approx(math.log(2), abs=1e-6)

    def test_shift_invariance_by_ten(self):
        base = np.array([1.0, 2.0, 3.0])
        assert logsumexp(base + 10.0) - logsumexp(base) == pytest.approx(10.0, abs=1e-6)

    def test_matches_direct_extended_precision_sum(self):
        values = np.array([1.0, 2.0, 3.0], dtype=np.float64)
        oracle = math.log(math.fsum(math.exp(v) for v in values))
        assert logsumexp(values) == pytest.approx(oracle, abs=1e-12)

    def test_shift_invariance_random(self):
        rng = np.random.default_rng(0)
        for _ in range(50):
            x = rng.normal(size=rng.integers(1, 20))
            c = float(rng.normal() * 10)
            assert logsumexp(x + c) == pytest.approx(logsumexp(x) + c, abs=1e-6)

    def test_all_masked_is_neg_inf(self):
        assert logsumexp(np.array([-np.inf, -np.inf])) == -np.inf

    def test_partial_neg_inf_ignored(self):
        assert logsumexp(np.array([-np.inf, 0.0, 0.0])) == pytest.approx(
            math.log(2), abs=1e-6
        )

    def test_empty_rejected(self):
        with pytest.raises(ContractViolationError):
            logsumexp(np.array([]))


class TestSoftmax:
    def test_uniform(self):
        np.testing.assert_allclose(
            softmax(np.zeros(3), 1.0), np.full(3, 1 / 3), atol=1e-7
        )

    def test_single_element(self):
        for tau in (0.1, 1.0, 5.0):
            np.testing.assert_allclose(softmax(np.array([2.3]), tau), [1.0])

    def test_direct_oracle(self):
        values = np.array([1.0, 2.0, 3.0], dtype=np.float64)
        tau = 0.5
        exps = [math.exp(v / tau) for v in values]
        oracle = np.array(exps) / math.fsum(exps)
        np.testing.assert_allclose(softmax(values, tau), oracle, atol=1e-12)

    def test_sums_to_one_and_positive(self):
        rng = np.random.default_rng(1)
        for _ in range(100):
            x = rng.normal(size=rng.integers(1, 30)) * 10
            p = softmax(x, float(rng.uniform(0.1, 5)))
            assert abs(p.sum() - 1.0) < 1e-6
            assert (p > 0).all()

    def test_permutation_equivariance(self):
        rng = np.random.default_rng(2)
        x = rng.normal(size=12)
        perm = rng.permutation(12)
        np.testing.assert_allclose(softmax(x)[perm], softmax(x[perm]), atol=1e-12)

    def test_nonpositive_temperature_rejected(self):
        for tau in (0.0, -1.0):
            with pytest.raises(ContractViolationError):
                softmax(np.ones(3), tau)


class TestCosine:
    def test_self_similarity_is_one(self):
        rng = np.random.default_rng(3)
        for _ in range(10):
            v = rng.normal(size=8)
            assert cosine(v, v) == pytest.approx(1.0, abs=1e-6)

    def test_orthogonal(self):
        assert cosine(np.array([1.0, 0.0]), np.array([0.0, 1.0])) == 0.0

    def test_random_oracle(self):
        rng = np.random.default_rng(4)
        a = rng.normal(size=16)
        b = rng.normal(size=16)
        oracle = math.fsum(x * y for x, y in zip(a, b)) / (
            math.sqrt(math.fsum(x * x for x in a))
            * math.sqrt(math.fsum(y * y for y in b))
        )
        assert cosine(a, b) == pytest.approx(oracle, abs=1e-12)

    def test_symmetry_and_scale_invariance(self):
        rng = np.random.default_rng(5)
        for _ in range(25):
            a = rng.normal(size=6)
            b = rng.normal(size=6)
            lam = float(rng.uniform(0.01, 100))
            assert cosine(a, b) == pytest.approx(cosine(b, a), abs=1e-6)
            assert cosine(lam * a, b) == pytest.approx(cosine(a, b), abs=1e-6)

    def test_bounded(self):
        rng = np.random.default_rng(6)
        for _ in range(50):
            v = cosine(rng.normal(size=5), rng.normal(size=5))
            assert -1.0 - 1e-6 <= v <= 1.0 + 1e-6

    def test_zero_norm_returns_zero_with_warning(self, caplog):
        with caplog.at_level(logging.WARNING):
            assert cosine(np.zeros(4), np.ones(4)) == 0.0
        assert any("zero-norm" in r.message for r in caplog.records)


class TestCrossEntropy:
    def test_perfect_prediction(self):
        assert cross_entropy(np.array([0.0, 1.0, 0.0]), 1) == 0.0

    def test_uniform_five_way(self):
        p = np.full(5, 0.2)
        for target in range(5):
            assert cross_entropy(p, target) == pytest.approx(math.log(5), abs=1e-6)

    def test_random_oracle(self):
        rng = np.random.default_rng(7)
        p = softmax(rng.normal(size=6))
        t = 3
        assert cross_entropy(p, t) == pytest.approx(-math.log(p[t]), abs=1e-12)

    def test_floor_prevents_infinity(self):
        v = cross_entropy(np.array([1.0, 0.0]), 1)
        assert v == pytest.approx(-math.log(1e-12))

    def test_out_of_range_rejected(self):
        with pytest.raises(ContractViolationError):
            cross_entropy(np.array([0.5, 0.5]), 2)


class TestMse:
    def test_identical_is_zero(self):
        v = np.array([0.3, 0.7])
        assert mse(v, v) == 0.0

    def test_opposite_one_hots(self):
        assert mse(np.array([1.0, 0.0]), np.array([0.0, 1.0])) == 1.0

    def test_random_oracle(self):
        rng = np.random.default_rng(8)
        a = rng.normal(size=9)
        b = rng.normal(size=9)
        oracle = math.fsum((x - y) ** 2 for x, y in zip(a, b)) / 9
        assert mse(a, b) == pytest.approx(oracle, abs=1e-12)

    def test_shape_mismatch_rejected(self):
        with pytest.raises(ContractViolationError):
            mse(np.zeros(3), np.zeros(4))


class TestReproducibility:
    def test_reductions_bit_exact_across_calls(self):
        rng = np.random.default_rng(9)
        x = rng.normal(size=257).astype(np.float32)
        first = logsumexp(x)
        for _ in range(5):
            assert logsumexp(x) == first
        p = softmax(x)
        np.testing.assert_array_equal(p, softmax(x))


def test_softplus_inverse_round_trip():
    for y in (0.1, 1.0, 3.5):
        raw = softplus_inverse(y)
        assert math.log1p(math.exp(raw)) == pytest.approx(y, abs=1e-12)
    with pytest.raises(ContractViolationError):
        softplus_inverse(0.0)
