import numpy as np
import pytest
from itertools import permutations

import scipy.stats

from clothfold.stats import EXACT_LIMIT, SampleError, mann_whitney_u


def brute_force_p(a, b):
    """Independent oracle: permute the pooled values over the two groups."""
    pooled = list(a) + list(b)
    n_a = len(a)
    seen = 0
    extreme = 0
    u_obs = mann_whitney_u(a, b)[0]
    mu = n_a * len(b) / 2.0
    for perm in set(permutations(pooled)):
        u = mann_whitney_u(perm[:n_a], perm[n_a:])[0]
        seen += 1
        if abs(u - mu) >= abs(u_obs - mu) - 1e-12:
            extreme += 1
    return extreme / seen


class TestExamples:
    def test_separated_two_by_two(self):
        u, p = mann_whitney_u([1.0, 2.0], [3.0, 4.0])
        assert u == 0.0
        assert p == pytest.approx(1.0 / 3.0)

    def test_identical_samples(self):
        u, p = mann_whitney_u([5.0, 5.0, 5.0], [5.0, 5.0, 5.0])
        assert p == 1.0

    def test_identical_samples_approx(self):
        sample = list(range(10))
        _, p = mann_whitney_u(sample, sample)
        assert p == pytest.approx(1.0)

    def test_fully_separated_large(self):
        a = list(range(1, 21))
        b = list(range(31, 51))
        _, p = mann_whitney_u(a, b)
        assert p < 0.05

    def test_brute_force_oracle_small(self):
        rng = np.random.Generator(np.random.PCG64(4))
        for _ in range(10):
            a = list(np.round(rng.uniform(0, 1, 3), 2))
            b = list(np.round(rng.uniform(0, 1, 3), 2))
            _, p = mann_whitney_u(a, b)
            assert p == pytest.approx(brute_force_p(a, b))


class TestAgainstScipy:
    def test_exact_no_ties(self):
        rng = np.random.Generator(np.random.PCG64(8))
        for _ in range(20):
            a = rng.normal(0, 1, 5)
            b = rng.normal(0.5, 1, 6)
            u, p = mann_whitney_u(a, b)
            ref = scipy.stats.mannwhitneyu(a, b, alternative="two-sided", method="exact")
            assert u == pytest.approx(ref.statistic)
            assert p == pytest.approx(ref.pvalue)

    def test_approx_with_ties(self):
        rng = np.random.Generator(np.random.PCG64(9))
        for _ in range(20):
            a = rng.integers(0, 5, 12).astype(float)
            b = rng.integers(1, 6, 15).astype(float)
            u, p = mann_whitney_u(a, b)
            ref = scipy.stats.mannwhitneyu(a, b, alternative="two-sided",
                                           method="asymptotic")
            assert u == pytest.approx(ref.statistic)
            assert p == pytest.approx(ref.pvalue)


class TestProperties:
    def test_symmetry(self):
        rng = np.random.Generator(np.random.PCG64(10))
        for _ in range(50):
            n_a, n_b = rng.integers(2, 8, 2)
            a = rng.normal(0, 1, n_a)
            b = rng.normal(0, 1, n_b)
            u_ab, p_ab = mann_whitney_u(a, b)
            u_ba, p_ba = mann_whitney_u(b, a)
            assert u_ba == pytest.approx(n_a * n_b - u_ab)
            assert p_ab == pytest.approx(p_ba)

    def test_exact_vs_approx_agreement(self):
        rng = np.random.Generator(np.random.PCG64(11))
        for _ in range(50):
            a = rng.normal(0, 1, 6)
            b = rng.normal(rng.uniform(-1, 1), 1, 6)
            _, p_exact = mann_whitney_u(a, b, method="exact")
            _, p_approx = mann_whitney_u(a, b, method="approx")
            assert abs(p_exact - p_approx) <= 0.02

    def test_exact_limit_is_twelve(self):
        assert EXACT_LIMIT == 12

    def test_p_in_unit_interval(self):
        rng = np.random.Generator(np.random.PCG64(12))
        for _ in range(50):
            a = rng.normal(0, 1, int(rng.integers(2, 20)))
            b = rng.normal(0, 1, int(rng.integers(2, 20)))
            _, p = mann_whitney_u(a, b)
            assert 0.0 < p <= 1.0


class TestErrors:
    def test_empty_sample(self):
        with pytest.raises(SampleError):
            mann_whitney_u([], [1.0])
        with pytest.raises(SampleError):
            mann_whitney_u([1.0], [])

    def test_nonfinite(self):
        with pytest.raises(SampleError):
            mann_whitney_u([np.nan], [1.0])

    def test_bad_method(self):
        with pytest.raises(SampleError):
            mann_whitney_u([1.0], [2.0], method="bootstrap")
