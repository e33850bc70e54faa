import math

import mpmath
import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from thinice.analysis import auc_lower, mann_whitney_u
from thinice.analysis.stats import _normal_p, _u_and_ranks

samples = st.lists(st.integers(0, 6).map(float), min_size=1, max_size=12)


class TestAuc:
    def test_identical(self):
        assert auc_lower([1, 2, 3], [1, 2, 3]) == 0.5

    def test_separated(self):
        assert auc_lower([1, 2], [3, 4]) == 1.0

    def test_interleaved(self):
        assert auc_lower([1, 3], [2, 4]) == 0.75

    def test_empty(self):
        with pytest.raises(ValueError):
            auc_lower([], [1.0])

    def test_non_finite(self):
        with pytest.raises(ValueError):
            auc_lower([np.inf], [1.0])

    @settings(max_examples=300, deadline=None)
    @given(samples, samples)
    def test_complement(self, a, b):
        assert auc_lower(a, b) + auc_lower(b, a) == 1.0


class TestMannWhitney:
    def test_separated_pair(self):
        r = mann_whitney_u([1, 2], [3, 4])
        assert r.method == "exact" and abs(r.p_value - 1 / 3) < 1e-12 and r.auc == 1.0

    def test_single_tie(self):
        r = mann_whitney_u([5], [5])
        assert r.auc == 0.5 and r.p_value == 1.0

    @settings(max_examples=200, deadline=None)
    @given(samples, samples)
    def test_auc_is_u_over_product(self, a, b):
        r = mann_whitney_u(a, b)
        assert r.auc == r.u_statistic / (r.n_a * r.n_b)
        assert 0 < r.p_value <= 1

    def test_null_calibration(self):
        hits = 0
        for trial in range(100):
            g = np.random.default_rng([7, trial])
            hits += mann_whitney_u(g.normal(size=60), g.normal(size=70)).p_value > 0.01
        assert hits >= 95

    def test_exact_and_normal_agree_at_the_switch(self):
        worst = 0.0
        for trial in range(200):
            g = np.random.default_rng([8, trial])
            a, b = g.normal(size=8), g.normal(size=int(g.integers(8, 15)))
            exact = mann_whitney_u(a, b)
            assert exact.method == "exact"
            u, ranks = _u_and_ranks(a, b)
            approx, _ = _normal_p(u, a.size, b.size, ranks)
            worst = max(worst, abs(exact.p_value - approx))
        assert worst < 0.02

    def test_large_samples_use_normal_approximation(self):
        g = np.random.default_rng(0)
        assert mann_whitney_u(g.normal(size=20), g.normal(size=20)).method == "normal-approx"

    def test_underflowed_p_keeps_its_logarithm(self):
        a, b = np.arange(4000.0), np.arange(4000.0, 8000.0)
        r = mann_whitney_u(a, b)
        n = 8000
        var = 4000 * 4000 * (n + 1) / 12
        z = (abs(r.u_statistic - 4000 * 4000 / 2) - 0.5) / math.sqrt(var)
        ref = float(mpmath.log10(mpmath.erfc(mpmath.mpf(z) / mpmath.sqrt(2))))
        assert r.p_value <= 1e-300
        assert abs(r.log10_p - ref) < 1e-3 * abs(ref)
