import math
from fractions import Fraction

import mpmath
import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from hslsim.bounds import (
    ONE_MINUS_INV_E,
    BetaBounds,
    ProblemConstants,
    beta_bounds,
    beta_gossip,
    beta_pull,
    beta_push,
    check_beta_hsl_remark,
    lemma2_cd_bound,
    step_size_branches,
    theorem1_step_size,
)
from hslsim.errors import ConfigError


def exact_gossip(n, b):
    return Fraction(1, b) * (1 - (1 - Fraction(b, n - 1)) ** n) - Fraction(1, n - 1)


def exact_sampling(n, b):
    return Fraction(n - b, b * (n - 1))


class TestBetaValues:
    def test_hand_example(self):
        b = beta_bounds(100, 5, 1, 1, 1)
        assert b.beta_hs == 1.0 and b.beta_sh == 1.0
        assert round(b.beta_hh, 4) == 0.5127
        assert b.beta_hh == pytest.approx(1 - 0.75**5 - 0.25, rel=1e-15)

    def test_two_hubs_exact_zero(self):
        assert beta_gossip(2, 1) == 0.0

    def test_large_network_limit(self):
        assert abs(beta_gossip(10**6, 1) - ONE_MINUS_INV_E) < 1e-3
        assert ONE_MINUS_INV_E == pytest.approx(1 - math.exp(-1), rel=1e-15)

    @pytest.mark.parametrize("n", [2, 7, 100])
    def test_full_budget_exact_zero(self, n):
        assert beta_push(n, n) == 0.0
        assert beta_pull(n, n) == 0.0

    def test_composites(self):
        b = beta_bounds(60, 7, 4, 3, 2)
        assert b.beta_hsl == b.beta_hs * b.beta_hh * b.beta_sh
        assert b.beta_prime == 0.5 * (b.beta_hsl + (60 / 7) * b.beta_hs * (1 + b.beta_hh))

    @pytest.mark.parametrize("args", [(1, 5, 1, 1, 1), (10, 1, 1, 1, 1)])
    def test_too_small(self, args):
        with pytest.raises(ConfigError):
            beta_bounds(*args)

    def test_budget_range_checked(self):
        with pytest.raises(ConfigError, match="b_hh must be ≤ n_h − 1"):
            beta_gossip(5, 5)


class TestOracles:
    def test_exact_rational_grid(self):
        gen = np.random.default_rng(1)
        for _ in range(100):
            n = int(gen.integers(2, 201))
            b = int(gen.integers(1, n))
            assert beta_gossip(n, b) == pytest.approx(float(exact_gossip(n, b)), rel=1e-12, abs=1e-15)
            b2 = int(gen.integers(1, n + 1))
            assert beta_push(n, b2) == pytest.approx(float(exact_sampling(n, b2)), rel=1e-12, abs=0)

    def test_high_precision_large_n(self):
        mpmath.mp.dps = 50
        for n, b in [(10**4, 3), (10**6, 1), (10**8, 17), (12345, 6789)]:
            ref = (1 - (1 - mpmath.mpf(b) / (n - 1)) ** n) / b - mpmath.mpf(1) / (n - 1)
            assert beta_gossip(n, b) == pytest.approx(float(ref), rel=1e-12)


class TestBetaProperties:
    def test_monotone_in_budget(self):
        for n in range(2, 201, 7):
            push = [beta_push(n, b) for b in range(1, n + 1)]
            assert all(a >= c for a, c in zip(push, push[1:]))
            gossip = [beta_gossip(n, b) for b in range(1, n)]
            assert all(a >= c - 1e-15 for a, c in zip(gossip, gossip[1:]))

    @settings(max_examples=500, deadline=None)
    @given(n=st.integers(2, 500), data=st.data())
    def test_gossip_range(self, n, data):
        b = data.draw(st.integers(1, n - 1))
        assert 0.0 <= beta_gossip(n, b) <= ONE_MINUS_INV_E + 1e-12

    def test_hsl_below_limit_grid(self):
        gen = np.random.default_rng(2)
        for _ in range(100):
            n_s, n_h = int(gen.integers(2, 300)), int(gen.integers(2, 60))
            b = beta_bounds(n_s, n_h, int(gen.integers(1, n_s + 1)), int(gen.integers(1, n_h)),
                            int(gen.integers(1, n_h + 1)))
            assert b.beta_hsl <= ONE_MINUS_INV_E


def consts(**kw):
    base = dict(L=1.0, sigma_sq=1.0, H_sq=1.0, delta0=1.0, T=500, n_s=100)
    base.update(kw)
    return ProblemConstants(**base)


class TestStepSize:
    def test_noiseless_homogeneous(self):
        betas = beta_bounds(20, 4, 2, 1, 1)
        assert theorem1_step_size(consts(sigma_sq=0.0, H_sq=0.0), betas) == 1 / 20

    def test_first_branch_binds(self):
        b = BetaBounds(0.5, 0.5, 0.5, 0.2, 0.5)
        first = math.sqrt(100 * 1 / (2 * 500 * ((1 + 663 * 0.5) + 663 * 0.5)))
        second = (1 / (250 * 500 * 0.2 * 2)) ** (1 / 3)
        assert first < second < 1 / 20
        assert theorem1_step_size(consts(), b) == pytest.approx(first, rel=1e-14)
        assert round(first, 5) == 0.01227

    def test_quadrupling_T_halves_gamma(self):
        b = BetaBounds(0.5, 0.5, 0.5, 0.2, 0.5)
        g1 = theorem1_step_size(consts(T=500), b)
        g4 = theorem1_step_size(consts(T=2000), b)
        assert step_size_branches(consts(T=2000), b).index(g4) == 0
        assert g4 == pytest.approx(g1 / 2, rel=1e-12)

    @settings(max_examples=300, deadline=None)
    @given(L=st.floats(1e-3, 1e3), s=st.floats(0, 10), h=st.floats(0, 10), d=st.floats(1e-3, 10),
           T=st.integers(1, 10**5), bp=st.floats(0, 50), bh=st.floats(0, 0.63))
    def test_never_exceeds_cap(self, L, s, h, d, T, bp, bh):
        g = theorem1_step_size(ProblemConstants(L, s, h, d, T, 10), BetaBounds(0, 0, 0, bh, bp))
        assert 0 < g <= 1 / (20 * L)

    @pytest.mark.parametrize("kw", [dict(L=0.0), dict(T=0), dict(sigma_sq=-1.0)])
    def test_invalid_constants(self, kw):
        with pytest.raises(ConfigError):
            consts(**kw)


class TestLemma2Bound:
    b = beta_bounds(20, 4, 2, 1, 1)

    def test_zero_step(self):
        assert lemma2_cd_bound(self.b, 0.0, 1.0, 1.0) == 0.0

    def test_perfect_mixing(self):
        assert lemma2_cd_bound(BetaBounds(0, 0, 0, 0.0, 0), 0.1, 1.0, 1.0) == 0.0

    def test_value(self):
        beta = self.b.beta_hsl
        expected = 20 * (1 + 3 * beta) / (1 - beta) ** 2 * beta * 0.01 * 3.0
        assert lemma2_cd_bound(self.b, 0.1, 1.0, 2.0) == pytest.approx(expected, rel=1e-15)

    @settings(max_examples=300, deadline=None)
    @given(beta=st.floats(0, ONE_MINUS_INV_E), g=st.floats(0, 1), s=st.floats(0, 10))
    def test_coefficient_at_most_500(self, beta, g, s):
        bound = lemma2_cd_bound(BetaBounds(0, 0, 0, beta, 0), g, s, 1.0)
        assert bound <= 500 * beta * g**2 * (s + 1.0) * (1 + 1e-12)

    @pytest.mark.parametrize("beta", [1.0, 1.5, -0.1])
    def test_domain(self, beta):
        with pytest.raises(ConfigError):
            lemma2_cd_bound(BetaBounds(0, 0, 0, beta, 0), 0.1, 1.0, 1.0)


class TestRemark:
    def test_premise_holds(self):
        b = beta_bounds(100, 5, 40, 1, 1)
        r = check_beta_hsl_remark(100, 5, 40, 1, b.beta_hsl)
        assert r.premise_holds
        assert r.bound == pytest.approx(0.05 * ONE_MINUS_INV_E)
        assert round(r.bound, 4) == 0.0316
        assert r.satisfied and b.beta_hsl <= r.bound

    def test_vacuous(self):
        r = check_beta_hsl_remark(100, 5, 1, 1, beta_bounds(100, 5, 1, 1, 1).beta_hsl)
        assert not r.premise_holds and r.satisfied

    @pytest.mark.parametrize("n, b", [(5, 1), (10, 3), (40, 40)])
    def test_equal_sizes(self, n, b):
        bh = beta_bounds(n, n, b, 1, b).beta_hsl
        r = check_beta_hsl_remark(n, n, b, b, bh)
        assert r.premise_holds and r.bound == ONE_MINUS_INV_E and r.satisfied

    def test_brute_force_sweep(self):
        for n_s in range(2, 40):
            for n_h in range(2, 20):
                for b_hs in range(1, n_s + 1, 3):
                    for b_sh in range(1, n_h + 1, 2):
                        bh = beta_bounds(n_s, n_h, b_hs, 1, b_sh).beta_hsl
                        assert check_beta_hsl_remark(n_s, n_h, b_hs, b_sh, bh).satisfied
