import math

import numpy as np
import pytest
from hypothesis import assume, given
from hypothesis import strategies as st
from scipy import optimize, stats

from hybridcd.normal import (
    CompromiseConfig,
    NormalDesign,
    NormalPrior,
    TwoArmNormalData,
    bd_decision,
    cdc_threshold,
    cdd_threshold,
    cdd_weight,
    conflict_bounds,
    critical_z_bd,
    equal_threshold_point,
    fd_decision,
    gamma_cd,
    gamma_fd,
    kappa_bd,
    posterior_delta,
    prob_null,
)
from hybridcd.numerics import DomainError

DESIGN = NormalDesign(n_C=20, n_T=20)
PRIOR = NormalPrior(0.0, math.sqrt(0.1))  # A_C = 1 / (20 * 0.1) = 0.5
CFG = CompromiseConfig()


def conjugate_oracle(n_C, n_T, sigma, mu, sd0, yc, yt):
    """Posterior of delta by updating theta_C and theta_T separately."""
    prec = n_C / sigma**2 + (0.0 if math.isinf(sd0) else 1 / sd0**2)
    m_c = (n_C * yc / sigma**2 + (0.0 if math.isinf(sd0) else mu / sd0**2)) / prec
    return yt - m_c, math.sqrt(sigma**2 / n_T + 1 / prec)


def kappa_oracle(n, sd0, yc, gamma=0.025, sigma=1.0):
    """Level of the z-test that rejects exactly where the Bayes test does.

    Root-finds the smallest rejected treatment mean with the conjugate
    oracle and converts it to a z-test level.
    """
    def excess(yt):
        m, s = conjugate_oracle(n, n, sigma, 0.0, sd0, yc, yt)
        return stats.norm.cdf(-m / s) - gamma

    yt = optimize.brentq(excess, yc - 20, yc + 20, xtol=1e-14)
    return stats.norm.sf((yt - yc) / math.sqrt(2 * sigma**2 / n))


designs = st.builds(
    NormalDesign,
    n_C=st.integers(2, 400),
    n_T=st.integers(2, 400),
    sigma=st.floats(0.2, 5.0),
    delta0=st.floats(-0.5, 0.5),
    gamma=st.floats(0.005, 0.2),
    kappa=st.floats(0.005, 0.2),
)
priors = st.builds(NormalPrior, mu_C=st.floats(-2, 2), sigma_C=st.floats(0.02, 5.0))


class TestTypes:
    def test_a_ratio(self):
        assert PRIOR.a_ratio(DESIGN) == pytest.approx(0.5, rel=1e-14)
        assert NormalPrior().a_ratio(DESIGN) == 0.0

    def test_from_n0(self):
        assert NormalPrior.from_n0(0.0, 10).sigma_C == pytest.approx(math.sqrt(0.1))
        assert NormalPrior.from_n0(0.0, 0).is_flat

    @pytest.mark.parametrize("kw", [{"n_C": 0, "n_T": 5}, {"n_C": 5, "n_T": 5, "sigma": 0},
                                    {"n_C": 5, "n_T": 5, "gamma": 1.0}, {"n_C": 5, "n_T": 5, "kappa": 0.0}])
    def test_invalid_design(self, kw):
        with pytest.raises(DomainError):
            NormalDesign(**kw)

    @pytest.mark.parametrize("kw", [{"alpha_low": 0.1, "alpha_up": 0.05}, {"t": 0}, {"p": -1}])
    def test_invalid_config(self, kw):
        with pytest.raises(DomainError):
            CompromiseConfig(**kw)

    def test_nonfinite_data(self):
        with pytest.raises(DomainError):
            TwoArmNormalData(math.nan, 0.0)


class TestPosterior:
    def test_flat(self):
        post = posterior_delta(DESIGN, NormalPrior(), TwoArmNormalData(0.3, 0.8))
        assert post.mean == pytest.approx(0.5)
        assert post.sd == pytest.approx(math.sqrt(0.1))

    def test_reference_case(self):
        post = posterior_delta(DESIGN, PRIOR, TwoArmNormalData(0.3, 0.8))
        assert post.mean == pytest.approx(0.6, abs=1e-12)
        assert post.sd == pytest.approx(0.288675, abs=1e-6)

    def test_no_shift_at_prior_mean(self):
        post = posterior_delta(DESIGN, NormalPrior(0.4, 0.3), TwoArmNormalData(0.4, 1.1))
        assert post.mean == pytest.approx(0.7, abs=1e-14)

    @given(designs, priors, st.floats(-3, 3), st.floats(-3, 3))
    def test_matches_conjugate_oracle(self, d, pr, yc, yt):
        post = posterior_delta(d, pr, TwoArmNormalData(yc, yt))
        m, s = conjugate_oracle(d.n_C, d.n_T, d.sigma, pr.mu_C, pr.sigma_C, yc, yt)
        assert post.mean == pytest.approx(m, abs=1e-12)
        assert post.sd == pytest.approx(s, rel=1e-12)


class TestBayesDecision:
    def test_reference_case(self):
        p, reject = bd_decision(DESIGN, PRIOR, TwoArmNormalData(0.3, 0.8))
        assert p == pytest.approx(0.0188, abs=5e-5)
        assert reject

    def test_reference_case_simulation(self):
        draws = np.random.default_rng(5).normal(0.6, 0.288675, 10**6)
        p, _ = bd_decision(DESIGN, PRIOR, TwoArmNormalData(0.3, 0.8))
        assert abs(np.mean(draws <= 0) - p) < 4 * math.sqrt(p * (1 - p) / 10**6)

    def test_half_at_margin(self):
        p, reject = bd_decision(DESIGN, PRIOR, TwoArmNormalData(0.0, 0.0))
        assert p == pytest.approx(0.5)
        assert not reject

    @given(st.floats(-3, 3), st.floats(-3, 3))
    def test_flat_prior_is_z_test(self, yc, yt):
        data = TwoArmNormalData(yc, yt)
        p, reject = bd_decision(DESIGN, NormalPrior(), data)
        # exact ties are measure-zero; skip them
        if not math.isclose(p, DESIGN.gamma, rel_tol=1e-12):
            assert reject == fd_decision(DESIGN, data)


class TestKappaBD:
    def test_flat(self):
        assert kappa_bd(DESIGN, NormalPrior(), 0.7) == pytest.approx(0.025, abs=1e-15)

    @pytest.mark.parametrize("yc,printed", [(0.0, 0.0368), (1.0, 0.2311)])
    def test_reference_values(self, yc, printed):
        k = kappa_bd(DESIGN, PRIOR, yc)
        assert k == pytest.approx(kappa_oracle(20, math.sqrt(0.1), yc), abs=1e-11)
        assert k == pytest.approx(printed, abs=5e-5)

    def test_decision_parity_grid(self):
        for yc in (0.0, 1.0, -0.8):
            k = kappa_bd(DESIGN, PRIOR, yc)
            yt = np.linspace(yc - 1, yc + 2, 3001)
            bayes = prob_null(DESIGN, PRIOR, yc, yt) <= DESIGN.gamma
            freq = (yt - yc) / DESIGN.se_diff > stats.norm.isf(k)
            # allow disagreement only within rounding distance of the boundary
            zb = critical_z_bd(DESIGN, PRIOR, yc) * DESIGN.se_diff + yc
            far = np.abs(yt - zb) > 1e-9
            np.testing.assert_array_equal(bayes[far], freq[far])

    def test_monotone_in_control_mean(self):
        yc = np.linspace(-3, 3, 5001)
        assert np.all(np.diff(kappa_bd(DESIGN, PRIOR, yc)) > 0)


class TestGammaFD:
    def test_flat(self):
        assert gamma_fd(DESIGN, NormalPrior(), 0.3) == pytest.approx(0.025, abs=1e-15)

    def test_reference_value(self):
        g = gamma_fd(DESIGN, PRIOR, 0.0)
        # oracle: posterior probability of the null at the z-test boundary
        yt = stats.norm.isf(0.025) * DESIGN.se_diff
        m, s = conjugate_oracle(20, 20, 1.0, 0.0, math.sqrt(0.1), 0.0, yt)
        assert g == pytest.approx(stats.norm.cdf(-m / s), abs=1e-12)
        assert g == pytest.approx(0.0159, abs=5e-5)

    @given(designs, priors, st.floats(-3, 3))
    def test_round_trip(self, d, pr, yc):
        g = gamma_fd(d, pr, yc)
        # a level within 1e-4 of 1 keeps too few digits of its complement
        assume(g < 1 - 1e-4)
        assert kappa_bd(d, pr, yc, gamma=g) == pytest.approx(d.kappa, abs=1e-12)


class TestCompromise:
    @pytest.mark.parametrize("kbd,expected", [(0.10, 0.075), (0.005, 0.01), (0.03, 0.03)])
    def test_cdc_clamp(self, kbd, expected):
        assert cdc_threshold(kbd, CFG) == expected

    def test_conflict_bounds(self):
        lo, up = conflict_bounds(DESIGN, PRIOR, CFG)
        f = lambda level: optimize.brentq(lambda y: kappa_oracle(20, math.sqrt(0.1), y) - level, -3, 3, xtol=1e-13)
        assert up == pytest.approx(f(0.075), abs=1e-9)
        assert lo == pytest.approx(f(0.01), abs=1e-9)
        # frozen values of the oracle
        assert up == pytest.approx(0.3317191, abs=1e-6)
        assert lo == pytest.approx(-0.5095890, abs=1e-6)
        assert kappa_bd(DESIGN, PRIOR, up) == pytest.approx(0.075, abs=1e-10)
        assert kappa_bd(DESIGN, PRIOR, lo) == pytest.approx(0.01, abs=1e-10)

    def test_conflict_bounds_flat(self):
        with pytest.raises(DomainError):
            conflict_bounds(DESIGN, NormalPrior(), CFG)

    def test_equal_threshold_point(self):
        y = equal_threshold_point(DESIGN, PRIOR)
        oracle = optimize.brentq(lambda v: kappa_oracle(20, math.sqrt(0.1), v) - 0.025, -2, 2, xtol=1e-13)
        assert y == pytest.approx(oracle, abs=1e-9)
        assert y == pytest.approx(-0.16201, abs=1e-5)
        assert kappa_bd(DESIGN, PRIOR, y) == pytest.approx(0.025, abs=1e-10)

    def test_equal_threshold_point_half(self):
        d = NormalDesign(20, 20, gamma=0.5)
        assert equal_threshold_point(d, NormalPrior(0.3, 0.2)) == pytest.approx(0.3, abs=1e-14)

    @given(designs, priors)
    def test_equal_threshold_below_mean(self, d, pr):
        if d.gamma < 0.5:
            assert equal_threshold_point(d, pr) < pr.mu_C

    def test_equal_threshold_flat(self):
        with pytest.raises(DomainError):
            equal_threshold_point(DESIGN, NormalPrior())

    def test_cdd_weight(self):
        scale = math.sqrt(0.05 + 0.1)
        assert cdd_weight(DESIGN, PRIOR, 0.0, CFG) == 0.0
        assert cdd_weight(DESIGN, PRIOR, 4 * scale + 1e-9, CFG) == 1.0
        assert cdd_weight(DESIGN, PRIOR, -10.0, CFG) == 1.0
        assert cdd_weight(DESIGN, PRIOR, 0.774597, CFG) == pytest.approx(0.0625, abs=1e-6)
        assert cdd_weight(DESIGN, PRIOR, 1.0, CFG) == pytest.approx((1 / (4 * scale)) ** 4, rel=1e-14)

    def test_cdd_reference_value(self):
        w = (1 / (4 * math.sqrt(0.15))) ** 4
        kbd = kappa_oracle(20, math.sqrt(0.1), 1.0)
        pre = 0.025**w * kbd ** (1 - w)
        assert w == pytest.approx(0.17361, abs=1e-5)
        assert pre == pytest.approx(0.1571000, abs=1e-6)
        assert cdd_threshold(DESIGN, PRIOR, 1.0, CFG) == pytest.approx(0.075, abs=1e-15)
        wide = CompromiseConfig(alpha_low=1e-6, alpha_up=0.5)
        assert cdd_threshold(DESIGN, PRIOR, 1.0, wide) == pytest.approx(pre, rel=1e-10)

    @given(st.floats(-3, 3))
    def test_cdd_endpoints(self, yc):
        # p = 0 gives w = 1 everywhere except at the prior mean
        full_discard = CompromiseConfig(p=0.0)
        if yc != 0.0:
            assert cdd_threshold(DESIGN, PRIOR, yc, full_discard) == pytest.approx(0.025, abs=1e-15)
        # huge t gives w ~ 0, so CDD equals CDC
        no_discard = CompromiseConfig(t=1e12)
        assert cdd_threshold(DESIGN, PRIOR, yc, no_discard) == pytest.approx(
            cdc_threshold(kappa_bd(DESIGN, PRIOR, yc), CFG), rel=1e-9)

    def test_cdd_log_space_tiny_kappa(self):
        # far below the prior mean kappa_bd is ~1e-115; the interpolation
        # must not lose it to underflow
        wide = CompromiseConfig(alpha_low=0.0, alpha_up=1.0, t=1e3)
        yc = -20.0
        w = cdd_weight(DESIGN, PRIOR, yc, wide)
        log_kbd = stats.norm.logsf(critical_z_bd(DESIGN, PRIOR, yc))
        expected = math.exp(w * math.log(0.025) + (1 - w) * log_kbd)
        val = cdd_threshold(DESIGN, PRIOR, yc, wide)
        assert 0 < val < 1e-100
        assert val == pytest.approx(expected, rel=1e-9)

    def test_freeze_below_mean(self):
        frozen = CompromiseConfig(freeze_w_below_mean=True)
        y_eq = equal_threshold_point(DESIGN, PRIOR)
        assert cdd_weight(DESIGN, PRIOR, y_eq - 0.1, frozen) > 0
        assert cdd_weight(DESIGN, PRIOR, y_eq + 0.05, frozen) == 0.0
        assert cdd_weight(DESIGN, PRIOR, 0.1, frozen) > 0

    @given(designs, priors, st.floats(-5, 5))
    def test_cd_bounds(self, d, pr, yc):
        assert CFG.alpha_low <= cdc_threshold(kappa_bd(d, pr, yc), CFG) <= CFG.alpha_up
        assert CFG.alpha_low <= cdd_threshold(d, pr, yc, CFG) <= CFG.alpha_up

    @given(designs, priors, st.floats(-3, 3), st.floats(0.001, 0.5))
    def test_gamma_cd_inverse(self, d, pr, yc, level):
        g = gamma_cd(d, pr, yc, level)
        assume(g < 1 - 1e-4 and kappa_bd(d, pr, yc) < 1 - 1e-4)
        assert kappa_bd(d, pr, yc, gamma=g) == pytest.approx(level, abs=1e-12)
        assert gamma_cd(d, pr, yc, kappa_bd(d, pr, yc)) == pytest.approx(d.gamma, abs=1e-12)

    def test_gamma_cd_flat(self):
        assert gamma_cd(DESIGN, NormalPrior(), 0.4, 0.06) == pytest.approx(0.06, abs=1e-15)
