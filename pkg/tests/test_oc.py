import dataclasses
import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy import integrate as sp_integrate
from scipy import stats

from hybridcd.normal import CompromiseConfig, NormalDesign, NormalPrior, TwoArmNormalData, bd_decision
from hybridcd.numerics import DomainError, RngStream
from hybridcd.oc import (
    GeneralTwoArmPrior,
    OCPoint,
    average_oc,
    calibrated_power_gap_sign,
    frequentist_risk,
    max_tie,
    posterior_expected_loss,
    posterior_null_map,
    power_bd_closed,
    power_fd_closed,
    power_rule_mc,
    power_rule_quadrature,
    recalibrate_max_tie,
    regression_equivalence_check,
    tie_curve,
    tie_range,
)
from hybridcd.rules import BD, CDC, CDD, FD, EBPowD, NeverReject, PowerPrior, RMDUnit

DESIGN = NormalDesign(n_C=20, n_T=20)
PRIOR = NormalPrior(0.0, math.sqrt(0.1))
RULES = [FD(), BD(), CDC(), CDD(), EBPowD(), RMDUnit(), PowerPrior(0.5)]


def quad_oracle(design, prior, rule, theta_C, theta_T, nodes=400_001):
    """Composite Simpson over theta_C +/- 8 SE on a dense grid.

    Needs no hints about kinks in the threshold; with this many nodes the
    error is below 1e-10 for the rules tested here.
    """
    se = design.se_C
    yc = np.linspace(theta_C - 8 * se, theta_C + 8 * se, nodes)
    b = rule.boundary(design, prior, yc)
    f = stats.norm.sf((b - theta_T) / design.se_T) * stats.norm.pdf(yc, theta_C, se)
    return sp_integrate.simpson(f, x=yc)


class TestClosedForm:
    def test_frequentist_reduction(self):
        d = NormalDesign(20, 20, gamma=0.03, kappa=0.03)
        assert power_bd_closed(d, NormalPrior(), 0.4, 0.4) == pytest.approx(0.03, abs=1e-15)
        assert power_fd_closed(d, 0.4, 0.4) == pytest.approx(0.03, abs=1e-15)

    def test_reference_values(self):
        assert power_bd_closed(DESIGN, PRIOR, 0.0, 0.0) == pytest.approx(0.0176309, abs=1e-7)
        assert power_bd_closed(DESIGN, PRIOR, 0.0, 1.0) == pytest.approx(0.9469207, abs=1e-7)

    @given(st.floats(-2, 2), st.floats(-0.5, 1.5))
    @settings(max_examples=30, deadline=None)
    def test_bd_matches_simulation_free_oracle(self, tc, dl):
        assert power_bd_closed(DESIGN, PRIOR, tc, tc + dl) == pytest.approx(
            quad_oracle(DESIGN, PRIOR, BD(), tc, tc + dl), abs=1e-9)

    def test_general_prior_reduces_to_hybrid(self):
        pair = GeneralTwoArmPrior(PRIOR)
        assert pair.hybrid
        assert power_bd_closed(DESIGN, pair, 0.3, 0.9) == power_bd_closed(DESIGN, PRIOR, 0.3, 0.9)


class TestQuadrature:
    @pytest.mark.parametrize("tc,dl", [(0.0, 0.0), (-1.5, 0.3), (1.2, 1.0)])
    def test_fd(self, tc, dl):
        exact = stats.norm.sf(stats.norm.isf(0.025) - dl / DESIGN.se_diff)
        assert power_rule_quadrature(DESIGN, PRIOR, FD(), tc, tc + dl) == pytest.approx(exact, abs=1e-8)

    @pytest.mark.parametrize("tc", np.linspace(-2, 2, 9))
    def test_bd(self, tc):
        assert power_rule_quadrature(DESIGN, PRIOR, BD(), tc, tc) == pytest.approx(
            power_bd_closed(DESIGN, PRIOR, tc, tc), abs=1e-7)

    @pytest.mark.parametrize("rule", [CDC(), CDD(), EBPowD(), RMDUnit()], ids=lambda r: r.name)
    @pytest.mark.parametrize("tc", [-1.0, 0.0, 0.35, 1.5])
    def test_other_rules_vs_scipy(self, rule, tc):
        assert power_rule_quadrature(DESIGN, PRIOR, rule, tc, tc + 0.5) == pytest.approx(
            quad_oracle(DESIGN, PRIOR, rule, tc, tc + 0.5), abs=1e-8)

    def test_cdc_envelope(self):
        curve = tie_curve(DESIGN, PRIOR, CDC(), np.linspace(-2, 2, 81))
        assert curve.min() >= 0.01 - 1e-6
        assert curve.max() <= 0.075 + 1e-6

    def test_bd_tie_monotone(self):
        curve = tie_curve(DESIGN, PRIOR, BD(), np.linspace(-2, 2, 41))
        assert np.all(np.diff(curve) >= 0)
        power = [power_rule_quadrature(DESIGN, PRIOR, BD(), t, t + 0.5) for t in np.linspace(-2, 2, 41)]
        assert np.all(np.diff(power) >= 0)

    @pytest.mark.parametrize("tc", [-3.0, -2.5, 2.5, 3.0])
    def test_cdd_reverts_to_fd(self, tc):
        # 6 * sqrt(0.05 + 0.1) = 2.32
        assert abs(power_rule_quadrature(DESIGN, PRIOR, CDD(), tc, tc) - 0.025) < 0.01

    def test_never_reject(self):
        assert power_rule_quadrature(DESIGN, PRIOR, NeverReject(), 0.0, 5.0) == 0.0


class TestMonteCarlo:
    def test_deterministic(self):
        s = RngStream(99, 5)
        a = power_rule_mc(DESIGN, PRIOR, CDD(), 0.2, 0.2, 5000, s)
        b = power_rule_mc(DESIGN, PRIOR, CDD(), 0.2, 0.2, 5000, s)
        assert a == b

    def test_fd_nominal(self):
        pt = power_rule_mc(DESIGN, PRIOR, FD(), 0.0, 0.0, 200_000, RngStream(1234))
        assert pt.estimator == "monte_carlo" and pt.reps == 200_000
        assert abs(pt.value - 0.025) <= 3 * pt.mc_se
        assert pt.mc_se == pytest.approx(math.sqrt(pt.value * (1 - pt.value) / 200_000))

    @pytest.mark.parametrize("rule", RULES, ids=lambda r: r.name)
    def test_agrees_with_quadrature(self, rule):
        root = RngStream(777)
        for i, (tc, dl) in enumerate([(0.0, 0.0), (1.0, 0.0), (-1.0, 0.5), (0.5, 1.0)]):
            pt = power_rule_mc(DESIGN, PRIOR, rule, tc, tc + dl, 50_000, root.child(i))
            q = power_rule_quadrature(DESIGN, PRIOR, rule, tc, tc + dl)
            assert abs(pt.value - q) <= 3 * pt.mc_se + 1e-12

    def test_reps(self):
        with pytest.raises(DomainError):
            power_rule_mc(DESIGN, PRIOR, FD(), 0.0, 0.0, 0, RngStream(1))


class TestOCPoint:
    def test_invariants(self):
        with pytest.raises(DomainError):
            OCPoint(0.0, 0.0, 1.2, "quadrature")
        with pytest.raises(DomainError):
            OCPoint(0.0, 0.0, 0.5, "quadrature", mc_se=0.01)
        assert OCPoint(0.0, 0.0, 0.5, "monte_carlo", mc_se=0.01, reps=10).mc_se == 0.01


class TestRecalibration:
    def test_fd(self):
        rec = recalibrate_max_tie(DESIGN, PRIOR, FD(), 0.075)
        assert rec.attainable and rec.knob == "kappa"
        assert rec.value == pytest.approx(0.075, abs=1e-8)

    def test_cdc_identity(self):
        rec = recalibrate_max_tie(DESIGN, PRIOR, CDC(), 0.075)
        assert rec.knob == "alpha_up"
        assert rec.value == pytest.approx(0.075, abs=1e-7)

    def test_pp_closed_loop(self):
        rec = recalibrate_max_tie(DESIGN, PRIOR, PowerPrior(0.2), 0.075)
        assert rec.attainable
        check = max_tie(rec.design, PRIOR, rec.rule)
        assert check == pytest.approx(0.075, abs=5e-4)

    def test_bd_unattainable(self):
        rec = recalibrate_max_tie(DESIGN, PRIOR, BD(), 0.075)
        assert not rec.attainable
        assert isinstance(rec.rule, NeverReject)
        assert "never rejects" in rec.message

    def test_target_above_reach(self):
        rec = recalibrate_max_tie(DESIGN, PRIOR, FD(), 0.6)
        assert not rec.attainable and rec.value == 0.5

    def test_grid_size(self):
        with pytest.raises(DomainError):
            recalibrate_max_tie(DESIGN, PRIOR, FD(), 0.05, grid=1)

    def test_tie_range(self):
        lo, hi = tie_range(DESIGN, PRIOR, CDC())
        assert 0.01 - 1e-6 <= lo < hi <= 0.075 + 1e-6


class TestAverage:
    def test_fd_exact(self):
        assert average_oc(DESIGN, PRIOR, FD(), PRIOR, 0.0) == pytest.approx(0.025, abs=1e-10)

    def test_fd_power(self):
        exact = stats.norm.sf(stats.norm.isf(0.025) - 1.0 / DESIGN.se_diff)
        assert average_oc(DESIGN, PRIOR, FD(), PRIOR, 1.0) == pytest.approx(exact, abs=1e-9)

    def test_bd_null(self):
        assert average_oc(DESIGN, PRIOR, BD(), PRIOR, 0.0) == pytest.approx(0.025, abs=1e-8)

    def test_bd_power_vs_scipy(self):
        f = lambda th: power_bd_closed(DESIGN, PRIOR, th, th + 1.0) * stats.norm.pdf(th, 0, math.sqrt(0.1))
        ref = sp_integrate.quad(f, -8 * math.sqrt(0.1), 8 * math.sqrt(0.1), epsabs=1e-13)[0]
        assert average_oc(DESIGN, PRIOR, BD(), PRIOR, 1.0) == pytest.approx(ref, abs=1e-8)
        assert ref == pytest.approx(0.9337270, abs=1e-7)

    def test_flat_sampling_prior(self):
        with pytest.raises(DomainError):
            average_oc(DESIGN, PRIOR, FD(), NormalPrior(), 0.0)


class TestDecisionTheory:
    def test_risk_definitions(self):
        tie = power_rule_quadrature(DESIGN, PRIOR, BD(), 0.5, 0.5)
        assert frequentist_risk(DESIGN, PRIOR, BD(), 0.5, 0.5, 0.3, 0.7).risk == pytest.approx(0.7 * tie)
        pw = power_rule_quadrature(DESIGN, PRIOR, BD(), 0.5, 1.2)
        assert frequentist_risk(DESIGN, PRIOR, BD(), 0.5, 1.2, 0.3, 0.7).risk == pytest.approx(0.3 * (1 - pw))

    def test_fd_max_risk(self):
        risks = [frequentist_risk(DESIGN, PRIOR, FD(), tc, tc + dl, 0.025, 0.975).risk
                 for tc in (-1.0, 0.0, 1.0) for dl in np.linspace(-1, 1, 41)]
        assert max(risks) == pytest.approx(0.975 * 0.025, abs=1e-10)
        assert all(r <= 0.975 for r in risks)

    def test_negative_cost(self):
        with pytest.raises(DomainError):
            frequentist_risk(DESIGN, PRIOR, FD(), 0, 0, -1, 1)

    def test_posterior_loss(self):
        data = TwoArmNormalData(0.3, 0.8)
        p, _ = bd_decision(DESIGN, PRIOR, data)
        loss = posterior_expected_loss(PRIOR, DESIGN, data, True, 0.025, 0.975)
        assert loss == pytest.approx(0.975 * p, rel=1e-14)
        assert loss == pytest.approx(0.0183626, abs=1e-7)
        assert posterior_expected_loss(PRIOR, DESIGN, data, False, 0.025, 0.975) == pytest.approx(0.025 * (1 - p))

    @given(st.floats(-2, 2), st.floats(-2, 2), st.floats(0.01, 1), st.floats(0.01, 1))
    def test_bayes_rule_minimises_loss(self, yc, yt, c0, c1):
        data = TwoArmNormalData(yc, yt)
        p, _ = bd_decision(DESIGN, PRIOR, data)
        rej = posterior_expected_loss(PRIOR, DESIGN, data, True, c0, c1)
        acc = posterior_expected_loss(PRIOR, DESIGN, data, False, c0, c1)
        assert (rej <= acc) == (p <= c0 / (c0 + c1)) or math.isclose(rej, acc, rel_tol=1e-12)


class TestPowerGap:
    def _direct(self, design, pair, tc, tt):
        alpha = power_bd_closed(design, pair, tc, tc)
        beta = power_bd_closed(design, pair, tc, tt)
        cal = stats.norm.sf(stats.norm.isf(alpha) - (tt - tc) / design.se_diff)
        return cal - beta

    def test_zero(self):
        pair = GeneralTwoArmPrior(NormalPrior(0, 0.3), NormalPrior(0.2, 0.3))
        gap = calibrated_power_gap_sign(DESIGN, pair, 0.0, 0.6)
        assert gap.sign == "zero"
        assert abs(gap.power_gap) < 1e-12

    @pytest.mark.parametrize("sd_c,sd_t,sign", [(0.2, 0.4, "negative"), (0.4, 0.2, "positive")])
    def test_cases(self, sd_c, sd_t, sign):
        pair = GeneralTwoArmPrior(NormalPrior(0, sd_c), NormalPrior(0.1, sd_t))
        gap = calibrated_power_gap_sign(DESIGN, pair, 0.0, 0.8)
        assert gap.sign == sign
        assert gap.power_gap == pytest.approx(self._direct(DESIGN, pair, 0.0, 0.8), abs=1e-10)
        assert (gap.power_gap > 0) == (sign == "positive")

    @given(st.integers(5, 200), st.integers(5, 200), st.floats(0.05, 2), st.floats(0.05, 2),
           st.floats(-1, 1), st.floats(0.01, 2))
    @settings(max_examples=60)
    def test_closed_form_gap(self, n_c, n_t, sd_c, sd_t, tc, dl):
        d = NormalDesign(n_c, n_t)
        pair = GeneralTwoArmPrior(NormalPrior(0.0, sd_c), NormalPrior(0.0, sd_t))
        gap = calibrated_power_gap_sign(d, pair, tc, tc + dl)
        assert gap.power_gap == pytest.approx(self._direct(d, pair, tc, tc + dl), abs=1e-10)
        # sign of the probit gap follows the three-case rule
        if gap.sign == "positive":
            assert gap.probit_gap <= 1e-12
        elif gap.sign == "negative":
            assert gap.probit_gap >= -1e-12

    def test_preconditions(self):
        with pytest.raises(DomainError):
            calibrated_power_gap_sign(DESIGN, GeneralTwoArmPrior(PRIOR), 0.0, 1.0)
        pair = GeneralTwoArmPrior(PRIOR, NormalPrior(0, 1))
        with pytest.raises(DomainError):
            calibrated_power_gap_sign(DESIGN, pair, 1.0, 0.0)
        with pytest.raises(DomainError):
            calibrated_power_gap_sign(dataclasses.replace(DESIGN, delta0=0.1), pair, 0.0, 1.0)


class TestRegression:
    def test_hybrid_forms_agree(self):
        pair = GeneralTwoArmPrior(PRIOR)
        data = TwoArmNormalData(0.3, 0.9)
        assert regression_equivalence_check(DESIGN, pair, data) <= 1e-12
        assert regression_equivalence_check(DESIGN, pair, data, independent_delta_prior=True) <= 1e-12

    @given(st.integers(2, 300), st.integers(2, 300), st.floats(0.3, 3), st.floats(0.05, 3), st.floats(0.05, 3),
           st.floats(-2, 2), st.floats(-2, 2), st.floats(-2, 2), st.floats(-2, 2))
    def test_random(self, n_c, n_t, sigma, sd_c, sd_t, mu_c, mu_t, yc, yt):
        d = NormalDesign(n_c, n_t, sigma=sigma)
        pair = GeneralTwoArmPrior(NormalPrior(mu_c, sd_c), NormalPrior(mu_t, sd_t))
        assert regression_equivalence_check(d, pair, TwoArmNormalData(yc, yt)) <= 1e-12


class TestNullMap:
    def test_boundaries(self):
        conflict = np.linspace(-2, 2, 41)
        effect = np.linspace(-1, 2, 61)
        m = posterior_null_map(DESIGN, PRIOR, conflict, effect, [FD(), BD(), CDC()])
        assert m.prob_null.shape == (61, 41)
        np.testing.assert_allclose(m.boundaries["FD"], stats.norm.isf(0.025) * DESIGN.se_diff, atol=1e-14)
        from hybridcd.normal import kappa_bd
        bd = stats.norm.isf(kappa_bd(DESIGN, PRIOR, conflict)) * DESIGN.se_diff
        np.testing.assert_allclose(m.boundaries["BD"], bd, atol=1e-12)

    def test_cdc_cells(self):
        conflict = np.linspace(-2, 2, 41)
        effect = np.linspace(-1, 2, 301)
        m = posterior_null_map(DESIGN, PRIOR, conflict, effect, [CDC()])
        yc = conflict[None, :]
        yt = yc + effect[:, None]
        cells = CDC().decide(DESIGN, PRIOR, np.broadcast_to(yc, yt.shape), yt)
        by_boundary = effect[:, None] > m.boundaries["CDC"][None, :]
        np.testing.assert_array_equal(cells, by_boundary)
        # clamped BD boundary in the same coordinates
        lo = stats.norm.isf(0.075) * DESIGN.se_diff
        hi = stats.norm.isf(0.01) * DESIGN.se_diff
        bd = posterior_null_map(DESIGN, PRIOR, conflict, effect, [BD()]).boundaries["BD"]
        np.testing.assert_allclose(m.boundaries["CDC"], np.clip(bd, lo, hi), atol=1e-12)
