"""Operating characteristics of Normal hybrid-control decision rules.

Three estimators of the rejection probability at a true (theta_C, theta_T):

* ``power_bd_closed``: closed form for the Bayes decision, with informative
  priors allowed on both arms;
* ``power_rule_quadrature``: condition on the control mean, where the rule
  becomes a z-test at a known level, and integrate the conditional
  rejection probability against the sampling density of the control mean;
* ``power_rule_mc``: plain Monte Carlo on a reproducible stream.

On top of these sit the recalibration to a target maximum type I error,
the prior-averaged error rates, and a handful of decision-theoretic
quantities (frequentist risk, posterior expected loss, the sign of the
power gap after point-wise calibration, the regression-parametrisation
check and the posterior-probability map).
"""

from __future__ import annotations

import dataclasses
import math
from dataclasses import dataclass, field

import numpy as np
from scipy import optimize, special

from . import normal
from .normal import NormalDesign, NormalPrior, TwoArmNormalData, level_to_z
from .numerics import DomainError, RngStream, Tolerance, integrate
from .rules import BD, CDC, CDD, FD, DecisionRule, EBPowD, NeverReject, PowerPrior, RMDUnit

__all__ = [
    "GeneralTwoArmPrior",
    "NullMap",
    "OCPoint",
    "PowerGap",
    "Recalibration",
    "RiskPoint",
    "average_oc",
    "calibrated_power_gap_sign",
    "frequentist_risk",
    "max_tie",
    "posterior_expected_loss",
    "posterior_null_map",
    "power_bd_closed",
    "power_fd_closed",
    "power_rule_mc",
    "power_rule_quadrature",
    "recalibrate_max_tie",
    "regression_equivalence_check",
    "tie_curve",
    "tie_range",
]

TRUNCATE_SD = 8.0
QUAD_TOL = Tolerance(abs_tol=1e-10, max_iter=60)
GAMMA_FLOOR = 1e-3


@dataclass(frozen=True)
class GeneralTwoArmPrior:
    control: NormalPrior
    treatment: NormalPrior = NormalPrior()

    @property
    def hybrid(self) -> bool:
        return self.treatment.is_flat

    def a_ratios(self, design: NormalDesign) -> tuple[float, float]:
        a_c = self.control.a_ratio(design)
        a_t = 0.0 if self.treatment.is_flat else design.sigma**2 / (design.n_T * self.treatment.sigma_C**2)
        return a_c, a_t


@dataclass(frozen=True)
class OCPoint:
    theta_C: float
    delta: float
    value: float
    estimator: str
    mc_se: float = 0.0
    reps: int = 0
    seed: RngStream | None = None

    def __post_init__(self):
        if not 0 <= self.value <= 1:
            raise DomainError("OC value must be a probability")
        if self.mc_se < 0 or (self.estimator != "monte_carlo" and self.mc_se != 0):
            raise DomainError("mc_se must be zero for deterministic estimators")


@dataclass(frozen=True)
class RiskPoint:
    theta_C: float
    theta_T: float
    c0: float
    c1: float
    risk: float


@dataclass(frozen=True)
class PowerGap:
    sign: str  # sign of (calibrated power - Bayes power): "positive", "zero", "negative"
    probit_gap: float
    power_gap: float


@dataclass(frozen=True)
class Recalibration:
    rule: DecisionRule
    design: NormalDesign
    knob: str
    value: float | None
    max_tie: float
    attainable: bool
    message: str = ""


@dataclass(frozen=True)
class NullMap:
    conflict: np.ndarray
    effect: np.ndarray
    prob_null: np.ndarray  # shape (len(effect), len(conflict))
    boundaries: dict[str, np.ndarray] = field(default_factory=dict)


# ---------------------------------------------------------------------------
# power

def power_bd_closed(design: NormalDesign, prior_pair: GeneralTwoArmPrior | NormalPrior, theta_C, theta_T):
    """Closed-form rejection probability of the Bayes decision."""
    if isinstance(prior_pair, NormalPrior):
        prior_pair = GeneralTwoArmPrior(prior_pair)
    a_c, a_t = prior_pair.a_ratios(design)
    s2c = design.sigma**2 / design.n_C
    s2t = design.sigma**2 / design.n_T
    post_sd = math.sqrt(s2t / (1 + a_t) + s2c / (1 + a_c))
    denom = math.sqrt(s2t / (1 + a_t) ** 2 + s2c / (1 + a_c) ** 2)
    num = (design.delta0
           + np.asarray(theta_C, dtype=float) / (1 + a_c)
           - np.asarray(theta_T, dtype=float) / (1 + a_t)
           - (prior_pair.treatment.mu_C * a_t / (1 + a_t) if a_t else 0.0)
           + (prior_pair.control.mu_C * a_c / (1 + a_c) if a_c else 0.0)
           + level_to_z(design.gamma) * post_sd)
    out = special.ndtr(-num / denom)
    return float(out) if np.ndim(out) == 0 else out


def power_fd_closed(design: NormalDesign, theta_C, theta_T):
    """Rejection probability of the two-sample z-test at level ``design.kappa``."""
    shift = (np.asarray(theta_T, dtype=float) - np.asarray(theta_C, dtype=float) - design.delta0) / design.se_diff
    out = special.ndtr(shift - level_to_z(design.kappa))
    return float(out) if np.ndim(out) == 0 else out


def _conditional_reject(design, prior, rule, theta_T, ybar_C):
    b = rule.boundary(design, prior, ybar_C)
    with np.errstate(invalid="ignore"):
        arg = (theta_T - b) / design.se_T
    return special.ndtr(np.where(np.isnan(arg), -np.inf, arg))


def power_rule_quadrature(design: NormalDesign, prior: NormalPrior, rule: DecisionRule,
                          theta_C: float, theta_T: float, tol: Tolerance = QUAD_TOL) -> float:
    """Rejection probability by conditioning on the control mean.

    Integrates P(reject | ybar_C) * N(ybar_C; theta_C, sigma/sqrt(n_C)) over
    theta_C +/- 8 sampling SDs in standardised units.
    """
    se = design.se_C

    def f(u):
        yc = theta_C + u * se
        dens = np.exp(-0.5 * u * u) / math.sqrt(2 * math.pi)
        return dens * _conditional_reject(design, prior, rule, theta_T, yc)

    pts = [(x - theta_C) / se for x in rule.breakpoints(design, prior)]
    val = integrate(f, -TRUNCATE_SD, TRUNCATE_SD, tol, points=pts, initial_panels=4)
    return min(max(val, 0.0), 1.0)


def power_rule_mc(design: NormalDesign, prior: NormalPrior, rule: DecisionRule,
                  theta_C: float, theta_T: float, reps: int, stream: RngStream) -> OCPoint:
    if reps < 1:
        raise DomainError("reps must be at least 1")
    gen = stream.generator()
    yc = gen.normal(theta_C, design.se_C, size=reps)
    yt = gen.normal(theta_T, design.se_T, size=reps)
    p = float(np.mean(rule.decide(design, prior, yc, yt)))
    return OCPoint(theta_C, theta_T - theta_C, p, "monte_carlo",
                   math.sqrt(p * (1 - p) / reps), reps, stream)


def tie_curve(design: NormalDesign, prior: NormalPrior, rule: DecisionRule, thetas) -> np.ndarray:
    """Quadrature type I error at each theta_C (theta_T = theta_C + delta0)."""
    return np.array([power_rule_quadrature(design, prior, rule, t, t + design.delta0) for t in thetas])


def _grid(prior: NormalPrior, conflict_range, grid: int) -> np.ndarray:
    lo, hi = conflict_range
    return prior.mu_C + np.linspace(lo, hi, grid)


def max_tie(design, prior, rule, conflict_range=(-2.0, 2.0), grid: int = 81) -> float:
    return float(tie_curve(design, prior, rule, _grid(prior, conflict_range, grid)).max())


def tie_range(design, prior, rule, conflict_range=(-2.0, 2.0), grid: int = 81) -> tuple[float, float]:
    curve = tie_curve(design, prior, rule, _grid(prior, conflict_range, grid))
    return float(curve.min()), float(curve.max())


# ---------------------------------------------------------------------------
# recalibration

def _knob_of(rule: DecisionRule) -> str:
    if isinstance(rule, FD):
        return "kappa"
    if isinstance(rule, (CDC, CDD)):
        return "alpha_up"
    if isinstance(rule, (BD, RMDUnit, EBPowD, PowerPrior)):
        return "gamma"
    raise ValueError(f"no recalibration knob for rule {rule.name}")


def _apply_knob(rule, design, knob, value):
    if knob == "kappa":
        return rule, dataclasses.replace(design, kappa=value)
    if knob == "gamma":
        return rule, dataclasses.replace(design, gamma=value)
    cfg = dataclasses.replace(rule.cfg, alpha_up=value)
    return dataclasses.replace(rule, cfg=cfg), design


def _knob_bounds(rule, knob):
    if knob == "kappa":
        return 1e-6, 0.5
    if knob == "gamma":
        return GAMMA_FLOOR, 0.5
    return rule.cfg.alpha_low + 1e-6, 1.0 - 1e-9


def recalibrate_max_tie(design: NormalDesign, prior: NormalPrior, rule: DecisionRule,
                        target: float, conflict_range=(-2.0, 2.0), grid: int = 81,
                        bounds: tuple[float, float] | None = None) -> Recalibration:
    """Tune the rule's knob so that its maximum type I error over the
    conflict grid equals ``target``.

    Knobs: ``kappa`` for FD, the Bayes threshold ``gamma`` for BD, RMD-Unit,
    EBPowD and fixed power priors, and ``alpha_up`` for the compromise rules.
    The Bayes threshold is searched on ``[GAMMA_FLOOR, 0.5]``; a target below
    the maximum type I error at the floor is reported as unattainable and the
    returned rule never rejects.
    """
    if grid < 2:
        raise DomainError("grid needs at least two points")
    knob = _knob_of(rule)
    lo, hi = bounds or _knob_bounds(rule, knob)

    def excess(log_v):
        r, d = _apply_knob(rule, design, knob, math.exp(log_v))
        return max_tie(d, prior, r, conflict_range, grid) - target

    f_lo = excess(math.log(lo))
    if f_lo > 0:
        return Recalibration(NeverReject(), design, knob, None, 0.0, False,
                             f"max type I error {f_lo + target:.4g} at {knob}={lo:g} already exceeds "
                             f"the target; only a rule that never rejects meets it")
    f_hi = excess(math.log(hi))
    if f_hi < 0:
        r, d = _apply_knob(rule, design, knob, hi)
        return Recalibration(r, d, knob, hi, f_hi + target, False,
                             f"target above the maximum type I error reachable at {knob}={hi:g}")
    # Brent on log(knob); max TIE is smooth and increasing in each knob.
    log_v = optimize.brentq(excess, math.log(lo), math.log(hi), xtol=1e-9, rtol=1e-12)
    value = math.exp(log_v)
    r, d = _apply_knob(rule, design, knob, value)
    return Recalibration(r, d, knob, value, max_tie(d, prior, r, conflict_range, grid), True)


# ---------------------------------------------------------------------------
# averaged error rates

def average_oc(design: NormalDesign, prior_analysis: NormalPrior, rule: DecisionRule,
               sampling_prior: NormalPrior, delta: float,
               tol: Tolerance = Tolerance(abs_tol=1e-8, max_iter=40)) -> float:
    """Rejection probability averaged over theta_C ~ ``sampling_prior``
    with theta_T = theta_C + delta."""
    if sampling_prior.is_flat:
        raise DomainError("average operating characteristics need a proper sampling prior")
    mu, sd = sampling_prior.mu_C, sampling_prior.sigma_C

    def f(u):
        out = np.empty_like(u)
        for i, ui in enumerate(u):
            th = mu + ui * sd
            out[i] = power_rule_quadrature(design, prior_analysis, rule, th, th + delta)
        return out * np.exp(-0.5 * u * u) / math.sqrt(2 * math.pi)

    val = integrate(f, -TRUNCATE_SD, TRUNCATE_SD, tol, initial_panels=2)
    return min(max(val, 0.0), 1.0)


# ---------------------------------------------------------------------------
# decision theory

def frequentist_risk(design, prior, rule, theta_C: float, theta_T: float, c0: float, c1: float) -> RiskPoint:
    if c0 < 0 or c1 < 0:
        raise DomainError("costs must be nonnegative")
    beta = power_rule_quadrature(design, prior, rule, theta_C, theta_T)
    if theta_T - theta_C <= design.delta0:
        risk = c1 * beta
    else:
        risk = c0 * (1 - beta)
    return RiskPoint(theta_C, theta_T, c0, c1, risk)


def posterior_expected_loss(prior: NormalPrior, design: NormalDesign, data: TwoArmNormalData,
                            decision: bool, c0: float, c1: float) -> float:
    p_null, _ = normal.bd_decision(design, prior, data)
    return c1 * p_null if decision else c0 * (1 - p_null)


def calibrated_power_gap_sign(design: NormalDesign, prior_pair: GeneralTwoArmPrior,
                              theta_C: float, theta_T: float) -> PowerGap:
    """Compare Bayes power with the z-test calibrated to the Bayes type I
    error at the same theta_C.

    ``probit_gap`` is Phi^-1(1 - calibrated) - Phi^-1(1 - Bayes) from the
    closed form; ``sign`` follows from comparing n_T sigma_T^2 with
    n_C sigma_C^2.
    """
    if prior_pair.treatment.is_flat or prior_pair.control.is_flat:
        raise DomainError("needs proper priors on both arms")
    if design.delta0 != 0:
        raise DomainError("the sign rule assumes delta0 = 0")
    if not theta_T > theta_C:
        raise DomainError("the sign rule assumes theta_T > theta_C")
    a_c, a_t = prior_pair.a_ratios(design)
    s2c = design.sigma**2 / design.n_C
    s2t = design.sigma**2 / design.n_T
    probit_gap = (theta_T - theta_C) * (
        1 / math.sqrt(s2t + s2c * (1 + a_t) ** 2 / (1 + a_c) ** 2) - 1 / math.sqrt(s2t + s2c))
    alpha_pi = power_bd_closed(design, prior_pair, theta_C, theta_C)
    beta_pi = power_bd_closed(design, prior_pair, theta_C, theta_T)
    beta_cal = float(special.ndtr(-((theta_C - theta_T) / design.se_diff + level_to_z(alpha_pi))))
    lhs = design.n_T * prior_pair.treatment.sigma_C**2
    rhs = design.n_C * prior_pair.control.sigma_C**2
    if math.isclose(lhs, rhs, rel_tol=1e-12):
        sign = "zero"
    elif lhs < rhs:
        sign = "positive"
    else:
        sign = "negative"
    return PowerGap(sign, probit_gap, beta_cal - beta_pi)


def regression_equivalence_check(design: NormalDesign, prior_pair: GeneralTwoArmPrior,
                                 data: TwoArmNormalData, independent_delta_prior: bool = False) -> float:
    """Max abs difference between the marginal posterior of delta from
    per-arm conjugate updates and from the (theta_C, delta) regression form."""
    s2 = design.sigma**2
    n_c, n_t = design.n_C, design.n_T
    a_c, a_t = prior_pair.a_ratios(design)
    mu_c, mu_t = prior_pair.control.mu_C, prior_pair.treatment.mu_C

    mean_c = (mu_c * a_c + data.ybar_C) / (1 + a_c)
    mean_t = (mu_t * a_t + data.ybar_T) / (1 + a_t)
    mean_arm = mean_t - mean_c
    sd_arm = math.sqrt(s2 / n_t / (1 + a_t) + s2 / n_c / (1 + a_c))

    n0c = prior_pair.control.n0(design.sigma)
    n0t = prior_pair.treatment.n0(design.sigma)
    if independent_delta_prior:
        var_delta = math.inf if n0t == 0 or n0c == 0 else 1 / n0c + 1 / n0t
        lam0 = np.diag([n0c, 0.0 if math.isinf(var_delta) else 1 / var_delta])
    else:
        # theta = M beta with beta = (theta_C, delta); precision M' diag(n0) M.
        lam0 = np.array([[n0c + n0t, n0t], [n0t, n0t]])
    mu0 = np.array([mu_c, mu_t - mu_c])
    xtx = np.array([[n_c + n_t, n_t], [n_t, n_t]], dtype=float)
    xty = np.array([n_c * data.ybar_C + n_t * data.ybar_T, n_t * data.ybar_T])
    lam_post = xtx + lam0
    cov = s2 * np.linalg.inv(lam_post)
    mean = np.linalg.solve(lam_post, xty + lam0 @ mu0)
    return max(abs(mean[1] - mean_arm), abs(math.sqrt(cov[1, 1]) - sd_arm))


def posterior_null_map(design: NormalDesign, prior: NormalPrior, conflict, effect,
                       rules: list[DecisionRule] = ()) -> NullMap:
    """Posterior probability of the null over a (ybar_C - mu_C, ybar_T - ybar_C)
    grid, plus each rule's rejection boundary in the same coordinates."""
    conflict = np.asarray(conflict, dtype=float)
    effect = np.asarray(effect, dtype=float)
    yc = prior.mu_C + conflict[None, :]
    yt = yc + effect[:, None]
    probs = normal.prob_null(design, prior, yc, yt)
    bounds = {}
    for rule in rules:
        ybar = prior.mu_C + conflict
        bounds[rule.name] = rule.boundary(design, prior, ybar) - ybar
    return NullMap(conflict, effect, probs, bounds)
