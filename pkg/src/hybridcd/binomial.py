"""Exact beta-binomial machinery for hybrid-control trials with binary outcomes.

Both arms get Beta priors. The reference analysis uses Jeffreys priors on
both arms and no external data, which approximates the unconditional
two-proportion test; the borrowing analysis adds ``y0_C`` external
successes out of ``n0_C`` to the control prior. Every rule is expressed as
a data-dependent level ``kappa^rule(y_C, y_T)`` against which the reference
posterior probability of the null is compared, mirroring the Normal case.

Posterior probabilities of the null come from three routes:

* ``prob_null_exact``: one-dimensional quadrature of the treatment CDF
  against the control density;
* ``prob_null_recursion``: the reference value plus finite sums of
  Gamma-function ratios over the external counts;
* the increment identity in ``l_term``, used to fill whole outcome tables
  one control count at a time.
"""

from __future__ import annotations

import functools
import math
from dataclasses import dataclass

import numpy as np
from scipy import special, stats

from .normal import CompromiseConfig
from .numerics import DomainError, Tolerance, integrate, log_gamma
from .rules import BD, CDC, CDD, FD, DecisionRule, NeverReject, RMDUnit

__all__ = [
    "BetaMixture",
    "BetaPrior",
    "BinomialData",
    "BinomialDesign",
    "binomial_cd_threshold",
    "binomial_decision",
    "cdd_weight_binomial",
    "decision_table",
    "enumerate_oc",
    "g_term",
    "kappa_bd_binomial",
    "kappa_table",
    "l_term",
    "prob_null_exact",
    "prob_null_recursion",
    "prob_null_table",
    "prob_null_unconditional_approx",
    "rm_prob_null_binomial",
]

EXACT_TOL = Tolerance(abs_tol=1e-11, max_iter=60)


@dataclass(frozen=True)
class BetaPrior:
    a: float
    b: float
    improper: bool = False

    def __post_init__(self):
        if self.a < 0 or self.b < 0:
            raise DomainError("Beta parameters must be nonnegative")
        if not self.improper and (self.a == 0 or self.b == 0):
            raise DomainError("zero Beta parameter needs improper=True")

    @property
    def mean(self) -> float:
        return self.a / (self.a + self.b)

    def update(self, y: int, n: int) -> "BetaPrior":
        return BetaPrior(self.a + y, self.b + n - y, self.improper and (self.a + y == 0 or self.b + n - y == 0))


JEFFREYS = BetaPrior(0.5, 0.5)


@dataclass(frozen=True)
class BinomialDesign:
    """Two-arm binomial design.

    ``prior_C`` and ``prior_T`` are the reference priors (Jeffreys by
    default); the analysis prior for the control arm is ``prior_C`` updated
    with the external counts. ``robust`` is the dispersed component used by
    the robust-mixture rule. ``literal_scale`` switches the CDD conflict
    scale to the nested-root form.
    """

    n_C: int
    n_T: int
    y0_C: int = 0
    n0_C: int = 0
    prior_C: BetaPrior = JEFFREYS
    prior_T: BetaPrior = JEFFREYS
    gamma: float = 0.025
    kappa: float = 0.025
    robust: BetaPrior = BetaPrior(1.0, 1.0)
    literal_scale: bool = False

    def __post_init__(self):
        if self.n_C < 1 or self.n_T < 1:
            raise DomainError("sample sizes must be at least 1")
        if not 0 <= self.y0_C <= self.n0_C:
            raise DomainError("need 0 <= y0_C <= n0_C")
        for name in ("gamma", "kappa"):
            if not 0 < getattr(self, name) < 1:
                raise DomainError(f"{name} must lie in (0, 1)")

    @property
    def analysis_prior(self) -> BetaPrior:
        return self.prior_C.update(self.y0_C, self.n0_C)

    @property
    def mu_C(self) -> float:
        """Prior proportion of successes in the control arm."""
        return self.y0_C / self.n0_C if self.n0_C else self.prior_C.mean


@dataclass(frozen=True)
class BinomialData:
    y_C: int
    y_T: int

    def check(self, design: BinomialDesign) -> None:
        if not (0 <= self.y_C <= design.n_C and 0 <= self.y_T <= design.n_T):
            raise DomainError("counts must lie in [0, n]")


@dataclass(frozen=True)
class BetaMixture:
    weight: float
    informative: BetaPrior
    robust: BetaPrior

    def __post_init__(self):
        if not 0 <= self.weight <= 1:
            raise DomainError("mixture weight must lie in [0, 1]")


# ---------------------------------------------------------------------------
# posterior probability of the null

def prob_null_exact(post_C: BetaPrior, post_T: BetaPrior, tol: Tolerance = EXACT_TOL) -> float:
    """P(theta_T <= theta_C) for independent Beta variables.

    Integrates F_T(x) f_C(x) dx after substituting x = sin^2(pi s / 2), which
    removes the endpoint singularities of densities with parameters >= 1/2.
    """
    for p in (post_C, post_T):
        if not (p.a > 0 and p.b > 0):
            raise DomainError("posterior Beta parameters must be positive")
    a, b = post_C.a, post_C.b
    log_norm = math.log(math.pi) - special.betaln(a, b)

    def f(s):
        h = 0.5 * math.pi * s
        sn, cs = np.sin(h), np.cos(h)
        with np.errstate(divide="ignore", invalid="ignore"):
            dens = np.exp(log_norm + (2 * a - 1) * np.log(sn) + (2 * b - 1) * np.log(cs))
        dens = np.nan_to_num(dens, nan=0.0, posinf=0.0)
        return dens * special.betainc(post_T.a, post_T.b, sn * sn)

    # Start with panels around the control mode so narrow posteriors are seen.
    m = min(max(a / (a + b), 1e-12), 1 - 1e-12)
    sd = math.sqrt(a * b / ((a + b) ** 2 * (a + b + 1)))
    pts = [2 / math.pi * math.asin(math.sqrt(min(max(m + k * sd, 0.0), 1.0))) for k in (-6, -3, 0, 3, 6)]
    val = integrate(f, 0.0, 1.0, tol, points=pts, initial_panels=4)
    return min(max(val, 0.0), 1.0)


def _log_g(a, b, c, d):
    return (special.gammaln(a + b) + special.gammaln(c + d) + special.gammaln(a + c) + special.gammaln(b + d)
            - special.gammaln(a) - special.gammaln(b) - special.gammaln(c) - special.gammaln(d)
            - special.gammaln(a + b + c + d))


def g_term(a, b, c, d) -> float:
    """Gamma(a+b)Gamma(c+d)Gamma(a+c)Gamma(b+d) / (Gamma(a)Gamma(b)Gamma(c)Gamma(d)Gamma(a+b+c+d))."""
    if min(a, b, c, d) <= 0:
        raise DomainError("g_term arguments must be positive")
    return math.exp(_log_g(a, b, c, d))


def _log_l(c, d, a, b):
    return (special.gammaln(a + b) + special.gammaln(c + d) + special.gammaln(a + c) + special.gammaln(b + d - 1)
            - special.gammaln(a) - special.gammaln(b) - special.gammaln(c + 1) - special.gammaln(d)
            - special.gammaln(a + b + c + d - 1))


def l_term(c, d, a, b) -> float:
    """Increase in P(theta_T <= theta_C) when one control failure becomes a success.

    ``(c, d)`` are the control posterior parameters before the change and
    ``(a, b)`` the treatment ones.
    """
    if min(a, b, c, d) <= 0 or b + d - 1 <= 0:
        raise DomainError("l_term needs positive arguments and b + d > 1")
    return math.exp(_log_l(c, d, a, b))


def _neumaier(terms) -> float:
    s = 0.0
    comp = 0.0
    for t in terms:
        u = s + t
        if abs(s) >= abs(t):
            comp += (s - u) + t
        else:
            comp += (t - u) + s
        s = u
    return s + comp


def _reference_posteriors(design: BinomialDesign, data: BinomialData):
    return design.prior_C.update(data.y_C, design.n_C), design.prior_T.update(data.y_T, design.n_T)


def prob_null_reference(design: BinomialDesign, data: BinomialData) -> float:
    """Posterior probability of the null under the reference priors."""
    data.check(design)
    post_C, post_T = _reference_posteriors(design, data)
    return prob_null_exact(post_C, post_T)


def _external_correction(design: BinomialDesign, data: BinomialData) -> float:
    post_C, post_T = _reference_posteriors(design, data)
    a_c, b_c = post_C.a, post_C.b
    a_t, b_t = post_T.a, post_T.b
    up = [math.exp(_log_g(a_c + i, b_c, a_t, b_t) - math.log(a_c + i)) for i in range(design.y0_C)]
    a_ext = a_c + design.y0_C
    down = [-math.exp(_log_g(a_ext, b_c + i, a_t, b_t) - math.log(b_c + i))
            for i in range(design.n0_C - design.y0_C)]
    return _neumaier(up + down)


def prob_null_recursion(design: BinomialDesign, data: BinomialData) -> float:
    """Posterior probability of the null under the analysis prior, from the
    reference value plus the external-count sums."""
    data.check(design)
    return prob_null_reference(design, data) + _external_correction(design, data)


def prob_null_unconditional_approx(data: BinomialData, n_C: int, n_T: int) -> float:
    """Normal approximation that links the Jeffreys-prior posterior
    probability to the unconditional two-proportion test."""
    y_C, y_T = data.y_C, data.y_T
    if not (0 <= y_C <= n_C and 0 <= y_T <= n_T):
        raise DomainError("counts must lie in [0, n]")
    pooled = y_C + y_T
    total = n_C + n_T
    if pooled == 0 or pooled == total:
        raise DomainError("pooled proportion must be interior")
    arg = (y_C * (n_T - y_T) - y_T * (n_C - y_C)) * math.sqrt(total / (n_C * n_T * pooled * (total - pooled)))
    return float(special.ndtr(arg))


# ---------------------------------------------------------------------------
# thresholds

def kappa_bd_binomial(design: BinomialDesign, data: BinomialData) -> float:
    """Level at which the reference test reproduces the Bayes decision.

    gamma - C(y_C, y_T), with C the shift in posterior probability of the
    null caused by the external data. May leave [0, 1].
    """
    return design.gamma - _external_correction(design, data)


def cdd_weight_binomial(design: BinomialDesign, y_C, cfg: CompromiseConfig):
    yc = np.asarray(y_C, dtype=float)
    if design.n0_C == 0:
        return np.ones_like(yc) if yc.ndim else 1.0
    rho = (yc + design.y0_C) / (design.n_C + design.n0_C)
    spread = 1 / design.n_C + 1 / design.n0_C
    var = rho * (1 - rho) * (math.sqrt(spread) if design.literal_scale else spread)
    with np.errstate(divide="ignore", invalid="ignore"):
        ratio = np.abs(yc / design.n_C - design.mu_C) / (cfg.t * np.sqrt(var))
        w = np.where(var > 0, np.minimum(ratio**cfg.p, 1.0), 1.0)
    return float(w) if w.ndim == 0 else w


def _cd_from_bd(kbd, w, kappa, cfg: CompromiseConfig, discard: bool):
    kbd = np.asarray(kbd, dtype=float)
    if discard:
        w = np.broadcast_to(np.asarray(w, dtype=float), kbd.shape)
        with np.errstate(divide="ignore", invalid="ignore"):
            interp = np.exp(w * math.log(kappa) + (1 - w) * np.log(kbd))
        # kappa_bd <= 0: continuous extension of kappa^w * kappa_bd^(1-w).
        kbd = np.where(kbd > 0, interp, np.where(w >= 1, kappa, 0.0))
    return np.clip(kbd, cfg.alpha_low, cfg.alpha_up)


def binomial_cd_threshold(design: BinomialDesign, data: BinomialData, cfg: CompromiseConfig,
                          rule: str = "CDC") -> float:
    """Compromise level at one outcome; ``rule`` is ``"CDC"`` or ``"CDD"``."""
    key = rule.upper()
    if key not in ("CDC", "CDD"):
        raise ValueError("rule must be CDC or CDD")
    kbd = kappa_bd_binomial(design, data)
    w = cdd_weight_binomial(design, data.y_C, cfg) if key == "CDD" else 0.0
    return float(_cd_from_bd(kbd, w, design.kappa, cfg, key == "CDD"))


def rm_prob_null_binomial(design: BinomialDesign, mixture: BetaMixture, data: BinomialData) -> float:
    """Posterior probability of the null under a two-component Beta mixture
    on the control rate."""
    data.check(design)
    post_T = design.prior_T.update(data.y_T, design.n_T)
    comps = (mixture.informative, mixture.robust)
    logw = np.array([
        math.log(w) + special.betaln(c.a + data.y_C, c.b + design.n_C - data.y_C) - special.betaln(c.a, c.b)
        if w > 0 else -np.inf
        for w, c in zip((mixture.weight, 1 - mixture.weight), comps)])
    w = np.exp(logw - special.logsumexp(logw))
    probs = [prob_null_exact(c.update(data.y_C, design.n_C), post_T) for c in comps]
    return float(w @ probs)


def _mixture(design: BinomialDesign, rule: RMDUnit) -> BetaMixture:
    return BetaMixture(rule.weight, design.analysis_prior, design.robust)


def _kappa_rule(design: BinomialDesign, data: BinomialData, rule: DecisionRule) -> float:
    if isinstance(rule, FD):
        return design.kappa
    if isinstance(rule, NeverReject):
        return -math.inf
    if isinstance(rule, BD):
        return kappa_bd_binomial(design, data)
    if isinstance(rule, (CDC, CDD)):
        return binomial_cd_threshold(design, data, rule.cfg, rule.name)
    if isinstance(rule, RMDUnit):
        p_ref = prob_null_reference(design, data)
        return design.gamma - (rm_prob_null_binomial(design, _mixture(design, rule), data) - p_ref)
    raise ValueError(f"rule {rule.name} is not available for binomial outcomes")


def binomial_decision(design: BinomialDesign, data: BinomialData, rule: DecisionRule) -> bool:
    """Reject iff the reference posterior probability of the null is at most
    the rule's level at this outcome."""
    data.check(design)
    return prob_null_reference(design, data) <= _kappa_rule(design, data, rule)


# ---------------------------------------------------------------------------
# outcome tables and enumeration

def prob_null_table(n_C: int, n_T: int, prior_C: BetaPrior, prior_T: BetaPrior) -> np.ndarray:
    """P(theta_T <= theta_C | y_C, y_T) for every outcome, shape (n_C+1, n_T+1).

    The y_C = 0 row is computed by quadrature; each later row adds the
    increment from :func:`l_term`, vectorised over y_T.
    """
    y_T = np.arange(n_T + 1)
    a_t = prior_T.a + y_T
    b_t = prior_T.b + n_T - y_T
    out = np.empty((n_C + 1, n_T + 1))
    c0 = prior_C.update(0, n_C)
    out[0] = [prob_null_exact(c0, BetaPrior(a, b)) for a, b in zip(a_t, b_t)]
    for y in range(n_C):
        c = prior_C.a + y
        d = prior_C.b + n_C - y
        out[y + 1] = out[y] + np.exp(_log_l(c, d, a_t, b_t))
    return np.clip(out, 0.0, 1.0)


@functools.lru_cache(maxsize=64)
def _cached_prob_table(n_C, n_T, prior_C, prior_T):
    table = prob_null_table(n_C, n_T, prior_C, prior_T)
    table.setflags(write=False)
    return table


def _mixture_weights(design: BinomialDesign, mixture: BetaMixture) -> np.ndarray:
    y = np.arange(design.n_C + 1)
    comps = (mixture.informative, mixture.robust)
    with np.errstate(divide="ignore"):
        logw = np.array([
            np.log(w) + special.betaln(c.a + y, c.b + design.n_C - y) - special.betaln(c.a, c.b)
            for w, c in zip((mixture.weight, 1 - mixture.weight), comps)])
    return np.exp(logw - special.logsumexp(logw, axis=0, keepdims=True))


def kappa_table(design: BinomialDesign, rule: DecisionRule) -> np.ndarray:
    """Rule level kappa^rule(y_C, y_T) over all outcomes."""
    shape = (design.n_C + 1, design.n_T + 1)
    if isinstance(rule, FD):
        return np.full(shape, design.kappa)
    if isinstance(rule, NeverReject):
        return np.full(shape, -np.inf)
    p_ref = _cached_prob_table(design.n_C, design.n_T, design.prior_C, design.prior_T)
    if isinstance(rule, RMDUnit):
        mix = _mixture(design, rule)
        w = _mixture_weights(design, mix)
        p_inf = _cached_prob_table(design.n_C, design.n_T, mix.informative, design.prior_T)
        p_rob = _cached_prob_table(design.n_C, design.n_T, mix.robust, design.prior_T)
        return design.gamma - (w[0][:, None] * p_inf + w[1][:, None] * p_rob - p_ref)
    p_ana = _cached_prob_table(design.n_C, design.n_T, design.analysis_prior, design.prior_T)
    kbd = design.gamma - (p_ana - p_ref)
    if isinstance(rule, BD):
        return kbd
    if isinstance(rule, (CDC, CDD)):
        discard = isinstance(rule, CDD)
        w = cdd_weight_binomial(design, np.arange(design.n_C + 1), rule.cfg)[:, None] if discard else 0.0
        return _cd_from_bd(kbd, w, design.kappa, rule.cfg, discard)
    raise ValueError(f"rule {rule.name} is not available for binomial outcomes")


def decision_table(design: BinomialDesign, rule: DecisionRule) -> np.ndarray:
    """Boolean rejection table over all (y_C, y_T)."""
    p_ref = _cached_prob_table(design.n_C, design.n_T, design.prior_C, design.prior_T)
    return p_ref <= kappa_table(design, rule)


def enumerate_oc(design: BinomialDesign, rule, theta_C: float, delta: float) -> float:
    """Exact rejection probability at (theta_C, theta_C + delta).

    ``rule`` is a :class:`DecisionRule` or a precomputed boolean decision
    table of shape (n_C+1, n_T+1).
    """
    theta_T = theta_C + delta
    if not (0 <= theta_C <= 1 and 0 <= theta_T <= 1):
        raise DomainError("success probabilities must lie in [0, 1]")
    table = rule if isinstance(rule, np.ndarray) else decision_table(design, rule)
    if table.shape != (design.n_C + 1, design.n_T + 1):
        raise DomainError("decision table has the wrong shape")
    pmf_C = stats.binom.pmf(np.arange(design.n_C + 1), design.n_C, theta_C)
    pmf_T = stats.binom.pmf(np.arange(design.n_T + 1), design.n_T, theta_T)
    val = float(pmf_C @ table.astype(float) @ pmf_T)
    return min(max(val, 0.0), 1.0)
