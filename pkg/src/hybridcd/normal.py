"""Normal-outcome hybrid-control designs.

Control arm mean gets an informative Normal prior, the treatment arm a flat
one. The functions here give the posterior of the treatment effect, the
Bayes (BD) and frequentist (FD) decisions, and the data-dependent
thresholds that translate one into the other:

* ``kappa_bd``: frequentist level that reproduces the Bayes decision;
* ``gamma_fd`` / ``gamma_cd``: Bayes threshold that reproduces a
  frequentist decision at a given level;
* ``cdc_threshold`` / ``cdd_threshold``: the compromise levels, obtained by
  clamping (and, for CDD, geometrically discounting) ``kappa_bd``.

Thresholds are handled on the critical-z scale internally because
``kappa_bd`` can be far into the tails for extreme control means; the
``*_z`` variants expose that scale directly and accept arrays.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy import special

from .numerics import DomainError

__all__ = [
    "CompromiseConfig",
    "DeltaPosterior",
    "NormalDesign",
    "NormalPrior",
    "TwoArmNormalData",
    "bd_decision",
    "cdc_threshold",
    "cdd_threshold",
    "cdd_threshold_z",
    "cdd_weight",
    "conflict_bounds",
    "critical_z_bd",
    "equal_threshold_point",
    "fd_decision",
    "gamma_cd",
    "gamma_fd",
    "kappa_bd",
    "posterior_delta",
    "prob_null",
    "z_to_level",
    "level_to_z",
]


def level_to_z(p):
    """Upper-tail critical value z_{1-p}; +inf at p=0 and -inf at p=1."""
    return -special.ndtri(p)


def z_to_level(z):
    """Inverse of :func:`level_to_z`, 1 - Phi(z)."""
    return special.ndtr(-np.asarray(z, dtype=float))


@dataclass(frozen=True)
class NormalDesign:
    n_C: int
    n_T: int
    sigma: float = 1.0
    delta0: float = 0.0
    gamma: float = 0.025
    kappa: float = 0.025

    def __post_init__(self):
        if self.n_C < 1 or self.n_T < 1:
            raise DomainError("sample sizes must be at least 1")
        if not self.sigma > 0:
            raise DomainError("sigma must be positive")
        for name in ("gamma", "kappa"):
            v = getattr(self, name)
            if not 0 < v < 1:
                raise DomainError(f"{name} must lie in (0, 1)")

    @property
    def se_C(self) -> float:
        return self.sigma / math.sqrt(self.n_C)

    @property
    def se_T(self) -> float:
        return self.sigma / math.sqrt(self.n_T)

    @property
    def se_diff(self) -> float:
        """SD of ybar_T - ybar_C, the z-test denominator."""
        return math.sqrt(self.sigma**2 / self.n_T + self.sigma**2 / self.n_C)


@dataclass(frozen=True)
class NormalPrior:
    """Normal prior N(mu_C, sigma_C) on the control mean; ``sigma_C=inf`` is flat."""

    mu_C: float = 0.0
    sigma_C: float = math.inf

    def __post_init__(self):
        if not self.sigma_C > 0:
            raise DomainError("sigma_C must be positive (use inf for a flat prior)")

    @classmethod
    def from_n0(cls, mu_C: float, n0_C: float, sigma: float = 1.0) -> "NormalPrior":
        """Prior worth ``n0_C`` observations with outcome SD ``sigma``."""
        if n0_C < 0:
            raise DomainError("n0_C must be nonnegative")
        if n0_C == 0:
            return cls(mu_C, math.inf)
        return cls(mu_C, sigma / math.sqrt(n0_C))

    @property
    def is_flat(self) -> bool:
        return math.isinf(self.sigma_C)

    def n0(self, sigma: float) -> float:
        return 0.0 if self.is_flat else (sigma / self.sigma_C) ** 2

    def a_ratio(self, design: NormalDesign) -> float:
        """Data-to-prior variance ratio A_C = sigma^2 / (n_C sigma_C^2)."""
        if self.is_flat:
            return 0.0
        return design.sigma**2 / (design.n_C * self.sigma_C**2)


@dataclass(frozen=True)
class TwoArmNormalData:
    ybar_C: float
    ybar_T: float

    def __post_init__(self):
        if not (math.isfinite(self.ybar_C) and math.isfinite(self.ybar_T)):
            raise DomainError("observed means must be finite")


@dataclass(frozen=True)
class CompromiseConfig:
    alpha_low: float = 0.01
    alpha_up: float = 0.075
    t: float = 4.0
    p: float = 4.0
    freeze_w_below_mean: bool = False

    def __post_init__(self):
        # 0 and 1 are accepted as degenerate bounds (CDC then equals BD).
        if not 0 <= self.alpha_low < self.alpha_up <= 1:
            raise DomainError("need 0 <= alpha_low < alpha_up <= 1")
        if not self.t > 0:
            raise DomainError("t must be positive")
        if self.p < 0:
            raise DomainError("p must be nonnegative")


@dataclass(frozen=True)
class DeltaPosterior:
    mean: float
    sd: float


# ---------------------------------------------------------------------------
# posterior and decisions

def _bayes_sd(design: NormalDesign, a: float) -> float:
    return math.sqrt(design.sigma**2 / design.n_T + design.sigma**2 / design.n_C / (1 + a))


def posterior_delta(design: NormalDesign, prior: NormalPrior, data: TwoArmNormalData) -> DeltaPosterior:
    a = prior.a_ratio(design)
    shrunk = data.ybar_C if a == 0 else (prior.mu_C * a + data.ybar_C) / (1 + a)
    return DeltaPosterior(data.ybar_T - shrunk, _bayes_sd(design, a))


def prob_null(design: NormalDesign, prior: NormalPrior, ybar_C, ybar_T):
    """P(delta <= delta0 | data), vectorised over the observed means."""
    a = prior.a_ratio(design)
    yc = np.asarray(ybar_C, dtype=float)
    shrunk = yc if a == 0 else (prior.mu_C * a + yc) / (1 + a)
    mean = np.asarray(ybar_T, dtype=float) - shrunk
    return special.ndtr((design.delta0 - mean) / _bayes_sd(design, a))


def bd_decision(design: NormalDesign, prior: NormalPrior, data: TwoArmNormalData) -> tuple[float, bool]:
    """Bayes decision: reject when P(delta <= delta0 | y) <= gamma."""
    post = posterior_delta(design, prior, data)
    p = float(special.ndtr((design.delta0 - post.mean) / post.sd))
    return p, p <= design.gamma


def fd_decision(design: NormalDesign, data: TwoArmNormalData, kappa: float | None = None) -> bool:
    """Two-sample z-test at level ``kappa`` (default ``design.kappa``)."""
    kappa = design.kappa if kappa is None else kappa
    z = (data.ybar_T - data.ybar_C - design.delta0) / design.se_diff
    return bool(z > level_to_z(kappa))


# ---------------------------------------------------------------------------
# thresholds

def critical_z_bd(design: NormalDesign, prior: NormalPrior, ybar_C, gamma: float | None = None):
    """Critical z-statistic of the frequentist test that reproduces the BD."""
    gamma = design.gamma if gamma is None else gamma
    a = prior.a_ratio(design)
    yc = np.asarray(ybar_C, dtype=float)
    shift = 0.0 if a == 0 else (prior.mu_C - yc) * (a / (1 + a))
    return (shift + level_to_z(gamma) * _bayes_sd(design, a)) / design.se_diff


def kappa_bd(design: NormalDesign, prior: NormalPrior, ybar_C, gamma: float | None = None):
    out = z_to_level(critical_z_bd(design, prior, ybar_C, gamma))
    return float(out) if np.ndim(out) == 0 else out


def _gamma_from_z(design: NormalDesign, prior: NormalPrior, ybar_C, z_freq):
    a = prior.a_ratio(design)
    yc = np.asarray(ybar_C, dtype=float)
    shift = 0.0 if a == 0 else (yc - prior.mu_C) * (a / (1 + a))
    zb = (np.asarray(z_freq, dtype=float) * design.se_diff + shift) / _bayes_sd(design, a)
    return z_to_level(zb)


def gamma_fd(design: NormalDesign, prior: NormalPrior, ybar_C, kappa: float | None = None):
    """Bayes threshold under which the Bayes test gives the FD at level ``kappa``."""
    kappa = design.kappa if kappa is None else kappa
    out = _gamma_from_z(design, prior, ybar_C, level_to_z(kappa))
    return float(out) if np.ndim(out) == 0 else out


def gamma_cd(design: NormalDesign, prior: NormalPrior, ybar_C, kappa_cd):
    """Bayes threshold reproducing the frequentist test at a data-dependent level."""
    out = _gamma_from_z(design, prior, ybar_C, level_to_z(np.asarray(kappa_cd, dtype=float)))
    return float(out) if np.ndim(out) == 0 else out


def cdc_threshold(kappa_bd_value, cfg: CompromiseConfig):
    out = np.maximum(np.minimum(kappa_bd_value, cfg.alpha_up), cfg.alpha_low)
    return float(out) if np.ndim(out) == 0 else out


def conflict_bounds(design: NormalDesign, prior: NormalPrior, cfg: CompromiseConfig) -> tuple[float, float]:
    """Control means at which ``kappa_bd`` leaves ``[alpha_low, alpha_up]``.

    Returns ``(ybar_low, ybar_up)``; a bound at 0 or 1 maps to -inf / +inf.
    """
    a = prior.a_ratio(design)
    if a == 0:
        raise DomainError("conflict bounds are undefined for a flat control prior")
    zg = level_to_z(design.gamma) * _bayes_sd(design, a)
    scale = (1 + a) / a

    def bound(level):
        return float(prior.mu_C - (level_to_z(level) * design.se_diff - zg) * scale)

    return bound(cfg.alpha_low), bound(cfg.alpha_up)


def equal_threshold_point(design: NormalDesign, prior: NormalPrior) -> float:
    """Control mean at which ``kappa_bd`` equals ``gamma``."""
    a = prior.a_ratio(design)
    if a == 0:
        raise DomainError("undefined for a flat control prior")
    zg = float(level_to_z(design.gamma))
    return prior.mu_C - zg * (design.se_diff - _bayes_sd(design, a)) * (1 + a) / a


def _discard_scale(design: NormalDesign, prior: NormalPrior) -> float:
    var_c = 0.0 if prior.is_flat else prior.sigma_C**2
    return math.sqrt(design.sigma**2 / design.n_C + var_c)


def cdd_weight(design: NormalDesign, prior: NormalPrior, ybar_C, cfg: CompromiseConfig):
    """Discard weight w in [0, 1]; 0 keeps the BD threshold, 1 reverts to kappa."""
    yc = np.asarray(ybar_C, dtype=float)
    if prior.is_flat:
        w = np.ones_like(yc)
    else:
        ratio = np.abs(yc - prior.mu_C) / (cfg.t * _discard_scale(design, prior))
        w = np.minimum(ratio**cfg.p, 1.0)
        if cfg.freeze_w_below_mean:
            zbd = critical_z_bd(design, prior, yc)
            frozen = (yc <= prior.mu_C) & (zbd <= level_to_z(design.kappa))
            w = np.where(frozen, 0.0, w)
    return float(w) if w.ndim == 0 else w


def cdd_threshold_z(design: NormalDesign, prior: NormalPrior, ybar_C, cfg: CompromiseConfig):
    """Critical z of the CDD rule.

    The interpolation kappa^w * kappa_bd^(1-w) is done on log levels, which
    keeps it exact when ``kappa_bd`` underflows.
    """
    zbd = critical_z_bd(design, prior, ybar_C)
    w = cdd_weight(design, prior, ybar_C, cfg)
    log_k = w * math.log(design.kappa) + (1 - w) * special.log_ndtr(-zbd)
    z = -special.ndtri_exp(log_k)
    z_hi = level_to_z(cfg.alpha_low)
    z_lo = level_to_z(cfg.alpha_up)
    return np.clip(z, z_lo, z_hi)


def cdd_threshold(design: NormalDesign, prior: NormalPrior, ybar_C, cfg: CompromiseConfig):
    out = z_to_level(cdd_threshold_z(design, prior, ybar_C, cfg))
    return float(out) if np.ndim(out) == 0 else out
