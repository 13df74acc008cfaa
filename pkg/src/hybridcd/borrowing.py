"""Competing dynamic-borrowing rules as data-dependent frequentist levels.

Three alternatives to the compromise thresholds, each reduced to a critical
z-value for the two-sample z-test at every observed control mean:

* fixed power prior with discount ``zeta``;
* empirical-Bayes power prior, ``zeta`` chosen by maximising the marginal
  likelihood of the control mean;
* robust mixture of the informative prior and a unit-information
  component (RM-Unit), whose critical value has no closed form and is found
  by root finding.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy import special

from .normal import NormalDesign, NormalPrior, level_to_z, z_to_level
from .numerics import ConvergenceError, DomainError, Tolerance, find_root

__all__ = [
    "InvariantViolation",
    "MixturePosterior",
    "MixturePrior",
    "PowerPriorSpec",
    "eb_zeta",
    "ebpow_critical_z",
    "ebpow_threshold",
    "pp_critical_z",
    "pp_threshold",
    "rm_critical_value",
    "rm_critical_z",
    "rm_posterior",
    "rm_prob_null",
    "rm_threshold",
]

RM_Z_TOL = 1e-10


class InvariantViolation(RuntimeError):
    """A structural assumption (e.g. monotonicity in ybar_T) failed."""


@dataclass(frozen=True)
class PowerPriorSpec:
    base: NormalPrior
    zeta: float

    def __post_init__(self):
        if not 0 <= self.zeta <= 1:
            raise DomainError("zeta must lie in [0, 1]")


@dataclass(frozen=True)
class MixturePrior:
    """w * informative + (1 - w) * robust, both Normal."""

    weight: float
    informative: NormalPrior
    robust: NormalPrior

    def __post_init__(self):
        if not 0 <= self.weight <= 1:
            raise DomainError("mixture weight must lie in [0, 1]")
        if self.informative.is_flat or self.robust.is_flat:
            raise DomainError("mixture components must be proper")
        if self.robust.sigma_C < self.informative.sigma_C:
            raise DomainError("robust component must be at least as dispersed as the informative one")

    @classmethod
    def unit_information(cls, informative: NormalPrior, weight: float, sigma: float) -> "MixturePrior":
        """Robust component N(mu_C, sigma): one observation's worth of information."""
        return cls(weight, informative, NormalPrior(informative.mu_C, sigma))


@dataclass(frozen=True)
class MixturePosterior:
    weights: tuple[float, float]
    means: tuple[float, float]
    sds: tuple[float, float]


# ---------------------------------------------------------------------------
# power priors

def _zeta_array(zeta, shape):
    z = np.broadcast_to(np.asarray(zeta, dtype=float), shape)
    if np.any((z < 0) | (z > 1)):
        raise DomainError("zeta must lie in [0, 1]")
    return z


def pp_critical_z(design: NormalDesign, base: NormalPrior, ybar_C, zeta):
    """Critical z under the power prior N(mu_C, sigma_C / sqrt(zeta))."""
    yc = np.asarray(ybar_C, dtype=float)
    a = base.a_ratio(design) * _zeta_array(zeta, yc.shape)
    s2 = design.sigma**2
    bayes_sd = np.sqrt(s2 / design.n_C / (1 + a) + s2 / design.n_T)
    num = (base.mu_C - yc) * (a / (1 + a)) + level_to_z(design.gamma) * bayes_sd
    return num / design.se_diff


def pp_threshold(design: NormalDesign, spec: PowerPriorSpec, ybar_C):
    out = z_to_level(pp_critical_z(design, spec.base, ybar_C, spec.zeta))
    return float(out) if np.ndim(out) == 0 else out


def eb_zeta(design: NormalDesign, prior: NormalPrior, ybar_C):
    """Marginal-likelihood maximiser of the power parameter.

    The marginal of the control mean is N(mu_C, sigma^2/n_C + sigma_C^2/zeta);
    its likelihood in the variance v peaks at v = (ybar_C - mu_C)^2, so the
    optimum is the zeta matching that variance, clamped to [0, 1].
    """
    if prior.is_flat:
        raise DomainError("empirical-Bayes power prior needs a proper base prior")
    yc = np.asarray(ybar_C, dtype=float)
    d2 = (yc - prior.mu_C) ** 2
    s2 = design.sigma**2 / design.n_C
    v0 = prior.sigma_C**2
    with np.errstate(divide="ignore"):
        zeta = np.where(d2 <= s2 + v0, 1.0, v0 / np.maximum(d2 - s2, v0))
    return float(zeta) if zeta.ndim == 0 else zeta


def ebpow_critical_z(design: NormalDesign, prior: NormalPrior, ybar_C):
    return pp_critical_z(design, prior, ybar_C, eb_zeta(design, prior, ybar_C))


def ebpow_threshold(design: NormalDesign, prior: NormalPrior, ybar_C):
    out = z_to_level(ebpow_critical_z(design, prior, ybar_C))
    return float(out) if np.ndim(out) == 0 else out


# ---------------------------------------------------------------------------
# robust mixture

def _rm_update(design: NormalDesign, prior: MixturePrior, yc: np.ndarray):
    """Posterior weights, means and variances, each shaped (2, *yc.shape)."""
    s2 = design.sigma**2 / design.n_C
    mus = np.array([prior.informative.mu_C, prior.robust.mu_C]).reshape((2,) + (1,) * yc.ndim)
    v0 = np.array([prior.informative.sigma_C**2, prior.robust.sigma_C**2]).reshape(mus.shape)
    w0 = np.array([prior.weight, 1 - prior.weight]).reshape(mus.shape)
    marg_var = v0 + s2
    with np.errstate(divide="ignore"):
        logw = np.log(w0) - 0.5 * np.log(2 * np.pi * marg_var) - 0.5 * (yc - mus) ** 2 / marg_var
    weights = np.exp(logw - special.logsumexp(logw, axis=0, keepdims=True))
    post_var = 1.0 / (1.0 / v0 + 1.0 / s2)
    post_mean = post_var * (mus / v0 + yc / s2)
    return weights, post_mean, post_var


def rm_posterior(design: NormalDesign, prior: MixturePrior, ybar_C: float) -> MixturePosterior:
    w, m, v = _rm_update(design, prior, np.asarray(float(ybar_C)))
    return MixturePosterior(
        (float(w[0]), float(w[1])),
        (float(m[0]), float(m[1])),
        (math.sqrt(v[0]), math.sqrt(v[1])),
    )


def rm_prob_null(design: NormalDesign, prior: MixturePrior, ybar_C, ybar_T):
    """P(delta <= delta0 | data) under the mixture prior, vectorised."""
    yc = np.asarray(ybar_C, dtype=float)
    yt = np.asarray(ybar_T, dtype=float)
    yc, yt = np.broadcast_arrays(yc, yt)
    w, m, v = _rm_update(design, prior, yc)
    sd = np.sqrt(design.sigma**2 / design.n_T + v)
    return np.sum(w * special.ndtr((design.delta0 - (yt - m)) / sd), axis=0)


def _component_roots(design: NormalDesign, prior: MixturePrior, yc: np.ndarray):
    """Critical z of each component alone, given the updated weights."""
    _, m, v = _rm_update(design, prior, yc)
    sd = np.sqrt(design.sigma**2 / design.n_T + v)
    z_ybar_T = design.delta0 + m + level_to_z(design.gamma) * sd
    return (z_ybar_T - yc - design.delta0) / design.se_diff


def rm_critical_z(design: NormalDesign, prior: MixturePrior, ybar_C):
    """Smallest rejecting z-statistic under the mixture prior, vectorised.

    The mixture posterior probability of the null is a weighted sum of
    decreasing functions of ybar_T, each equal to gamma at its own
    component root, so the mixture root lies between the smallest and
    largest component roots. Safeguarded Newton on that bracket.
    """
    yc = np.atleast_1d(np.asarray(ybar_C, dtype=float))
    w, m, v = _rm_update(design, prior, yc)
    sd = np.sqrt(design.sigma**2 / design.n_T + v)
    # Component k alone rejects once ybar_T - m_k - delta0 exceeds z_{1-gamma} sd_k.
    roots = (m + level_to_z(design.gamma) * sd - yc) / design.se_diff
    pad = 1e-6 * (1 + np.abs(roots).max(axis=0))
    lo = roots.min(axis=0) - pad
    hi = roots.max(axis=0) + pad
    # u_k(z) = (delta0 - (ybar_T - m_k)) / sd_k with ybar_T = ybar_C + delta0 + z se_diff.
    offset = (m - yc) / sd
    slope = design.se_diff / sd

    def excess(z):
        return np.sum(w * special.ndtr(offset - z * slope), axis=0) - design.gamma

    def derivative(z):
        u = offset - z * slope
        return -np.sum(w * slope * np.exp(-0.5 * u * u), axis=0) / math.sqrt(2 * math.pi)

    f_lo, f_hi = excess(lo), excess(hi)
    if np.any(f_lo < 0) or np.any(f_hi > 0):
        raise InvariantViolation("mixture posterior probability of the null is not decreasing in ybar_T")
    z = _newton_bisect(excess, derivative, lo, hi, RM_Z_TOL)
    return z if np.ndim(ybar_C) else float(z[0])


def _newton_bisect(f, df, lo, hi, tol, max_iter=100):
    """Elementwise safeguarded Newton for decreasing ``f`` with f(lo) >= 0 >= f(hi).

    A Newton step that leaves the current bracket is replaced by bisection;
    iteration stops once every bracket is narrower than ``tol`` or the last
    accepted Newton step was below ``tol / 10``.
    """
    a, b = lo.copy(), hi.copy()
    z = 0.5 * (a + b)
    done = np.zeros(z.shape, dtype=bool)
    for _ in range(max_iter):
        fz = f(z)
        a = np.where(fz > 0, z, a)
        b = np.where(fz > 0, b, z)
        with np.errstate(divide="ignore", invalid="ignore"):
            step = fz / df(z)
        cand = z - step
        inside = np.isfinite(cand) & (cand > a) & (cand < b)
        z_new = np.where(inside, cand, 0.5 * (a + b))
        done |= (inside & (np.abs(step) < 0.1 * tol)) | (b - a < tol) | (fz == 0)
        z = np.where(done, z, z_new)
        if done.all():
            return z
    raise ConvergenceError("mixture critical value did not converge", float("nan"))


def rm_critical_value(design: NormalDesign, prior: MixturePrior, ybar_C: float) -> float:
    """Scalar critical z found by :func:`find_root` on the ybar_T axis."""
    yc = float(ybar_C)
    roots = _component_roots(design, prior, np.asarray(yc))
    lo_t = design.delta0 + yc + (roots.min() - 1e-6) * design.se_diff
    hi_t = design.delta0 + yc + (roots.max() + 1e-6) * design.se_diff
    # Widen geometrically if rounding left the bracket without a sign change.
    width = max(hi_t - lo_t, 1e-6)
    f = lambda yt: float(rm_prob_null(design, prior, yc, yt)) - design.gamma
    for _ in range(60):
        if f(lo_t) >= 0 >= f(hi_t):
            break
        lo_t -= width
        hi_t += width
        width *= 2
    else:
        raise InvariantViolation("could not bracket the mixture critical value")
    yt = find_root(f, lo_t, hi_t, Tolerance(abs_tol=RM_Z_TOL * design.se_diff, max_iter=400))
    return (yt - yc - design.delta0) / design.se_diff


def rm_threshold(design: NormalDesign, prior: MixturePrior, ybar_C):
    out = z_to_level(rm_critical_z(design, prior, ybar_C))
    return float(out) if np.ndim(out) == 0 else out
