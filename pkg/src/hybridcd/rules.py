"""Decision rules for Normal hybrid-control trials.

A rule maps the observed control mean to the critical z-statistic of the
two-sample z-test. That one function is all the operating-characteristic
code needs: the quadrature engine integrates the conditional rejection
probability implied by :meth:`DecisionRule.boundary`, while the Monte Carlo
engine calls :meth:`DecisionRule.decide` on simulated data.

``BD`` overrides ``decide`` with the posterior-probability form of the
Bayes test and :class:`BayesSide` re-expresses any rule as a Bayes test with
the dual threshold gamma^R(ybar_C), so both sides of the duality can be
exercised independently.
"""

from __future__ import annotations

import dataclasses
import math
from dataclasses import dataclass, field

import numpy as np
from scipy import optimize

from . import borrowing, normal
from .normal import CompromiseConfig, NormalDesign, NormalPrior, level_to_z, z_to_level

__all__ = [
    "BD",
    "BayesSide",
    "CDC",
    "CDD",
    "DecisionRule",
    "EBPowD",
    "FD",
    "NeverReject",
    "PowerPrior",
    "RMDUnit",
    "rule_from_name",
]


@dataclass(frozen=True)
class DecisionRule:
    name: str = field(default="rule", init=False)

    def critical_z(self, design: NormalDesign, prior: NormalPrior, ybar_C) -> np.ndarray:
        raise NotImplementedError

    def kappa(self, design: NormalDesign, prior: NormalPrior, ybar_C):
        return z_to_level(self.critical_z(design, prior, ybar_C))

    def gamma(self, design: NormalDesign, prior: NormalPrior, ybar_C):
        """Bayes threshold under ``prior`` that gives this rule's decisions."""
        return normal.gamma_cd(design, prior, ybar_C, self.kappa(design, prior, ybar_C))

    def boundary(self, design: NormalDesign, prior: NormalPrior, ybar_C) -> np.ndarray:
        """Smallest treatment mean that is rejected, given the control mean."""
        yc = np.asarray(ybar_C, dtype=float)
        return yc + design.delta0 + self.critical_z(design, prior, yc) * design.se_diff

    def decide(self, design: NormalDesign, prior: NormalPrior, ybar_C, ybar_T) -> np.ndarray:
        yc = np.asarray(ybar_C, dtype=float)
        z = (np.asarray(ybar_T, dtype=float) - yc - design.delta0) / design.se_diff
        return z > self.critical_z(design, prior, yc)

    def breakpoints(self, design: NormalDesign, prior: NormalPrior) -> list[float]:
        """Control means where the threshold has a kink (quadrature hints)."""
        return []


@dataclass(frozen=True)
class FD(DecisionRule):
    name: str = field(default="FD", init=False)

    def critical_z(self, design, prior, ybar_C):
        return np.full(np.shape(ybar_C), level_to_z(design.kappa))


@dataclass(frozen=True)
class BD(DecisionRule):
    name: str = field(default="BD", init=False)

    def critical_z(self, design, prior, ybar_C):
        return np.asarray(normal.critical_z_bd(design, prior, ybar_C))

    def gamma(self, design, prior, ybar_C):
        return np.full(np.shape(ybar_C), design.gamma)

    def decide(self, design, prior, ybar_C, ybar_T):
        return normal.prob_null(design, prior, ybar_C, ybar_T) <= design.gamma


@dataclass(frozen=True)
class CDC(DecisionRule):
    cfg: CompromiseConfig = CompromiseConfig()
    name: str = field(default="CDC", init=False)

    def critical_z(self, design, prior, ybar_C):
        zbd = normal.critical_z_bd(design, prior, ybar_C)
        return np.clip(zbd, level_to_z(self.cfg.alpha_up), level_to_z(self.cfg.alpha_low))

    def breakpoints(self, design, prior):
        if prior.is_flat:
            return []
        return [b for b in normal.conflict_bounds(design, prior, self.cfg) if math.isfinite(b)]


@dataclass(frozen=True)
class CDD(DecisionRule):
    cfg: CompromiseConfig = CompromiseConfig()
    name: str = field(default="CDD", init=False)

    def critical_z(self, design, prior, ybar_C):
        return np.asarray(normal.cdd_threshold_z(design, prior, ybar_C, self.cfg))

    def breakpoints(self, design, prior):
        if prior.is_flat:
            return []
        reach = self.cfg.t * math.sqrt(design.sigma**2 / design.n_C + prior.sigma_C**2)
        pts = [prior.mu_C - reach, prior.mu_C, prior.mu_C + reach]
        # Where the interpolated level crosses a clamp bound; outside the
        # reach w = 1 and the level is the constant kappa.
        free = CDD(dataclasses.replace(self.cfg, alpha_low=0.0, alpha_up=1.0))
        raw = lambda y: float(free.critical_z(design, prior, y))
        grid = np.linspace(prior.mu_C - reach, prior.mu_C + reach, 401)
        z = free.critical_z(design, prior, grid)
        for level in (self.cfg.alpha_low, self.cfg.alpha_up):
            target = level_to_z(level)
            if not math.isfinite(target):
                continue
            diff = z - target
            for i in np.nonzero(np.sign(diff[:-1]) * np.sign(diff[1:]) < 0)[0]:
                pts.append(optimize.brentq(lambda y: raw(y) - target, grid[i], grid[i + 1], xtol=1e-12))
        return sorted(pts)


@dataclass(frozen=True)
class PowerPrior(DecisionRule):
    zeta: float = 1.0
    name: str = field(default="PP", init=False)

    def critical_z(self, design, prior, ybar_C):
        return np.asarray(borrowing.pp_critical_z(design, prior, ybar_C, self.zeta))


@dataclass(frozen=True)
class EBPowD(DecisionRule):
    name: str = field(default="EBPowD", init=False)

    def critical_z(self, design, prior, ybar_C):
        return np.asarray(borrowing.ebpow_critical_z(design, prior, ybar_C))

    def breakpoints(self, design, prior):
        reach = math.sqrt(design.sigma**2 / design.n_C + prior.sigma_C**2)
        return [prior.mu_C - reach, prior.mu_C + reach]


@dataclass(frozen=True)
class RMDUnit(DecisionRule):
    """Bayes test under ``weight * prior + (1 - weight) * N(mu_C, sigma)``."""

    weight: float = 0.7
    name: str = field(default="RMD-Unit", init=False)

    def mixture(self, design: NormalDesign, prior: NormalPrior) -> borrowing.MixturePrior:
        return borrowing.MixturePrior.unit_information(prior, self.weight, design.sigma)

    def critical_z(self, design, prior, ybar_C):
        yc = np.asarray(ybar_C, dtype=float)
        if yc.size == 0:
            return np.empty(yc.shape)
        z = borrowing.rm_critical_z(design, self.mixture(design, prior), yc.ravel())
        return np.asarray(z).reshape(yc.shape)

    def decide(self, design, prior, ybar_C, ybar_T):
        p = borrowing.rm_prob_null(design, self.mixture(design, prior), ybar_C, ybar_T)
        return p <= design.gamma


@dataclass(frozen=True)
class NeverReject(DecisionRule):
    name: str = field(default="never", init=False)

    def critical_z(self, design, prior, ybar_C):
        return np.full(np.shape(ybar_C), np.inf)


@dataclass(frozen=True)
class BayesSide(DecisionRule):
    """``base`` expressed as a Bayes test with threshold gamma^R(ybar_C).

    Decisions compare the informative-prior posterior probability of the
    null with the dual threshold; the boundary is derived from the posterior
    of delta rather than from ``base.critical_z``.
    """

    base: DecisionRule = FD()
    name: str = field(default="Bayes", init=False)

    def critical_z(self, design, prior, ybar_C):
        return self.base.critical_z(design, prior, ybar_C)

    def boundary(self, design, prior, ybar_C):
        yc = np.asarray(ybar_C, dtype=float)
        a = prior.a_ratio(design)
        shrunk = yc if a == 0 else (prior.mu_C * a + yc) / (1 + a)
        bayes_sd = math.sqrt(design.sigma**2 / design.n_T + design.sigma**2 / design.n_C / (1 + a))
        g = self.base.gamma(design, prior, yc)
        return design.delta0 + shrunk + level_to_z(g) * bayes_sd

    def decide(self, design, prior, ybar_C, ybar_T):
        g = self.base.gamma(design, prior, ybar_C)
        return normal.prob_null(design, prior, ybar_C, ybar_T) <= g


def rule_from_name(name: str, **params) -> DecisionRule:
    """Build a rule from its display name and keyword parameters."""
    key = name.upper().replace("_", "-")
    if key == "FD":
        return FD()
    if key == "BD":
        return BD()
    if key in ("CDC", "CD-CONSTRAINT"):
        return CDC(CompromiseConfig(**params))
    if key in ("CDD", "CD-DISCARD"):
        return CDD(CompromiseConfig(**params))
    if key == "PP":
        return PowerPrior(**params)
    if key == "EBPOWD":
        return EBPowD()
    if key in ("RMD-UNIT", "RMD"):
        return RMDUnit(**params)
    raise ValueError(f"unknown rule {name!r}")
