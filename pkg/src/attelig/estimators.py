"""ATTE estimators: influence-function ratios, complete-case and IWOR baselines.

The influence-function estimators report the ratio of means of uncentered
per-observation contributions; their standard errors come from the centered
ratio influence values. The complete-case and inverse-weighted baselines get
standard errors from a nonparametric bootstrap that refits their parametric
nuisances inside each resample.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np
from scipy.stats import norm

from .data import (
    AtteligError,
    CoarsenedDataset,
    CoarsenedObservation,
    EligibilityRule,
    eligibility_column,
)
from .nuisance import NuisanceSet, ObservationNuisances


class DegenerateAlpha(AtteligError):
    """No treated eligible mass: the ratio denominator is numerically zero."""


class EmptyTreatedEligible(AtteligError):
    """No treated eligible complete cases to average over."""


class ResampleDegenerate(AtteligError):
    """Too many bootstrap resamples were degenerate."""


@dataclass
class InfluenceContributions:
    """Uncentered per-observation influence values feeding the ratio estimators."""

    alpha_dot: np.ndarray
    beta_dot: np.ndarray
    alpha_prime_dot: np.ndarray
    beta_prime_dot: np.ndarray

    def __post_init__(self):
        for arr in (self.alpha_dot, self.beta_dot, self.alpha_prime_dot, self.beta_prime_dot):
            if not np.all(np.isfinite(arr)):
                raise ValueError("influence contributions must be finite")


@dataclass(frozen=True)
class EstimateReport:
    estimator: str
    theta_hat: float
    se: float
    ci_lo: float
    ci_hi: float
    level: float
    n: int
    n_complete: int
    n_treated_eligible_complete: int
    metadata: dict = field(default_factory=dict)

    def __post_init__(self):
        if not (self.ci_lo <= self.theta_hat <= self.ci_hi):
            raise ValueError("point estimate must lie inside its interval")
        if self.se < 0:
            raise ValueError("standard error must be nonnegative")

    def to_dict(self) -> dict:
        return {
            "estimator": self.estimator,
            "theta_hat": self.theta_hat,
            "se": self.se,
            "ci_lo": self.ci_lo,
            "ci_hi": self.ci_hi,
            "level": self.level,
            "n": self.n,
            "n_complete": self.n_complete,
            "n_treated_eligible_complete": self.n_treated_eligible_complete,
            "config_echo": self.metadata.get("config_echo", {}),
            "method": {
                k: v for k, v in self.metadata.items() if k != "config_echo"
            },
        }


# ---------------------------------------------------------------------------
# Per-observation influence arithmetic
# ---------------------------------------------------------------------------


def alpha_dot(obs: CoarsenedObservation, nuis: ObservationNuisances,
              e: Optional[int]) -> float:
    """Uncentered efficient influence value for the eligible-treated mass."""
    out = obs.a * (1.0 - obs.r / nuis.eta1) * nuis.eps1
    if obs.r == 1:
        out += obs.a * e / nuis.eta1
    return out


def beta_dot(obs: CoarsenedObservation, nuis: ObservationNuisances,
             e: Optional[int]) -> float:
    """Uncentered efficient influence value for the eligible-treated effect mass."""
    a, r, y = obs.a, obs.r, obs.y
    out = a * (nuis.eps1 * y - nuis.xi)
    out -= (1 - a) * (nuis.eta0 / nuis.eta1) * (nuis.gamma * y - nuis.chi)
    if r == 1:
        odds = nuis.u / (1.0 - nuis.u)
        out += (a / nuis.eta1) * ((e - nuis.eps1) * y - (e * nuis.mu0 - nuis.xi))
        out -= ((1 - a) / nuis.eta1) * (
            e * odds * (y - nuis.mu0) - (nuis.gamma * y - nuis.chi)
        )
    return out


def alpha_prime_dot(obs: CoarsenedObservation, nuis: ObservationNuisances,
                    e: Optional[int]) -> float:
    """Simpler (non-efficient) influence value for the mass functional."""
    out = obs.a * (1.0 - obs.r / nuis.eta1) * nuis.omega1
    if obs.r == 1:
        out += obs.a * e / nuis.eta1
    return out


def beta_prime_dot(obs: CoarsenedObservation, nuis: ObservationNuisances,
                   e: Optional[int]) -> float:
    """Simpler (non-efficient) influence value for the effect functional."""
    out = obs.a * (1.0 - obs.r / nuis.eta1) * nuis.nu
    if obs.r == 1:
        odds = nuis.u / (1.0 - nuis.u)
        out += (e / nuis.eta1) * (obs.y - nuis.mu0) * (obs.a - (1 - obs.a) * odds)
    return out


def influence_contributions(
    dataset: CoarsenedDataset, rule: EligibilityRule, nuis: NuisanceSet
) -> InfluenceContributions:
    """Vectorized uncentered influence values for every observation."""
    a = dataset.column("a")
    y = dataset.column("y")
    r = dataset.column("r")
    e = eligibility_column(rule, dataset).astype(float)
    e_safe = np.maximum(e, 0.0)  # enters only through r-multiplied terms

    eta1, eta0 = nuis.eta1, nuis.eta0
    eps1, xi = nuis.eps1, nuis.xi
    gamma, chi = nuis.gamma, nuis.chi
    mu0 = np.where(r == 1, nuis.mu0, 0.0)
    u = np.where(r == 1, nuis.u, 0.5)
    odds = u / (1.0 - u)

    adot = a * (1.0 - r / eta1) * eps1 + a * r * e_safe / eta1
    bdot = a * (eps1 * y - xi) - (1 - a) * (eta0 / eta1) * (gamma * y - chi)
    bdot += (a * r / eta1) * ((e_safe - eps1) * y - (e_safe * mu0 - xi))
    bdot -= ((1 - a) * r / eta1) * (
        e_safe * odds * (y - mu0) - (gamma * y - chi)
    )

    apdot = a * (1.0 - r / eta1) * nuis.omega1 + a * r * e_safe / eta1
    bpdot = a * (1.0 - r / eta1) * nuis.nu
    bpdot += (r * e_safe / eta1) * (y - mu0) * (a - (1 - a) * odds)

    return InfluenceContributions(
        alpha_dot=adot, beta_dot=bdot, alpha_prime_dot=apdot, beta_prime_dot=bpdot
    )


# ---------------------------------------------------------------------------
# Ratio estimators with influence-function standard errors
# ---------------------------------------------------------------------------


def _counts(dataset: CoarsenedDataset, rule: EligibilityRule) -> tuple[int, int, int]:
    a = dataset.column("a")
    r = dataset.column("r")
    e = eligibility_column(rule, dataset)
    n_complete = int(np.sum(r == 1))
    n_tec = int(np.sum((a == 1) & (r == 1) & (e == 1)))
    return dataset.n, n_complete, n_tec


def _ratio_report(
    name: str,
    alpha_vals: np.ndarray,
    beta_vals: np.ndarray,
    dataset: CoarsenedDataset,
    rule: EligibilityRule,
    level: float,
    metadata: Optional[dict],
) -> EstimateReport:
    n = len(alpha_vals)
    alpha_hat = float(np.mean(alpha_vals))
    if abs(alpha_hat) < 1e-8:
        raise DegenerateAlpha(f"|mean alpha-dot| = {abs(alpha_hat):.3g} < 1e-8")
    beta_hat = float(np.mean(beta_vals))
    theta = beta_hat / alpha_hat
    theta_star = (beta_vals - theta * alpha_vals) / alpha_hat
    se = float(np.sqrt(np.mean(theta_star**2) / n))
    z = float(norm.ppf(0.5 + level / 2.0))
    n_all, n_complete, n_tec = _counts(dataset, rule)
    return EstimateReport(
        estimator=name,
        theta_hat=theta,
        se=se,
        ci_lo=theta - z * se,
        ci_hi=theta + z * se,
        level=level,
        n=n_all,
        n_complete=n_complete,
        n_treated_eligible_complete=n_tec,
        metadata=metadata or {},
    )


def theta_eif(
    nuis: NuisanceSet,
    dataset: CoarsenedDataset,
    rule: EligibilityRule,
    level: float = 0.95,
    metadata: Optional[dict] = None,
) -> EstimateReport:
    """Efficient influence-function estimator: ratio of one-step estimators."""
    contribs = influence_contributions(dataset, rule, nuis)
    return _ratio_report(
        "EIF", contribs.alpha_dot, contribs.beta_dot, dataset, rule, level, metadata
    )


def theta_if(
    nuis: NuisanceSet,
    dataset: CoarsenedDataset,
    rule: EligibilityRule,
    level: float = 0.95,
    metadata: Optional[dict] = None,
) -> EstimateReport:
    """Simpler influence-function estimator using omega1/nu in place of the
    outcome-conditional nuisances."""
    contribs = influence_contributions(dataset, rule, nuis)
    return _ratio_report(
        "IF", contribs.alpha_prime_dot, contribs.beta_prime_dot, dataset, rule,
        level, metadata,
    )


def theta_star_values(
    nuis: NuisanceSet, dataset: CoarsenedDataset, rule: EligibilityRule
) -> np.ndarray:
    """Centered ratio influence values for the efficient estimator."""
    contribs = influence_contributions(dataset, rule, nuis)
    alpha_hat = float(np.mean(contribs.alpha_dot))
    if abs(alpha_hat) < 1e-8:
        raise DegenerateAlpha("no treated eligible mass")
    theta = float(np.mean(contribs.beta_dot)) / alpha_hat
    return (contribs.beta_dot - theta * contribs.alpha_dot) / alpha_hat


# ---------------------------------------------------------------------------
# Complete-case and inverse-weighted baselines
# ---------------------------------------------------------------------------


def cc_point(dataset: CoarsenedDataset, rule: EligibilityRule,
             mu0_hat: np.ndarray) -> float:
    """Complete-case g-formula point estimate: mean residual over treated
    eligible complete cases."""
    a = dataset.column("a")
    y = dataset.column("y")
    r = dataset.column("r")
    e = eligibility_column(rule, dataset)
    mask = (a == 1) & (r == 1) & (e == 1)
    if not np.any(mask):
        raise EmptyTreatedEligible("no treated eligible complete cases")
    return float(np.mean(y[mask] - mu0_hat[mask]))


def iwor_point(dataset: CoarsenedDataset, rule: EligibilityRule,
               mu0_hat: np.ndarray, eta1_hat: np.ndarray) -> float:
    """Inverse-weighted outcome regression point estimate (ratio of weighted
    means with ascertainment weights)."""
    a = dataset.column("a")
    y = dataset.column("y")
    r = dataset.column("r")
    e = eligibility_column(rule, dataset)
    mask = (a == 1) & (r == 1) & (e == 1)
    if not np.any(mask):
        raise EmptyTreatedEligible("no treated eligible complete cases")
    w = 1.0 / eta1_hat[mask]
    return float(np.sum(w * (y[mask] - mu0_hat[mask])) / np.sum(w))


def bootstrap_se(
    point_fn: Callable[[CoarsenedDataset], float],
    dataset: CoarsenedDataset,
    b: int,
    seed: int,
    level: float = 0.95,
) -> tuple[float, tuple[float, float], int]:
    """Nonparametric bootstrap with a normal approximation.

    Resamples observations with replacement and re-evaluates the estimator
    closure (which refits its parametric nuisances). Degenerate resamples are
    skipped and counted; more than 10 percent skipped raises.
    """
    if b < 50:
        raise ValueError("bootstrap needs B >= 50")
    rng = np.random.default_rng(seed)
    center = point_fn(dataset)
    estimates = []
    skipped = 0
    for _ in range(b):
        idx = rng.integers(0, dataset.n, dataset.n)
        try:
            estimates.append(point_fn(dataset.subset(idx)))
        except AtteligError:
            skipped += 1
    if skipped > 0.1 * b:
        raise ResampleDegenerate(f"{skipped} of {b} resamples degenerate")
    se = float(np.std(estimates, ddof=1)) if len(estimates) > 1 else 0.0
    z = float(norm.ppf(0.5 + level / 2.0))
    return se, (center - z * se, center + z * se), skipped


def theta_cc(
    dataset: CoarsenedDataset,
    rule: EligibilityRule,
    fit_mu0: Callable[[CoarsenedDataset], np.ndarray],
    bootstrap_b: int = 200,
    seed: int = 0,
    level: float = 0.95,
    metadata: Optional[dict] = None,
) -> EstimateReport:
    """Complete-case g-formula estimator with bootstrap standard error."""

    def point(ds: CoarsenedDataset) -> float:
        return cc_point(ds, rule, fit_mu0(ds))

    theta = point(dataset)
    se, ci, skipped = bootstrap_se(point, dataset, bootstrap_b, seed, level)
    n_all, n_complete, n_tec = _counts(dataset, rule)
    meta = dict(metadata or {})
    meta.update({"bootstrap_b": bootstrap_b, "bootstrap_skipped": skipped, "seed": seed})
    return EstimateReport(
        estimator="CC", theta_hat=theta, se=se, ci_lo=ci[0], ci_hi=ci[1],
        level=level, n=n_all, n_complete=n_complete,
        n_treated_eligible_complete=n_tec, metadata=meta,
    )


def theta_iwor(
    dataset: CoarsenedDataset,
    rule: EligibilityRule,
    fit_mu0: Callable[[CoarsenedDataset], np.ndarray],
    fit_eta1: Callable[[CoarsenedDataset], np.ndarray],
    bootstrap_b: int = 200,
    seed: int = 0,
    level: float = 0.95,
    metadata: Optional[dict] = None,
) -> EstimateReport:
    """Inverse-weighted outcome regression estimator with bootstrap SE."""

    def point(ds: CoarsenedDataset) -> float:
        return iwor_point(ds, rule, fit_mu0(ds), fit_eta1(ds))

    theta = point(dataset)
    se, ci, skipped = bootstrap_se(point, dataset, bootstrap_b, seed, level)
    n_all, n_complete, n_tec = _counts(dataset, rule)
    meta = dict(metadata or {})
    meta.update({"bootstrap_b": bootstrap_b, "bootstrap_skipped": skipped, "seed": seed})
    return EstimateReport(
        estimator="IWOR", theta_hat=theta, se=se, ci_lo=ci[0], ci_hi=ci[1],
        level=level, n=n_all, n_complete=n_complete,
        n_treated_eligible_complete=n_tec, metadata=meta,
    )


def dr_att_one_step(y: np.ndarray, a: np.ndarray, mu0_hat: np.ndarray,
                    u_hat: np.ndarray) -> float:
    """Stand-alone one-step doubly robust ATT, used as the reduction reference.

    All subjects must be complete and eligible; the estimator is
    mean[(y - mu0)(a - (1-a) u/(1-u))] / mean[a].
    """
    odds = u_hat / (1.0 - u_hat)
    num = np.mean((y - mu0_hat) * (a - (1 - a) * odds))
    den = np.mean(a)
    if den == 0:
        raise DegenerateAlpha("no treated subjects")
    return float(num / den)
