"""Exact enumeration checks on finite discrete joint laws.

Every identity the estimators rely on is verified here against brute-force
summation over a finite support: the identification equality, the mean-zero
property of the influence functions, the density-ratio reparameterization,
and the von Mises remainder structure. All accumulation uses math.fsum so
tolerances reflect the identities, not summation error.

The fixture distributions factor as p(lstar) p(a|lstar) p(r|lstar,a)
p(lelig|lstar,a) p(y|lstar,a,lelig), which makes the missing-at-random
condition hold structurally; a deliberately broken variant (r depending on
lelig) is used to demonstrate the selection bias the identities rule out.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from math import fsum
from typing import Callable, NamedTuple, Optional, Sequence

import numpy as np

from .data import (
    AtteligError,
    CoarsenedDataset,
    CoarsenedObservation,
    Covariate,
    CovariateSchema,
    EligibilityRule,
    Partition,
    ThresholdRule,
)


class ZeroMass(AtteligError):
    """An enumeration conditioned on an event with zero probability."""


class Atom(NamedTuple):
    lstar: tuple
    a: int
    r: int
    lelig: float
    y: float


@dataclass(frozen=True)
class DiscreteJointDistribution:
    """Finite-support joint law over (lstar, a, r, lelig, y)."""

    atoms: tuple[Atom, ...]
    probs: tuple[float, ...]

    def __post_init__(self):
        if len(self.atoms) != len(self.probs):
            raise ValueError("atoms and probs must align")
        if any(p <= 0 for p in self.probs):
            raise ValueError("atom probabilities must be positive")
        total = fsum(self.probs)
        if abs(total - 1.0) > 1e-12:
            raise ValueError(f"probabilities sum to {total!r}, not 1")

    def items(self):
        return zip(self.atoms, self.probs)

    def mar_discrepancy(self) -> float:
        """Max deviation of p(y, lelig | lstar, a, r) across r = 0 vs r = 1."""
        mass: dict = {}
        for atom, p in self.items():
            mass.setdefault((atom.lstar, atom.a, atom.r), []).append((atom, p))
        worst = 0.0
        for lstar in {a.lstar for a in self.atoms}:
            for a in (0, 1):
                sides = []
                for r in (0, 1):
                    rows = mass.get((lstar, a, r))
                    if not rows:
                        sides.append(None)
                        continue
                    den = fsum(p for _, p in rows)
                    cond = {}
                    for atom, p in rows:
                        key = (atom.lelig, atom.y)
                        cond[key] = cond.get(key, 0.0) + p / den
                    sides.append(cond)
                if sides[0] is None or sides[1] is None:
                    continue
                keys = set(sides[0]) | set(sides[1])
                for key in keys:
                    worst = max(
                        worst, abs(sides[0].get(key, 0.0) - sides[1].get(key, 0.0))
                    )
        return worst

    def positivity_margins(self, rule: EligibilityRule) -> tuple[float, float, float]:
        """(min eta, min u on eligible support, max u on eligible support)."""
        t = NuisanceTables(self, rule)
        min_eta = min(t.eta.values())
        elig_u = [
            t.u[(atom.lstar, atom.lelig)]
            for atom in self.atoms
            if _atom_elig(rule, atom) == 1 and (atom.lstar, atom.lelig) in t.u
        ]
        if not elig_u:
            raise ZeroMass("no eligible support")
        return min_eta, min(elig_u), max(elig_u)


def _atom_elig(rule: EligibilityRule, atom: Atom) -> int:
    def lookup(name: str):
        if name == "le":
            return atom.lelig
        if name == "a":
            return atom.a
        if name.startswith("l") and name[1:].isdigit():
            return atom.lstar[int(name[1:]) - 1]
        raise KeyError(name)

    return int(rule.check(lookup))


def _cond(pairs, value: Callable[[Atom], float], pred: Callable[[Atom], bool]):
    num = fsum(p * value(atom) for atom, p in pairs if pred(atom))
    den = fsum(p for atom, p in pairs if pred(atom))
    if den == 0.0:
        raise ZeroMass("conditioning event has zero probability")
    return num / den


class NuisanceTables:
    """All nuisance functions of the joint law, enumerated exactly."""

    def __init__(self, dist: DiscreteJointDistribution, rule: EligibilityRule):
        self.dist = dist
        self.rule = rule
        pairs = list(dist.items())
        self.e = {atom: _atom_elig(rule, atom) for atom, _ in pairs}

        lstars = sorted({a.lstar for a in dist.atoms})
        leligs = sorted({a.lelig for a in dist.atoms})
        ys = sorted({a.y for a in dist.atoms})

        self.eta = {}
        self.pi = {}
        for l in lstars:
            self.pi[l] = _cond(pairs, lambda at: float(at.a), lambda at: at.lstar == l)
            for a in (0, 1):
                self.eta[(l, a)] = _cond(
                    pairs, lambda at: float(at.r),
                    lambda at, l=l, a=a: at.lstar == l and at.a == a,
                )

        self.u = {}
        self.mu = {}
        self.lam = {}
        for l in lstars:
            for le in leligs:
                try:
                    self.u[(l, le)] = _cond(
                        pairs, lambda at: float(at.a),
                        lambda at, l=l, le=le: at.lstar == l and at.lelig == le and at.r == 1,
                    )
                except ZeroMass:
                    pass
                for a in (0, 1):
                    try:
                        self.mu[(a, l, le)] = _cond(
                            pairs, lambda at: at.y,
                            lambda at, l=l, le=le, a=a: at.lstar == l
                            and at.lelig == le and at.a == a and at.r == 1,
                        )
                    except ZeroMass:
                        pass
                    # conditional density of lelig among complete cases
                    try:
                        self.lam[(a, l, le)] = _cond(
                            pairs, lambda at, le=le: 1.0 if at.lelig == le else 0.0,
                            lambda at, l=l, a=a: at.lstar == l and at.a == a and at.r == 1,
                        )
                    except ZeroMass:
                        pass

        def odds(l, le):
            uval = self.u[(l, le)]
            return uval / (1.0 - uval)

        self.eps1 = {}
        self.xi = {}
        self.gamma = {}
        self.chi = {}
        for l in lstars:
            for yv in ys:
                treated = lambda at, l=l, yv=yv: (
                    at.lstar == l and at.y == yv and at.a == 1 and at.r == 1
                )
                control = lambda at, l=l, yv=yv: (
                    at.lstar == l and at.y == yv and at.a == 0 and at.r == 1
                )
                try:
                    self.eps1[(l, yv)] = _cond(
                        pairs, lambda at: float(self.e[at]), treated
                    )
                    self.xi[(l, yv)] = _cond(
                        pairs,
                        lambda at: self.e[at] * self.mu[(0, at.lstar, at.lelig)],
                        treated,
                    )
                except ZeroMass:
                    pass
                try:
                    self.gamma[(l, yv)] = _cond(
                        pairs, lambda at: self.e[at] * odds(at.lstar, at.lelig), control
                    )
                    self.chi[(l, yv)] = _cond(
                        pairs,
                        lambda at: self.e[at]
                        * odds(at.lstar, at.lelig)
                        * self.mu[(0, at.lstar, at.lelig)],
                        control,
                    )
                except ZeroMass:
                    pass

        self.nu = {}
        self.omega1 = {}
        for l in lstars:
            treated = lambda at, l=l: at.lstar == l and at.a == 1 and at.r == 1
            self.nu[l] = _cond(
                pairs,
                lambda at: self.e[at] * (at.y - self.mu[(0, at.lstar, at.lelig)]),
                treated,
            )
            self.omega1[l] = _cond(pairs, lambda at: float(self.e[at]), treated)

    def as_functions(self) -> dict:
        """Nuisance lookups keyed the way the influence formulas consume them."""
        return {
            "eta1": lambda l: self.eta[(l, 1)],
            "eta0": lambda l: self.eta[(l, 0)],
            "u": lambda l, le: self.u[(l, le)],
            "mu0": lambda l, le: self.mu[(0, l, le)],
            "eps1": lambda l, y: self.eps1[(l, y)],
            "xi": lambda l, y: self.xi[(l, y)],
            "gamma": lambda l, y: self.gamma[(l, y)],
            "chi": lambda l, y: self.chi[(l, y)],
            "nu": lambda l: self.nu[l],
            "omega1": lambda l: self.omega1[l],
        }

    def perturbed(self, factors: dict, clip=(0.005, 0.995)) -> dict:
        """Multiplicatively perturbed nuisance lookups (probabilities re-clipped)."""
        fns = self.as_functions()
        lo, hi = clip
        out = dict(fns)

        def scaled_prob(base, f):
            return lambda *args: min(max(base(*args) * f, lo), hi)

        def scaled(base, f):
            return lambda *args: base(*args) * f

        for name, f in factors.items():
            if name in ("eta1", "eta0", "eps1", "u", "omega1"):
                out[name] = scaled_prob(fns[name], f)
            elif name in ("mu0", "xi", "gamma", "chi", "nu"):
                out[name] = scaled(fns[name], f)
            else:
                raise KeyError(f"unknown nuisance {name!r}")
        return out


# ---------------------------------------------------------------------------
# Influence-function arithmetic on atoms (kept independent of the estimators
# module on purpose; this transcription is the reference the other is checked
# against).
# ---------------------------------------------------------------------------


def _alpha_dot_unc(atom: Atom, e: int, fn: dict) -> float:
    eta1 = fn["eta1"](atom.lstar)
    eps1 = fn["eps1"]((atom.lstar), atom.y)
    out = atom.a * (1.0 - atom.r / eta1) * eps1
    if atom.r == 1:
        out += atom.a * atom.r * e / eta1
    return out


def _beta_dot_unc(atom: Atom, e: int, fn: dict) -> float:
    l, a, r, y = atom.lstar, atom.a, atom.r, atom.y
    eta1 = fn["eta1"](l)
    eta0 = fn["eta0"](l)
    eps1 = fn["eps1"](l, y)
    xi = fn["xi"](l, y)
    gamma = fn["gamma"](l, y)
    chi = fn["chi"](l, y)
    out = a * (eps1 * y - xi) - (1 - a) * (eta0 / eta1) * (gamma * y - chi)
    if r == 1:
        mu0 = fn["mu0"](l, atom.lelig)
        u = fn["u"](l, atom.lelig)
        out += (a * r / eta1) * ((e - eps1) * y - (e * mu0 - xi))
        out -= ((1 - a) * r / eta1) * (
            e * (u / (1.0 - u)) * (y - mu0) - (gamma * y - chi)
        )
    return out


# ---------------------------------------------------------------------------
# Enumerated functionals and identity checks
# ---------------------------------------------------------------------------


def enumerate_true_atte(dist: DiscreteJointDistribution, rule: EligibilityRule) -> float:
    """E[mu1 - mu0 | A = 1, E = 1] over the full (unmasked) law.

    The outcome conditionals here are structural, i.e. marginal over the
    ascertainment flag; under missing-at-random they coincide with the
    complete-case conditionals but under a violated MAR they do not, which
    is exactly the selection bias the negative fixtures demonstrate.
    """
    pairs = list(dist.items())
    e = {atom: _atom_elig(rule, atom) for atom, _ in pairs}
    mu_full: dict = {}
    for atom in dist.atoms:
        for a in (0, 1):
            key = (a, atom.lstar, atom.lelig)
            if key not in mu_full:
                mu_full[key] = _cond(
                    pairs, lambda at: at.y,
                    lambda at, key=key: at.a == key[0]
                    and at.lstar == key[1] and at.lelig == key[2],
                )
    num, den = [], []
    for atom, p in pairs:
        if atom.a == 1 and e[atom] == 1:
            num.append(
                p * (mu_full[(1, atom.lstar, atom.lelig)] - mu_full[(0, atom.lstar, atom.lelig)])
            )
            den.append(p)
    total = fsum(den)
    if total == 0.0:
        raise ZeroMass("no treated eligible mass")
    return fsum(num) / total


def enumerate_identification_functional(
    dist: DiscreteJointDistribution, rule: EligibilityRule
) -> float:
    """beta(P)/alpha(P) using only coarsened-law conditionals (r = 1 blocks)."""
    t = NuisanceTables(dist, rule)
    beta_terms, alpha_terms = [], []
    for atom, p in dist.items():
        if atom.a == 1 and atom.r == 1 and t.e[atom] == 1:
            eta1 = t.eta[(atom.lstar, 1)]
            mu0 = t.mu[(0, atom.lstar, atom.lelig)]
            beta_terms.append(p * (atom.y - mu0) / eta1)
            alpha_terms.append(p / eta1)
    alpha = fsum(alpha_terms)
    if alpha == 0.0:
        raise ZeroMass("alpha(P) = 0")
    return fsum(beta_terms) / alpha


def enumerate_eif_means(
    dist: DiscreteJointDistribution,
    rule: EligibilityRule,
    overrides: Optional[dict] = None,
    clip=(0.005, 0.995),
) -> tuple[float, float]:
    """(E[alpha-dot*], E[beta-dot*]) with enumerated (optionally perturbed) nuisances.

    With true nuisances both means are zero; the centering constants use the
    reduced forms alpha = E[A eps1] and beta = E[A (eps1 Y - xi)], which agree
    with the defining functionals under the law's MAR structure.
    """
    t = NuisanceTables(dist, rule)
    fn = t.perturbed(overrides or {}, clip) if overrides else t.as_functions()
    alpha_bar = fsum(p * atom.a * fn["eps1"](atom.lstar, atom.y) for atom, p in dist.items())
    beta_bar = fsum(
        p * atom.a * (fn["eps1"](atom.lstar, atom.y) * atom.y - fn["xi"](atom.lstar, atom.y))
        for atom, p in dist.items()
    )
    mean_alpha = fsum(
        p * _alpha_dot_unc(atom, t.e[atom], fn) for atom, p in dist.items()
    ) - alpha_bar
    mean_beta = fsum(
        p * _beta_dot_unc(atom, t.e[atom], fn) for atom, p in dist.items()
    ) - beta_bar
    return mean_alpha, mean_beta


def check_density_ratio_identity(dist: DiscreteJointDistribution) -> float:
    """Max |lambda1/lambda0 - [u/(1-u)] [(1-pi) eta0] / [pi eta1]| over the support."""
    rule = ThresholdRule("le", ">=", -np.inf)  # eligibility plays no role here
    t = NuisanceTables(dist, rule)
    worst = 0.0
    seen = set()
    for atom in dist.atoms:
        key = (atom.lstar, atom.lelig)
        if key in seen or key not in t.u:
            continue
        seen.add(key)
        l, le = key
        if (1, l, le) not in t.lam or (0, l, le) not in t.lam:
            continue
        lam1 = t.lam[(1, l, le)]
        lam0 = t.lam[(0, l, le)]
        if lam0 == 0.0:
            raise ZeroMass("lambda0 vanishes on shared support")
        u = t.u[key]
        pi = t.pi[l]
        lhs = lam1 / lam0
        rhs = (u / (1.0 - u)) * ((1.0 - pi) * t.eta[(l, 0)]) / (pi * t.eta[(l, 1)])
        worst = max(worst, abs(lhs - rhs))
    return worst


def lemma_total_expectation_discrepancy(dist: DiscreteJointDistribution) -> float:
    """Max |E[Y | lstar, R=1] P(R=1 | lstar) - E[Y R | lstar]| over lstar values."""
    pairs = list(dist.items())
    worst = 0.0
    for l in sorted({a.lstar for a in dist.atoms}):
        in_l = lambda at, l=l: at.lstar == l
        p_r1 = _cond(pairs, lambda at: float(at.r), in_l)
        if p_r1 == 0.0:
            continue
        lhs = _cond(pairs, lambda at: at.y, lambda at, l=l: at.lstar == l and at.r == 1) * p_r1
        rhs = _cond(pairs, lambda at: at.y * at.r, in_l)
        worst = max(worst, abs(lhs - rhs))
    return worst


@dataclass(frozen=True)
class RemainderCheck:
    r_alpha: float
    r_beta: float
    residual_alpha: float
    residual_beta: float

    @property
    def alpha_gap(self) -> float:
        return abs(self.r_alpha - self.residual_alpha)

    @property
    def beta_gap(self) -> float:
        return abs(self.r_beta - self.residual_beta)


def check_remainder_structure(
    dist: DiscreteJointDistribution,
    rule: EligibilityRule,
    perturbation: dict,
    clip=(0.005, 0.995),
) -> RemainderCheck:
    """Enumerate the von Mises remainders and the direct expansion residuals.

    The residuals are E[uncentered dot-alpha/beta at the perturbed nuisances]
    minus the true functional values; the closed-form remainders are the
    second-order product displays. The two must agree for arbitrary bounded
    perturbations. Note the middle and last product terms enter with positive
    sign relative to (mu0 - mu0_bar) and (eta0 - eta0_bar); the derivation is
    re-checked here by enumeration.
    """
    t = NuisanceTables(dist, rule)
    true_fn = t.as_functions()
    pert_fn = t.perturbed(perturbation, clip)

    alpha_terms, beta_terms = [], []
    r_alpha_terms, r_beta_terms = [], []
    unc_alpha, unc_beta = [], []
    for atom, p in dist.items():
        l, a, r, y = atom.lstar, atom.a, atom.r, atom.y
        e = t.e[atom]
        if a == 1 and r == 1 and e == 1:
            alpha_terms.append(p / true_fn["eta1"](l))
            beta_terms.append(p * (y - true_fn["mu0"](l, atom.lelig)) / true_fn["eta1"](l))

        unc_alpha.append(p * _alpha_dot_unc(atom, e, pert_fn))
        unc_beta.append(p * _beta_dot_unc(atom, e, pert_fn))

        eta1, eta1_bar = true_fn["eta1"](l), pert_fn["eta1"](l)
        eta0, eta0_bar = true_fn["eta0"](l), pert_fn["eta0"](l)
        eps1, eps1_bar = true_fn["eps1"](l, y), pert_fn["eps1"](l, y)
        xi, xi_bar = true_fn["xi"](l, y), pert_fn["xi"](l, y)
        gam, gam_bar = true_fn["gamma"](l, y), pert_fn["gamma"](l, y)
        chi, chi_bar = true_fn["chi"](l, y), pert_fn["chi"](l, y)

        r_alpha_terms.append(p * a * (eps1_bar - eps1) * (1.0 - eta1 / eta1_bar))

        term1 = a * (1.0 - eta1 / eta1_bar) * (
            y * (eps1_bar - eps1) - (xi_bar - xi)
        )
        term3 = (1 - a) * ((eta0 - eta0_bar) / eta1_bar) * (
            y * (gam_bar - gam) - (chi_bar - chi)
        )
        term2 = 0.0
        if r == 1 and e == 1:
            mu0, mu0_bar = true_fn["mu0"](l, atom.lelig), pert_fn["mu0"](l, atom.lelig)
            u, u_bar = true_fn["u"](l, atom.lelig), pert_fn["u"](l, atom.lelig)
            term2 = (r * e / eta1_bar) * (mu0 - mu0_bar) * (
                (u * (1.0 - u_bar) - u_bar * (1.0 - u)) / (1.0 - u_bar)
            )
        r_beta_terms.append(p * (term1 + term2 + term3))

    alpha_true = fsum(alpha_terms)
    beta_true = fsum(beta_terms)
    return RemainderCheck(
        r_alpha=fsum(r_alpha_terms),
        r_beta=fsum(r_beta_terms),
        residual_alpha=fsum(unc_alpha) - alpha_true,
        residual_beta=fsum(unc_beta) - beta_true,
    )


# ---------------------------------------------------------------------------
# Construction, fixtures, IO, sampling
# ---------------------------------------------------------------------------


def from_conditionals(
    p_lstar: dict,
    p_a: dict,
    p_r: dict,
    p_lelig: dict,
    p_y: dict,
) -> DiscreteJointDistribution:
    """Assemble a joint law from its MAR-respecting factorization.

    Keys: p_lstar[l]; p_a[l] = P(a=1|l); p_r[(l, a)] = P(r=1|l,a);
    p_lelig[(l, a)] = {le: prob}; p_y[(l, a, le)] = {y: prob}. Because r
    depends only on (l, a), missingness at random holds by construction.
    """
    atoms, probs = [], []
    for l, pl in p_lstar.items():
        for a in (0, 1):
            pa = p_a[l] if a == 1 else 1.0 - p_a[l]
            for r in (0, 1):
                pr = p_r[(l, a)] if r == 1 else 1.0 - p_r[(l, a)]
                for le, ple in p_lelig[(l, a)].items():
                    for yv, py in p_y[(l, a, le)].items():
                        p = pl * pa * pr * ple * py
                        if p > 0.0:
                            atoms.append(Atom(lstar=l, a=a, r=r, lelig=le, y=yv))
                            probs.append(p)
    return DiscreteJointDistribution(atoms=tuple(atoms), probs=tuple(probs))


D1_RULE = ThresholdRule("le", ">=", 5.0)


def d1_distribution() -> DiscreteJointDistribution:
    """The committed audit fixture: binary lstar, lelig in {4, 6}, y in {0, 1, 2}.

    All conditional probabilities sit in [0.1, 0.9] so clipping never binds
    and no nuisance function is constant.
    """
    p_lstar = {(0,): 0.45, (1,): 0.55}
    p_a = {(0,): 0.40, (1,): 0.65}
    p_r = {((0,), 0): 0.55, ((0,), 1): 0.70, ((1,), 0): 0.60, ((1,), 1): 0.80}
    p_lelig = {
        ((0,), 0): {4.0: 0.65, 6.0: 0.35},
        ((0,), 1): {4.0: 0.45, 6.0: 0.55},
        ((1,), 0): {4.0: 0.40, 6.0: 0.60},
        ((1,), 1): {4.0: 0.25, 6.0: 0.75},
    }
    p_y = {
        ((0,), 0, 4.0): {0.0: 0.50, 1.0: 0.30, 2.0: 0.20},
        ((0,), 0, 6.0): {0.0: 0.35, 1.0: 0.35, 2.0: 0.30},
        ((0,), 1, 4.0): {0.0: 0.30, 1.0: 0.40, 2.0: 0.30},
        ((0,), 1, 6.0): {0.0: 0.20, 1.0: 0.30, 2.0: 0.50},
        ((1,), 0, 4.0): {0.0: 0.45, 1.0: 0.35, 2.0: 0.20},
        ((1,), 0, 6.0): {0.0: 0.30, 1.0: 0.40, 2.0: 0.30},
        ((1,), 1, 4.0): {0.0: 0.25, 1.0: 0.35, 2.0: 0.40},
        ((1,), 1, 6.0): {0.0: 0.15, 1.0: 0.30, 2.0: 0.55},
    }
    return from_conditionals(p_lstar, p_a, p_r, p_lelig, p_y)


def d1_mar_violating_distribution() -> DiscreteJointDistribution:
    """D1 with ascertainment depending on outcome and eligibility covariate.

    Complete cases over-sample high outcomes among the treated and low
    outcomes among controls (log-odds shift on eta), breaking MAR and
    producing a visible gap between the true ATTE and the coarsened
    identification functional.
    """
    from scipy.special import expit, logit as logit_fn

    base = d1_distribution()
    eta_base = {((0,), 0): 0.55, ((0,), 1): 0.70, ((1,), 0): 0.60, ((1,), 1): 0.80}
    atoms, probs = [], []
    for atom, p in base.items():
        sign = 1.0 if atom.a == 1 else -1.0
        delta = 1.5 * sign * (atom.y - 1.0) + (0.4 if atom.lelig >= 5.0 else -0.4)
        eb = eta_base[(atom.lstar, atom.a)]
        eta = float(expit(logit_fn(eb) + delta))
        marginal = eb if atom.r == 1 else 1.0 - eb
        target = eta if atom.r == 1 else 1.0 - eta
        atoms.append(atom)
        probs.append(p * target / marginal)
    return DiscreteJointDistribution(atoms=tuple(atoms), probs=tuple(probs))


def random_mar_distribution(seed: int) -> DiscreteJointDistribution:
    """Seeded random law with structural MAR (Dirichlet-style conditionals)."""
    rng = np.random.default_rng(seed)
    lstars = [(0,), (1,)]
    leligs = [4.0, 6.0]
    ys = [0.0, 1.0, 2.0]
    q = rng.uniform(0.2, 0.8)
    p_lstar = {lstars[0]: q, lstars[1]: 1.0 - q}
    p_a = {l: rng.uniform(0.15, 0.85) for l in lstars}
    p_r = {(l, a): rng.uniform(0.15, 0.85) for l in lstars for a in (0, 1)}
    p_lelig = {}
    for l in lstars:
        for a in (0, 1):
            z = rng.uniform(0.15, 0.85)
            p_lelig[(l, a)] = {leligs[0]: z, leligs[1]: 1.0 - z}
    p_y = {}
    for l in lstars:
        for a in (0, 1):
            for le in leligs:
                w = rng.dirichlet([2.0, 2.0, 2.0])
                p_y[(l, a, le)] = {yv: float(wi) for yv, wi in zip(ys, w)}
    return from_conditionals(p_lstar, p_a, p_r, p_lelig, p_y)


def save_distribution(path, dist: DiscreteJointDistribution) -> None:
    payload = {
        "atoms": [
            {
                "lstar": list(atom.lstar),
                "a": atom.a,
                "r": atom.r,
                "lelig": atom.lelig,
                "y": atom.y,
                "prob": prob,
            }
            for atom, prob in dist.items()
        ]
    }
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(payload, fh, indent=1, sort_keys=True)
        fh.write("\n")


def load_distribution(path) -> DiscreteJointDistribution:
    with open(path, encoding="utf-8") as fh:
        payload = json.load(fh)
    atoms, probs = [], []
    for row in payload["atoms"]:
        atoms.append(
            Atom(
                lstar=tuple(row["lstar"]),
                a=int(row["a"]),
                r=int(row["r"]),
                lelig=float(row["lelig"]),
                y=float(row["y"]),
            )
        )
        probs.append(float(row["prob"]))
    return DiscreteJointDistribution(atoms=tuple(atoms), probs=tuple(probs))


def distribution_schema(dist: DiscreteJointDistribution) -> CovariateSchema:
    """Numeric schema (l1..lk always observed, le eligibility-defining)."""
    k = len(dist.atoms[0].lstar)
    covs = [
        Covariate(name=f"l{i+1}", kind="numeric", partition=Partition.L_STAR)
        for i in range(k)
    ]
    covs.append(Covariate(name="le", kind="numeric", partition=Partition.L_ELIG_MISSING))
    return CovariateSchema(covariates=tuple(covs))


def sample_dataset(
    dist: DiscreteJointDistribution, n: int, seed: int
) -> CoarsenedDataset:
    """Draw n iid coarsened observations from the joint law."""
    rng = np.random.default_rng(seed)
    idx = rng.choice(len(dist.atoms), size=n, p=np.asarray(dist.probs))
    schema = distribution_schema(dist)
    records = []
    for i, j in enumerate(idx):
        atom = dist.atoms[j]
        lelig = (float(atom.lelig),) if atom.r == 1 else None
        records.append(
            CoarsenedObservation(
                id=str(i),
                lstar=tuple(float(v) for v in atom.lstar),
                a=atom.a,
                y=float(atom.y),
                r=atom.r,
                lelig=lelig,
            )
        )
    return CoarsenedDataset(schema=schema, records=tuple(records))
