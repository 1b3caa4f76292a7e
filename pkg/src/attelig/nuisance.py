"""Cross-fitted nuisance estimation.

For each fold, every nuisance model is trained on the complementary folds and
evaluated on the held-out fold, so no prediction used downstream was produced
by a model that saw that observation. The nested regressions (xi, gamma, chi,
nu) are trained on pseudo-outcomes built from the same-fold mu0/u fits, which
is the sample-splitting arrangement the estimator's analysis assumes.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace
from typing import Mapping, Optional, Sequence

import numpy as np

from .data import (
    AtteligError,
    CoarsenedDataset,
    EligibilityRule,
    FoldAssignment,
    eligibility_column,
)
from .learners import (
    DesignMatrix,
    FittedConstant,
    LearnerSpec,
    MemberAllFailed,
    SingleClass,
    build_design,
    fit_learner,
)

NUISANCE_NAMES = ("eta", "u", "mu0", "eps1", "xi", "gamma", "chi", "nu", "omega1")

MU0_STRATEGIES = ("single_model", "stratify", "full_interactions")


class EmptySubset(AtteligError):
    """A nuisance's training subset is empty."""


class InsufficientControls(AtteligError):
    """Stratified outcome model has fewer control rows than design columns."""


class ClipViolation(AtteligError):
    """A probability prediction escaped the clip bounds (internal assertion)."""


class CrossfitError(AtteligError):
    """A nuisance fit failed; carries fold id and nuisance name."""

    def __init__(self, fold: int, nuisance: str, cause: Exception):
        super().__init__(f"fold {fold}, nuisance {nuisance!r}: {cause}")
        self.fold = fold
        self.nuisance = nuisance
        self.cause = cause


def default_learners(flexible: bool = True) -> dict:
    """Stacked logistic/OLS + forest specs per nuisance (or plain GLMs)."""
    if not flexible:
        return {
            "eta": LearnerSpec("logistic"),
            "u": LearnerSpec("logistic"),
            "mu0": LearnerSpec("ols"),
            "eps1": LearnerSpec("logistic"),
            "xi": LearnerSpec("ols"),
            "gamma": LearnerSpec("ols"),
            "chi": LearnerSpec("ols"),
            "nu": LearnerSpec("ols"),
            "omega1": LearnerSpec("logistic"),
        }
    forest = LearnerSpec("forest", mtry_fraction=2.0, num_trees=100, min_node_size=20)
    binary = LearnerSpec("stack", members=(LearnerSpec("logistic"), forest), cv_folds=2)
    contin = LearnerSpec("stack", members=(LearnerSpec("ols"), forest), cv_folds=2)
    return {
        "eta": binary,
        "u": binary,
        "mu0": contin,
        "eps1": binary,
        "xi": contin,
        "gamma": contin,
        "chi": contin,
        "nu": contin,
        "omega1": binary,
    }


@dataclass(frozen=True)
class NuisanceSpec:
    """Learner choices and fitting policy for the whole nuisance catalogue."""

    learners: Mapping[str, LearnerSpec] = field(default_factory=default_learners)
    mu0_strategy: str = "stratify"
    restrict_mu_u_to_eligible: bool = True
    clip: tuple[float, float] = (0.005, 0.995)
    eta_interactions: tuple[tuple[str, str], ...] = ()
    u_interactions: tuple[tuple[str, str], ...] = ()
    mu_interactions: tuple[tuple[str, str], ...] = ()

    def __post_init__(self):
        missing = [n for n in NUISANCE_NAMES if n not in self.learners]
        if missing:
            raise ValueError(f"missing learner specs for {missing}")
        if self.mu0_strategy not in MU0_STRATEGIES:
            raise ValueError(f"unknown mu0 strategy {self.mu0_strategy!r}")
        lo, hi = self.clip
        if not (0.0 < lo < hi < 1.0):
            raise ValueError("clip bounds must satisfy 0 < lo < hi < 1")


@dataclass(frozen=True)
class ObservationNuisances:
    """Per-observation view of the out-of-fold predictions."""

    eta1: float
    eta0: float
    u: float
    mu0: float
    eps1: float
    xi: float
    gamma: float
    chi: float
    nu: float
    omega1: float


@dataclass
class NuisanceSet:
    """Out-of-fold predictions for every observation, with fold provenance."""

    eta1: np.ndarray
    eta0: np.ndarray
    u: np.ndarray  # nan where r = 0
    mu0: np.ndarray  # nan where r = 0
    eps1: np.ndarray
    xi: np.ndarray
    gamma: np.ndarray
    chi: np.ndarray
    nu: np.ndarray
    omega1: np.ndarray
    fold_of: np.ndarray
    clip: tuple[float, float] = (0.005, 0.995)

    @property
    def n(self) -> int:
        return len(self.eta1)

    def for_observation(self, i: int) -> ObservationNuisances:
        return ObservationNuisances(
            eta1=float(self.eta1[i]),
            eta0=float(self.eta0[i]),
            u=float(self.u[i]),
            mu0=float(self.mu0[i]),
            eps1=float(self.eps1[i]),
            xi=float(self.xi[i]),
            gamma=float(self.gamma[i]),
            chi=float(self.chi[i]),
            nu=float(self.nu[i]),
            omega1=float(self.omega1[i]),
        )


def build_pseudo_outcomes(
    e: np.ndarray, y: np.ndarray, mu0_hat: np.ndarray, u_hat: np.ndarray,
    clip: tuple[float, float] = (0.005, 0.995),
) -> tuple[np.ndarray, np.ndarray, np.ndarray, np.ndarray]:
    """Pseudo-outcomes for the nested regressions on complete cases.

    Returns (E*mu0, E*u/(1-u), E*(u/(1-u))*mu0, E*(y - mu0)). Eligibility
    pre-multiplication zeroes ineligible rows.
    """
    e = np.asarray(e, dtype=float)
    if np.any((u_hat < clip[0] - 1e-12) | (u_hat > clip[1] + 1e-12)):
        raise ClipViolation("propensity predictions escaped the clip bounds")
    odds = u_hat / (1.0 - u_hat)
    p_xi = e * mu0_hat
    p_gamma = e * odds
    p_chi = e * odds * mu0_hat
    p_nu = e * (y - mu0_hat)
    return p_xi, p_gamma, p_chi, p_nu


def _fit_binary_with_fallback(spec, X, y, seed, clip):
    """Fit a classifier; degenerate targets collapse to a clipped constant."""
    try:
        return fit_learner(spec, X, y, task="probability", seed=seed, clip=clip)
    except (SingleClass, MemberAllFailed):
        mean = float(np.mean(y))
        return FittedConstant(min(max(mean, clip[0]), clip[1]))


def _require_rows(X, name):
    if X.shape[0] == 0:
        raise EmptySubset(f"no training rows for {name}")


def crossfit(
    dataset: CoarsenedDataset,
    rule: EligibilityRule,
    spec: NuisanceSpec,
    folds: FoldAssignment,
    seed: int = 0,
) -> NuisanceSet:
    """Fit the full nuisance catalogue with out-of-fold discipline.

    When the dataset has no missingness at all (every r = 1), the
    ascertainment probability is identically one and is substituted exactly
    rather than estimated; likewise for the eligibility probabilities when
    additionally every complete case is eligible. This keeps the estimator's
    algebraic reduction to the plain doubly robust ATT exact.
    """
    n = dataset.n
    schema = dataset.schema
    a = dataset.column("a")
    y = dataset.column("y")
    r = dataset.column("r")
    e = eligibility_column(rule, dataset)  # -1 where unknown
    lo, hi = spec.clip

    comp = np.flatnonzero(r == 1)
    comp_records = [dataset.records[i] for i in comp]
    all_complete = len(comp) == n
    all_eligible = all_complete and bool(np.all(e[comp] == 1))

    # Designs over all records
    X_eta_obs = build_design(schema, dataset.records, include_treatment=True,
                             interactions=spec.eta_interactions).values
    X_eta_a1 = build_design(schema, dataset.records, include_treatment=True,
                            interactions=spec.eta_interactions, force_a=1).values
    X_eta_a0 = build_design(schema, dataset.records, include_treatment=True,
                            interactions=spec.eta_interactions, force_a=0).values
    X_ly = build_design(schema, dataset.records, outcome=y).values
    X_l = build_design(schema, dataset.records).values

    # Designs over complete cases
    X_u = build_design(schema, comp_records, include_elig=True,
                       interactions=spec.u_interactions).values
    if spec.mu0_strategy == "single_model":
        X_mu = build_design(schema, comp_records, include_elig=True,
                            include_treatment=True,
                            interactions=spec.mu_interactions).values
        X_mu_a0 = build_design(schema, comp_records, include_elig=True,
                               include_treatment=True,
                               interactions=spec.mu_interactions, force_a=0).values
    elif spec.mu0_strategy == "full_interactions":
        inter = tuple(spec.mu_interactions) + tuple(
            ("a", c.name) for c in schema.covariates
        )
        X_mu = build_design(schema, comp_records, include_elig=True,
                            include_treatment=True, interactions=inter).values
        X_mu_a0 = build_design(schema, comp_records, include_elig=True,
                               include_treatment=True, interactions=inter,
                               force_a=0).values
    else:  # stratify
        X_mu = build_design(schema, comp_records, include_elig=True,
                            interactions=spec.mu_interactions).values
        X_mu_a0 = X_mu

    out = {
        name: np.full(n, np.nan)
        for name in ("eta1", "eta0", "u", "mu0", "eps1", "xi", "gamma", "chi", "nu", "omega1")
    }

    assignment = np.asarray(folds.assignment)
    comp_fold = assignment[comp]
    a_c = a[comp]
    y_c = y[comp]
    e_c = e[comp].astype(float)
    seeds = np.random.SeedSequence(seed).generate_state(folds.k * 16).reshape(folds.k, 16)

    for j in range(folds.k):
        tr = assignment != j
        ev = ~tr
        ctr = comp_fold != j  # complete-case rows in training folds
        cev = ~ctr

        def fit(name, kind, X, target, subset, seed_slot):
            X_sub = X[subset]
            t_sub = target[subset]
            _require_rows(X_sub, name)
            try:
                if kind == "probability":
                    return _fit_binary_with_fallback(
                        spec.learners[name], X_sub, t_sub,
                        int(seeds[j, seed_slot]), spec.clip,
                    )
                return fit_learner(
                    spec.learners[name], X_sub, t_sub, task="regression",
                    seed=int(seeds[j, seed_slot]), clip=spec.clip,
                )
            except AtteligError as exc:
                raise CrossfitError(j, name, exc) from exc

        # ascertainment
        if all_complete:
            out["eta1"][ev] = 1.0
            out["eta0"][ev] = 1.0
        else:
            eta_model = fit("eta", "probability", X_eta_obs, r, tr, 0)
            out["eta1"][ev] = np.clip(eta_model.predict(X_eta_a1[ev]), lo, hi)
            out["eta0"][ev] = np.clip(eta_model.predict(X_eta_a0[ev]), lo, hi)

        # treatment propensity and outcome model among complete cases
        mu_u_train = ctr.copy()
        if spec.restrict_mu_u_to_eligible:
            mu_u_train &= e_c == 1
        u_model = fit("u", "probability", X_u, a_c, mu_u_train, 1)
        u_ev = np.clip(u_model.predict(X_u[cev]), lo, hi)
        out["u"][comp[cev]] = u_ev

        if spec.mu0_strategy == "stratify":
            mu_train = mu_u_train & (a_c == 0)
            if int(np.sum(mu_train)) < X_mu.shape[1]:
                raise CrossfitError(
                    j, "mu0",
                    InsufficientControls(
                        f"{int(np.sum(mu_train))} control rows for "
                        f"{X_mu.shape[1]} design columns"
                    ),
                )
        else:
            mu_train = mu_u_train
        mu_model = fit("mu0", "regression", X_mu, y_c, mu_train, 2)
        out["mu0"][comp[cev]] = mu_model.predict(X_mu_a0[cev])

        # eligibility probability given (lstar, y) and given lstar alone
        treated_cc = ctr & (a_c == 1)
        if all_eligible:
            out["eps1"][ev] = 1.0
            out["omega1"][ev] = 1.0
        else:
            eps_model = fit("eps1", "probability", X_ly[comp], e_c, treated_cc, 3)
            out["eps1"][ev] = np.clip(eps_model.predict(X_ly[ev]), lo, hi)
            omega_model = fit("omega1", "probability", X_l[comp], e_c, treated_cc, 4)
            out["omega1"][ev] = np.clip(omega_model.predict(X_l[ev]), lo, hi)

        # nested pseudo-outcome regressions (same-fold mu0/u predictions;
        # rows whose evaluation design coincides with a training row get
        # out-of-bag values from bagged members, so the pseudo-outcomes are
        # not memorized labels)
        def same_fold_predictions(model, X_train, train_mask, X_eval, eval_mask,
                                  identical_mask):
            preds = model.predict(X_eval[eval_mask])
            replace_rows = (identical_mask & train_mask)[eval_mask]
            if np.any(replace_rows):
                lookup = np.full(len(train_mask), np.nan)
                lookup[train_mask] = model.predict_in_sample(X_train[train_mask])
                preds[replace_rows] = lookup[eval_mask][replace_rows]
            return preds

        mu0_tr = same_fold_predictions(
            mu_model, X_mu, mu_train, X_mu_a0, ctr, a_c == 0,
        )
        u_tr = np.clip(
            same_fold_predictions(
                u_model, X_u, mu_u_train, X_u, ctr, np.ones(len(ctr), dtype=bool),
            ),
            lo, hi,
        )
        p_xi, p_gamma, p_chi, p_nu = build_pseudo_outcomes(
            np.maximum(e_c[ctr], 0.0), y_c[ctr], mu0_tr, u_tr, spec.clip
        )
        comp_tr_idx = comp[ctr]
        tr_treated = a[comp_tr_idx] == 1
        tr_control = ~tr_treated

        X_ly_ctr = X_ly[comp_tr_idx]
        X_l_ctr = X_l[comp_tr_idx]
        xi_model = fit("xi", "regression", X_ly_ctr, p_xi, tr_treated, 5)
        out["xi"][ev] = xi_model.predict(X_ly[ev])
        gamma_model = fit("gamma", "regression", X_ly_ctr, p_gamma, tr_control, 6)
        out["gamma"][ev] = gamma_model.predict(X_ly[ev])
        chi_model = fit("chi", "regression", X_ly_ctr, p_chi, tr_control, 7)
        out["chi"][ev] = chi_model.predict(X_ly[ev])
        nu_model = fit("nu", "regression", X_l_ctr, p_nu, tr_treated, 8)
        out["nu"][ev] = nu_model.predict(X_l[ev])

    return NuisanceSet(
        eta1=out["eta1"], eta0=out["eta0"], u=out["u"], mu0=out["mu0"],
        eps1=out["eps1"], xi=out["xi"], gamma=out["gamma"], chi=out["chi"],
        nu=out["nu"], omega1=out["omega1"],
        fold_of=assignment.copy(), clip=spec.clip,
    )
