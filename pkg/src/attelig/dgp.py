"""Synthetic data generator and the replication harness around it.

Generation follows the observed-data factorization: covariates, then
treatment, then the ascertainment flag, then the eligibility-defining lab
value among complete cases (a shifted gamma on the log-mean scale), then the
outcome. The lab value is drawn for every subject and masked afterwards when
r = 0, which preserves missingness-at-random by construction and lets the
truth oracle integrate over the unmasked law.

Coefficient terms are lists of factor strings: a bare name multiplies that
numeric column ('a' is the treatment, 'a1c' the lab value), 'name=level'
multiplies a categorical indicator, and multi-factor terms multiply their
factors together.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from typing import Callable, Optional, Sequence

import numpy as np
from scipy.special import expit
from scipy.stats import truncnorm

from .data import (
    AtteligError,
    CoarsenedDataset,
    CoarsenedObservation,
    Covariate,
    CovariateSchema,
    Partition,
    ThresholdRule,
    assign_folds,
)
from .estimators import (
    EstimateReport,
    cc_point,
    iwor_point,
    theta_eif,
    theta_if,
)
from .learners import fit_logistic, fit_ols
from .nuisance import NuisanceSpec, crossfit

Term = tuple[str, ...]
CoefList = tuple[tuple[Term, float], ...]


@dataclass(frozen=True)
class TruncatedNormal:
    mean: float
    sd: float
    lo: float
    hi: float

    def __post_init__(self):
        if not self.lo < self.hi:
            raise ValueError("truncation bounds must satisfy lo < hi")

    def sample(self, n: int, rng) -> np.ndarray:
        a = (self.lo - self.mean) / self.sd
        b = (self.hi - self.mean) / self.sd
        return truncnorm.rvs(a, b, loc=self.mean, scale=self.sd, size=n, random_state=rng)


@dataclass(frozen=True)
class LStarConfig:
    """Parametric marginals for the always-observed covariates.

    Defaults are tuned so the generator reproduces the published sample
    fractions (62% treated, 70% complete cases, 57% eligible among complete).
    """

    site_probs: tuple[float, float, float] = (0.05, 0.16, 0.79)  # WA, NC, SC
    gender_p: float = 0.8
    race_p: float = 0.5
    smoking_probs: tuple[float, float, float, float] = (0.12, 0.3494, 0.4826, 0.048)
    bmi: TruncatedNormal = TruncatedNormal(47.4, 7.0, 30.0, 80.0)
    age: TruncatedNormal = TruncatedNormal(47.8, 11.0, 19.0, 79.0)
    egfr: TruncatedNormal = TruncatedNormal(92.0, 20.0, 15.0, 180.0)

    def __post_init__(self):
        for probs in (self.site_probs, self.smoking_probs):
            if abs(sum(probs) - 1.0) > 1e-9 or min(probs) < 0:
                raise ValueError("categorical probabilities must be a distribution")
        for p in (self.gender_p, self.race_p):
            if not 0 <= p <= 1:
                raise ValueError("Bernoulli probability out of range")


SITES = ("WA", "NC", "SC")
SMOKING = ("current", "former", "never", "no_self_report")

TREAT_INTERCEPT = 0.96
TREAT_TERMS: CoefList = (
    (("site=NC",), -0.64),
    (("site=SC",), -0.96),
    (("gender",), 2.7e-2),
    (("race",), 0.35),
    (("baseline_bmi",), 1.6e-2),
    (("smoking=former",), -0.29),
    (("smoking=never",), -0.23),
    (("smoking=no_self_report",), -0.32),
    (("baseline_age",), 3e-3),
    (("egfr",), -5e-3),
)

MISS_INTERCEPT = 0.38
MISS_TERMS: CoefList = (
    (("site=NC",), -0.38),
    (("site=SC",), 0.79),
    (("gender",), -0.15),
    (("race",), 0.10),
    (("baseline_bmi",), -2e-2),
    (("smoking=former",), 0.44),
    (("smoking=never",), 0.32),
    (("smoking=no_self_report",), -2.58),
    (("baseline_age",), 1.1e-2),
    (("egfr",), -1e-4),
    (("a",), 0.50),
)

ELIG_INTERCEPT = 1.06
ELIG_TERMS: CoefList = (
    (("site=NC",), 0.23),
    (("site=SC",), -0.24),
    (("gender",), -0.10),
    (("race",), -6.9e-2),
    (("baseline_bmi",), -7.5e-3),
    (("baseline_bmi", "baseline_bmi"), 1e-4),
    (("smoking=former",), -5.7e-2),
    (("smoking=never",), -7.6e-2),
    (("smoking=no_self_report",), -9.4e-2),
    (("baseline_age",), 9.2e-3),
    (("egfr",), 7e-4),
    (("a",), 0.10),
)

OUT_INTERCEPT = -0.24
OUT_TERMS: CoefList = (
    (("a",), 3.3e-2),
    (("site=NC",), 0.18),
    (("site=SC",), 0.14),
    (("gender",), -0.14),
    (("race",), -1.5e-2),
    (("baseline_bmi",), -3.8e-3),
    (("smoking=former",), 3.8e-2),
    (("smoking=never",), 4.9e-2),
    (("smoking=no_self_report",), -0.15),
    (("baseline_age",), 9.7e-4),
    (("egfr",), 1.4e-4),
    (("a1c",), 2.2e-4),
    (("a", "a1c"), 3.8e-3),
    (("gender", "a1c"), 4.8e-3),
    (("gender", "baseline_bmi"), 2e-3),
    (("smoking=no_self_report", "a"), 0.17),
    (("smoking=never", "a"), -2.4e-2),
    (("smoking=former", "a"), -2.4e-2),
    (("site=NC", "a"), -0.12),
    (("site=SC", "a"), -0.10),
)


@dataclass(frozen=True)
class DgpConfig:
    n: int = 5000
    seed: int = 0
    treat_intercept: float = TREAT_INTERCEPT
    treat_terms: CoefList = TREAT_TERMS
    miss_intercept: float = MISS_INTERCEPT
    miss_terms: CoefList = MISS_TERMS
    elig_intercept: float = ELIG_INTERCEPT
    elig_terms: CoefList = ELIG_TERMS
    out_intercept: float = OUT_INTERCEPT
    out_terms: CoefList = OUT_TERMS
    alpha_shape: float = 4.83
    sigma_y2: float = 1e-2
    elig_threshold: float = 5.7
    lstar: LStarConfig = field(default_factory=LStarConfig)

    def __post_init__(self):
        if self.alpha_shape <= 0:
            raise ValueError("gamma shape must be positive")
        if self.sigma_y2 <= 0:
            raise ValueError("outcome variance must be positive")
        if self.n < 1:
            raise ValueError("sample size must be positive")

    def rule(self) -> ThresholdRule:
        return ThresholdRule("a1c", ">=", self.elig_threshold)


def dgp_schema() -> CovariateSchema:
    return CovariateSchema(
        covariates=(
            Covariate("site", "categorical", Partition.L_STAR, SITES),
            Covariate("gender", "numeric", Partition.L_STAR),
            Covariate("race", "numeric", Partition.L_STAR),
            Covariate("baseline_bmi", "numeric", Partition.L_STAR),
            Covariate("smoking", "categorical", Partition.L_STAR, SMOKING),
            Covariate("baseline_age", "numeric", Partition.L_STAR),
            Covariate("egfr", "numeric", Partition.L_STAR),
            Covariate("a1c", "numeric", Partition.L_ELIG_MISSING),
        )
    )


def _factor_values(frame: dict, factor: str) -> np.ndarray:
    if "=" in factor:
        name, level = factor.split("=", 1)
        return (frame[name] == level).astype(float)
    return np.asarray(frame[factor], dtype=float)


def linear_predictor(intercept: float, terms: CoefList, frame: dict) -> np.ndarray:
    n = len(next(iter(frame.values())))
    out = np.full(n, float(intercept))
    for term, coef in terms:
        vals = np.ones(n)
        for factor in term:
            vals = vals * _factor_values(frame, factor)
        out += coef * vals
    return out


def term_design(intercept_plus_terms: CoefList, frame: dict) -> np.ndarray:
    """Design matrix [1, term columns] for refitting a generator model."""
    n = len(next(iter(frame.values())))
    cols = [np.ones(n)]
    for term, _ in intercept_plus_terms:
        vals = np.ones(n)
        for factor in term:
            vals = vals * _factor_values(frame, factor)
        cols.append(vals)
    return np.column_stack(cols)


def sample_lstar(config: LStarConfig, n: int, rng) -> dict:
    return {
        "site": rng.choice(SITES, size=n, p=config.site_probs),
        "gender": (rng.random(n) < config.gender_p).astype(float),
        "race": (rng.random(n) < config.race_p).astype(float),
        "baseline_bmi": config.bmi.sample(n, rng),
        "smoking": rng.choice(SMOKING, size=n, p=config.smoking_probs),
        "baseline_age": config.age.sample(n, rng),
        "egfr": config.egfr.sample(n, rng),
    }


def _draw_unmasked(config: DgpConfig, n: int, rng) -> dict:
    """L*, treatment, ascertainment, and the (unmasked) lab value."""
    frame = sample_lstar(config.lstar, n, rng)
    pi = expit(linear_predictor(config.treat_intercept, config.treat_terms, frame))
    frame["a"] = (rng.random(n) < pi).astype(float)
    eta = expit(linear_predictor(config.miss_intercept, config.miss_terms, frame))
    frame["r"] = (rng.random(n) < eta).astype(float)
    lab_mean = np.exp(linear_predictor(config.elig_intercept, config.elig_terms, frame))
    frame["a1c"] = 3.0 + rng.gamma(config.alpha_shape, lab_mean / config.alpha_shape)
    return frame


def simulate_dataset(config: DgpConfig) -> CoarsenedDataset:
    """Generate one coarsened dataset; deterministic given the config seed."""
    rng = np.random.default_rng(config.seed)
    frame = _draw_unmasked(config, config.n, rng)
    mean_y = linear_predictor(config.out_intercept, config.out_terms, frame)
    frame["y"] = mean_y + rng.normal(0.0, math.sqrt(config.sigma_y2), config.n)

    schema = dgp_schema()
    records = []
    for i in range(config.n):
        lstar = (
            str(frame["site"][i]),
            float(frame["gender"][i]),
            float(frame["race"][i]),
            float(frame["baseline_bmi"][i]),
            str(frame["smoking"][i]),
            float(frame["baseline_age"][i]),
            float(frame["egfr"][i]),
        )
        r = int(frame["r"][i])
        records.append(
            CoarsenedObservation(
                id=str(i),
                lstar=lstar,
                a=int(frame["a"][i]),
                y=float(frame["y"][i]),
                r=r,
                lelig=(float(frame["a1c"][i]),) if r == 1 else None,
            )
        )
    return CoarsenedDataset(schema=schema, records=tuple(records))


def treatment_effect_surface(config: DgpConfig, frame: dict) -> np.ndarray:
    """mu1 - mu0 on a frame containing the unmasked lab value."""
    f1 = dict(frame)
    f1["a"] = np.ones_like(frame["a1c"], dtype=float)
    f0 = dict(frame)
    f0["a"] = np.zeros_like(frame["a1c"], dtype=float)
    lp1 = linear_predictor(config.out_intercept, config.out_terms, f1)
    lp0 = linear_predictor(config.out_intercept, config.out_terms, f0)
    return lp1 - lp0


def true_theta(
    config: DgpConfig, oracle_n: int = 10_000_000, chunk: int = 1_000_000,
    return_se: bool = False,
):
    """Monte Carlo truth over the unmasked generative law.

    Draws (L*, A, lab) with nothing masked, keeps treated eligible subjects,
    and averages the exact mean-difference surface (valid because the outcome
    conditional is Gaussian with a known mean). The draw stream is decoupled
    from the dataset stream so pinning one does not perturb the other.
    """
    if oracle_n < 10**6:
        raise ValueError("oracle needs at least 1e6 draws")
    rng = np.random.default_rng(np.random.SeedSequence([config.seed, 0x0A7C]))
    total = 0.0
    total_sq = 0.0
    kept = 0
    remaining = oracle_n
    while remaining > 0:
        m = min(chunk, remaining)
        remaining -= m
        frame = _draw_unmasked(config, m, rng)
        keep = (frame["a"] == 1) & (frame["a1c"] >= config.elig_threshold)
        tau = treatment_effect_surface(config, frame)[keep]
        total += float(np.sum(tau))
        total_sq += float(np.sum(tau**2))
        kept += int(np.sum(keep))
    if kept == 0:
        raise AtteligError("no treated eligible draws")
    mean = total / kept
    var = max(total_sq / kept - mean**2, 0.0)
    se = math.sqrt(var / kept)
    if return_se:
        return mean, se
    return mean


# Reference truth for the default configuration, computed once from
# true_theta(DgpConfig(), oracle_n=10**7); Monte Carlo SE 2.6e-05.
REFERENCE_THETA_TRUE = -0.04779479826614581


# ---------------------------------------------------------------------------
# Exact nuisance functions of the generator (diagnostics and truth-injection)
# ---------------------------------------------------------------------------


def exact_nuisances(config: DgpConfig, dataset: CoarsenedDataset):
    """Evaluate the generator's true nuisance functions on a dataset.

    eta and mu0 are the generator's own logistic/linear forms; u follows from
    Bayes' rule (the lab-density log-ratio is linear in the lab value, so u is
    exactly logistic given covariates); the outcome-conditional nuisances
    (eps1, xi, gamma, chi) integrate the shifted-gamma lab density against the
    Gaussian outcome kernel on a quadrature grid; omega1 and nu use gamma tail
    identities. Returns a NuisanceSet aligned with the dataset.
    """
    from scipy.stats import gamma as gamma_dist
    from .nuisance import NuisanceSet

    frame = _dataset_frame(dataset)
    n = dataset.n
    alpha = config.alpha_shape
    sigma = math.sqrt(config.sigma_y2)
    thr = config.elig_threshold - 3.0

    def lp(intercept, terms, a_value, a1c=None):
        f = dict(frame)
        f["a"] = np.full(n, float(a_value))
        if a1c is not None:
            f["a1c"] = a1c
        return linear_predictor(intercept, terms, f)

    eta1 = expit(lp(config.miss_intercept, config.miss_terms, 1))
    eta0 = expit(lp(config.miss_intercept, config.miss_terms, 0))
    pi = expit(lp(config.treat_intercept, config.treat_terms, 0))  # no 'a' term

    m1 = np.exp(lp(config.elig_intercept, config.elig_terms, 1))
    m0 = np.exp(lp(config.elig_intercept, config.elig_terms, 0))

    a1c_obs = frame["a1c"]
    complete = ~np.isnan(a1c_obs)
    g_obs = np.where(complete, a1c_obs - 3.0, 1.0)

    # u: logit u = logit pi + log(eta1/eta0) + alpha log(b1/b0) - (b1-b0) g
    b1 = alpha / m1
    b0 = alpha / m0
    logit_u = (
        np.log(pi / (1.0 - pi))
        + np.log(eta1 / eta0)
        + alpha * np.log(b1 / b0)
        - (b1 - b0) * g_obs
    )
    u = np.where(complete, expit(logit_u), np.nan)

    mu0_at = lambda a1c: lp(config.out_intercept, config.out_terms, 0, a1c=a1c)
    mu1_at = lambda a1c: lp(config.out_intercept, config.out_terms, 1, a1c=a1c)
    mu0 = np.where(complete, mu0_at(np.where(complete, a1c_obs, 3.0)), np.nan)

    # omega1 and nu from gamma tails: E[G 1{G>c}] = mean * sf(c; alpha+1)
    omega1 = gamma_dist.sf(thr, alpha, scale=m1 / alpha)
    tail_mean1 = m1 * gamma_dist.sf(thr, alpha + 1.0, scale=m1 / alpha)
    # mu1 - mu0 is linear in a1c: tau(a1c) = tau0 + tau_slope * a1c
    zero = np.zeros(n)
    tau0 = mu1_at(zero) - mu0_at(zero)
    tau_slope = (mu1_at(zero + 1.0) - mu0_at(zero + 1.0)) - tau0
    nu = tau0 * omega1 + tau_slope * (3.0 * omega1 + tail_mean1)

    # quadrature over the lab value for the outcome-conditional nuisances
    quad = 400
    y = dataset.column("y")
    eps1 = np.empty(n)
    xi = np.empty(n)
    gam = np.empty(n)
    chi = np.empty(n)
    for i in range(n):
        for arm, mean_arm in ((1, m1[i]), (0, m0[i])):
            scale = mean_arm / alpha
            hi_g = gamma_dist.ppf(1.0 - 1e-10, alpha, scale=scale)
            grid = np.linspace(1e-9, hi_g, quad)
            dens = gamma_dist.pdf(grid, alpha, scale=scale)
            a1c_grid = 3.0 + grid
            f_i = {
                key: np.full(quad, frame[key][i])
                if key not in ("site", "smoking")
                else np.full(quad, frame[key][i], dtype=object)
                for key in ("site", "gender", "race", "baseline_bmi",
                            "smoking", "baseline_age", "egfr")
            }
            f_i["a"] = np.full(quad, float(arm))
            f_i["a1c"] = a1c_grid
            mu_grid = linear_predictor(config.out_intercept, config.out_terms, f_i)
            kern = dens * np.exp(-0.5 * ((y[i] - mu_grid) / sigma) ** 2)
            total = np.trapezoid(kern, grid)
            elig = a1c_grid >= config.elig_threshold
            if arm == 1:
                mu0_grid = linear_predictor(
                    config.out_intercept, config.out_terms,
                    {**f_i, "a": np.zeros(quad)},
                )
                eps1[i] = np.trapezoid(kern * elig, grid) / total
                xi[i] = np.trapezoid(kern * elig * mu0_grid, grid) / total
            else:
                logit_u_grid = (
                    math.log(pi[i] / (1.0 - pi[i]))
                    + math.log(eta1[i] / eta0[i])
                    + alpha * math.log(b1[i] / b0[i])
                    - (b1[i] - b0[i]) * grid
                )
                odds = np.exp(logit_u_grid)
                gam[i] = np.trapezoid(kern * elig * odds, grid) / total
                chi[i] = np.trapezoid(kern * elig * odds * mu_grid, grid) / total
    return NuisanceSet(
        eta1=eta1, eta0=eta0, u=u, mu0=mu0, eps1=eps1, xi=xi, gamma=gam,
        chi=chi, nu=nu, omega1=omega1,
        fold_of=np.zeros(n, dtype=int),
    )


# ---------------------------------------------------------------------------
# Estimator tasks and the replication harness
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class EstimatorTask:
    """One estimator configuration to run inside each replication.

    kind CC/IWOR fit parametric nuisances; mu_design/eta_design select the
    correctly specified generator design ('true'), main effects only
    ('main'), or an intercept-only model ('intercept_only', eta only).
    """

    name: str
    kind: str  # CC | IWOR | IF | EIF
    mu_design: str = "true"
    eta_design: str = "true"

    def __post_init__(self):
        if self.kind not in ("CC", "IWOR", "IF", "EIF"):
            raise ValueError(f"unknown estimator kind {self.kind!r}")
        if self.mu_design not in ("true", "main"):
            raise ValueError(f"unknown mu design {self.mu_design!r}")
        if self.eta_design not in ("true", "main", "intercept_only"):
            raise ValueError(f"unknown eta design {self.eta_design!r}")


def _dataset_frame(dataset: CoarsenedDataset) -> dict:
    """Columns of the generator schema extracted back out of a dataset.

    The lab column is NaN where masked; parametric fits subset to complete
    cases before using it.
    """
    recs = dataset.records
    return {
        "site": np.array([rec.lstar[0] for rec in recs]),
        "gender": np.array([rec.lstar[1] for rec in recs], dtype=float),
        "race": np.array([rec.lstar[2] for rec in recs], dtype=float),
        "baseline_bmi": np.array([rec.lstar[3] for rec in recs], dtype=float),
        "smoking": np.array([rec.lstar[4] for rec in recs]),
        "baseline_age": np.array([rec.lstar[5] for rec in recs], dtype=float),
        "egfr": np.array([rec.lstar[6] for rec in recs], dtype=float),
        "a": dataset.column("a"),
        "a1c": np.array(
            [rec.lelig[0] if rec.lelig is not None else np.nan for rec in recs],
            dtype=float,
        ),
    }


MAIN_EFFECT_MU_TERMS: CoefList = tuple(
    (term, 0.0)
    for term in (
        ("a",), ("site=NC",), ("site=SC",), ("gender",), ("race",),
        ("baseline_bmi",), ("smoking=former",), ("smoking=never",),
        ("smoking=no_self_report",), ("baseline_age",), ("egfr",), ("a1c",),
    )
)


def make_mu0_fitter(config: DgpConfig, design: str = "true") -> Callable:
    """Parametric outcome-model fitter for the CC/IWOR baselines.

    Fits OLS on eligible complete cases with the requested design and
    returns per-record predictions at a = 0 (NaN where the lab is masked).
    """
    terms = config.out_terms if design == "true" else MAIN_EFFECT_MU_TERMS
    rule_threshold = config.elig_threshold

    def fit(dataset: CoarsenedDataset) -> np.ndarray:
        frame = _dataset_frame(dataset)
        complete = ~np.isnan(frame["a1c"])
        eligible = complete & (frame["a1c"] >= rule_threshold)
        if not np.any(eligible):
            raise AtteligError("no eligible complete cases to fit the outcome model")
        X = term_design(terms, frame)
        y = dataset.column("y")
        model = fit_ols(X[eligible], y[eligible])
        frame0 = dict(frame)
        frame0["a"] = np.zeros(dataset.n)
        X0 = term_design(terms, frame0)
        pred = X0 @ model.coef
        pred[~complete] = np.nan
        return pred

    return fit


def make_eta1_fitter(config: DgpConfig, design: str = "true") -> Callable:
    """Parametric ascertainment-model fitter returning eta(lstar, a=1)."""
    terms = config.miss_terms

    def fit(dataset: CoarsenedDataset) -> np.ndarray:
        r = dataset.column("r")
        if design == "intercept_only":
            return np.full(dataset.n, float(np.mean(r)))
        frame = _dataset_frame(dataset)
        X = term_design(terms, frame)
        model = fit_logistic(X, r, max_iter=100)
        frame1 = dict(frame)
        frame1["a"] = np.ones(dataset.n)
        X1 = term_design(terms, frame1)
        return expit(X1 @ model.coef)

    return fit


@dataclass
class ReplicationResult:
    rep: int
    estimates: dict  # name -> (theta_hat, se or nan, ci_lo or nan, ci_hi or nan)
    error: Optional[str] = None


def run_replication(
    config: DgpConfig,
    tasks: Sequence[EstimatorTask],
    nuisance_spec: NuisanceSpec,
    k: int,
    rep: int,
    rep_seed: int,
) -> ReplicationResult:
    """Simulate one dataset and run every configured estimator on it."""
    rep_config = replace(config, seed=rep_seed)
    try:
        dataset = simulate_dataset(rep_config)
        rule = config.rule()
        estimates = {}
        needs_crossfit = any(t.kind in ("IF", "EIF") for t in tasks)
        if needs_crossfit:
            folds = assign_folds(dataset.n, k, rep_seed + 1)
            nuis = crossfit(dataset, rule, nuisance_spec, folds, seed=rep_seed + 2)
        for task in tasks:
            if task.kind == "CC":
                mu0_hat = make_mu0_fitter(config, task.mu_design)(dataset)
                estimates[task.name] = (
                    cc_point(dataset, rule, mu0_hat), np.nan, np.nan, np.nan,
                )
            elif task.kind == "IWOR":
                mu0_hat = make_mu0_fitter(config, task.mu_design)(dataset)
                eta1_hat = make_eta1_fitter(config, task.eta_design)(dataset)
                estimates[task.name] = (
                    iwor_point(dataset, rule, mu0_hat, eta1_hat),
                    np.nan, np.nan, np.nan,
                )
            elif task.kind == "EIF":
                rep_report = theta_eif(nuis, dataset, rule)
                estimates[task.name] = (
                    rep_report.theta_hat, rep_report.se,
                    rep_report.ci_lo, rep_report.ci_hi,
                )
            else:
                rep_report = theta_if(nuis, dataset, rule)
                estimates[task.name] = (
                    rep_report.theta_hat, rep_report.se,
                    rep_report.ci_lo, rep_report.ci_hi,
                )
        return ReplicationResult(rep=rep, estimates=estimates)
    except Exception as exc:  # recorded, surfaced by the summary
        return ReplicationResult(rep=rep, estimates={}, error=f"{type(exc).__name__}: {exc}")


def _run_replication_star(args):
    return run_replication(*args)


@dataclass
class EstimatorSummary:
    name: str
    n_ok: int
    theta_mean: float
    sd: float
    percent_bias: float
    coverage: Optional[float]
    mean_se: Optional[float]


@dataclass
class SimulationSummary:
    theta_true: float
    n_reps: int
    n: int
    estimators: dict  # name -> EstimatorSummary
    failures: tuple[str, ...] = ()

    def to_dict(self) -> dict:
        def clean(x):
            if x is None or (isinstance(x, float) and math.isnan(x)):
                return None
            return x

        return {
            "theta_true": self.theta_true,
            "n_reps": self.n_reps,
            "n": self.n,
            "failures": list(self.failures),
            "estimators": {
                name: {
                    "n_ok": s.n_ok,
                    "theta_mean": s.theta_mean,
                    "sd": clean(s.sd),
                    "percent_bias": s.percent_bias,
                    "coverage": clean(s.coverage),
                    "mean_se": clean(s.mean_se),
                }
                for name, s in sorted(self.estimators.items())
            },
        }


def summarize(
    results: Sequence[ReplicationResult],
    tasks: Sequence[EstimatorTask],
    theta_true: float,
    n: int,
) -> SimulationSummary:
    ok = [res for res in results if res.error is None]
    failures = tuple(
        f"rep {res.rep}: {res.error}" for res in results if res.error is not None
    )
    if len(failures) > 0.02 * len(results):
        raise AtteligError(
            f"{len(failures)} of {len(results)} replications failed: "
            + "; ".join(failures[:5])
        )
    summaries = {}
    for task in tasks:
        thetas = np.array([res.estimates[task.name][0] for res in ok])
        ses = np.array([res.estimates[task.name][1] for res in ok])
        los = np.array([res.estimates[task.name][2] for res in ok])
        his = np.array([res.estimates[task.name][3] for res in ok])
        mean = float(np.mean(thetas))
        sd = float(np.std(thetas, ddof=1)) if len(thetas) > 1 else float("nan")
        coverage = None
        mean_se = None
        if not np.all(np.isnan(ses)):
            mean_se = float(np.mean(ses))
            coverage = float(np.mean((los <= theta_true) & (theta_true <= his)))
        summaries[task.name] = EstimatorSummary(
            name=task.name,
            n_ok=len(thetas),
            theta_mean=mean,
            sd=sd,
            percent_bias=100.0 * (mean - theta_true) / theta_true,
            coverage=coverage,
            mean_se=mean_se,
        )
    return SimulationSummary(
        theta_true=theta_true,
        n_reps=len(results),
        n=n,
        estimators=summaries,
        failures=failures,
    )


def run_simulation(
    config: DgpConfig,
    n_reps: int,
    tasks: Sequence[EstimatorTask],
    nuisance_spec: Optional[NuisanceSpec] = None,
    k: int = 2,
    workers: int = 1,
    theta_true_value: Optional[float] = None,
    oracle_n: int = 2_000_000,
) -> SimulationSummary:
    """Replication study: bias, spread, and CI coverage per estimator.

    Replications get independent seed streams spawned from the master seed
    and can run across processes; the reduction is order-independent.
    """
    if n_reps < 1:
        raise ValueError("need at least one replication")
    if nuisance_spec is None:
        nuisance_spec = NuisanceSpec()
    truth = (
        theta_true_value
        if theta_true_value is not None
        else true_theta(config, oracle_n=oracle_n)
    )
    children = np.random.SeedSequence(config.seed).spawn(n_reps)
    rep_seeds = [int(c.generate_state(1)[0]) for c in children]
    jobs = [
        (config, tuple(tasks), nuisance_spec, k, i, rep_seeds[i])
        for i in range(n_reps)
    ]
    if workers > 1:
        import multiprocessing as mp

        with mp.get_context("fork").Pool(workers) as pool:
            results = list(pool.imap(_run_replication_star, jobs, chunksize=1))
    else:
        results = [_run_replication_star(job) for job in jobs]
    results.sort(key=lambda res: res.rep)
    return summarize(results, tasks, truth, config.n)


def render_summary_table(summary: SimulationSummary) -> str:
    """Aligned text table with the replication-study columns."""
    lines = [
        f"theta_true = {summary.theta_true:.6g}   "
        f"(n = {summary.n}, reps = {summary.n_reps})",
        f"{'Estimator':<22}{'%-Bias':>10}{'SD':>12}{'Coverage':>10}",
    ]
    for name in sorted(summary.estimators):
        s = summary.estimators[name]
        cov = f"{s.coverage:.3f}" if s.coverage is not None else "---"
        lines.append(
            f"{name:<22}{s.percent_bias:>10.1f}{s.sd:>12.3e}{cov:>10}"
        )
    if summary.failures:
        lines.append(f"failures: {len(summary.failures)}")
    return "\n".join(lines)
