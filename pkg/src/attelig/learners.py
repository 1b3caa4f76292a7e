"""Regression and classification learners plus a cross-validated convex stack.

OLS, logistic (IRLS), and gamma GLM (log link) are implemented directly on
numpy; the bagged-tree learner wraps scikit-learn's random forests behind the
same fitted-model surface. The stack computes out-of-fold member predictions
and solves for nonnegative weights summing to one by projected gradient
descent on the probability simplex, then refits every member on the full
training data.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass, field
from typing import Optional, Sequence, Union

import numpy as np
from scipy.special import expit
from sklearn.ensemble import RandomForestClassifier, RandomForestRegressor

from .data import (
    AtteligError,
    CoarsenedObservation,
    Covariate,
    CovariateSchema,
    Partition,
    assign_folds,
)

DEFAULT_CLIP = (0.005, 0.995)


class UnknownCovariate(AtteligError):
    """A design term references a covariate the schema does not declare."""


class MissingValueInRequiredColumn(AtteligError):
    """A record lacks a value needed to build the requested design."""


class RankDeficient(AtteligError):
    """Design is rank deficient and the ridge fallback is disabled."""


class Separation(AtteligError):
    """Logistic fit diverged (typically perfectly separable data)."""


class SingleClass(AtteligError):
    """Binary target has only one class in the training subset."""


class NonPositiveResponse(AtteligError):
    """Gamma GLM requires strictly positive responses."""


class NonConvergence(AtteligError):
    """IRLS failed to converge within the iteration budget."""


class MemberAllFailed(AtteligError):
    """Every stack member failed to fit."""


# ---------------------------------------------------------------------------
# Design matrices
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class ColumnMeta:
    kind: str  # intercept | numeric | indicator | treatment | outcome | interaction
    name: str


@dataclass(frozen=True)
class DesignMatrix:
    values: np.ndarray
    columns: tuple[ColumnMeta, ...]

    @property
    def names(self) -> tuple[str, ...]:
        return tuple(c.name for c in self.columns)


def _base_columns(
    schema: CovariateSchema,
    records: Sequence[CoarsenedObservation],
    include_elig: bool,
    include_treatment: bool,
    outcome: Optional[np.ndarray],
    force_a: Optional[int],
):
    """Expand covariates into named value columns (reference level omitted)."""
    n = len(records)
    cols: dict[str, tuple[str, np.ndarray]] = {}
    order: list[tuple[str, str, np.ndarray]] = []  # (kind, name, values)

    def add(kind: str, name: str, values: np.ndarray):
        order.append((kind, name, values))

    def expand(cov: Covariate, block: str):
        if cov.kind == "numeric":
            vals = np.empty(n)
            for i, rec in enumerate(records):
                v = _record_value(rec, schema, cov.name, block)
                vals[i] = float(v)
            add("numeric", cov.name, vals)
        else:
            raw = [_record_value(rec, schema, cov.name, block) for rec in records]
            for level in cov.levels[1:]:
                ind = np.array([1.0 if v == level else 0.0 for v in raw])
                add("indicator", f"{cov.name}={level}", ind)

    blocks = list(schema.lstar)
    if include_elig:
        blocks.extend(schema.elig_missing)
    # numerics first in schema order, then categorical indicator groups
    for cov in blocks:
        if cov.kind == "numeric":
            expand(cov, "lstar" if cov.partition == Partition.L_STAR else "elig")
    for cov in blocks:
        if cov.kind == "categorical":
            expand(cov, "lstar" if cov.partition == Partition.L_STAR else "elig")
    if include_treatment:
        if force_a is None:
            a = np.array([float(rec.a) for rec in records])
        else:
            a = np.full(n, float(force_a))
        add("treatment", "a", a)
    if outcome is not None:
        add("outcome", "y", np.asarray(outcome, dtype=float))
    for kind, name, vals in order:
        cols[name] = (kind, vals)
    return order, cols


def _record_value(rec, schema: CovariateSchema, name: str, block: str):
    if block == "lstar":
        idx = [c.name for c in schema.lstar].index(name)
        return rec.lstar[idx]
    idx = [c.name for c in schema.elig_missing].index(name)
    if rec.lelig is None:
        raise MissingValueInRequiredColumn(
            f"record {rec.id!r}: eligibility covariate {name!r} is masked (r=0)"
        )
    return rec.lelig[idx]


def _interaction_factors(name: str, schema: CovariateSchema, cols, include_elig, include_treatment, outcome):
    """Resolve an interaction factor name to its expanded column names."""
    if name == "a":
        if not include_treatment:
            raise UnknownCovariate("interaction references 'a' but design excludes treatment")
        return ["a"]
    if name == "y":
        if outcome is None:
            raise UnknownCovariate("interaction references 'y' but design has no outcome column")
        return ["y"]
    try:
        cov = schema.covariate(name)
    except KeyError:
        raise UnknownCovariate(f"interaction references unknown covariate {name!r}")
    if cov.partition.value == "elig_missing" and not include_elig:
        raise UnknownCovariate(
            f"interaction references {name!r} but design excludes eligibility covariates"
        )
    if cov.kind == "numeric":
        return [name]
    return [f"{name}={level}" for level in cov.levels[1:]]


def build_design(
    schema: CovariateSchema,
    records: Sequence[CoarsenedObservation],
    interactions: Sequence[tuple[str, str]] = (),
    include_elig: bool = False,
    include_treatment: bool = False,
    outcome: Optional[np.ndarray] = None,
    force_a: Optional[int] = None,
) -> DesignMatrix:
    """Build the dense design for a record subset.

    Column order is deterministic: intercept, always-observed covariates in
    schema order (categoricals expand to indicators with the first declared
    level as reference), eligibility covariates when requested, treatment,
    outcome, then interaction products in the order given.

    Args:
        schema: covariate declarations.
        records: record subset; eligibility columns require r = 1 throughout.
        interactions: pairs of factor names; 'a' and 'y' are allowed.
        include_elig: include the eligibility-defining block.
        include_treatment: append the treatment column.
        outcome: values to append as a 'y' column (used by nuisances that
            condition on the outcome).
        force_a: override the treatment column (and its interactions) with a
            constant, for counterfactual evaluation.
    """
    order, cols = _base_columns(
        schema, records, include_elig, include_treatment, outcome, force_a
    )
    names = ["intercept"]
    metas = [ColumnMeta("intercept", "intercept")]
    arrays = [np.ones(len(records))]
    for kind, name, vals in order:
        names.append(name)
        metas.append(ColumnMeta(kind, name))
        arrays.append(vals)
    for left, right in interactions:
        for lname in _interaction_factors(left, schema, cols, include_elig, include_treatment, outcome):
            for rname in _interaction_factors(right, schema, cols, include_elig, include_treatment, outcome):
                name = f"{lname}*{rname}"
                if name in names:
                    raise ValueError(f"duplicate design column {name!r}")
                names.append(name)
                metas.append(ColumnMeta("interaction", name))
                arrays.append(cols[lname][1] * cols[rname][1])
    if len(set(names)) != len(names):
        raise ValueError("duplicate design columns")
    values = np.column_stack(arrays) if arrays else np.empty((len(records), 0))
    return DesignMatrix(values=values, columns=tuple(metas))


# ---------------------------------------------------------------------------
# Learner specs and fitted models
# ---------------------------------------------------------------------------

LEARNER_KINDS = ("ols", "logistic", "gamma_glm", "forest", "stack")


@dataclass(frozen=True)
class LearnerSpec:
    """Declarative learner choice: kind plus kind-specific hyperparameters."""

    kind: str
    mtry_fraction: float = 1.0
    num_trees: int = 100
    min_node_size: int = 5
    members: tuple["LearnerSpec", ...] = ()
    cv_folds: int = 2
    max_iter: int = 200
    tol: float = 1e-8
    ridge: bool = True

    def __post_init__(self):
        if self.kind not in LEARNER_KINDS:
            raise ValueError(f"unknown learner kind {self.kind!r}")
        if self.kind == "forest":
            if self.num_trees < 1 or self.min_node_size < 1 or self.mtry_fraction <= 0:
                raise ValueError("forest hyperparameters out of range")
        if self.kind == "stack":
            if len(self.members) < 2:
                raise ValueError("stack needs at least two members")
            if self.cv_folds < 2:
                raise ValueError("stack needs cv_folds >= 2")


def _values(X: Union[DesignMatrix, np.ndarray]) -> np.ndarray:
    if isinstance(X, DesignMatrix):
        return X.values
    return np.asarray(X, dtype=float)


@dataclass
class FittedOls:
    coef: np.ndarray
    ridge_used: bool = False

    def predict(self, X) -> np.ndarray:
        return _values(X) @ self.coef

    predict_in_sample = predict


@dataclass
class FittedLogistic:
    coef: np.ndarray
    coef_cov: np.ndarray
    n_iter: int = 0

    def predict(self, X) -> np.ndarray:
        return expit(_values(X) @ self.coef)

    predict_in_sample = predict


@dataclass
class FittedGamma:
    coef: np.ndarray
    shape: float

    def predict(self, X) -> np.ndarray:
        return np.exp(np.clip(_values(X) @ self.coef, -500, 500))

    predict_in_sample = predict


@dataclass
class FittedForest:
    model: object
    task: str
    clip: tuple[float, float] = DEFAULT_CLIP
    oob: Optional[np.ndarray] = None  # aligned with the training rows

    def predict(self, X) -> np.ndarray:
        vals = _values(X)
        if self.task == "probability":
            proba = self.model.predict_proba(vals)[:, 1]
            return np.clip(proba, self.clip[0], self.clip[1])
        return self.model.predict(vals)

    def predict_in_sample(self, X_train) -> np.ndarray:
        """Predictions on the model's own training rows.

        Bagged ensembles memorize in-bag labels, so out-of-bag aggregation is
        used where available; rows without any out-of-bag vote fall back to
        the ordinary prediction.
        """
        preds = self.predict(X_train)
        if self.oob is None:
            return preds
        ok = np.isfinite(self.oob)
        out = preds.copy()
        if self.task == "probability":
            out[ok] = np.clip(self.oob[ok], self.clip[0], self.clip[1])
        else:
            out[ok] = self.oob[ok]
        return out


@dataclass
class FittedConstant:
    value: float

    def predict(self, X) -> np.ndarray:
        return np.full(_values(X).shape[0], self.value)

    predict_in_sample = predict


@dataclass
class FittedStack:
    members: list
    weights: np.ndarray
    task: str
    clip: tuple[float, float] = DEFAULT_CLIP
    member_cv_risk: tuple[float, ...] = ()
    stack_cv_risk: float = float("nan")
    dropped: tuple[str, ...] = ()

    def _combine(self, preds: np.ndarray) -> np.ndarray:
        if self.task == "probability":
            preds = np.clip(preds, self.clip[0], self.clip[1])
        out = preds @ self.weights
        if self.task == "probability":
            out = np.clip(out, self.clip[0], self.clip[1])
        return out

    def predict(self, X) -> np.ndarray:
        return self._combine(np.column_stack([m.predict(X) for m in self.members]))

    def predict_in_sample(self, X_train) -> np.ndarray:
        """Training-row predictions (bagged members contribute out-of-bag)."""
        return self._combine(
            np.column_stack([m.predict_in_sample(X_train) for m in self.members])
        )


FittedModel = Union[FittedOls, FittedLogistic, FittedGamma, FittedForest, FittedConstant, FittedStack]


# ---------------------------------------------------------------------------
# Fitting routines
# ---------------------------------------------------------------------------


def fit_ols(X, y, ridge: bool = True) -> FittedOls:
    """Least squares with a documented ridge fallback for collinear designs.

    When the condition estimate of X'X exceeds 1e12, 1e-8 * trace(X'X)/p is
    added to the diagonal; with ridge disabled the same situation raises
    RankDeficient instead. Parametric-truth tests disable the fallback.
    """
    X = _values(X)
    y = np.asarray(y, dtype=float)
    n, p = X.shape
    if n < p:
        raise RankDeficient(f"n={n} < p={p}")
    sv = np.linalg.svd(X, compute_uv=False)
    cond_xtx = np.inf if sv[-1] == 0 else (sv[0] / sv[-1]) ** 2
    if cond_xtx > 1e12:
        if not ridge:
            raise RankDeficient(f"condition estimate {cond_xtx:.3g} exceeds 1e12")
        xtx = X.T @ X
        xtx[np.diag_indices(p)] += 1e-8 * np.trace(xtx) / p
        coef = np.linalg.solve(xtx, X.T @ y)
        return FittedOls(coef=coef, ridge_used=True)
    coef = np.linalg.lstsq(X, y, rcond=None)[0]
    return FittedOls(coef=coef)


def fit_logistic(X, y, max_iter: int = 200, tol: float = 1e-8) -> FittedLogistic:
    """Logistic regression by IRLS.

    Converges when every component of the score X'(y - p) is within tol of
    zero. Divergence (linear predictors beyond +-36, or no convergence within
    max_iter) raises Separation with a diagnostic.
    """
    X = _values(X)
    y = np.asarray(y, dtype=float)
    classes = np.unique(y)
    if not np.all(np.isin(classes, (0.0, 1.0))):
        raise ValueError("logistic target must be binary 0/1")
    if len(classes) < 2:
        raise SingleClass("binary target has a single class")
    n, p = X.shape
    beta = np.zeros(p)
    for it in range(1, max_iter + 1):
        eta = X @ beta
        if np.max(np.abs(eta)) > 36:
            raise Separation(
                f"linear predictor diverged at iteration {it} "
                f"(max |X beta| = {np.max(np.abs(eta)):.2f})"
            )
        prob = expit(eta)
        score = X.T @ (y - prob)
        if np.max(np.abs(score)) <= tol:
            w = np.maximum(prob * (1 - prob), 1e-10)
            info = X.T @ (w[:, None] * X)
            return FittedLogistic(coef=beta, coef_cov=np.linalg.pinv(info), n_iter=it)
        w = np.maximum(prob * (1 - prob), 1e-10)
        info = X.T @ (w[:, None] * X)
        try:
            step = np.linalg.solve(info, score)
        except np.linalg.LinAlgError:
            info[np.diag_indices(p)] += 1e-10 * np.trace(info) / p
            step = np.linalg.solve(info, score)
        beta = beta + step
    raise Separation(
        f"score not convergent within {max_iter} iterations "
        f"(max |score| = {np.max(np.abs(X.T @ (y - expit(X @ beta)))):.3g}, "
        f"max |beta| = {np.max(np.abs(beta)):.3g})"
    )


def fit_gamma_glm(X, y, max_iter: int = 100, tol: float = 1e-8) -> FittedGamma:
    """Gamma GLM with log link by IRLS, plus a method-of-moments shape estimate.

    The shape is 1 over the Pearson dispersion sum((y - mu)/mu)^2 / (n - p).
    """
    X = _values(X)
    y = np.asarray(y, dtype=float)
    if np.any(y <= 0):
        raise NonPositiveResponse("gamma GLM requires strictly positive responses")
    n, p = X.shape
    beta = np.linalg.lstsq(X, np.log(y), rcond=None)[0]
    for _ in range(max_iter):
        eta = np.clip(X @ beta, -500, 500)
        mu = np.exp(eta)
        score = X.T @ ((y - mu) / mu)
        if np.max(np.abs(score)) <= tol:
            break
        z = eta + (y - mu) / mu
        beta_new = np.linalg.lstsq(X, z, rcond=None)[0]
        if np.max(np.abs(beta_new - beta)) <= 1e-12:
            beta = beta_new
            break
        beta = beta_new
    else:
        raise NonConvergence(f"gamma IRLS did not converge in {max_iter} iterations")
    mu = np.exp(np.clip(X @ beta, -500, 500))
    pearson = float(np.sum(((y - mu) / mu) ** 2))
    dof = max(n - p, 1)
    shape = dof / pearson if pearson > 0 else np.inf
    return FittedGamma(coef=beta, shape=shape)


def fit_forest(
    X,
    y,
    task: str = "regression",
    mtry_fraction: float = 1.0,
    num_trees: int = 100,
    min_node_size: int = 5,
    seed: int = 0,
    clip: tuple[float, float] = DEFAULT_CLIP,
    compute_oob: bool = True,
) -> FittedForest:
    """Bagged CART ensemble (variance-reduction / Gini splits via scikit-learn).

    mtry is floor(mtry_fraction * sqrt(p)) clamped to [1, p]. Probability
    predictions are leaf class-1 fractions clipped to the configured bounds.
    """
    X = _values(X)
    y = np.asarray(y, dtype=float)
    if num_trees < 1 or min_node_size < 1:
        raise ValueError("forest hyperparameters out of range")
    p = X.shape[1]
    mtry = int(max(1, min(p, np.floor(mtry_fraction * np.sqrt(p)))))
    oob = None
    if task == "probability":
        if len(np.unique(y)) < 2:
            raise SingleClass("binary target has a single class")
        model = RandomForestClassifier(
            n_estimators=num_trees,
            criterion="gini",
            max_features=mtry,
            min_samples_leaf=min_node_size,
            bootstrap=True,
            oob_score=compute_oob,
            random_state=int(seed) % (2**32),
            n_jobs=1,
        )
        with np.errstate(invalid="ignore"), warnings.catch_warnings():
            warnings.simplefilter("ignore")
            model.fit(X, y.astype(int))
        if compute_oob:
            votes = model.oob_decision_function_
            total = votes.sum(axis=1)
            oob = np.where(total > 0, votes[:, -1], np.nan)
    else:
        model = RandomForestRegressor(
            n_estimators=num_trees,
            criterion="squared_error",
            max_features=mtry,
            min_samples_leaf=min_node_size,
            bootstrap=True,
            oob_score=compute_oob,
            random_state=int(seed) % (2**32),
            n_jobs=1,
        )
        with np.errstate(invalid="ignore"), warnings.catch_warnings():
            warnings.simplefilter("ignore")
            model.fit(X, y)
        if compute_oob:
            # with >= 50 trees every row has out-of-bag votes in practice
            oob = model.oob_prediction_.astype(float)
    return FittedForest(model=model, task=task, clip=clip, oob=oob)


def project_to_simplex(v: np.ndarray) -> np.ndarray:
    """Euclidean projection onto {w : w >= 0, sum w = 1}."""
    u = np.sort(v)[::-1]
    css = np.cumsum(u)
    rho = np.nonzero(u * np.arange(1, len(v) + 1) > (css - 1))[0][-1]
    theta = (css[rho] - 1) / (rho + 1.0)
    return np.maximum(v - theta, 0.0)


def _simplex_least_squares(Z: np.ndarray, y: np.ndarray, tol: float = 1e-12, max_iter: int = 50000) -> np.ndarray:
    n, m = Z.shape
    w = np.full(m, 1.0 / m)
    gram = Z.T @ Z / n
    zy = Z.T @ y / n
    lips = 2 * max(np.max(np.linalg.eigvalsh(gram)), 1e-12)
    for _ in range(max_iter):
        grad = 2 * (gram @ w - zy)
        w_new = project_to_simplex(w - grad / lips)
        if np.max(np.abs(w_new - w)) < tol:
            return w_new
        w = w_new
    return w


def fit_stack(
    X,
    y,
    members: Sequence[LearnerSpec],
    cv_folds: int = 2,
    task: str = "regression",
    seed: int = 0,
    clip: tuple[float, float] = DEFAULT_CLIP,
) -> FittedStack:
    """Cross-validated convex stack over the given member learners.

    Out-of-fold member predictions are assembled, weights minimizing squared
    loss over the simplex are found by projected gradient descent, and the
    surviving members are refit on the full data. Members that fail anywhere
    are dropped; if all fail, MemberAllFailed is raised.
    """
    if len(members) < 2:
        raise ValueError("stack needs at least two members")
    if cv_folds < 2:
        raise ValueError("stack needs cv_folds >= 2")
    X = _values(X)
    y = np.asarray(y, dtype=float)
    n = X.shape[0]
    folds = assign_folds(n, min(cv_folds, n), seed)
    seeds = np.random.SeedSequence(seed).generate_state(len(members) * (folds.k + 1))

    oof: list[np.ndarray] = []
    survivors: list[LearnerSpec] = []
    dropped: list[str] = []
    for mi, spec in enumerate(members):
        preds = np.empty(n)
        ok = True
        for j in range(folds.k):
            train = folds.complement(j)
            hold = folds.indices(j)
            try:
                model = fit_learner(
                    spec, X[train], y[train], task=task,
                    seed=int(seeds[mi * (folds.k + 1) + j]), clip=clip,
                )
            except AtteligError as exc:
                dropped.append(f"{spec.kind}: {exc}")
                ok = False
                break
            preds[hold] = model.predict(X[hold])
        if ok:
            if task == "probability":
                preds = np.clip(preds, clip[0], clip[1])
            oof.append(preds)
            survivors.append(spec)
    if not survivors:
        raise MemberAllFailed("; ".join(dropped))

    Z = np.column_stack(oof)
    if len(survivors) == 1:
        weights = np.array([1.0])
    else:
        weights = _simplex_least_squares(Z, y)
    member_risk = tuple(float(np.mean((y - Z[:, i]) ** 2)) for i in range(Z.shape[1]))
    stack_risk = float(np.mean((y - Z @ weights) ** 2))

    fitted = []
    kept_weights = []
    for mi, spec in enumerate(survivors):
        try:
            model = fit_learner(
                spec, X, y, task=task,
                seed=int(seeds[mi * (folds.k + 1) + folds.k]), clip=clip,
            )
        except AtteligError as exc:
            dropped.append(f"{spec.kind} (refit): {exc}")
            continue
        fitted.append(model)
        kept_weights.append(weights[mi])
    if not fitted:
        raise MemberAllFailed("; ".join(dropped))
    weights = np.asarray(kept_weights)
    total = weights.sum()
    weights = weights / total if total > 0 else np.full(len(fitted), 1.0 / len(fitted))
    return FittedStack(
        members=fitted,
        weights=weights,
        task=task,
        clip=clip,
        member_cv_risk=member_risk,
        stack_cv_risk=stack_risk,
        dropped=tuple(dropped),
    )


def fit_learner(spec: LearnerSpec, X, y, task: str, seed: int = 0, clip=DEFAULT_CLIP) -> FittedModel:
    """Dispatch a LearnerSpec to its fitting routine."""
    if spec.kind == "ols":
        return fit_ols(X, y, ridge=spec.ridge)
    if spec.kind == "logistic":
        return fit_logistic(X, y, max_iter=spec.max_iter, tol=spec.tol)
    if spec.kind == "gamma_glm":
        return fit_gamma_glm(X, y, max_iter=spec.max_iter, tol=spec.tol)
    if spec.kind == "forest":
        return fit_forest(
            X, y, task=task,
            mtry_fraction=spec.mtry_fraction,
            num_trees=spec.num_trees,
            min_node_size=spec.min_node_size,
            seed=seed, clip=clip,
        )
    if spec.kind == "stack":
        return fit_stack(
            X, y, members=spec.members, cv_folds=spec.cv_folds,
            task=task, seed=seed, clip=clip,
        )
    raise ValueError(f"unknown learner kind {spec.kind!r}")
