"""Command-line entry point: estimate, simulate, and oracle-check.

One YAML config file drives a reproducible run and is echoed verbatim into
every JSON output. Exit codes are stable: 0 success, 2 config error, 3 data
error, 4 estimation error, 5 identity violation.
"""

from __future__ import annotations

import argparse
import json
import os
import sys
from dataclasses import replace
from pathlib import Path

import numpy as np
import yaml

from . import dgp as dgp_mod
from .data import (
    AtteligError,
    CoarsenedDataset,
    ConjunctionRule,
    Covariate,
    CovariateSchema,
    Partition,
    ThresholdRule,
    assign_folds,
    eligibility_column,
    load_csv,
)
from .dgp import (
    DgpConfig,
    EstimatorTask,
    LStarConfig,
    TruncatedNormal,
    render_summary_table,
    run_simulation,
    true_theta,
)
from .estimators import theta_cc, theta_eif, theta_if, theta_iwor
from .learners import LearnerSpec, build_design, fit_logistic, fit_ols
from .nuisance import NUISANCE_NAMES, NuisanceSpec, crossfit
from .oracle import (
    D1_RULE,
    check_density_ratio_identity,
    check_remainder_structure,
    enumerate_eif_means,
    enumerate_identification_functional,
    enumerate_true_atte,
    lemma_total_expectation_discrepancy,
    load_distribution,
)

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_DATA = 3
EXIT_ESTIMATION = 4
EXIT_IDENTITY = 5


class ConfigError(Exception):
    pass


def _load_yaml(path) -> dict:
    try:
        with open(path, encoding="utf-8") as fh:
            cfg = yaml.safe_load(fh)
    except FileNotFoundError:
        raise ConfigError(f"config file not found: {path}")
    except yaml.YAMLError as exc:
        raise ConfigError(f"malformed config: {exc}")
    if not isinstance(cfg, dict):
        raise ConfigError("config must be a mapping")
    return cfg


def _workers(cfg: dict) -> int:
    env = os.environ.get("ATTELIG_THREADS")
    if env is not None:
        try:
            return max(1, int(env))
        except ValueError:
            raise ConfigError(f"ATTELIG_THREADS must be an integer, got {env!r}")
    return max(1, int(cfg.get("workers", 1)))


def _dump_json(path: Path, payload: dict) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(payload, fh, indent=2, sort_keys=True)
        fh.write("\n")


# ---------------------------------------------------------------------------
# Config parsing
# ---------------------------------------------------------------------------


def parse_schema(items) -> CovariateSchema:
    if not isinstance(items, list) or not items:
        raise ConfigError("data.schema must be a nonempty list of covariates")
    covs = []
    for item in items:
        try:
            part = Partition(item.get("partition", "lstar"))
            covs.append(
                Covariate(
                    name=item["name"],
                    kind=item.get("kind", "numeric"),
                    partition=part,
                    levels=tuple(item.get("levels", ())),
                )
            )
        except (KeyError, ValueError, TypeError) as exc:
            raise ConfigError(f"bad covariate declaration {item!r}: {exc}")
    try:
        return CovariateSchema(covariates=tuple(covs))
    except ValueError as exc:
        raise ConfigError(str(exc))


def parse_rule(node):
    if node is None:
        raise ConfigError("data.rule is required")
    try:
        if "all_of" in node:
            subs = tuple(
                ThresholdRule(sub["covariate"], sub["op"], float(sub["value"]))
                for sub in node["all_of"]
            )
            return ConjunctionRule(rules=subs)
        return ThresholdRule(node["covariate"], node["op"], float(node["value"]))
    except (KeyError, TypeError, ValueError) as exc:
        raise ConfigError(f"bad eligibility rule {node!r}: {exc}")


def parse_learner(node) -> LearnerSpec:
    if not isinstance(node, dict) or "kind" not in node:
        raise ConfigError(f"learner spec must name a kind: {node!r}")
    kwargs = {}
    for key in ("mtry_fraction", "num_trees", "min_node_size", "cv_folds", "max_iter"):
        if key in node:
            kwargs[key] = node[key]
    if "members" in node:
        kwargs["members"] = tuple(parse_learner(m) for m in node["members"])
    try:
        return LearnerSpec(kind=node["kind"], **kwargs)
    except (ValueError, TypeError) as exc:
        raise ConfigError(f"bad learner spec {node!r}: {exc}")


def parse_nuisance(node) -> NuisanceSpec:
    node = node or {}
    from .nuisance import default_learners

    learners = default_learners()
    overrides = node.get("learners", {}) or {}
    if "default_binary" in overrides:
        spec = parse_learner(overrides["default_binary"])
        for name in ("eta", "u", "eps1", "omega1"):
            learners[name] = spec
    if "default_regression" in overrides:
        spec = parse_learner(overrides["default_regression"])
        for name in ("mu0", "xi", "gamma", "chi", "nu"):
            learners[name] = spec
    for name, sub in overrides.items():
        if name in ("default_binary", "default_regression"):
            continue
        if name not in NUISANCE_NAMES:
            raise ConfigError(f"unknown nuisance {name!r} in learners section")
        if sub is None:
            raise ConfigError(f"nuisance {name!r} has no learner spec")
        learners[name] = parse_learner(sub)
    def pairs(key):
        return tuple((p[0], p[1]) for p in (node.get(key) or ()))

    try:
        return NuisanceSpec(
            learners=learners,
            mu0_strategy=node.get("mu0_strategy", "stratify"),
            restrict_mu_u_to_eligible=bool(node.get("restrict_mu_u_to_eligible", True)),
            clip=tuple(node.get("clip", (0.005, 0.995))),
            eta_interactions=pairs("eta_interactions"),
            u_interactions=pairs("u_interactions"),
            mu_interactions=pairs("mu_interactions"),
        )
    except (ValueError, TypeError, IndexError) as exc:
        raise ConfigError(str(exc))


def parse_dgp(node) -> DgpConfig:
    node = node or {}
    kwargs = {}
    for key in ("n", "seed", "alpha_shape", "sigma_y2", "elig_threshold"):
        if key in node:
            kwargs[key] = node[key]
    lstar_node = node.get("lstar")
    if lstar_node:
        ls_kwargs = {}
        for key in ("site_probs", "smoking_probs"):
            if key in lstar_node:
                ls_kwargs[key] = tuple(lstar_node[key])
        for key in ("gender_p", "race_p"):
            if key in lstar_node:
                ls_kwargs[key] = float(lstar_node[key])
        for key in ("bmi", "age", "egfr"):
            if key in lstar_node:
                tn = lstar_node[key]
                ls_kwargs[key] = TruncatedNormal(
                    tn["mean"], tn["sd"], tn["lo"], tn["hi"]
                )
        try:
            kwargs["lstar"] = LStarConfig(**ls_kwargs)
        except (ValueError, TypeError, KeyError) as exc:
            raise ConfigError(f"bad lstar section: {exc}")
    try:
        return DgpConfig(**kwargs)
    except (ValueError, TypeError) as exc:
        raise ConfigError(str(exc))


# ---------------------------------------------------------------------------
# estimate
# ---------------------------------------------------------------------------


def _parametric_fitters(schema, rule, cc_node):
    """Closures fitting the CC/IWOR parametric models on a dataset."""
    cc_node = cc_node or {}
    mu_interactions = tuple(
        (pair[0], pair[1]) for pair in cc_node.get("mu_interactions", ())
    )
    eta_design = cc_node.get("eta_design", "main_effects")
    if eta_design not in ("main_effects", "intercept_only"):
        raise ConfigError(f"unknown eta_design {eta_design!r}")

    def fit_mu0(ds: CoarsenedDataset) -> np.ndarray:
        r = ds.column("r")
        e = eligibility_column(rule, ds)
        train = np.flatnonzero((r == 1) & (e == 1))
        if train.size == 0:
            raise AtteligError("no eligible complete cases for the outcome model")
        train_records = [ds.records[i] for i in train]
        X = build_design(schema, train_records, include_elig=True,
                         include_treatment=True, interactions=mu_interactions)
        model = fit_ols(X, ds.column("y")[train])
        comp = np.flatnonzero(r == 1)
        comp_records = [ds.records[i] for i in comp]
        X0 = build_design(schema, comp_records, include_elig=True,
                          include_treatment=True, interactions=mu_interactions,
                          force_a=0)
        pred = np.full(ds.n, np.nan)
        pred[comp] = model.predict(X0)
        return pred

    def fit_eta1(ds: CoarsenedDataset) -> np.ndarray:
        r = ds.column("r")
        if eta_design == "intercept_only":
            return np.full(ds.n, float(np.mean(r)))
        X = build_design(schema, ds.records, include_treatment=True)
        model = fit_logistic(X, r, max_iter=100)
        X1 = build_design(schema, ds.records, include_treatment=True, force_a=1)
        return model.predict(X1)

    return fit_mu0, fit_eta1


def _estimates_table(reports) -> str:
    lines = [
        f"{'Estimator':<10}{'theta_hat':>12}{'SE':>12}{'CI lo':>12}{'CI hi':>12}{'n_tec':>8}"
    ]
    for rep in reports:
        lines.append(
            f"{rep.estimator:<10}{rep.theta_hat:>12.6f}{rep.se:>12.6f}"
            f"{rep.ci_lo:>12.6f}{rep.ci_hi:>12.6f}"
            f"{rep.n_treated_eligible_complete:>8d}"
        )
    return "\n".join(lines)


def cmd_estimate(cfg: dict, config_echo: dict) -> int:
    data_node = cfg.get("data")
    if not data_node or "csv" not in data_node:
        raise ConfigError("estimate needs a data section with a csv path")
    schema = parse_schema(data_node.get("schema"))
    rule = parse_rule(data_node.get("rule"))
    wanted = cfg.get("estimators", ["CC", "IWOR", "IF", "EIF"])
    for name in wanted:
        if name not in ("CC", "IWOR", "IF", "EIF"):
            raise ConfigError(f"unknown estimator {name!r}")
    nuis_spec = parse_nuisance(cfg.get("nuisance"))
    crossfit_node = cfg.get("crossfit", {}) or {}
    k = int(crossfit_node.get("k", 2))
    seed = int(crossfit_node.get("seed", 0))
    if k < 2:
        raise ConfigError("crossfit.k must be >= 2")
    boot_node = cfg.get("bootstrap", {}) or {}
    boot_b = int(boot_node.get("B", 200))
    level = float(boot_node.get("level", 0.95))
    if not 0.0 < level < 1.0:
        raise ConfigError("bootstrap.level must be in (0, 1)")
    out_dir = Path(cfg.get("output", {}).get("dir", "."))

    try:
        dataset = load_csv(data_node["csv"], schema)
    except (AtteligError, OSError) as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return EXIT_DATA

    reports = []
    try:
        meta = {
            "config_echo": config_echo,
            "folds": k,
            "seed": seed,
            "clip": list(nuis_spec.clip),
        }
        if "CC" in wanted or "IWOR" in wanted:
            fit_mu0, fit_eta1 = _parametric_fitters(schema, rule, cfg.get("cc_iwor"))
        if "IF" in wanted or "EIF" in wanted:
            folds = assign_folds(dataset.n, k, seed)
            nuis = crossfit(dataset, rule, nuis_spec, folds, seed=seed)
        for name in wanted:
            if name == "CC":
                reports.append(
                    theta_cc(dataset, rule, fit_mu0, bootstrap_b=boot_b,
                             seed=seed, level=level, metadata=dict(meta))
                )
            elif name == "IWOR":
                reports.append(
                    theta_iwor(dataset, rule, fit_mu0, fit_eta1, bootstrap_b=boot_b,
                               seed=seed, level=level, metadata=dict(meta))
                )
            elif name == "EIF":
                reports.append(theta_eif(nuis, dataset, rule, level=level,
                                         metadata=dict(meta)))
            else:
                reports.append(theta_if(nuis, dataset, rule, level=level,
                                        metadata=dict(meta)))
    except AtteligError as exc:
        print(f"estimation error: {exc}", file=sys.stderr)
        return EXIT_ESTIMATION

    for rep in reports:
        _dump_json(out_dir / f"estimate_{rep.estimator}.json", rep.to_dict())
    table = _estimates_table(reports)
    (out_dir / "estimates.txt").parent.mkdir(parents=True, exist_ok=True)
    (out_dir / "estimates.txt").write_text(table + "\n", encoding="utf-8")
    print(table)
    return EXIT_OK


# ---------------------------------------------------------------------------
# simulate
# ---------------------------------------------------------------------------


def parse_tasks(items) -> list[EstimatorTask]:
    if not items:
        raise ConfigError("simulate needs a nonempty estimators list")
    tasks = []
    for item in items:
        try:
            tasks.append(
                EstimatorTask(
                    name=item["name"],
                    kind=item["kind"],
                    mu_design=item.get("mu_design", "true"),
                    eta_design=item.get("eta_design", "true"),
                )
            )
        except (KeyError, ValueError, TypeError) as exc:
            raise ConfigError(f"bad estimator task {item!r}: {exc}")
    return tasks


def cmd_simulate(cfg: dict, config_echo: dict) -> int:
    dgp_config = parse_dgp(cfg.get("dgp"))
    tasks = parse_tasks(cfg.get("estimators"))
    nuis_spec = parse_nuisance(cfg.get("nuisance"))
    n_reps = int(cfg.get("replications", 1))
    if n_reps < 1:
        raise ConfigError("replications must be >= 1")
    k = int((cfg.get("crossfit", {}) or {}).get("k", 2))
    oracle_n = int((cfg.get("dgp", {}) or {}).get("oracle_n", 2_000_000))
    workers = _workers(cfg)
    out_dir = Path(cfg.get("output", {}).get("dir", "."))

    if (
        dgp_config == DgpConfig(n=dgp_config.n, seed=dgp_config.seed)
        and dgp_mod.REFERENCE_THETA_TRUE is not None
    ):
        truth = dgp_mod.REFERENCE_THETA_TRUE
        oracle_used = 10_000_000
    else:
        truth = true_theta(dgp_config, oracle_n=max(oracle_n, 1_000_000))
        oracle_used = max(oracle_n, 1_000_000)

    try:
        summary = run_simulation(
            dgp_config, n_reps, tasks, nuisance_spec=nuis_spec, k=k,
            workers=workers, theta_true_value=truth,
        )
    except AtteligError as exc:
        print(f"estimation error: {exc}", file=sys.stderr)
        return EXIT_ESTIMATION

    payload = summary.to_dict()
    payload["oracle_n"] = oracle_used
    payload["config_echo"] = config_echo
    _dump_json(out_dir / "simulation.json", payload)
    table = render_summary_table(summary)
    (out_dir / "simulation.txt").write_text(table + "\n", encoding="utf-8")
    print(table)
    return EXIT_OK


# ---------------------------------------------------------------------------
# oracle-check
# ---------------------------------------------------------------------------


def default_fixtures_dir() -> Path:
    return Path(__file__).resolve().parent / "fixtures"


def _check_positive_fixture(name: str, dist) -> list[str]:
    failures = []
    lines = []

    def check(label, value, tol):
        status = "ok" if value <= tol else "FAIL"
        lines.append(f"  {label:<28} max discrepancy {value:.3e}  [{status}]")
        if value > tol:
            failures.append(f"{name}: {label}")

    check("mar certificate", dist.mar_discrepancy(), 1e-12)
    gap = abs(
        enumerate_true_atte(dist, D1_RULE)
        - enumerate_identification_functional(dist, D1_RULE)
    )
    check("identification equality", gap, 1e-10)
    mean_a, mean_b = enumerate_eif_means(dist, D1_RULE)
    check("eif mean-zero (alpha)", abs(mean_a), 1e-10)
    check("eif mean-zero (beta)", abs(mean_b), 1e-10)
    check("density-ratio identity", check_density_ratio_identity(dist), 1e-12)
    check("total-expectation lemma", lemma_total_expectation_discrepancy(dist), 1e-12)
    single = check_remainder_structure(dist, D1_RULE, {"eps1": 1.1})
    check("remainder single (exact 0)", abs(single.r_alpha), 0.0)
    joint = check_remainder_structure(
        dist, D1_RULE,
        {"eps1": 1.1, "eta1": 0.9, "eta0": 1.05, "mu0": 1.2, "u": 0.85,
         "xi": 1.15, "gamma": 0.9, "chi": 1.1},
    )
    check("remainder expansion (alpha)", joint.alpha_gap, 1e-10)
    check("remainder expansion (beta)", joint.beta_gap, 1e-10)
    print(f"fixture {name}")
    print("\n".join(lines))
    return failures


def cmd_oracle_check(fixtures_dir) -> int:
    fixtures = Path(fixtures_dir) if fixtures_dir else default_fixtures_dir()
    if not fixtures.is_dir():
        print(f"data error: fixtures directory not found: {fixtures}", file=sys.stderr)
        return EXIT_DATA
    positives = sorted(fixtures.glob("*.json"))
    negatives = sorted((fixtures / "negative").glob("*.json")) if (fixtures / "negative").is_dir() else []
    if not positives and not negatives:
        print(f"data error: no fixtures under {fixtures}", file=sys.stderr)
        return EXIT_DATA

    failures = []
    for path in positives:
        try:
            dist = load_distribution(path)
        except (ValueError, KeyError, json.JSONDecodeError) as exc:
            print(f"data error: invalid fixture {path.name}: {exc}", file=sys.stderr)
            return EXIT_DATA
        failures.extend(_check_positive_fixture(path.name, dist))

    for path in negatives:
        try:
            dist = load_distribution(path)
        except (ValueError, KeyError, json.JSONDecodeError) as exc:
            print(f"data error: invalid fixture {path.name}: {exc}", file=sys.stderr)
            return EXIT_DATA
        gap = abs(
            enumerate_true_atte(dist, D1_RULE)
            - enumerate_identification_functional(dist, D1_RULE)
        )
        if gap > 0.01:
            print(
                f"fixture negative/{path.name}: expected-failure ok "
                f"(identification gap {gap:.4f} > 0.01)"
            )
        else:
            print(
                f"fixture negative/{path.name}: expected a visible identification "
                f"gap, got {gap:.3e}",
                file=sys.stderr,
            )
            failures.append(f"negative/{path.name}: no demonstrated bias")

    if failures:
        for f in failures:
            print(f"identity violation: {f}", file=sys.stderr)
        return EXIT_IDENTITY
    return EXIT_OK


# ---------------------------------------------------------------------------


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(
        prog="attelig",
        description="Estimators for the treated-and-eligible average treatment "
        "effect under eligibility covariates missing at random.",
    )
    sub = parser.add_subparsers(dest="command", required=True)
    p_est = sub.add_parser("estimate", help="run estimators on a CSV dataset")
    p_est.add_argument("--config", required=True)
    p_sim = sub.add_parser("simulate", help="run the replication study")
    p_sim.add_argument("--config", required=True)
    p_orc = sub.add_parser("oracle-check", help="verify enumeration identities")
    p_orc.add_argument("--fixtures", default=None)
    args = parser.parse_args(argv)

    try:
        if args.command == "oracle-check":
            return cmd_oracle_check(args.fixtures)
        cfg = _load_yaml(args.config)
        if args.command == "estimate":
            return cmd_estimate(cfg, cfg)
        return cmd_simulate(cfg, cfg)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())
