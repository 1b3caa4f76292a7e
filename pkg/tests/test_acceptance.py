"""Acceptance suite: every criterion at its stated tolerance.

Each test prints one PASS/FAIL line (run with -s to see them as they land).
The replication study dominates the runtime; it parallelizes across
available cores.
"""

import json
import multiprocessing
import shutil
import time
from dataclasses import replace
from pathlib import Path

import numpy as np
import pytest
import yaml

from attelig.cli import main as cli_main
from attelig.data import CoarsenedDataset, assign_folds, eligibility_column, load_csv
from attelig.dgp import (
    DgpConfig,
    EstimatorTask,
    REFERENCE_THETA_TRUE,
    run_simulation,
    simulate_dataset,
)
from attelig.estimators import dr_att_one_step, theta_eif, theta_if
from attelig.learners import (
    LearnerSpec,
    fit_gamma_glm,
    fit_logistic,
    fit_ols,
    fit_stack,
)
from attelig.nuisance import NuisanceSpec, crossfit
from attelig.oracle import (
    D1_RULE,
    check_density_ratio_identity,
    check_remainder_structure,
    d1_distribution,
    enumerate_eif_means,
    enumerate_identification_functional,
    enumerate_true_atte,
    random_mar_distribution,
)

REPO = Path(__file__).resolve().parent.parent


def report(criterion: str, ok: bool, detail: str):
    print(f"[{'PASS' if ok else 'FAIL'}] {criterion}: {detail}")
    assert ok, f"{criterion}: {detail}"


def study_nuisance_spec() -> NuisanceSpec:
    """Stacked learners used for the replication study."""
    forest_bin = LearnerSpec("forest", mtry_fraction=2.0, num_trees=150, min_node_size=80)
    forest_reg = LearnerSpec("forest", mtry_fraction=2.0, num_trees=150, min_node_size=120)
    binary = LearnerSpec("stack", members=(LearnerSpec("logistic"), forest_bin), cv_folds=2)
    contin = LearnerSpec("stack", members=(LearnerSpec("ols"), forest_reg), cv_folds=2)
    return NuisanceSpec(
        learners={
            "eta": binary, "u": binary, "eps1": binary, "omega1": binary,
            "mu0": contin, "xi": contin, "gamma": contin, "chi": contin, "nu": contin,
        },
        u_interactions=(
            ("a1c", "site"), ("a1c", "baseline_bmi"),
            ("a1c", "baseline_age"), ("a1c", "smoking"),
        ),
        mu_interactions=(("gender", "a1c"), ("gender", "baseline_bmi")),
    )


FIXTURES = [("d1", d1_distribution())] + [
    (f"random-{seed}", random_mar_distribution(seed)) for seed in range(100)
]


def test_criterion_1_identification_oracle():
    t0 = time.time()
    worst = 0.0
    for _, dist in FIXTURES:
        gap = abs(
            enumerate_true_atte(dist, D1_RULE)
            - enumerate_identification_functional(dist, D1_RULE)
        )
        worst = max(worst, gap)
    elapsed = time.time() - t0
    report(
        "criterion 1 (identification oracle)",
        worst <= 1e-10 and elapsed < 10,
        f"max |true - functional| = {worst:.2e} over {len(FIXTURES)} laws in {elapsed:.1f}s",
    )


def test_criterion_2_eif_mean_zero():
    t0 = time.time()
    worst = 0.0
    for _, dist in FIXTURES:
        mean_a, mean_b = enumerate_eif_means(dist, D1_RULE)
        worst = max(worst, abs(mean_a), abs(mean_b))
    elapsed = time.time() - t0
    report(
        "criterion 2 (EIF mean-zero)",
        worst <= 1e-10 and elapsed < 10,
        f"max |mean| = {worst:.2e} in {elapsed:.1f}s",
    )


def test_criterion_3_remainder_structure():
    d1 = d1_distribution()
    singles_ok = True
    for pert in ({"eps1": 1.1}, {"eta1": 0.9}):
        singles_ok &= check_remainder_structure(d1, D1_RULE, pert).r_alpha == 0.0
    joint = check_remainder_structure(
        d1, D1_RULE,
        {"eps1": 1.1, "eta1": 0.9, "eta0": 1.05, "mu0": 1.2, "u": 0.85,
         "xi": 1.15, "gamma": 0.9, "chi": 1.1},
    )
    report(
        "criterion 3 (remainder structure)",
        singles_ok and joint.alpha_gap <= 1e-10 and joint.beta_gap <= 1e-10,
        f"single-perturbation R_alpha exact zero: {singles_ok}; "
        f"joint residual gaps {joint.alpha_gap:.2e}/{joint.beta_gap:.2e}",
    )


def test_criterion_4_density_ratio_identity():
    worst = max(check_density_ratio_identity(dist) for _, dist in FIXTURES)
    report(
        "criterion 4 (density-ratio identity)",
        worst <= 1e-12,
        f"max discrepancy {worst:.2e} across {len(FIXTURES)} laws",
    )


def test_criterion_5_degenerate_reduction():
    # 500-row all-complete all-eligible fixture
    base = simulate_dataset(replace(DgpConfig(), n=3000, seed=505, miss_intercept=50.0))
    keep = [rec for rec in base.records
            if rec.lelig is not None and rec.lelig[0] >= 5.7][:500]
    assert len(keep) == 500
    dataset = CoarsenedDataset(base.schema, tuple(keep))
    rule = DgpConfig().rule()
    nuis = crossfit(dataset, rule, study_nuisance_spec(),
                    assign_folds(dataset.n, 2, 7), seed=8)
    reference = dr_att_one_step(
        dataset.column("y"), dataset.column("a"), nuis.mu0, nuis.u
    )
    eif = theta_eif(nuis, dataset, rule).theta_hat
    iff = theta_if(nuis, dataset, rule).theta_hat
    gap = max(abs(eif - reference), abs(iff - reference))
    report(
        "criterion 5 (degenerate reduction)",
        gap <= 1e-12,
        f"max |theta - one-step DR-ATT| = {gap:.2e} on 500 rows",
    )


def test_criterion_6_dgp_marginals():
    cfg = DgpConfig(n=100_000, seed=8675309)
    ds = simulate_dataset(cfg)
    a = ds.column("a")
    r = ds.column("r")
    e = eligibility_column(cfg.rule(), ds)
    treated = float(np.mean(a))
    complete = float(np.mean(r))
    elig = float(np.mean(e[r == 1] == 1))
    ok = (
        abs(treated - 0.62) <= 0.02
        and abs(complete - 0.70) <= 0.02
        and abs(elig - 0.57) <= 0.02
    )
    report(
        "criterion 6 (generator marginals)",
        ok,
        f"treated {treated:.3f} (0.62±0.02), complete {complete:.3f} (0.70±0.02), "
        f"eligible|complete {elig:.3f} (0.57±0.02)",
    )


@pytest.fixture(scope="module")
def desk_scale_study():
    tasks = [
        EstimatorTask("cc_true_mu", "CC", mu_design="true"),
        EstimatorTask("iwor_true", "IWOR", mu_design="true", eta_design="true"),
        EstimatorTask("iwor_eta_intercept", "IWOR", mu_design="true",
                      eta_design="intercept_only"),
        EstimatorTask("eif_stack", "EIF"),
        EstimatorTask("if_stack", "IF"),
    ]
    workers = max(1, multiprocessing.cpu_count())
    t0 = time.time()
    summary = run_simulation(
        DgpConfig(n=5000, seed=20260811),
        n_reps=200,
        tasks=tasks,
        nuisance_spec=study_nuisance_spec(),
        k=2,
        workers=workers,
        theta_true_value=REFERENCE_THETA_TRUE,
    )
    print(f"\n[desk-scale study] 200 reps at n=5000 on {workers} workers: "
          f"{time.time() - t0:.0f}s, {len(summary.failures)} failures")
    return summary


def test_criterion_7a_cc_bias_band(desk_scale_study):
    bias = desk_scale_study.estimators["cc_true_mu"].percent_bias
    report(
        "criterion 7a (complete-case bias)",
        10.0 <= bias <= 21.0,
        f"relative bias {bias:.1f}% (band [10, 21])",
    )


def test_criterion_7b_iwor_true_unbiased(desk_scale_study):
    bias = desk_scale_study.estimators["iwor_true"].percent_bias
    report(
        "criterion 7b (IWOR, both models true)",
        abs(bias) <= 2.0,
        f"relative bias {bias:.2f}% (|bias| <= 2)",
    )


def test_criterion_7c_iwor_misspecified_eta(desk_scale_study):
    bias = desk_scale_study.estimators["iwor_eta_intercept"].percent_bias
    report(
        "criterion 7c (IWOR, intercept-only ascertainment)",
        bias >= 10.0,
        f"relative bias {bias:.1f}% (>= 10)",
    )


def test_criterion_7d_if_eif_bias_and_coverage(desk_scale_study):
    eif = desk_scale_study.estimators["eif_stack"]
    iff = desk_scale_study.estimators["if_stack"]
    ok = (
        abs(eif.percent_bias) <= 2.0
        and abs(iff.percent_bias) <= 2.0
        and 0.90 <= eif.coverage <= 0.98
        and 0.90 <= iff.coverage <= 0.98
    )
    report(
        "criterion 7d (EIF/IF bias and coverage)",
        ok,
        f"EIF bias {eif.percent_bias:+.2f}% cov {eif.coverage:.3f}; "
        f"IF bias {iff.percent_bias:+.2f}% cov {iff.coverage:.3f} "
        f"(|bias| <= 2, coverage in [0.90, 0.98])",
    )


def test_criterion_7e_if_se_not_smaller(desk_scale_study):
    eif = desk_scale_study.estimators["eif_stack"]
    iff = desk_scale_study.estimators["if_stack"]
    report(
        "criterion 7e (efficiency ordering)",
        iff.mean_se >= eif.mean_se,
        f"mean SE IF {iff.mean_se:.5f} >= mean SE EIF {eif.mean_se:.5f}",
    )


def test_criterion_8_learner_correctness():
    rng = np.random.default_rng(88)
    # OLS matches the closed-form normal equations
    X = np.column_stack([np.ones(300), rng.normal(size=(300, 3))])
    y = rng.normal(size=300)
    coef = fit_ols(X, y).coef
    closed_form = np.linalg.solve(X.T @ X, X.T @ y)
    ols_ok = np.max(np.abs(coef - closed_form)) <= 1e-8

    # logistic score at convergence
    p = 1 / (1 + np.exp(-(0.3 + 0.8 * X[:, 1])))
    yb = (rng.random(300) < p).astype(float)
    logit = fit_logistic(X[:, :2], yb)
    score_ok = np.max(np.abs(X[:, :2].T @ (yb - logit.predict(X[:, :2])))) <= 1e-8

    # gamma shape recovery at the generator's published shape
    n = 100_000
    x = rng.normal(size=n)
    mean = np.exp(0.6 + 0.25 * x)
    yg = rng.gamma(4.83, mean / 4.83)
    shape = fit_gamma_glm(np.column_stack([np.ones(n), x]), yg).shape
    gamma_ok = abs(shape - 4.83) / 4.83 <= 0.05

    # stack weights on the simplex
    stack = fit_stack(
        X, y, members=[LearnerSpec("ols"), LearnerSpec("forest", num_trees=60)],
        cv_folds=2, seed=3,
    )
    simplex_ok = (
        np.all(stack.weights >= 0) and abs(stack.weights.sum() - 1.0) <= 1e-10
    )
    report(
        "criterion 8 (learner correctness)",
        ols_ok and score_ok and gamma_ok and simplex_ok,
        f"ols {ols_ok}, logistic score {score_ok}, "
        f"gamma shape {shape:.3f} (4.83±5%), simplex {simplex_ok}",
    )


def test_criterion_9_cli_determinism(tmp_path):
    cfg = yaml.safe_load((REPO / "demos" / "estimate_config.yaml").read_text())
    cfg["data"]["csv"] = str(REPO / "demos" / "demo_data.csv")
    cfg["output"]["dir"] = str(tmp_path / "out")
    cfg["workers"] = 1
    cfg_path = tmp_path / "cfg.yaml"
    cfg_path.write_text(yaml.safe_dump(cfg), encoding="utf-8")

    assert cli_main(["estimate", "--config", str(cfg_path)]) == 0
    first = {p.name: p.read_bytes() for p in (tmp_path / "out").glob("*.json")}
    shutil.rmtree(tmp_path / "out")
    assert cli_main(["estimate", "--config", str(cfg_path)]) == 0
    second = {p.name: p.read_bytes() for p in (tmp_path / "out").glob("*.json")}

    sim_cfg = {
        "dgp": {"n": 600, "seed": 5, "oracle_n": 1_000_000},
        "replications": 2,
        "estimators": [{"name": "cc", "kind": "CC"}],
        "nuisance": {"learners": {"default_binary": {"kind": "logistic"},
                                  "default_regression": {"kind": "ols"}}},
        "output": {"dir": str(tmp_path / "sim")},
        "workers": 1,
    }
    sim_path = tmp_path / "sim.yaml"
    sim_path.write_text(yaml.safe_dump(sim_cfg), encoding="utf-8")
    assert cli_main(["simulate", "--config", str(sim_path)]) == 0
    sim_first = (tmp_path / "sim" / "simulation.json").read_bytes()
    shutil.rmtree(tmp_path / "sim")
    assert cli_main(["simulate", "--config", str(sim_path)]) == 0
    sim_second = (tmp_path / "sim" / "simulation.json").read_bytes()

    report(
        "criterion 9 (CLI determinism)",
        first == second and len(first) == 4 and sim_first == sim_second,
        "estimate and simulate reruns byte-identical in serial mode",
    )
