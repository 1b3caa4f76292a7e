"""A miniature replication study.

Ten replications at a small sample size, with fast parametric nuisances, just
to show the harness mechanics: per-estimator bias, spread, and CI coverage
against the pinned truth. The full-scale acceptance run (200 replications at
n = 5000 with stacked learners) lives in tests/test_acceptance.py.
"""

from attelig import DgpConfig, run_simulation
from attelig.dgp import EstimatorTask, REFERENCE_THETA_TRUE, render_summary_table
from attelig.nuisance import NuisanceSpec, default_learners

tasks = [
    EstimatorTask("cc_true_mu", "CC", mu_design="true"),
    EstimatorTask("iwor_true", "IWOR", mu_design="true", eta_design="true"),
    EstimatorTask("iwor_eta_flat", "IWOR", mu_design="true", eta_design="intercept_only"),
    EstimatorTask("eif", "EIF"),
    EstimatorTask("if", "IF"),
]

summary = run_simulation(
    DgpConfig(n=1500, seed=20260811),
    n_reps=10,
    tasks=tasks,
    nuisance_spec=NuisanceSpec(learners=default_learners(flexible=False)),
    workers=2,
    theta_true_value=REFERENCE_THETA_TRUE,
)
print(render_summary_table(summary))
print()
print("Note the complete-case bias (selection on ascertainment) and that an")
print("intercept-only ascertainment model reduces IWOR to the complete-case")
print("estimator exactly.")
