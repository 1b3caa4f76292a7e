"""Robust estimation of the treated-and-eligible average treatment effect
when eligibility-defining covariates are missing at random."""

from .data import (
    AtteligError,
    CoarsenedDataset,
    CoarsenedObservation,
    ConjunctionRule,
    Covariate,
    CovariateSchema,
    FoldAssignment,
    Partition,
    ThresholdRule,
    assign_folds,
    eligibility_column,
    evaluate_eligibility,
    load_csv,
    write_csv,
)
from .dgp import (
    DgpConfig,
    EstimatorTask,
    LStarConfig,
    exact_nuisances,
    run_simulation,
    simulate_dataset,
    true_theta,
)
from .estimators import (
    EstimateReport,
    InfluenceContributions,
    dr_att_one_step,
    influence_contributions,
    theta_cc,
    theta_eif,
    theta_if,
    theta_iwor,
)
from .learners import (
    DesignMatrix,
    LearnerSpec,
    build_design,
    fit_forest,
    fit_gamma_glm,
    fit_logistic,
    fit_ols,
    fit_stack,
)
from .nuisance import NuisanceSet, NuisanceSpec, build_pseudo_outcomes, crossfit
from .oracle import (
    DiscreteJointDistribution,
    check_density_ratio_identity,
    check_remainder_structure,
    d1_distribution,
    enumerate_eif_means,
    enumerate_identification_functional,
    enumerate_true_atte,
    random_mar_distribution,
    sample_dataset,
)

__version__ = "0.1.0"
