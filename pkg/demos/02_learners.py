"""Tour of the in-repo learners and the convex stacking ensemble."""

import numpy as np
from scipy.special import expit

from attelig import LearnerSpec, fit_forest, fit_gamma_glm, fit_logistic, fit_ols, fit_stack

rng = np.random.default_rng(20260811)
n = 2000
x = rng.normal(size=(n, 2))
X = np.column_stack([np.ones(n), x])

# Ordinary least squares reproduces the closed-form normal equations.
beta = np.array([0.5, 1.5, -0.75])
y_lin = X @ beta + rng.normal(scale=0.4, size=n)
ols = fit_ols(X, y_lin)
print("ols coefficients     :", np.round(ols.coef, 3), "(truth", beta, ")")

# Logistic regression by IRLS; the score equations hold at convergence.
p = expit(X @ np.array([-0.3, 0.9, 0.4]))
y_bin = (rng.random(n) < p).astype(float)
logit = fit_logistic(X, y_bin)
score = X.T @ (y_bin - logit.predict(X))
print("logistic max |score| :", float(np.max(np.abs(score))))

# Gamma GLM with log link, plus a method-of-moments shape estimate.
mean = np.exp(0.8 + 0.3 * x[:, 0])
y_gam = rng.gamma(4.83, mean / 4.83)
gam = fit_gamma_glm(X[:, :2], y_gam)
print("gamma shape estimate :", round(gam.shape, 2), "(truth 4.83)")

# The forest handles structure no linear member can express.
y_xor = ((x[:, 0] > 0) != (x[:, 1] > 0)).astype(float)
forest = fit_forest(x, y_xor, task="probability", num_trees=250, min_node_size=5,
                    mtry_fraction=2.0, seed=1)
acc = np.mean((forest.predict(x) > 0.5) == (y_xor == 1))
print("forest XOR accuracy  :", round(float(acc), 3))

# The stack assembles out-of-fold member predictions and solves for convex
# weights; on exactly linear data the linear member takes nearly all weight.
stack = fit_stack(
    X, y_lin,
    members=[LearnerSpec("ols"), LearnerSpec("forest", num_trees=100)],
    cv_folds=2, seed=2,
)
print("stack weights        :", np.round(stack.weights, 3), "(ols, forest)")
print("stack cv risk        :", round(stack.stack_cv_risk, 4),
      "vs members", [round(v, 4) for v in stack.member_cv_risk])
