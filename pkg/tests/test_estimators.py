import numpy as np
import pytest

from attelig.data import (
    CoarsenedDataset,
    CoarsenedObservation,
    Covariate,
    CovariateSchema,
    Partition,
    ThresholdRule,
    assign_folds,
)
from attelig.estimators import (
    DegenerateAlpha,
    EmptyTreatedEligible,
    ResampleDegenerate,
    alpha_dot,
    alpha_prime_dot,
    beta_dot,
    beta_prime_dot,
    bootstrap_se,
    cc_point,
    dr_att_one_step,
    influence_contributions,
    iwor_point,
    theta_cc,
    theta_eif,
    theta_if,
    theta_iwor,
    theta_star_values,
)
from attelig.nuisance import (
    NuisanceSet,
    NuisanceSpec,
    ObservationNuisances,
    crossfit,
    default_learners,
)


def obs(a, r, y=1.0, lelig=6.0):
    return CoarsenedObservation(
        "0", (0.0,), a, y, r, (lelig,) if r == 1 else None
    )


def nuis_view(**kw):
    defaults = dict(eta1=0.5, eta0=0.5, u=0.5, mu0=0.0, eps1=0.3, xi=0.0,
                    gamma=0.2, chi=0.1, nu=0.0, omega1=0.4)
    defaults.update(kw)
    return ObservationNuisances(**defaults)


class TestPerObservationArithmetic:
    def test_alpha_dot_zero_for_controls(self):
        assert alpha_dot(obs(a=0, r=1), nuis_view(), e=1) == 0.0
        assert alpha_prime_dot(obs(a=0, r=0), nuis_view(), e=None) == 0.0

    def test_alpha_dot_hand_value_complete_case(self):
        # (1 - 1/0.5) * 0.3 + 1/0.5 = 1.7
        val = alpha_dot(obs(a=1, r=1), nuis_view(eta1=0.5, eps1=0.3), e=1)
        assert val == pytest.approx(1.7, abs=1e-12)

    def test_alpha_dot_hand_value_masked_case(self):
        # first factor is (1 - 0/eta) = 1, second term vanishes with r = 0
        val = alpha_dot(obs(a=1, r=0), nuis_view(eps1=0.3), e=None)
        assert val == pytest.approx(0.3, abs=1e-12)

    def test_beta_dot_masked_treated_reduces_to_eps_y_minus_xi(self):
        val = beta_dot(obs(a=1, r=0, y=2.0), nuis_view(eps1=0.3, xi=0.25), e=None)
        assert val == pytest.approx(0.3 * 2.0 - 0.25, abs=1e-12)

    def test_beta_dot_hand_value_control_complete(self):
        # a=0, r=1, E=0: -(1/0.5)[0 - (0.2*1-0.1)] - (0.5/0.5)(0.2*1-0.1) = 0.1
        val = beta_dot(
            obs(a=0, r=1, y=1.0, lelig=4.0),
            nuis_view(eta1=0.5, eta0=0.5, gamma=0.2, chi=0.1), e=0,
        )
        assert val == pytest.approx(0.1, abs=1e-12)

    def test_prime_dots_masked_values(self):
        assert alpha_prime_dot(obs(a=1, r=0), nuis_view(omega1=0.4), e=None) == \
            pytest.approx(0.4, abs=1e-12)
        assert beta_prime_dot(obs(a=1, r=0), nuis_view(nu=0.15), e=None) == \
            pytest.approx(0.15, abs=1e-12)


def toy_dataset(n=500, seed=0, all_complete=False, all_eligible=False):
    rng = np.random.default_rng(seed)
    schema = CovariateSchema(
        covariates=(
            Covariate("x", "numeric", Partition.L_STAR),
            Covariate("w", "numeric", Partition.L_ELIG_MISSING),
        )
    )
    recs = []
    for i in range(n):
        x = float(rng.normal())
        a = int(rng.random() < 1 / (1 + np.exp(-0.4 * x)))
        r = 1 if all_complete else int(rng.random() < 0.75)
        w = float(abs(rng.normal(0.4 * x, 1.0)) + 0.05) if all_eligible else float(rng.normal(0.4 * x, 1.0))
        y = float(0.5 + x + 0.4 * w + 0.8 * a + rng.normal(scale=0.6))
        recs.append(CoarsenedObservation(str(i), (x,), a, y, r, (w,) if r else None))
    return CoarsenedDataset(schema, tuple(recs)), ThresholdRule("w", ">=", 0.0)


class TestReduction:
    """With no missingness and everyone eligible, both influence-function
    estimators collapse to the stand-alone doubly robust ATT."""

    def test_eif_and_if_equal_one_step_dr_att(self):
        ds, rule = toy_dataset(n=500, seed=11, all_complete=True, all_eligible=True)
        spec = NuisanceSpec(learners=default_learners(flexible=False),
                            restrict_mu_u_to_eligible=False)
        folds = assign_folds(ds.n, 2, 3)
        nuis = crossfit(ds, rule, spec, folds, seed=4)
        assert np.all(nuis.eta1 == 1.0) and np.all(nuis.eps1 == 1.0)
        eif = theta_eif(nuis, ds, rule)
        iff = theta_if(nuis, ds, rule)
        reference = dr_att_one_step(
            ds.column("y"), ds.column("a"), nuis.mu0, nuis.u
        )
        assert eif.theta_hat == pytest.approx(reference, abs=1e-12)
        assert iff.theta_hat == pytest.approx(reference, abs=1e-12)

    def test_reduction_with_injected_substitutions(self):
        # same identity with hand-substituted nuisances on arbitrary values
        ds, rule = toy_dataset(n=300, seed=12, all_complete=True, all_eligible=True)
        rng = np.random.default_rng(5)
        n = ds.n
        mu0 = rng.normal(size=n)
        u = rng.uniform(0.2, 0.8, size=n)
        nuis = NuisanceSet(
            eta1=np.ones(n), eta0=np.ones(n), u=u, mu0=mu0,
            eps1=np.ones(n), xi=rng.normal(size=n), gamma=rng.normal(size=n),
            chi=rng.normal(size=n), nu=rng.normal(size=n), omega1=np.ones(n),
            fold_of=np.zeros(n, dtype=int),
        )
        reference = dr_att_one_step(ds.column("y"), ds.column("a"), mu0, u)
        assert theta_eif(nuis, ds, rule).theta_hat == pytest.approx(reference, abs=1e-12)
        assert theta_if(nuis, ds, rule).theta_hat == pytest.approx(reference, abs=1e-12)


class TestRatioEstimators:
    def test_no_treated_subjects_degenerate(self):
        ds, rule = toy_dataset(n=100, seed=13)
        recs = tuple(
            CoarsenedObservation(r.id, r.lstar, 0, r.y, r.r, r.lelig)
            for r in ds.records
        )
        ds0 = CoarsenedDataset(ds.schema, recs)
        n = ds0.n
        nuis = NuisanceSet(
            eta1=np.full(n, 0.7), eta0=np.full(n, 0.7), u=np.full(n, 0.5),
            mu0=np.zeros(n), eps1=np.full(n, 0.5), xi=np.zeros(n),
            gamma=np.zeros(n), chi=np.zeros(n), nu=np.zeros(n),
            omega1=np.full(n, 0.5), fold_of=np.zeros(n, dtype=int),
        )
        with pytest.raises(DegenerateAlpha):
            theta_eif(nuis, ds0, rule)

    def test_theta_star_values_have_zero_mean(self):
        ds, rule = toy_dataset(n=400, seed=14)
        spec = NuisanceSpec(learners=default_learners(flexible=False),
                            restrict_mu_u_to_eligible=False)
        nuis = crossfit(ds, rule, spec, assign_folds(ds.n, 2, 6), seed=7)
        stars = theta_star_values(nuis, ds, rule)
        assert abs(np.mean(stars)) <= 1e-10

    def test_ci_monotone_in_level(self):
        ds, rule = toy_dataset(n=400, seed=15)
        spec = NuisanceSpec(learners=default_learners(flexible=False),
                            restrict_mu_u_to_eligible=False)
        nuis = crossfit(ds, rule, spec, assign_folds(ds.n, 2, 8), seed=9)
        narrow = theta_eif(nuis, ds, rule, level=0.90)
        wide = theta_eif(nuis, ds, rule, level=0.99)
        assert wide.ci_lo < narrow.ci_lo < narrow.ci_hi < wide.ci_hi


class TestBaselines:
    def test_cc_zero_when_mu0_reproduces_outcomes(self):
        ds, rule = toy_dataset(n=300, seed=16)
        mu0 = ds.column("y").copy()
        assert cc_point(ds, rule, mu0) == 0.0

    def test_iwor_with_unit_weights_equals_cc(self):
        ds, rule = toy_dataset(n=300, seed=17)
        rng = np.random.default_rng(1)
        mu0 = rng.normal(size=ds.n)
        eta1 = np.ones(ds.n)
        assert iwor_point(ds, rule, mu0, eta1) == pytest.approx(
            cc_point(ds, rule, mu0), abs=1e-14
        )

    def test_iwor_with_constant_weights_equals_cc(self):
        ds, rule = toy_dataset(n=300, seed=18)
        rng = np.random.default_rng(2)
        mu0 = rng.normal(size=ds.n)
        eta1 = np.full(ds.n, 0.37)
        assert iwor_point(ds, rule, mu0, eta1) == pytest.approx(
            cc_point(ds, rule, mu0), abs=1e-12
        )

    def test_empty_treated_eligible_raises(self):
        ds, rule = toy_dataset(n=100, seed=19)
        impossible = ThresholdRule("w", ">=", 1e9)
        with pytest.raises(EmptyTreatedEligible):
            cc_point(ds, rule.__class__("w", ">=", 1e9), np.zeros(ds.n))
        with pytest.raises(EmptyTreatedEligible):
            iwor_point(ds, impossible, np.zeros(ds.n), np.ones(ds.n))


class TestBootstrap:
    def test_constant_estimator_has_zero_se(self):
        ds, rule = toy_dataset(n=120, seed=20)
        se, ci, skipped = bootstrap_se(lambda d: 1.5, ds, b=60, seed=5)
        assert se == 0.0
        assert ci == (1.5, 1.5)
        assert skipped == 0

    def test_seed_pinned_determinism(self):
        ds, rule = toy_dataset(n=150, seed=21)

        def point(d):
            return float(np.mean(d.column("y")))

        a = bootstrap_se(point, ds, b=80, seed=9)
        b = bootstrap_se(point, ds, b=80, seed=9)
        assert a == b

    def test_degenerate_resamples_counted_and_limited(self):
        ds, rule = toy_dataset(n=60, seed=22)
        calls = {"k": 0}

        def flaky(d):
            calls["k"] += 1
            if calls["k"] % 3 == 0:
                raise EmptyTreatedEligible("synthetic")
            return 0.0

        with pytest.raises(ResampleDegenerate):
            bootstrap_se(flaky, ds, b=60, seed=10)

    def test_too_small_b_rejected(self):
        ds, rule = toy_dataset(n=60, seed=23)
        with pytest.raises(ValueError):
            bootstrap_se(lambda d: 0.0, ds, b=10, seed=0)


class TestReportSurfaces:
    def test_theta_cc_and_iwor_reports(self):
        ds, rule = toy_dataset(n=400, seed=24)

        def fit_mu0(d):
            y = d.column("y")
            a = d.column("a")
            ctrl = a == 0
            return np.full(d.n, float(np.mean(y[ctrl])))

        def fit_eta1(d):
            return np.full(d.n, float(np.mean(d.column("r"))))

        cc = theta_cc(ds, rule, fit_mu0, bootstrap_b=60, seed=3)
        iw = theta_iwor(ds, rule, fit_mu0, fit_eta1, bootstrap_b=60, seed=3)
        for rep in (cc, iw):
            assert rep.ci_lo <= rep.theta_hat <= rep.ci_hi
            assert rep.se > 0
            assert rep.n == ds.n
        # constant ascertainment weights cancel in the ratio
        assert iw.theta_hat == pytest.approx(cc.theta_hat, abs=1e-12)

    def test_influence_contributions_structural_zeros(self):
        ds, rule = toy_dataset(n=200, seed=25)
        spec = NuisanceSpec(learners=default_learners(flexible=False),
                            restrict_mu_u_to_eligible=False)
        nuis = crossfit(ds, rule, spec, assign_folds(ds.n, 2, 11), seed=12)
        contribs = influence_contributions(ds, rule, nuis)
        a = ds.column("a")
        assert np.all(contribs.alpha_dot[a == 0] == 0.0)
        assert np.all(contribs.alpha_prime_dot[a == 0] == 0.0)
        for arr in (contribs.alpha_dot, contribs.beta_dot,
                    contribs.alpha_prime_dot, contribs.beta_prime_dot):
            assert np.all(np.isfinite(arr))
