import json
import math
import warnings

import numpy as np
import pytest
from scipy import stats

from conftest import CONSISTENCY_SEEDS, per_n
from xtreat.condmodel import LearnerKind, TrainConfig, build_learner, train, xi_raw_for
from xtreat.dataset import CausalDataset
from xtreat.datagen import GroundTruth, synthetic_1d, synthetic_1d_truth
from xtreat.errors import InsufficientDataError, InvalidArgumentError
from xtreat.estimators import (
    EstimateReport,
    cete,
    eps_cete,
    eps_ete,
    estimate,
    ete_naive,
    ete_proposed,
    exceedance_counts,
    survival_ratio_slope,
    true_ete_oracle,
    validate_report,
)
from xtreat.gev import GevParams, gev_sample, sample_gev_arrays

ZERO = lambda X, t: np.zeros(len(t))  # noqa: E731
ONE = lambda X, t: np.ones(len(t))  # noqa: E731


def two_arm_constant(xi1, xi0, d=1):
    """T-learner predicting GEV(0, 1, xi1) under treatment and GEV(0, 1, xi0) under control."""
    m = build_learner(LearnerKind.tlearner(), d, frozen_mu_fn=ZERO, frozen_sigma_fn=ONE, arch=(4,))
    w = np.zeros(m.n_weights)
    for arm, xi in ((0, xi0), (1, xi1)):
        (_, _, _), (b0, _) = m.nets[arm].slices[-1]
        w[b0] = xi_raw_for(xi)
    return m.with_weights(w)


def swapped(model):
    w = model.weights.copy()
    s0, s1 = model.block_slice(0), model.block_slice(1)
    w[s0], w[s1] = model.weights[s1], model.weights[s0]
    return model.with_weights(w)


def constant_truth(xi1, xi0, propensity=None):
    def xi(X, t):
        return np.where(np.asarray(t) == 1, xi1, xi0)

    def sample(X, t, rng):
        X = np.atleast_2d(X)
        t = np.broadcast_to(np.asarray(t), (X.shape[0],))
        return sample_gev_arrays(0.0, 1.0, xi(X, t), rng)

    return GroundTruth(
        name="constant",
        xi=xi,
        mu=ZERO,
        sigma=ONE,
        sample=sample,
        propensity=propensity or (lambda X: np.full(len(X), 0.5)),
        sample_covariates=lambda n, rng: rng.standard_normal((n, 1)),
    )


class TestCete:
    def test_truth_at_origin(self):
        expected = math.log(1.1) - 1.0
        assert expected == pytest.approx(-0.9047, abs=1e-4)
        assert synthetic_1d_truth().cete(np.zeros((1, 1)))[0] == pytest.approx(expected, abs=1e-15)

    def test_model_holding_truth_at_origin(self):
        m = two_arm_constant(math.log(1.1), 1.0)
        assert cete(m, 0.0) == pytest.approx(math.log(1.1) - 1.0, abs=1e-12)

    def test_identical_heads(self, rng):
        m = build_learner(LearnerKind.tlearner(), 2, frozen_mu_fn=ZERO, frozen_sigma_fn=ONE, seed=3)
        w = m.weights.copy()
        w[m.block_slice(1)] = w[m.block_slice(0)]
        tau = cete(m.with_weights(w), rng.standard_normal((50, 2)))
        assert np.all(tau == 0.0)

    def test_swapping_arms_negates(self, rng):
        m = build_learner(LearnerKind.tlearner(), 2, frozen_mu_fn=ZERO, frozen_sigma_fn=ONE, seed=3, init_scale=2.0)
        m = m.with_weights(m.weights + rng.normal(0, 0.3, m.n_weights))
        X = rng.standard_normal((40, 2))
        np.testing.assert_array_equal(cete(swapped(m), X), -cete(m, X))

    def test_shapes(self):
        m = two_arm_constant(0.3, 0.1, d=3)
        assert isinstance(cete(m, [0.0, 1.0, 2.0]), float)
        assert cete(m, np.zeros((5, 3))).shape == (5,)

    def test_dimension_mismatch(self):
        with pytest.raises(InvalidArgumentError):
            cete(two_arm_constant(0.3, 0.1, d=2), np.zeros((4, 3)))


class TestProposed:
    def test_constant_model_recovers_shape_gap(self, rng):
        m = two_arm_constant(0.4, 0.1)
        est = ete_proposed(m, rng.standard_normal((1000, 1)), seed=1, min_total=100_000)
        assert est.n_draws == 100_000
        assert est.ete_hat == pytest.approx(0.3, abs=0.05)
        assert est.ete_hat == est.xi1_bar - est.xi0_bar

    def test_identical_heads_give_zero(self, rng):
        m = two_arm_constant(0.25, 0.25)
        assert ete_proposed(m, rng.standard_normal((500, 1)), seed=2).ete_hat == 0.0

    def test_draws_reach_the_floor(self):
        est = ete_proposed(two_arm_constant(0.2, 0.0), np.zeros((300, 1)), draws_per_x=7, min_total=10_000)
        assert est.n_draws == 300 * 7 * 5

    def test_every_row_used_for_both_arms(self, rng):
        m = two_arm_constant(0.3, 0.0)
        X = rng.standard_normal((2000, 1))
        a = ete_proposed(m, X, seed=4, min_total=1)
        b = ete_proposed(m, CausalDataset(X, np.ones(2000, dtype=int), np.zeros(2000)), seed=4, min_total=1)
        assert a.ete_hat == b.ete_hat

    @pytest.mark.parametrize("kw", [{"draws_per_x": 0}])
    def test_bad_arguments(self, kw):
        with pytest.raises(InvalidArgumentError):
            ete_proposed(two_arm_constant(0.1, 0.0), np.zeros((3, 1)), **kw)

    def test_empty_covariates(self):
        with pytest.raises(InvalidArgumentError):
            ete_proposed(two_arm_constant(0.1, 0.0), np.zeros((0, 1)))


class TestNaive:
    def test_needs_both_arms(self):
        ds = CausalDataset(np.zeros((100, 1)), np.ones(100, dtype=int), gev_sample(GevParams(0, 1, 0), 100, seed=1))
        with pytest.raises(InsufficientDataError):
            ete_naive(ds)

    def test_small_arm(self):
        t = np.r_[np.ones(100, dtype=int), np.zeros(19, dtype=int)]
        ds = CausalDataset(np.zeros((119, 1)), t, gev_sample(GevParams(0, 1, 0), 119, seed=1))
        with pytest.raises(InsufficientDataError):
            ete_naive(ds)

    def test_randomized_assignment_matches_proposed(self):
        """Without selection bias the factual arms are unbiased samples of
        the marginals, so both estimators target the same quantity."""
        labeled = synthetic_1d(5000, seed=3)
        rng = np.random.default_rng(7)
        t = (rng.random(5000) < 0.5).astype(np.int64)
        y = np.where(t == 1, labeled.y1, labeled.y0)
        ds = CausalDataset(labeled.data.X, t, y)
        truth = labeled.truth
        m = build_learner(
            LearnerKind.slearner(), 1, frozen_mu_fn=truth.mu, frozen_sigma_fn=truth.sigma, seed=3
        )
        trained, _ = train(m, ds, TrainConfig(epochs=100, seed=3))
        with warnings.catch_warnings():
            warnings.simplefilter("ignore")
            naive = ete_naive(ds).ete_hat
            proposed = ete_proposed(trained, ds.X, seed=3).ete_hat
        assert naive == pytest.approx(proposed, abs=0.1)


class TestOracle:
    def test_constant_potentials(self):
        assert true_ete_oracle(constant_truth(0.8, 0.3), n=100_000, seed=0) == pytest.approx(0.5, abs=0.03)

    def test_identical_potentials(self):
        assert true_ete_oracle(constant_truth(0.3, 0.3), n=50_000, seed=1) == pytest.approx(0.0, abs=0.03)

    def test_ignores_propensity(self):
        a = true_ete_oracle(constant_truth(0.6, 0.2), n=5000, seed=2)
        b = true_ete_oracle(constant_truth(0.6, 0.2, propensity=lambda X: np.full(len(X), 0.99)), n=5000, seed=2)
        assert a == b

    def test_deterministic(self):
        truth = synthetic_1d_truth()
        assert true_ete_oracle(truth, 5000, seed=4) == true_ete_oracle(truth, 5000, seed=4)

    @pytest.mark.parametrize("n, m", [(5, 1), (100, 0)])
    def test_bad_arguments(self, n, m):
        with pytest.raises(InvalidArgumentError):
            true_ete_oracle(synthetic_1d_truth(), n, m)


class TestErrors:
    def test_eps_ete(self):
        assert eps_ete(0.25, 0.25) == 0.0
        assert eps_ete(-0.1, 0.3) == pytest.approx(0.4)

    def test_eps_cete_of_truth(self, rng):
        truth = synthetic_1d_truth()
        assert eps_cete(truth.cete, truth.cete, rng.standard_normal(100)) == 0.0

    def test_eps_cete_of_zero_model(self):
        truth = synthetic_1d_truth()
        xs = np.random.default_rng(0).standard_normal((10_000, 1))
        tau2 = truth.cete(xs) ** 2
        # independent Monte-Carlo estimate of E[tau(x)^2]
        ref = np.random.default_rng(1).standard_normal((200_000, 1))
        expected = np.mean(truth.cete(ref) ** 2)
        se = tau2.std(ddof=1) / math.sqrt(tau2.size)
        got = eps_cete(lambda X: np.zeros(len(X)), truth.cete, xs)
        assert abs(got - expected) < 2 * se

    def test_eps_cete_needs_points(self):
        truth = synthetic_1d_truth()
        with pytest.raises(InvalidArgumentError):
            eps_cete(truth.cete, truth.cete, np.zeros((0, 1)))


@pytest.fixture(scope="module")
def model_and_data():
    return two_arm_constant(0.5, 1.2), synthetic_1d(600, seed=5)


class TestReport:
    def test_identity_and_fields(self, model_and_data):
        m, labeled = model_and_data
        with warnings.catch_warnings():
            warnings.simplefilter("ignore")
            rep = estimate(m, labeled.data, seed=1)
        assert rep.ete_hat == rep.xi1_bar - rep.xi0_bar
        doc = json.loads(rep.to_json())
        validate_report(doc)
        assert {"ete_hat", "xi1_bar", "xi0_bar", "naive_ete", "seeds", "n_draws"} <= set(doc)
        assert "eps_ete" not in doc and "eps_cete" not in doc
        assert rep.cete_fn(0.0) == pytest.approx(-0.7, abs=1e-9)

    def test_truth_populates_errors(self, model_and_data):
        m, labeled = model_and_data
        with warnings.catch_warnings():
            warnings.simplefilter("ignore")
            rep = estimate(m, labeled.data, seed=1, truth=labeled.truth, true_ete=-0.4)
        doc = rep.to_dict()
        validate_report(doc)
        assert doc["eps_ete"] == abs(rep.ete_hat + 0.4)
        assert doc["naive_eps_ete"] == abs(rep.naive_ete + 0.4)
        assert doc["eps_cete"] == pytest.approx(np.mean((-0.7 - labeled.truth.cete(labeled.data.X)) ** 2))

    def test_identity_enforced(self):
        with pytest.raises(InvalidArgumentError):
            EstimateReport(ete_hat=0.1, xi1_bar=0.3, xi0_bar=0.1)

    @pytest.mark.parametrize(
        "doc",
        [
            {"xi1_bar": 1.0, "xi0_bar": 0.5, "seeds": {}, "n_draws": 3},
            {"ete_hat": 0.4, "xi1_bar": 1.0, "xi0_bar": 0.5, "seeds": {}, "n_draws": 3},
            {"ete_hat": 0.5, "xi1_bar": 1.0, "xi0_bar": 0.5, "seeds": {}, "n_draws": 0},
            {"ete_hat": 0.5, "xi1_bar": 1.0, "xi0_bar": 0.5, "seeds": {}, "n_draws": 3, "eps_ete": 0.1},
        ],
        ids=["missing", "identity", "draws", "pairing"],
    )
    def test_validation_rejects(self, doc):
        with pytest.raises(InvalidArgumentError):
            validate_report(doc)


class TestTailDiagnostics:
    @pytest.mark.parametrize("alpha1, alpha0", [(2.0, 1.5), (1.0, 0.5), (3.0, 2.0)])
    def test_survival_ratio_slope(self, alpha1, alpha0):
        # Frechet tails S_t(y) ~ y^(-alpha_t); the log ratio S0/S1 grows like (alpha1 - alpha0) log y
        y1 = stats.invweibull(alpha1).rvs(1_000_000, random_state=1)
        y0 = stats.invweibull(alpha0).rvs(1_000_000, random_state=2)
        assert survival_ratio_slope(y0, y1) == pytest.approx(alpha1 - alpha0, abs=0.15)

    @pytest.mark.parametrize("seed", range(10))
    def test_heavier_tail_exceeds_more(self, seed):
        y1 = gev_sample(GevParams(0.0, 1.0, 0.5), 1_000_000, seed=2 * seed)
        y0 = gev_sample(GevParams(0.0, 1.0, 0.3), 1_000_000, seed=2 * seed + 1)
        n0, n1 = exceedance_counts(y0, y1)
        assert n1 > n0

    def test_slope_needs_positive_tail(self):
        with pytest.raises(InvalidArgumentError):
            survival_ratio_slope(-np.arange(1000.0), -np.arange(1000.0))


class TestConsistency:
    def test_error_median_decreases(self, fig2_run):
        errs = per_n(fig2_run, "eps_ete", seeds=CONSISTENCY_SEEDS)
        assert all(len(v) == len(CONSISTENCY_SEEDS) for v in errs.values())
        medians = [np.median(v) for v in errs.values()]
        assert all(a > b for a, b in zip(medians, medians[1:])), medians

    def test_estimates_look_normal(self, fig2_run):
        for n, est in per_n(fig2_run, "ete_hat").items():
            assert abs(stats.skew(est)) <= 1.5, n
            assert abs(stats.kurtosis(est)) <= 1.5, n
