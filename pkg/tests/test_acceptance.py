"""Acceptance criteria, each at its stated tolerance.

A line per criterion is printed in the terminal summary.  Criterion 4 shares
the 20-seed convergence run with the consistency property in
``test_estimators``; criteria 5 and 6 share one IHDP run.
"""

import math
import warnings

import numpy as np
import pytest
from scipy import integrate, stats

from conftest import per_n
from xtreat.dataset import CausalDataset
from xtreat.datagen import mda_generator
from xtreat.estimators import exceedance_counts, survival_ratio_slope
from xtreat.experiments import load_preset, run_experiment
from xtreat.gev import (
    GevParams,
    gev_cdf,
    gev_fit_mle,
    gev_loglik,
    gev_loglik_grad,
    gev_logpdf,
    gev_quantile,
    gev_sample,
)
from xtreat.maxsampler import eps_max_sample

pytestmark = pytest.mark.acceptance

CORE_SHAPES = (-0.4, -0.2, 0.0, 0.1, 0.5, 1.5)


class TestGevCore:
    TITLE = "GEV core properties"

    def test_normalization(self, criterion):
        # breakpoints at geometric quantile levels so quad resolves both tails
        levels = [1e-300] + [10.0**-k for k in range(12, 0, -1)] + [0.5] + [1 - 10.0**-k for k in range(1, 17)]
        errs = []
        for xi in CORE_SHAPES:
            p = GevParams(0.3, 1.7, xi)
            pts = [gev_quantile(p, q) for q in levels]
            mass = sum(
                integrate.quad(lambda y: math.exp(gev_logpdf(p, y)), a, b, limit=200, epsabs=0.0, epsrel=1e-12)[0]
                for a, b in zip(pts, pts[1:])
            )
            errs.append(abs(mass + levels[0] + 1e-16 - 1.0))
        ok = criterion(1, self.TITLE, max(errs) <= 1e-6, f"max |mass - 1| = {max(errs):.1e}")
        assert ok

    def test_quantile_cdf_roundtrip(self, criterion):
        qs = np.linspace(1e-6, 1 - 1e-6, 1001)
        err = max(float(np.max(np.abs(gev_cdf(GevParams(0.0, 1.0, xi), gev_quantile(GevParams(0.0, 1.0, xi), qs)) - qs)))
                  for xi in CORE_SHAPES)
        assert criterion(1, self.TITLE, err <= 1e-10, f"roundtrip {err:.1e}")

    def test_gradient(self, criterion):
        worst = 0.0
        for xi in CORE_SHAPES:
            p = GevParams(0.5, 1.3, xi)
            y = gev_sample(p, 200, seed=9)
            g = gev_loglik_grad(p, y) * y.size
            base = np.array(p.as_tuple())
            for k in range(3):
                hi, lo = base.copy(), base.copy()
                hi[k] += 1e-6
                lo[k] -= 1e-6
                fd = (gev_loglik(GevParams(*hi), y) - gev_loglik(GevParams(*lo), y)) / 2e-6
                worst = max(worst, abs(fd - g[k]) / max(abs(fd), abs(g[k]), 1e-8))
        assert criterion(1, self.TITLE, worst < 1e-5, f"gradient rel. err {worst:.1e}")

    def test_sampler_matches_cdf(self, criterion):
        ds = []
        for xi in CORE_SHAPES:
            p = GevParams(0.0, 1.0, xi)
            ds.append(stats.kstest(gev_sample(p, 100_000, seed=5), lambda y: gev_cdf(p, y)).statistic)
        assert criterion(1, self.TITLE, max(ds) < 0.01, f"max KS {max(ds):.4f}")


class TestMleRecovery:
    TITLE = "MLE recovery"

    def test_heavy_tail(self, criterion):
        fit = gev_fit_mle(gev_sample(GevParams(0.0, 1.0, 0.5), 100_000, seed=21))
        ok = fit.converged and abs(fit.params.xi - 0.5) <= 0.03
        assert criterion(2, self.TITLE, ok, f"xi {fit.params.xi:.4f}")

    def test_gumbel(self, criterion):
        fit = gev_fit_mle(gev_sample(GevParams(2.0, 3.0, 0.0), 100_000, seed=22))
        ok = fit.converged and abs(fit.params.mu - 2.0) <= 0.05 and abs(fit.params.sigma - 3.0) <= 0.05
        assert criterion(2, self.TITLE, ok, f"mu {fit.params.mu:.4f}, sigma {fit.params.sigma:.4f}")


class TestCeteCurves:
    def test_trained_shapes_beat_best_constant(self, criterion):
        cfg = load_preset("fig3").with_overrides(seeds=(0, 1, 2))
        with warnings.catch_warnings():
            warnings.simplefilter("ignore")
            result = run_experiment(cfg)
        ratios = [r["metrics"]["mae_ratio"] for r in result.records if r["status"] == "ok"]
        eps = [r["metrics"]["eps_cete"] for r in result.records if r["status"] == "ok"]
        ok = len(ratios) == 3 and min(ratios) >= 3.0 and all(np.isfinite(eps))
        detail = f"MAE ratio min {min(ratios):.2f} over {len(ratios)} seeds, eps_CETE mean {np.mean(eps):.4f}"
        assert criterion(3, "CETE curves (s-learner, N=5000)", ok, detail)


class TestEteConvergence:
    def test_error_falls_and_proposed_wins(self, fig2_run, criterion):
        seeds = tuple(range(10))
        prop = per_n(fig2_run, "eps_ete", seeds)
        naive = per_n(fig2_run, "naive_eps_ete", seeds)
        medians = [float(np.median(v)) for v in prop.values()]
        wins = int(np.sum(prop[8000] < naive[8000]))
        ok = all(len(v) == 10 for v in prop.values()) and all(a > b for a, b in zip(medians, medians[1:])) and wins >= 9
        detail = "median error " + " > ".join(f"{m:.4f}" for m in medians) + f"; wins at N=8000 {wins}/10"
        assert criterion(4, "ETE convergence over N", ok, detail)


@pytest.fixture(scope="module")
def ihdp_run(tmp_path_factory):
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        return run_experiment(load_preset("table2"), out_dir=tmp_path_factory.mktemp("table2"))


def _ihdp_metric(result, variant, name):
    return np.array([r["metrics"][name] for r in result.records if r["status"] == "ok" and r["cell"]["variant"] == variant])


class TestIhdp:
    @pytest.mark.parametrize(
        "variant",
        [
            "original",
            "frechet",
            pytest.param(
                "weibull",
                marks=pytest.mark.xfail(
                    strict=True,
                    reason="true shapes lie below the shape head's lower clamp (-0.45), "
                    "so the model's tails are too heavy and the proposed ETE is biased",
                ),
            ),
        ],
    )
    def test_proposed_beats_naive(self, ihdp_run, criterion, variant):
        prop = _ihdp_metric(ihdp_run, variant, "eps_ete")
        naive = _ihdp_metric(ihdp_run, variant, "naive_eps_ete")
        ok = prop.size == 10 and prop.mean() < naive.mean()
        detail = f"{variant} {prop.mean():.3f} vs naive {naive.mean():.3f}"
        assert criterion(5, "IHDP ETE ordering (proposed < naive)", ok, detail)

    @pytest.mark.parametrize("variant, mean, std", [("frechet", 0.211, 0.104), ("weibull", 0.261, 0.061)])
    def test_cete_error_in_band(self, ihdp_run, criterion, variant, mean, std):
        eps = _ihdp_metric(ihdp_run, variant, "eps_cete")
        hi = mean + 3 * std
        ok = eps.size == 10 and 0.0 <= eps.mean() <= hi
        detail = f"{variant} {eps.mean():.3f} in [0, {hi:.3f}]"
        assert criterion(6, "IHDP CFR eps_CETE band", ok, detail)


class TestMdaTracking:
    GRID = np.array([1.25, 1.5, 1.75, 2.0, 2.5])
    REPS = 4000

    def shape_error(self, family, m, seed):
        ds, nv = mda_generator(family, 0, m, seed, covariates=np.repeat(self.GRID, self.REPS))
        z = ds.y.reshape(self.GRID.size, self.REPS)
        xi = nv.xi[:: self.REPS]
        return float(np.mean([abs(gev_fit_mle(z[i]).params.xi - xi[i]) for i in range(self.GRID.size)]))

    @pytest.mark.parametrize("family", ["gaussian", "beta", "loggamma"])
    def test_shape_error_shrinks_with_block_size(self, criterion, family):
        wins = sum(self.shape_error(family, 1000, s) < self.shape_error(family, 10, s) for s in range(10))
        assert criterion(7, "MDA shape tracking (m=10 vs m=1000)", wins >= 9, f"{family} {wins}/10")


class TestTailDiagnostics:
    def test_survival_ratio_slope(self, criterion):
        a1, a0 = 2.0, 1.5
        y1 = stats.invweibull(a1).rvs(1_000_000, random_state=31)
        y0 = stats.invweibull(a0).rvs(1_000_000, random_state=32)
        slope = survival_ratio_slope(y0, y1)
        ok = abs(slope - (a1 - a0)) <= 0.15
        assert criterion(8, "tail diagnostics", ok, f"slope {slope:.3f} vs {a1 - a0:.2f}")

    def test_exceedance_ordering(self, criterion):
        wins = 0
        for seed in range(10):
            y1 = gev_sample(GevParams(0.0, 1.0, 0.5), 1_000_000, seed=100 + 2 * seed)
            y0 = gev_sample(GevParams(0.0, 1.0, 0.3), 1_000_000, seed=101 + 2 * seed)
            n0, n1 = exceedance_counts(y0, y1)
            wins += n1 > n0
        assert criterion(8, "tail diagnostics", wins == 10, f"exceedance ordering {wins}/10")


@pytest.fixture(scope="module")
def data():
    rng = np.random.default_rng(41)
    X = rng.uniform(-1, 1, size=(1000, 2))
    return CausalDataset(X, rng.integers(0, 2, 1000), rng.standard_normal(1000))


class TestMaxSampler:
    TITLE = "max-sampler properties"

    def test_permutation_at_unit_blocks(self, data, criterion):
        res = eps_max_sample(data, 1, seed=0)
        ok = sorted(res.indices.tolist()) == list(range(data.n)) and np.array_equal(res.data.y, data.y[res.indices])
        assert criterion(9, self.TITLE, ok, "m=1 permutation")

    def test_global_max_at_one_block(self, data, criterion):
        res = eps_max_sample(data, data.n, seed=0)
        ok = res.data.n == 1 and res.data.y[0] == data.y.max()
        assert criterion(9, self.TITLE, ok, "m=n argmax")

    def test_lipschitz_bound(self, data, criterion):
        a = np.array([3.0, -4.0])  # Lipschitz constant 5
        ds = CausalDataset(data.X, data.t, data.X @ a)
        res = eps_max_sample(ds, 20, seed=0)
        eps = res.max_intra_radius
        emitted = np.empty(res.cluster_count)
        emitted[res.assignments[res.indices]] = res.data.y
        spread = emitted[res.assignments] - ds.y
        ok = spread.min() >= 0 and spread.max() <= 5.0 * 2 * eps + 1e-12
        assert criterion(9, self.TITLE, ok, f"Lipschitz gap {spread.max():.3f} <= {10 * eps:.3f}")

    @pytest.mark.parametrize("m", [1, 3, 7, 50, 999])
    def test_cardinality(self, data, criterion, m):
        res = eps_max_sample(data, m, seed=2)
        assert criterion(9, self.TITLE, res.data.n == data.n // m, f"floor(n/{m})")

    def test_determinism(self, data, criterion):
        a, b = eps_max_sample(data, 10, seed=5), eps_max_sample(data, 10, seed=5)
        ok = np.array_equal(a.indices, b.indices) and np.array_equal(a.data.y, b.data.y)
        assert criterion(9, self.TITLE, ok, "seed determinism")
