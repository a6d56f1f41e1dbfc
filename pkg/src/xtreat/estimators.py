"""Extreme treatment effect estimators and error metrics.

The conditional effect at ``x`` is the difference of the two shape heads of
a trained conditional GEV model.  The marginal effect is obtained by drawing
synthetic outcomes from the model's conditional GEVs at every covariate row
(for both arms, ignoring the factual treatment) and fitting one marginal GEV
per arm.  The naive baseline fits each arm's factual outcomes directly and
inherits the treatment-selection bias.
"""

from __future__ import annotations

import json
import math
import warnings
from dataclasses import dataclass, field
from typing import Callable, Optional, Sequence

import numpy as np

from .condmodel import ConditionalGevModel, predict_arrays
from .dataset import CausalDataset
from .errors import InsufficientDataError, InvalidArgumentError
from .gev import FitResult, gev_fit_mle, sample_gev_arrays
from .maxsampler import MaxSampleResult

MIN_GROUP = 20
MIN_POOLED_DRAWS = 10_000


class FitNotConvergedWarning(UserWarning):
    pass


def _rows(model_dim: int, X) -> np.ndarray:
    X = np.asarray(X, dtype=float)
    if X.ndim == 0:
        return X.reshape(1, 1)
    if X.ndim == 1:
        return X[:, None] if model_dim == 1 else X[None, :]
    return X


def cete(model: ConditionalGevModel, x):
    """``xi_1(x) - xi_0(x)``; a scalar for one covariate vector, else an array."""
    single = np.ndim(x) <= 1 and (model.input_dim > 1 or np.size(x) == 1)
    X = _rows(model.input_dim, x)
    n = X.shape[0]
    _, _, xi1 = predict_arrays(model, X, np.ones(n, dtype=np.int64))
    _, _, xi0 = predict_arrays(model, X, np.zeros(n, dtype=np.int64))
    tau = xi1 - xi0
    return float(tau[0]) if single else tau


@dataclass(frozen=True)
class EteEstimate:
    ete_hat: float
    xi1_bar: float
    xi0_bar: float
    fit1: FitResult
    fit0: FitResult
    n_draws: int


def _marginal_fit(samples, label):
    fit = gev_fit_mle(samples)
    if not fit.converged:
        warnings.warn(
            f"marginal GEV fit for {label} did not converge (gradient norm {fit.gradient_norm:.2e})",
            FitNotConvergedWarning,
            stacklevel=3,
        )
    return fit


def _from_fits(fit1: FitResult, fit0: FitResult, n_draws: int) -> EteEstimate:
    xi1, xi0 = fit1.params.xi, fit0.params.xi
    return EteEstimate(xi1 - xi0, xi1, xi0, fit1, fit0, n_draws)


def ete_proposed(
    model: ConditionalGevModel,
    covariates,
    draws_per_x: int = 1,
    seed=0,
    min_total: int = MIN_POOLED_DRAWS,
) -> EteEstimate:
    """Marginal shape difference of model-generated outcomes.

    Every covariate row is used for both arms.  The row set is repeated
    until at least ``min_total`` draws are pooled per arm.  Both arms use the
    same uniform variates, so identical heads give exactly zero.
    """
    if isinstance(covariates, CausalDataset):
        covariates = covariates.X
    X = _rows(model.input_dim, covariates)
    if X.shape[0] == 0:
        raise InvalidArgumentError("no covariate rows")
    if draws_per_x < 1:
        raise InvalidArgumentError("draws_per_x must be >= 1")
    per_pass = X.shape[0] * draws_per_x
    reps = max(1, math.ceil(min_total / per_pass))
    Xr = np.repeat(X, draws_per_x * reps, axis=0)
    n = Xr.shape[0]
    fits = {}
    for arm in (1, 0):
        mu, sigma, xi = predict_arrays(model, Xr, np.full(n, arm, dtype=np.int64))
        draws = sample_gev_arrays(mu, sigma, xi, np.random.default_rng(seed))
        fits[arm] = _marginal_fit(draws, f"t={arm}")
    return _from_fits(fits[1], fits[0], n)


def ete_naive(maxed) -> EteEstimate:
    """Difference of shapes fitted to each arm's factual outcomes."""
    data = maxed.data if isinstance(maxed, MaxSampleResult) else maxed
    fits = {}
    for arm in (1, 0):
        y = data.y[data.t == arm]
        if y.size < MIN_GROUP:
            raise InsufficientDataError(
                f"treatment group t={arm} has {y.size} records; at least {MIN_GROUP} are needed"
            )
        fits[arm] = _marginal_fit(y, f"factual t={arm}")
    return _from_fits(fits[1], fits[0], int(data.n))


def potential_outcome_maxima(truth, X, arm: int, m: int, rng) -> np.ndarray:
    """Maximum of ``m`` independent draws of ``Y_arm | X = x`` for each row."""
    n = X.shape[0]
    t = np.full(n, arm, dtype=np.int64)
    out = truth.sample(X, t, rng)
    for _ in range(m - 1):
        out = np.maximum(out, truth.sample(X, t, rng))
    return out


def true_ete_oracle(truth, n: int = 100_000, m: int = 1, seed=0) -> float:
    """Marginal shape difference of unconfounded block maxima.

    Covariates come from the generator's own covariate law; both potential
    outcomes are drawn for every row, so the propensity plays no role.
    """
    if n < MIN_GROUP or m < 1:
        raise InvalidArgumentError(f"need n >= {MIN_GROUP} and m >= 1")
    rx, r1, r0 = (np.random.default_rng(s) for s in np.random.SeedSequence(seed).spawn(3))
    X = truth.sample_covariates(n, rx)
    xi = {}
    for arm, rng in ((1, r1), (0, r0)):
        z = potential_outcome_maxima(truth, X, arm, m, rng)
        xi[arm] = gev_fit_mle(z).params.xi
    return xi[1] - xi[0]


def eps_ete(ete_hat: float, truth: float) -> float:
    return abs(float(ete_hat) - float(truth))


def eps_cete(model, truth_fn: Callable, eval_xs) -> float:
    """Mean squared CETE error over ``eval_xs``.

    ``model`` is a :class:`ConditionalGevModel` or any callable ``X -> tau``;
    ``truth_fn`` maps covariate rows to the true CETE.
    """
    X = np.asarray(eval_xs, dtype=float)
    if X.ndim == 1:
        X = X[:, None]
    if X.shape[0] == 0:
        raise InvalidArgumentError("eval_xs must be non-empty")
    est = cete(model, X) if isinstance(model, ConditionalGevModel) else np.asarray(model(X), dtype=float)
    tau = np.asarray(truth_fn(X), dtype=float)
    return float(np.mean((est - tau) ** 2))


@dataclass(frozen=True)
class EstimateReport:
    ete_hat: float
    xi1_bar: float
    xi0_bar: float
    naive_ete: Optional[float] = None
    eps_ete: Optional[float] = None
    eps_cete: Optional[float] = None
    naive_eps_ete: Optional[float] = None
    true_ete: Optional[float] = None
    n_draws: int = 0
    seeds: dict = field(default_factory=dict)
    converged: bool = True
    cete_fn: Optional[Callable] = field(default=None, repr=False, compare=False)

    FIELDS = ("ete_hat", "xi1_bar", "xi0_bar", "naive_ete", "eps_ete", "eps_cete", "seeds", "n_draws")

    def __post_init__(self):
        if self.ete_hat != self.xi1_bar - self.xi0_bar:
            raise InvalidArgumentError("ete_hat must equal xi1_bar - xi0_bar")

    def to_dict(self) -> dict:
        doc = {
            "ete_hat": self.ete_hat,
            "xi1_bar": self.xi1_bar,
            "xi0_bar": self.xi0_bar,
            "naive_ete": self.naive_ete,
            "n_draws": self.n_draws,
            "seeds": dict(self.seeds),
            "converged": self.converged,
        }
        for name in ("eps_ete", "eps_cete", "naive_eps_ete", "true_ete"):
            value = getattr(self, name)
            if value is not None:
                doc[name] = value
        return doc

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True, indent=2) + "\n"


def validate_report(doc: dict) -> None:
    """Raise if a serialized report breaks the field contract."""
    for name in ("ete_hat", "xi1_bar", "xi0_bar", "seeds", "n_draws"):
        if name not in doc:
            raise InvalidArgumentError(f"report lacks field {name!r}")
    if doc["ete_hat"] != doc["xi1_bar"] - doc["xi0_bar"]:
        raise InvalidArgumentError("report ete_hat differs from xi1_bar - xi0_bar")
    if not isinstance(doc["n_draws"], int) or doc["n_draws"] < 1:
        raise InvalidArgumentError("n_draws must be a positive integer")
    if ("eps_ete" in doc) != ("eps_cete" in doc):
        raise InvalidArgumentError("eps_ete and eps_cete come together")


def estimate(
    model: ConditionalGevModel,
    data: CausalDataset,
    draws_per_x: int = 1,
    seed: int = 0,
    truth=None,
    true_ete: Optional[float] = None,
    oracle_n: int = 100_000,
    oracle_m: int = 1,
    eval_xs=None,
    with_naive: bool = True,
    min_total: int = MIN_POOLED_DRAWS,
) -> EstimateReport:
    """Proposed and naive ETE on ``data``; error metrics when ``truth`` is given.

    ``eval_xs`` defaults to the dataset's covariates.  The oracle value can be
    supplied through ``true_ete`` to avoid recomputing it.
    """
    with warnings.catch_warnings(record=True) as caught:
        warnings.simplefilter("always", FitNotConvergedWarning)
        prop = ete_proposed(model, data.X, draws_per_x, seed, min_total=min_total)
        naive = None
        if with_naive:
            try:
                naive = ete_naive(data).ete_hat
            except InsufficientDataError as exc:
                warnings.warn(str(exc), stacklevel=2)
    converged = prop.fit1.converged and prop.fit0.converged
    for w in caught:
        warnings.warn_explicit(w.message, w.category, w.filename, w.lineno)
    seeds = {"estimate": seed}
    eps_e = eps_c = naive_eps = None
    if truth is not None:
        if true_ete is None:
            true_ete = true_ete_oracle(truth, oracle_n, oracle_m, seed)
            seeds["oracle"] = seed
        X_eval = data.X if eval_xs is None else eval_xs
        eps_e = eps_ete(prop.ete_hat, true_ete)
        eps_c = eps_cete(model, truth.cete, X_eval)
        if naive is not None:
            naive_eps = eps_ete(naive, true_ete)
    return EstimateReport(
        ete_hat=prop.ete_hat,
        xi1_bar=prop.xi1_bar,
        xi0_bar=prop.xi0_bar,
        naive_ete=naive,
        eps_ete=eps_e,
        eps_cete=eps_c,
        naive_eps_ete=naive_eps,
        true_ete=true_ete if truth is not None else None,
        n_draws=prop.n_draws,
        seeds=seeds,
        converged=converged,
        cete_fn=lambda x: cete(model, x),
    )


# ---------------------------------------------------------------------------
# tail-comparison diagnostics
# ---------------------------------------------------------------------------

def empirical_survival(sample, thresholds) -> np.ndarray:
    s = np.sort(np.asarray(sample, dtype=float))
    return 1.0 - np.searchsorted(s, thresholds, side="right") / s.size


def survival_ratio_slope(
    y0,
    y1,
    n_thresholds: int = 30,
    top_fraction: float = 0.1,
    min_exceedances: int = 100,
) -> float:
    """OLS slope of ``log(S0(y) / S1(y))`` against ``log y``.

    Thresholds are log-spaced over the top ``top_fraction`` of the pooled
    sample, stopping where either group keeps fewer than
    ``min_exceedances`` points above the threshold.  For regularly varying
    survivals ``S_t(y) ~ y^(-alpha_t)`` the slope tends to ``alpha_1 - alpha_0``.
    """
    y0 = np.asarray(y0, dtype=float)
    y1 = np.asarray(y1, dtype=float)
    pooled = np.concatenate([y0, y1])
    lo = np.quantile(pooled, 1.0 - top_fraction)
    hi = min(np.sort(y0)[-min_exceedances], np.sort(y1)[-min_exceedances])
    if not (lo > 0 and hi > lo):
        raise InvalidArgumentError("top of the sample must be positive and wide enough for thresholds")
    u = np.geomspace(lo, hi, n_thresholds)
    ratio = np.log(empirical_survival(y0, u)) - np.log(empirical_survival(y1, u))
    slope, _ = np.polyfit(np.log(u), ratio, 1)
    return float(slope)


def exceedance_counts(y0, y1, quantile: float = 0.999) -> tuple[int, int]:
    """Counts of each group above the pooled ``quantile``: ``(n0, n1)``."""
    y0 = np.asarray(y0, dtype=float)
    y1 = np.asarray(y1, dtype=float)
    u = np.quantile(np.concatenate([y0, y1]), quantile)
    return int(np.sum(y0 > u)), int(np.sum(y1 > u))
