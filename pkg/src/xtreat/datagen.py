"""Data generators with known ground truth.

* ``synthetic_1d``: one Gaussian covariate, GEV potential outcomes whose
  location and shape depend on ``x``, and a treatment rule that depends on
  the sign (training) or magnitude (evaluation) of ``x``.
* ``ihdp_semi_synthetic``: IHDP covariates and treatment column with
  simulated outcomes (Gaussian, Frechet-type or Weibull-type noise).
* ``mda_generator``: per-covariate block maxima of Gaussian, Beta and
  log-gamma outcomes together with their theoretical norming constants.
"""

from __future__ import annotations

import json
import math
import os
import warnings
from dataclasses import dataclass, field, asdict
from pathlib import Path
from typing import Callable, Optional

import numpy as np
from scipy.special import gammaln

from .dataset import CausalDataset, load_csv
from .errors import DomainError, InvalidArgumentError
from .gev import sample_gev_arrays

DATA_DIR_ENV = "XTREAT_DATA_DIR"
IHDP_FILENAME = "ihdp_covariates.csv"
IHDP_SHAPE = (747, 25)
IHDP_TREATED = 139

PROPENSITY_BOUNDS = (0.01, 0.99)

BETA_SUPPORT = np.array([0.0, 0.1, 0.2, 0.3, 0.4])
BETA_PROBS = np.array([0.6, 0.1, 0.1, 0.1, 0.1])
IHDP_OFFSET_W = 0.5
IHDP_OMEGA = 4.0
IHDP_VARIANTS = ("original", "frechet", "weibull")
DEFAULT_IHDP_BLOCK = {"original": 20, "frechet": 1, "weibull": 1}

ArrFn = Callable[[np.ndarray, np.ndarray], np.ndarray]


def _sigmoid(z):
    return 0.5 * (1.0 + np.tanh(0.5 * z))


def _clip_propensity(p):
    return np.clip(p, *PROPENSITY_BOUNDS)


@dataclass(frozen=True)
class GroundTruth:
    """Known generating mechanism.

    All callables take raw covariates ``X`` of shape ``(n, d)`` and, where
    relevant, an arm vector ``t``.  ``mu``/``sigma``/``xi`` describe the GEV
    law of the recorded outcome ``Z_t | X = x``; ``sample`` draws it.
    """

    name: str
    xi: ArrFn
    mu: ArrFn
    sigma: ArrFn
    sample: Callable[[np.ndarray, np.ndarray, np.random.Generator], np.ndarray]
    propensity: Callable[[np.ndarray], np.ndarray]
    sample_covariates: Callable[[int, np.random.Generator], np.ndarray]
    frozen_source: Optional[dict] = None

    def cete(self, X) -> np.ndarray:
        X = np.atleast_2d(np.asarray(X, dtype=float))
        n = X.shape[0]
        return self.xi(X, np.ones(n, dtype=np.int64)) - self.xi(X, np.zeros(n, dtype=np.int64))


@dataclass(frozen=True)
class LabeledDataset:
    data: CausalDataset
    truth: GroundTruth
    y0: np.ndarray
    y1: np.ndarray
    meta: dict = field(default_factory=dict)


def _streams(seed, k):
    return [np.random.default_rng(s) for s in np.random.SeedSequence(seed).spawn(k)]


def _assemble(X, t, y0, y1, truth, meta):
    y = np.where(t == 1, y1, y0)
    for a in (y0, y1):
        a.setflags(write=False)
    return LabeledDataset(CausalDataset(X, t, y), truth, y0, y1, meta)


# ---------------------------------------------------------------------------
# one-dimensional synthetic scenario
# ---------------------------------------------------------------------------

def _s1_xi(X, t):
    x = X[:, 0]
    return np.where(t == 1, np.log(1.1 + x**2), 1.0 + np.abs(x) ** 0.1)


def _s1_mu(X, t):
    x = X[:, 0]
    return np.where(t == 1, x**2, np.exp(x))


def _s1_sigma(X, t):
    return np.ones(X.shape[0])


def _s1_sample(X, t, rng):
    X = np.atleast_2d(X)
    t = np.broadcast_to(np.asarray(t), (X.shape[0],))
    return sample_gev_arrays(_s1_mu(X, t), 1.0, _s1_xi(X, t), rng)


def propensity_train(X):
    return np.where(np.asarray(X)[:, 0] > 0, 0.3, 0.7)


def propensity_eval(X):
    x = np.asarray(X)[:, 0]
    return _clip_propensity(_sigmoid(50.0 * x**2 - 5.0))


def _normal_covariates(n, rng):
    return rng.standard_normal((n, 1))


def synthetic_1d_truth(eval_mode: bool = False) -> GroundTruth:
    return GroundTruth(
        name="synthetic_1d",
        xi=_s1_xi,
        mu=_s1_mu,
        sigma=_s1_sigma,
        sample=_s1_sample,
        propensity=propensity_eval if eval_mode else propensity_train,
        sample_covariates=_normal_covariates,
        frozen_source={"generator": "synthetic_1d"},
    )


def synthetic_1d(n: int, seed=0, eval_mode: bool = False) -> LabeledDataset:
    """``X ~ N(0, 1)``; ``Y0 | x ~ GEV(exp(x), 1, 1 + |x|^0.1)``,
    ``Y1 | x ~ GEV(x^2, 1, log(1.1 + x^2))``.

    Treatment probability is 0.3 for ``x > 0`` and 0.7 otherwise, or
    ``sigmoid(50 x^2 - 5)`` (clipped to [0.01, 0.99]) with ``eval_mode``.
    """
    if n < 1:
        raise InvalidArgumentError("n must be >= 1")
    rx, rt, r0, r1 = _streams(seed, 4)
    truth = synthetic_1d_truth(eval_mode)
    X = _normal_covariates(n, rx)
    t = (rt.random(n) < truth.propensity(X)).astype(np.int64)
    y0 = truth.sample(X, np.zeros(n, dtype=np.int64), r0)
    y1 = truth.sample(X, np.ones(n, dtype=np.int64), r1)
    return _assemble(X, t, y0, y1, truth, {"generator": "synthetic_1d", "seed": seed, "eval_mode": eval_mode})


# ---------------------------------------------------------------------------
# IHDP semi-synthetic variants
# ---------------------------------------------------------------------------

def standin_path() -> Path:
    return Path(__file__).parent / "data" / "ihdp_standin.csv"


def make_ihdp_standin(seed: int = 20240101) -> CausalDataset:
    """Synthetic table shaped like the IHDP covariates (747 x 25).

    Six standardized continuous columns followed by nineteen binary ones;
    139 rows are marked treated with probability tilted by a handful of
    covariates so that the arms are imbalanced.  Not real data.
    """
    rng = np.random.default_rng(seed)
    n, d = IHDP_SHAPE
    cont = rng.standard_normal((n, 6))
    cont = (cont - cont.mean(axis=0)) / cont.std(axis=0)
    p = rng.uniform(0.05, 0.6, size=d - 6)
    binary = (rng.random((n, d - 6)) < p).astype(float)
    X = np.round(np.hstack([cont, binary]), 6)
    score = 0.8 * X[:, 0] - 0.6 * X[:, 1] + 0.5 * X[:, 6] - 0.7 * X[:, 8] + 0.4 * X[:, 3]
    w = np.exp(score)
    treated = rng.choice(n, size=IHDP_TREATED, replace=False, p=w / w.sum())
    t = np.zeros(n, dtype=np.int64)
    t[treated] = 1
    return CausalDataset(X, t, np.full(n, np.nan))


def load_ihdp_covariates(path=None) -> CausalDataset:
    """IHDP covariates and treatment column.

    Lookup order: explicit ``path``; ``$XTREAT_DATA_DIR/ihdp_covariates.csv``;
    the bundled synthetic stand-in (with a warning).
    """
    if path is None:
        env = os.environ.get(DATA_DIR_ENV)
        if env and (Path(env) / IHDP_FILENAME).exists():
            path = Path(env) / IHDP_FILENAME
    if path is None:
        warnings.warn(
            "using the bundled synthetic IHDP stand-in table; set XTREAT_DATA_DIR for real covariates",
            stacklevel=2,
        )
        path = standin_path()
    table = load_csv(path, require_y=False)
    _check_ihdp_shape(table)
    return table


def _check_ihdp_shape(table: CausalDataset):
    if table.X.shape != IHDP_SHAPE:
        raise InvalidArgumentError(
            f"IHDP covariate table must be {IHDP_SHAPE[0]}x{IHDP_SHAPE[1]}, got {table.X.shape[0]}x{table.X.shape[1]}"
        )


def draw_ihdp_beta(seed, d: int = IHDP_SHAPE[1]) -> np.ndarray:
    rng = np.random.default_rng(np.random.SeedSequence(seed).spawn(4)[0])
    return rng.choice(BETA_SUPPORT, size=d, p=BETA_PROBS)


def _gaussian_norming(m, loc=0.0, scale=1.0):
    """(a_m, b_m) for maxima of N(loc, scale^2)."""
    if m < 2:
        return np.full_like(np.asarray(scale, dtype=float), np.nan), np.full_like(np.asarray(loc, dtype=float), np.nan)
    L = math.log(m)
    root = math.sqrt(2 * L)
    b = root - (math.log(L) + math.log(4 * math.pi)) / (2 * root)
    return scale / root, loc + scale * b


@dataclass(frozen=True)
class _IhdpMechanism:
    beta: np.ndarray
    variant: str
    m: int

    def f(self, X, t):
        lin = (X + IHDP_OFFSET_W) @ self.beta
        return np.where(t == 1, lin - IHDP_OMEGA, np.exp(lin))

    def noise_xi(self, X, t):
        r = np.linalg.norm(X, axis=1)
        if self.variant == "original":
            return np.zeros(X.shape[0])
        xi0 = 0.1 + r**0.1
        xi1 = np.log(1.1 + r)
        xi = np.where(t == 1, xi1, xi0)
        return -xi if self.variant == "weibull" else xi

    def xi(self, X, t):
        return self.noise_xi(X, t)

    def mu(self, X, t):
        base = self.f(X, t)
        if self.variant == "original":
            if self.m == 1:
                return base
            _, b = _gaussian_norming(self.m)
            return base + b
        if self.m == 1:
            return base
        xi = self.noise_xi(X, t)
        return base + np.expm1(xi * math.log(self.m)) / xi

    def sigma(self, X, t):
        if self.variant == "original":
            if self.m == 1:
                return np.ones(X.shape[0])
            a, _ = _gaussian_norming(self.m)
            return np.full(X.shape[0], a)
        return np.exp(self.noise_xi(X, t) * math.log(self.m))

    def sample(self, X, t, rng):
        X = np.atleast_2d(X)
        t = np.broadcast_to(np.asarray(t), (X.shape[0],))
        n = X.shape[0]
        if self.variant == "original":
            noise = rng.standard_normal((n, self.m)).max(axis=1)
        else:
            xi = self.noise_xi(X, t)
            draws = sample_gev_arrays(0.0, 1.0, np.repeat(xi[:, None], self.m, axis=1), rng)
            noise = draws.max(axis=1)
        return self.f(X, t) + noise


def ihdp_semi_synthetic(
    covariates: CausalDataset,
    variant: str = "original",
    seed=0,
    per_x_block: int | None = None,
) -> LabeledDataset:
    """Simulated potential outcomes on IHDP covariates.

    ``Y0 = exp(beta . (X + W)) + eta0`` and ``Y1 = beta . (X + W) - omega + eta1``
    with ``W = 0.5``, ``omega = 4`` and ``beta`` drawn once per seed.  The
    recorded outcome of each individual is the maximum of ``per_x_block``
    independent draws of its factual arm.  The treatment column of the
    covariate table is used as is.
    """
    if variant not in IHDP_VARIANTS:
        raise InvalidArgumentError(f"unknown IHDP variant {variant!r}; expected one of {IHDP_VARIANTS}")
    _check_ihdp_shape(covariates)
    m = DEFAULT_IHDP_BLOCK[variant] if per_x_block is None else int(per_x_block)
    if m < 1:
        raise InvalidArgumentError("per_x_block must be >= 1")
    beta = draw_ihdp_beta(seed, covariates.d)
    mech = _IhdpMechanism(beta, variant, m)
    table_X = np.array(covariates.X)
    t_rate = float(covariates.t.mean())

    def propensity(X):
        # the real selection is a fixed column, not a function of x
        return np.full(np.atleast_2d(X).shape[0], _clip_propensity(t_rate))

    def sample_covariates(n, rng):
        return table_X[rng.integers(0, table_X.shape[0], size=n)]

    truth = GroundTruth(
        name=f"ihdp_{variant}",
        xi=mech.xi,
        mu=mech.mu,
        sigma=mech.sigma,
        sample=mech.sample,
        propensity=propensity,
        sample_covariates=sample_covariates,
        frozen_source={"generator": "ihdp", "variant": variant, "seed": seed, "per_x_block": m},
    )
    _, _, r0, r1 = _streams(seed, 4)
    n = covariates.n
    X = table_X
    y0 = mech.sample(X, np.zeros(n, dtype=np.int64), r0)
    y1 = mech.sample(X, np.ones(n, dtype=np.int64), r1)
    meta = {"generator": "ihdp", "variant": variant, "seed": seed, "per_x_block": m, "beta": beta.tolist()}
    return _assemble(X, np.array(covariates.t), y0, y1, truth, meta)


# ---------------------------------------------------------------------------
# maximum-domain-of-attraction generators
# ---------------------------------------------------------------------------

MDA_FAMILIES = ("gaussian", "beta", "loggamma")


@dataclass(frozen=True)
class NormingValues:
    """Theoretical ``(Z_m - b_m) / a_m -> GEV(0, 1, xi)`` constants per x."""

    a: np.ndarray
    b: np.ndarray
    xi: np.ndarray


def mda_parameters(family: str, x):
    x = np.asarray(x, dtype=float)
    if family == "gaussian":
        return np.abs(x), x**2
    if family in ("beta", "loggamma"):
        with np.errstate(over="ignore"):
            return np.abs(x) + 1.0, x**2 + 1.0
    raise InvalidArgumentError(f"unknown MDA family {family!r}; expected one of {MDA_FAMILIES}")


def mda_norming(family: str, x, m: int) -> NormingValues:
    """Norming constants and limiting shape at covariates ``x``.

    Gaussian ``N(mu, s)`` maxima tend to a Gumbel; Beta(a, b) maxima to a
    reversed Weibull with ``xi = -1/b`` and ``b_m = 1``; log-gamma
    (``exp`` of a Gamma(a, rate b) variable) maxima to a Frechet with
    ``xi = 1/b``.  For the log-gamma the limit is stated for ``Z_m / a_m``
    and ``b_m = 0``.
    """
    x = np.atleast_1d(np.asarray(x, dtype=float))
    p1, p2 = mda_parameters(family, x)
    if family == "gaussian":
        a, b = _gaussian_norming(m, p1, p2)
        return NormingValues(np.asarray(a, dtype=float), np.asarray(b, dtype=float), np.zeros_like(x))
    if family == "beta":
        with np.errstate(invalid="ignore"):
            log_a = -(math.log(m) + gammaln(p1 + p2) - gammaln(p1) - gammaln(p2 + 1.0)) / p2
        a = _checked_exp(log_a, x, "Beta norming constant")
        return NormingValues(a, np.ones_like(x), -1.0 / p2)
    if m < 2:
        nan = np.full_like(x, np.nan)
        return NormingValues(nan, np.zeros_like(x), 1.0 / p2)
    log_a = (math.log(m) + (p1 - 1.0) * math.log(math.log(m)) - gammaln(p1)) / p2
    a = _checked_exp(log_a, x, "log-gamma norming constant")
    return NormingValues(a, np.zeros_like(x), 1.0 / p2)


def _checked_exp(log_v, x, what):
    with np.errstate(over="ignore", under="ignore"):
        v = np.exp(log_v)
    bad = ~np.isfinite(v) | (v == 0) | ~np.isfinite(log_v)
    if np.any(bad):
        i = int(np.flatnonzero(bad)[0])
        raise DomainError(f"{what} overflows at x={x[i]!r}")
    return v


def _mda_draw(family, p1, p2, m, rng, x):
    n = p1.size
    if family == "gaussian":
        z = rng.standard_normal((n, m)).max(axis=1)
        return p1 + p2 * z
    if family == "beta":
        return rng.beta(p1[:, None], p2[:, None], size=(n, m)).max(axis=1)
    g = rng.gamma(p1[:, None], 1.0 / p2[:, None], size=(n, m)).max(axis=1)
    with np.errstate(over="ignore"):
        out = np.exp(g)
    if not np.all(np.isfinite(out)):
        i = int(np.flatnonzero(~np.isfinite(out))[0])
        raise DomainError(f"log-gamma draw overflows at x={x[i]!r}")
    return out


def mda_generator(family: str, n: int, m: int, seed=0, covariates=None, dim: int = 1):
    """Per-covariate block maxima of size ``m`` and their norming values.

    Draws ``X ~ N(0, I_dim)`` unless ``covariates`` is given; the family
    parameters depend on the first coordinate only.  For each row, draws
    ``m`` base-family outcomes and keeps the maximum.  ``n`` and ``dim`` are
    ignored when covariates are supplied.  Returns
    ``(dataset, NormingValues)``; the dataset's treatment column is all zero.
    """
    if family not in MDA_FAMILIES:
        raise InvalidArgumentError(f"unknown MDA family {family!r}; expected one of {MDA_FAMILIES}")
    if m < 1 or dim < 1 or (covariates is None and n < 1):
        raise InvalidArgumentError("n, m and dim must be >= 1")
    rx, ry = _streams(seed, 2)
    if covariates is None:
        X = rx.standard_normal((n, dim))
    else:
        X = np.asarray(covariates, dtype=float)
        X = X[:, None] if X.ndim == 1 else X
        n = X.shape[0]
    x = X[:, 0]
    norming = mda_norming(family, x, m)
    p1, p2 = mda_parameters(family, x)
    z = _mda_draw(family, p1, p2, m, ry, x)
    return CausalDataset(X, np.zeros(n, dtype=np.int64), z), norming


# ---------------------------------------------------------------------------
# frozen-head registry and JSON generator specs
# ---------------------------------------------------------------------------

def frozen_functions(source: dict):
    """``(mu_fn, sigma_fn)`` for a serialized ``frozen_source`` description."""
    gen = source.get("generator")
    if gen == "synthetic_1d":
        return _s1_mu, _s1_sigma
    if gen == "ihdp":
        beta = draw_ihdp_beta(source["seed"])
        mech = _IhdpMechanism(beta, source["variant"], int(source.get("per_x_block", 1)))
        return mech.mu, mech.sigma
    raise InvalidArgumentError(f"no frozen functions registered for {source!r}")


GENERATOR_NAMES = ("synthetic_1d", "ihdp_original", "ihdp_frechet", "ihdp_weibull", "gaussian", "beta", "loggamma")


@dataclass(frozen=True)
class GeneratorSpec:
    name: str
    n: int = 5000
    seed: int = 0
    m: int = 1
    eval_mode: bool = False
    covariate_path: Optional[str] = None

    def __post_init__(self):
        if self.name not in GENERATOR_NAMES:
            raise InvalidArgumentError(f"unknown generator {self.name!r}; expected one of {GENERATOR_NAMES}")
        if self.n < 1:
            raise InvalidArgumentError("n must be >= 1")

    @classmethod
    def from_dict(cls, doc: dict) -> "GeneratorSpec":
        doc = dict(doc)
        if "variant" in doc:
            variant = doc.pop("variant")
            if doc.get("name", "ihdp") in ("ihdp", f"ihdp_{variant}"):
                doc["name"] = f"ihdp_{variant}"
        unknown = set(doc) - {f for f in cls.__dataclass_fields__}
        if unknown:
            raise InvalidArgumentError(f"unknown generator fields {sorted(unknown)}")
        return cls(**doc)

    @classmethod
    def from_json(cls, text: str) -> "GeneratorSpec":
        return cls.from_dict(json.loads(text))

    def to_dict(self) -> dict:
        return asdict(self)

    def with_seed(self, seed: int) -> "GeneratorSpec":
        return GeneratorSpec(**{**self.to_dict(), "seed": seed})


def generate(spec: GeneratorSpec) -> LabeledDataset:
    """Instantiate a causal generator (the MDA families go through
    :func:`mda_generator`)."""
    if spec.name == "synthetic_1d":
        return synthetic_1d(spec.n, spec.seed, spec.eval_mode)
    if spec.name.startswith("ihdp_"):
        table = load_ihdp_covariates(spec.covariate_path)
        variant = spec.name[len("ihdp_"):]
        block = spec.m if spec.m > 1 else None
        return ihdp_semi_synthetic(table, variant, spec.seed, per_x_block=block)
    raise InvalidArgumentError(f"{spec.name} is not a causal generator; use mda_generator")


def truth_for(name: str, seed: int = 0, eval_mode: bool = False, covariate_path=None) -> GroundTruth:
    """Ground truth handle by generator name (used by the CLI)."""
    if name == "synthetic_1d":
        return synthetic_1d_truth(eval_mode)
    if name.startswith("ihdp_"):
        spec = GeneratorSpec(name=name, seed=seed, covariate_path=covariate_path)
        return generate(spec).truth
    raise InvalidArgumentError(f"no ground truth available for {name!r}")
