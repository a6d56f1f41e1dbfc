"""Generalized extreme value (GEV) distribution.

Parameterization follows the usual climate/hydrology convention:
``G(y) = exp(-(1 + xi * (y - mu) / sigma) ** (-1 / xi))`` on the support
``1 + xi * (y - mu) / sigma > 0``.  ``xi > 0`` is the heavy (Frechet) tail,
``xi < 0`` the bounded (reversed Weibull) tail and ``xi == 0`` the Gumbel
limit.  Note that ``scipy.stats.genextreme`` uses ``c = -xi``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Iterable

import numpy as np
from scipy.special import gamma as gamma_fn

from .errors import (
    DegenerateDataError,
    InvalidArgumentError,
    SupportViolationError,
)

XI_EPS = 1e-8
XI_MIN = -0.45
XI_MAX = 5.0
STALL_WINDOW = 20
STALL_RTOL = 1e-7
GRAD_TOL = 1e-6
MAX_ITER = 2000
# finite stand-in for log(0) inside optimization loops
LOG_SENTINEL = -1e10

_SERIES_Z = 1e-3


@dataclass(frozen=True)
class GevParams:
    mu: float
    sigma: float
    xi: float

    def __post_init__(self):
        for name in ("mu", "sigma", "xi"):
            if not math.isfinite(getattr(self, name)):
                raise InvalidArgumentError(f"{name} must be finite, got {getattr(self, name)}")
        if self.sigma <= 0:
            raise InvalidArgumentError(f"sigma must be > 0, got {self.sigma}")

    def as_tuple(self) -> tuple[float, float, float]:
        return (self.mu, self.sigma, self.xi)

    def support(self) -> tuple[float, float]:
        """Closed-form (lower, upper) support endpoints."""
        if abs(self.xi) <= XI_EPS:
            return (-math.inf, math.inf)
        endpoint = self.mu - self.sigma / self.xi
        return (endpoint, math.inf) if self.xi > 0 else (-math.inf, endpoint)


@dataclass(frozen=True)
class FitResult:
    params: GevParams
    loglik: float
    converged: bool
    iterations: int
    gradient_norm: float


# ---------------------------------------------------------------------------
# array kernels (shared with the conditional model)
# ---------------------------------------------------------------------------

def _log1p_ratio(z):
    """log1p(z) / z, continuous through z == 0."""
    z = np.asarray(z, dtype=float)
    small = np.abs(z) < _SERIES_Z
    zs = np.where(small, z, 0.0)
    series = 1 - zs / 2 + zs**2 / 3 - zs**3 / 4 + zs**4 / 5 - zs**5 / 6
    zb = np.where(small, 1.0, z)
    with np.errstate(invalid="ignore", divide="ignore"):
        direct = np.log1p(zb) / zb
    return np.where(small, series, direct)


def _log1p_ratio_deriv(z):
    """d/dz of log1p(z) / z."""
    z = np.asarray(z, dtype=float)
    small = np.abs(z) < _SERIES_Z
    zs = np.where(small, z, 0.0)
    series = -0.5 + 2 * zs / 3 - 3 * zs**2 / 4 + 4 * zs**3 / 5 - 5 * zs**4 / 6
    zb = np.where(small, 1.0, z)
    with np.errstate(invalid="ignore", divide="ignore"):
        direct = (zb / (1 + zb) - np.log1p(zb)) / zb**2
    return np.where(small, series, direct)


def logpdf_and_grad(mu, sigma, xi, y, want_grad=True):
    """Elementwise GEV log density and its partials in (mu, sigma, xi).

    Returns ``(logpdf, in_support, dmu, dsigma, dxi)``.  Out-of-support
    entries carry ``-inf`` log density and zero partials; the caller decides
    how to penalize them.
    """
    mu, sigma, xi, y = np.broadcast_arrays(
        *(np.asarray(a, dtype=float) for a in (mu, sigma, xi, y))
    )
    # a line search may probe sigma == exp(-inf) == 0; the caller rejects
    # the resulting non-finite value
    with np.errstate(divide="ignore", over="ignore", invalid="ignore"):
        return _logpdf_and_grad(mu, sigma, xi, y, want_grad)


def _logpdf_and_grad(mu, sigma, xi, y, want_grad):
    ybar = (y - mu) / sigma
    gumbel = np.abs(xi) <= XI_EPS
    z = xi * ybar
    margin = 1.0 + z
    ok = gumbel | (margin > 0)
    # the series in _log1p_ratio is exact through z == 0, so near-Gumbel
    # shapes keep their first-order term and the density stays continuous
    z_safe = np.where(margin > 0, z, 0.0)
    ybar_safe = np.where(ok, ybar, 0.0)

    h = _log1p_ratio(z_safe)
    u = ybar_safe * h  # -log t(y)
    with np.errstate(over="ignore"):
        t = np.exp(-u)
        lp = -np.log(sigma) - (xi + 1.0) * u - t
    lp = np.where(ok, lp, -np.inf)
    if not want_grad:
        return lp, ok, None, None, None

    with np.errstate(over="ignore", invalid="ignore"):
        dlp_du = -(xi + 1.0) + t
        du_dybar = 1.0 / np.where(margin > 0, margin, 1.0)
        du_dxi = ybar_safe**2 * _log1p_ratio_deriv(z_safe)
        dmu = dlp_du * du_dybar * (-1.0 / sigma)
        dsigma = -1.0 / sigma + dlp_du * du_dybar * (-ybar_safe / sigma)
        dxi = -u + dlp_du * du_dxi
    zero = np.zeros_like(lp)
    return (
        lp,
        ok,
        np.where(ok, dmu, zero),
        np.where(ok, dsigma, zero),
        np.where(ok, dxi, zero),
    )


def _check_finite(name, value):
    arr = np.asarray(value, dtype=float)
    if not np.all(np.isfinite(arr)):
        raise InvalidArgumentError(f"{name} must be finite")
    return arr


def _maybe_scalar(arr, like):
    return float(arr) if np.ndim(like) == 0 else arr


# ---------------------------------------------------------------------------
# distribution functions
# ---------------------------------------------------------------------------

def gev_logpdf(p: GevParams, y):
    """Log density; ``-inf`` outside the support."""
    yy = _check_finite("y", y)
    lp, _, _, _, _ = logpdf_and_grad(p.mu, p.sigma, p.xi, yy, want_grad=False)
    return _maybe_scalar(lp, y)


def gev_cdf(p: GevParams, y):
    yy = _check_finite("y", y)
    ybar = (yy - p.mu) / p.sigma
    if abs(p.xi) <= XI_EPS:
        out = np.exp(-np.exp(-ybar))
    else:
        z = p.xi * ybar
        ok = z > -1.0
        u = np.where(ok, ybar, 0.0) * _log1p_ratio(np.where(ok, z, 0.0))
        with np.errstate(over="ignore"):
            out = np.exp(-np.exp(-u))
        out = np.where(ok, out, 0.0 if p.xi > 0 else 1.0)
    return _maybe_scalar(out, y)


def gev_quantile(p: GevParams, q):
    qq = _check_finite("q", q)
    if np.any((qq <= 0) | (qq >= 1)):
        raise InvalidArgumentError("quantile level must lie in (0, 1)")
    return _maybe_scalar(_quantile(p.mu, p.sigma, p.xi, qq), q)


def _quantile(mu, sigma, xi, q):
    w = -np.log(-np.log(q))
    xi = np.asarray(xi, dtype=float)
    gumbel = np.abs(xi) <= XI_EPS
    xi_safe = np.where(gumbel, 1.0, xi)
    with np.errstate(over="ignore"):
        standard = np.where(gumbel, w, np.expm1(xi_safe * w) / xi_safe)
    return mu + sigma * standard


def gev_sample(p: GevParams, n: int, seed=None) -> np.ndarray:
    """Inverse-CDF draws; ``seed`` may be an int or a ``numpy`` Generator."""
    if int(n) < 1:
        raise InvalidArgumentError(f"n must be >= 1, got {n}")
    rng = np.random.default_rng(seed)
    u = rng.random(int(n))
    u = np.clip(u, np.finfo(float).tiny, 1.0 - np.finfo(float).epsneg)
    return _quantile(p.mu, p.sigma, p.xi, u)


def sample_gev_arrays(mu, sigma, xi, rng) -> np.ndarray:
    """One draw per element of broadcast parameter arrays."""
    mu, sigma, xi = np.broadcast_arrays(
        *(np.asarray(a, dtype=float) for a in (mu, sigma, xi))
    )
    u = rng.random(mu.shape)
    u = np.clip(u, np.finfo(float).tiny, 1.0 - np.finfo(float).epsneg)
    return _quantile(mu, sigma, xi, u)


def gev_loglik_grad(p: GevParams, samples) -> np.ndarray:
    """Gradient of the mean log-likelihood in (mu, sigma, xi)."""
    y = _check_finite("samples", samples).ravel()
    if y.size == 0:
        raise InvalidArgumentError("samples must be non-empty")
    _, ok, dmu, dsigma, dxi = logpdf_and_grad(p.mu, p.sigma, p.xi, y)
    if not np.all(ok):
        bad = int(np.flatnonzero(~ok)[0])
        raise SupportViolationError(f"sample {bad} (y={y[bad]}) lies outside the support of {p}")
    return np.array([dmu.mean(), dsigma.mean(), dxi.mean()])


def gev_loglik(p: GevParams, samples) -> float:
    """Total log-likelihood (``-inf`` if any sample is outside the support)."""
    y = _check_finite("samples", samples).ravel()
    lp, _, _, _, _ = logpdf_and_grad(p.mu, p.sigma, p.xi, y, want_grad=False)
    return float(lp.sum())


# ---------------------------------------------------------------------------
# named special cases
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class Gumbel:
    mu: float
    beta: float

    def validate(self):
        if not self.beta > 0:
            raise InvalidArgumentError("Gumbel scale beta must be > 0")

    def to_gev(self) -> GevParams:
        return GevParams(self.mu, self.beta, 0.0)


@dataclass(frozen=True)
class Frechet:
    alpha: float
    s: float
    m: float = 0.0

    def validate(self):
        if not (self.alpha > 0 and self.s > 0):
            raise InvalidArgumentError("Frechet alpha and s must be > 0")

    def to_gev(self) -> GevParams:
        return GevParams(self.m + self.s, self.s / self.alpha, 1.0 / self.alpha)


@dataclass(frozen=True)
class Weibull:
    """Two-parameter Weibull on ``y >= 0`` (minimum-type).

    ``-Y`` is GEV with ``xi = -1/k``; see :meth:`to_gev_of_negated`.
    """

    lam: float
    k: float

    def validate(self):
        if not (self.lam > 0 and self.k > 0):
            raise InvalidArgumentError("Weibull lambda and k must be > 0")

    def to_gev_of_negated(self) -> GevParams:
        return GevParams(-self.lam, self.lam / self.k, -1.0 / self.k)


def named_family_logpdf(family, y):
    """Log density of a Gumbel, Frechet or Weibull family member."""
    family.validate()
    yy = _check_finite("y", y)
    with np.errstate(divide="ignore", invalid="ignore", over="ignore"):
        if isinstance(family, Gumbel):
            r = (yy - family.mu) / family.beta
            out = -np.log(family.beta) - (r + np.exp(-r))
        elif isinstance(family, Frechet):
            a, s = family.alpha, family.s
            inside = yy > family.m
            r = np.where(inside, (yy - family.m) / s, 1.0)
            out = np.log(a / s) - (1 + a) * np.log(r) - r ** (-a)
            out = np.where(inside, out, -np.inf)
        elif isinstance(family, Weibull):
            lam, k = family.lam, family.k
            inside = yy >= 0
            r = np.where(inside, yy / lam, 1.0)
            if k == 1:
                body = -np.log(lam) - r
            else:
                body = np.log(k / lam) + (k - 1) * np.log(r) - r**k
            out = np.where(inside, body, -np.inf)
        else:
            raise InvalidArgumentError(f"unknown family {family!r}")
    return _maybe_scalar(out, y)


# ---------------------------------------------------------------------------
# maximum likelihood
# ---------------------------------------------------------------------------

def pwm_init(samples) -> GevParams:
    """Hosking's probability-weighted-moment estimate, clamped and made
    feasible for every sample."""
    x = np.sort(np.asarray(samples, dtype=float))
    n = x.size
    j = np.arange(n)
    b0 = x.mean()
    b1 = np.sum(j / (n - 1) * x) / n
    b2 = np.sum(j * (j - 1) / ((n - 1) * (n - 2)) * x) / n
    l1, l2, l3 = b0, 2 * b1 - b0, 6 * b2 - 6 * b1 + b0
    if l2 <= 0:
        raise DegenerateDataError("samples have zero spread")
    t3 = l3 / l2
    c = 2.0 / (3.0 + t3) - math.log(2) / math.log(3)
    k = 7.8590 * c + 2.9554 * c**2
    k = float(np.clip(k, -XI_MAX, -XI_MIN))
    if abs(k) < 1e-6:
        sigma = l2 / math.log(2)
        mu = l1 - 0.5772156649015329 * sigma
        xi = 0.0
    else:
        g = gamma_fn(1 + k)
        sigma = l2 * k / ((1 - 2 ** (-k)) * g)
        mu = l1 - sigma * (1 - g) / k
        xi = -k
    if not (np.isfinite(sigma) and sigma > 0):
        sigma = float(np.std(x)) or 1.0
        mu, xi = float(np.mean(x)), 0.0
    return _make_feasible(mu, sigma, xi, x)


def _make_feasible(mu, sigma, xi, x) -> GevParams:
    for _ in range(60):
        if abs(xi) <= XI_EPS:
            break
        if np.all(1 + xi * (x - mu) / sigma > 1e-9):
            break
        xi *= 0.5
    if abs(xi) <= XI_EPS:
        xi = 0.0
    return GevParams(float(mu), float(sigma), float(xi))


_NAMES = ("mu", "sigma", "xi")


def _objective(theta, y):
    """Mean log-likelihood and gradient in (mu, log sigma, xi)."""
    mu, s, xi = theta
    sigma = math.exp(s)
    lp, ok, dmu, dsigma, dxi = logpdf_and_grad(mu, sigma, xi, y)
    lp = np.where(ok, lp, LOG_SENTINEL)
    f = float(lp.mean())
    if not math.isfinite(f):
        return -math.inf, np.zeros(3)
    g = np.array([dmu.mean(), dsigma.mean() * sigma, dxi.mean()])
    return f, g


def _natural_grad(theta, g):
    return np.array([g[0], g[1] / math.exp(theta[1]), g[2]])


def gev_fit_mle(
    samples,
    init: GevParams | None = None,
    frozen: Iterable[str] = (),
    max_iter: int = MAX_ITER,
    grad_tol: float = GRAD_TOL,
) -> FitResult:
    """Maximum-likelihood GEV fit.

    ``frozen`` names parameters (``"mu"``, ``"sigma"``) held at their value in
    ``init``.  The scale is optimized as ``log sigma`` and ``xi`` is kept in
    ``[XI_MIN, XI_MAX]``.  The ascent direction is a BFGS estimate of the
    inverse curvature; steps are chosen by Armijo backtracking.
    """
    y = _check_finite("samples", samples).ravel()
    frozen = set(frozen)
    if not frozen <= {"mu", "sigma"}:
        raise InvalidArgumentError(f"only mu and sigma can be frozen, got {sorted(frozen)}")
    if frozen and init is None:
        raise InvalidArgumentError("frozen parameters need values supplied through init")
    if y.size < 20:
        raise InvalidArgumentError(f"need at least 20 samples, got {y.size}")
    if np.ptp(y) == 0:
        raise DegenerateDataError(f"degenerate data: all {y.size} samples equal {y[0]}")

    start = pwm_init(y)
    if init is not None:
        start = GevParams(
            init.mu,
            init.sigma,
            float(np.clip(init.xi, XI_MIN, XI_MAX)),
        )
        if not np.all(logpdf_and_grad(*start.as_tuple(), y, want_grad=False)[1]):
            # supplied start is infeasible; keep frozen values, repair the rest
            pw = pwm_init(y)
            mu = init.mu if "mu" in frozen else pw.mu
            sigma = init.sigma if "sigma" in frozen else pw.sigma
            start = _make_feasible(mu, sigma, start.xi, y)

    theta = np.array([start.mu, math.log(start.sigma), start.xi])
    free = np.array([n not in frozen for n in _NAMES])
    f, g = _objective(theta, y)
    H = np.eye(3)
    first_step = True
    converged = False
    it = 0
    gnorm = math.inf
    recent = [f]

    for it in range(1, max_iter + 1):
        mask = free.copy()
        at_lo = theta[2] <= XI_MIN and g[2] < 0
        at_hi = theta[2] >= XI_MAX and g[2] > 0
        if at_lo or at_hi:
            mask[2] = False
        gm = np.where(mask, g, 0.0)
        gnorm = float(np.linalg.norm(np.where(mask, _natural_grad(theta, g), 0.0)))
        if gnorm <= grad_tol:
            converged = True
            break

        Hm = H * np.outer(mask, mask)
        d = Hm @ gm
        if d @ gm <= 0:
            H = np.eye(3)
            d = gm
        if first_step:
            d = d / max(1.0, float(np.linalg.norm(d)))

        alpha, accepted = 1.0, False
        slope = float(d @ gm)
        for _ in range(60):
            cand = theta + alpha * d
            cand[2] = min(max(cand[2], XI_MIN), XI_MAX)
            f_new, g_new = _objective(cand, y)
            if f_new >= f + 1e-4 * alpha * slope and math.isfinite(f_new):
                accepted = True
                break
            alpha *= 0.5
        if not accepted:
            if not np.allclose(H, np.eye(3)):
                H = np.eye(3)
                continue
            break

        step = cand - theta
        dg = g - g_new  # gradient of the negated objective changes by -dg
        sy = float(step @ dg)
        if sy > 1e-300:
            if first_step:
                H = np.eye(3) * sy / float(dg @ dg)
            rho = 1.0 / sy
            eye = np.eye(3)
            H = (eye - rho * np.outer(step, dg)) @ H @ (eye - rho * np.outer(dg, step)) + rho * np.outer(step, step)
        first_step = False
        clamped = cand[2] in (XI_MIN, XI_MAX) and theta[2] not in (XI_MIN, XI_MAX)
        if clamped:
            H = np.eye(3)
        theta, f, g = cand, f_new, g_new
        recent.append(f)
        if len(recent) > STALL_WINDOW:
            recent.pop(0)
            if f - recent[0] < STALL_RTOL * (1.0 + abs(f)):
                # ridge-like surface (typically xi on its bound with an
                # endpoint pressed against the sample maximum)
                break

    mu = start.mu if "mu" in frozen else float(theta[0])
    sigma = start.sigma if "sigma" in frozen else float(math.exp(theta[1]))
    params = GevParams(mu, sigma, float(theta[2]))
    return FitResult(
        params=params,
        loglik=gev_loglik(params, y),
        converged=converged,
        iterations=it,
        gradient_norm=gnorm,
    )
