"""Neural conditional GEV regression.

A network maps ``(x, t)`` to GEV parameters and is trained on the negative
conditional log-likelihood of the observed (block-maximum) outcomes.  Three
layouts are supported:

* s-learner: one network on the concatenated input ``[x, t]``;
* t-learner: two disjoint networks, one per treatment arm;
* TARNet/CFR: a shared representation ``phi(x)`` feeding one head per arm,
  optionally regularized by a sliced 1-Wasserstein distance between the
  treated and control representations (``alpha > 0``).

Everything is plain numpy in float64, with gradients from backpropagation.
"""

from __future__ import annotations

import json
import logging
import math
import warnings
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Callable, Optional, Sequence

import numpy as np

from .dataset import CausalDataset
from .errors import (
    GradientCheckError,
    InvalidArgumentError,
    ParseError,
    TrainingDivergedError,
)
from .gev import XI_MAX, XI_MIN, GevParams, logpdf_and_grad

log = logging.getLogger(__name__)

FORMAT_MAGIC = b"XTREAT-CGEV\n"
FORMAT_VERSION = 1

SIGMA_FLOOR = 1e-6
_SIGMA_OFFSET = math.log(math.e - 1.0)  # softplus(0 + offset) == 1
_XI_MID = 0.5 * (XI_MAX + XI_MIN)
_XI_HALF = 0.5 * (XI_MAX - XI_MIN)
_XI_OFFSET = math.atanh(-_XI_MID / _XI_HALF)  # xi(raw=0) == 0

VIOLATION_PENALTY = 1e10
VIOLATION_SLOPE = 10.0

HEAD_NAMES = ("mu", "sigma", "xi")

FrozenFn = Callable[[np.ndarray, np.ndarray], np.ndarray]


# ---------------------------------------------------------------------------
# configuration types
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class LearnerKind:
    variant: str
    alpha: float = 0.0

    def __post_init__(self):
        if self.variant not in ("slearner", "tlearner", "tarnet"):
            raise InvalidArgumentError(f"unknown learner variant {self.variant!r}")
        if self.alpha < 0 or (self.variant != "tarnet" and self.alpha != 0):
            raise InvalidArgumentError("alpha must be >= 0 and is only meaningful for TARNet")

    @classmethod
    def slearner(cls):
        return cls("slearner")

    @classmethod
    def tlearner(cls):
        return cls("tlearner")

    @classmethod
    def tarnet(cls, alpha: float = 0.0):
        return cls("tarnet", float(alpha))

    @classmethod
    def parse(cls, name: str, alpha: float = 0.0) -> "LearnerKind":
        name = name.lower().replace("-", "").replace("_", "")
        if name in ("s", "slearner"):
            return cls.slearner()
        if name in ("t", "tlearner"):
            return cls.tlearner()
        if name == "tarnet":
            return cls.tarnet(alpha)
        if name in ("cfr", "cfrwass"):
            return cls.tarnet(alpha if alpha > 0 else 1.0)
        raise InvalidArgumentError(f"unknown learner {name!r}")

    @property
    def label(self) -> str:
        if self.variant == "tarnet":
            return "CFR" if self.alpha > 0 else "TARNet"
        return {"slearner": "S-Learner", "tlearner": "T-Learner"}[self.variant]


@dataclass(frozen=True)
class TrainConfig:
    epochs: int = 200
    batch_size: int = 64
    step_size: float = 1e-3
    seed: int = 0
    weight_init_scale: float = 1.0
    early_stop_patience: int = 30
    ipm_projections: int = 32
    momentum: float = 0.9
    clip_norm: float = 10.0
    plateau_patience: int = 10
    decay: float = 0.5
    check_gradients: bool = True
    validation_fraction: float = 0.0
    warm_start: bool = True

    def __post_init__(self):
        if self.epochs < 0:
            raise InvalidArgumentError("epochs must be >= 0")
        for name in ("batch_size", "early_stop_patience", "ipm_projections", "plateau_patience"):
            if getattr(self, name) < 1:
                raise InvalidArgumentError(f"{name} must be positive")
        if not self.step_size > 0:
            raise InvalidArgumentError("step_size must be > 0")
        if not 0.0 <= self.validation_fraction < 1.0:
            raise InvalidArgumentError("validation_fraction must lie in [0, 1)")


# ---------------------------------------------------------------------------
# dense networks over a flat weight vector
# ---------------------------------------------------------------------------

def _act(name, z):
    if name == "tanh":
        return np.tanh(z)
    if name == "softplus":
        return np.logaddexp(0.0, z)
    if name == "elu":
        return np.where(z > 0, z, np.expm1(np.minimum(z, 0.0)))
    raise InvalidArgumentError(f"unknown activation {name!r}")


def _act_grad(name, z, a):
    if name == "tanh":
        return 1.0 - a * a
    if name == "softplus":
        return 0.5 * (1.0 + np.tanh(0.5 * z))
    return np.where(z > 0, 1.0, a + 1.0)


class _MLP:
    """Stack of dense layers stored inside a shared flat weight vector."""

    def __init__(self, sizes, activate_last, offset):
        self.sizes = list(sizes)
        self.activate_last = activate_last
        self.slices = []
        off = offset
        for n_in, n_out in zip(self.sizes[:-1], self.sizes[1:]):
            w = (off, off + n_in * n_out, (n_in, n_out))
            off += n_in * n_out
            b = (off, off + n_out)
            off += n_out
            self.slices.append((w, b))
        self.offset, self.end = offset, off

    def init(self, weights, rng, scale):
        last = len(self.slices) - 1
        for i, ((w0, w1, shape), (b0, b1)) in enumerate(self.slices):
            limit = scale * math.sqrt(6.0 / (shape[0] + shape[1]))
            draw = rng.uniform(-limit, limit, size=w1 - w0)
            # output layers start at zero so every head begins at its
            # transform's neutral value (xi = 0 has unbounded support)
            weights[w0:w1] = 0.0 if (i == last and not self.activate_last) else draw
            weights[b0:b1] = 0.0

    def _params(self, weights, i):
        (w0, w1, shape), (b0, b1) = self.slices[i]
        return weights[w0:w1].reshape(shape), weights[b0:b1]

    def forward(self, weights, x, activation):
        cache = []
        h = x
        last = len(self.slices) - 1
        for i in range(len(self.slices)):
            W, b = self._params(weights, i)
            z = h @ W + b
            a = _act(activation, z) if (i < last or self.activate_last) else z
            cache.append((h, z, a))
            h = a
        return h, cache

    def backward(self, weights, cache, d_out, activation, grad):
        last = len(self.slices) - 1
        d = d_out
        for i in range(last, -1, -1):
            h, z, a = cache[i]
            if i < last or self.activate_last:
                d = d * _act_grad(activation, z, a)
            W, _ = self._params(weights, i)
            (w0, w1, _), (b0, b1) = self.slices[i]
            grad[w0:w1] += (h.T @ d).ravel()
            grad[b0:b1] += d.sum(axis=0)
            d = d @ W.T
        return d


# ---------------------------------------------------------------------------
# model
# ---------------------------------------------------------------------------

@dataclass(eq=False)
class ConditionalGevModel:
    kind: LearnerKind
    input_dim: int
    arch: tuple[int, ...]
    activation: str
    learned: tuple[str, ...]
    weights: np.ndarray
    head_arch: tuple[int, ...] = ()
    frozen_mu_fn: Optional[FrozenFn] = None
    frozen_sigma_fn: Optional[FrozenFn] = None
    frozen_source: Optional[dict] = None
    input_shift: np.ndarray = None
    input_scale: np.ndarray = None
    nets: list = field(default=None, repr=False)

    def __post_init__(self):
        if self.input_shift is None:
            self.input_shift = np.zeros(self.input_dim)
        if self.input_scale is None:
            self.input_scale = np.ones(self.input_dim)
        self.input_shift = np.asarray(self.input_shift, dtype=float)
        self.input_scale = np.asarray(self.input_scale, dtype=float)
        self.nets = _layout(self.kind, self.input_dim, self.arch, self.head_arch, len(self.learned))
        n_weights = self.nets[-1].end
        self.weights = np.asarray(self.weights, dtype=float)
        if self.weights.shape != (n_weights,):
            raise InvalidArgumentError(
                f"weight vector has {self.weights.size} entries, layout needs {n_weights}"
            )

    @property
    def n_weights(self) -> int:
        return self.weights.size

    def with_weights(self, weights) -> "ConditionalGevModel":
        return replace(self, weights=np.array(weights, dtype=float), nets=None)

    def block_slice(self, arm: int) -> slice:
        """Weight range owned exclusively by treatment arm ``arm``.

        Defined for the t-learner (whole network) and TARNet (arm head).
        """
        if self.kind.variant == "slearner":
            raise InvalidArgumentError("the s-learner shares all weights across arms")
        net = self.nets[arm] if self.kind.variant == "tlearner" else self.nets[1 + arm]
        return slice(net.offset, net.end)


def _layout(kind, d, arch, head_arch, n_out):
    if kind.variant == "slearner":
        return [_MLP([d + 1, *arch, n_out], False, 0)]
    if kind.variant == "tlearner":
        a = _MLP([d, *arch, n_out], False, 0)
        b = _MLP([d, *arch, n_out], False, a.end)
        return [a, b]
    rep = _MLP([d, *arch], True, 0)
    h0 = _MLP([arch[-1], *head_arch, n_out], False, rep.end)
    h1 = _MLP([arch[-1], *head_arch, n_out], False, h0.end)
    return [rep, h0, h1]


def build_learner(
    kind: LearnerKind,
    d: int,
    arch: Sequence[int] = (64, 64, 64),
    learned: Sequence[str] = ("xi",),
    frozen_mu_fn: Optional[FrozenFn] = None,
    frozen_sigma_fn: Optional[FrozenFn] = None,
    seed=0,
    activation: str = "tanh",
    head_arch: Sequence[int] | None = None,
    init_scale: float = 1.0,
    input_shift=None,
    input_scale=None,
    frozen_source: Optional[dict] = None,
) -> ConditionalGevModel:
    """Construct a learner with scaled-uniform (Glorot) hidden weights and
    zero output layers, so that initial predictions are ``mu = 0``,
    ``sigma = 1``, ``xi = 0`` for learned heads.

    ``learned`` lists the GEV parameters produced by the network; the rest
    come from ``frozen_mu_fn`` / ``frozen_sigma_fn``, called as ``fn(X, t)``
    on raw covariates.  TARNet heads default to one hidden layer as wide as
    the representation.
    """
    if int(d) < 1:
        raise InvalidArgumentError("input dimension must be >= 1")
    arch = tuple(int(a) for a in arch)
    if not arch or any(a < 1 for a in arch):
        raise InvalidArgumentError(f"invalid architecture {arch}")
    learned = tuple(n for n in HEAD_NAMES if n in set(learned))
    if "xi" not in learned or set(learned) - set(HEAD_NAMES):
        raise InvalidArgumentError("the shape head must be learned")
    if "mu" not in learned and frozen_mu_fn is None:
        raise InvalidArgumentError("frozen mu needs frozen_mu_fn")
    if "sigma" not in learned and frozen_sigma_fn is None:
        raise InvalidArgumentError("frozen sigma needs frozen_sigma_fn")
    _act(activation, np.zeros(1))
    if head_arch is None:
        head_arch = (arch[-1],) if kind.variant == "tarnet" else ()
    head_arch = tuple(int(a) for a in head_arch)
    if any(a < 1 for a in head_arch):
        raise InvalidArgumentError(f"invalid head architecture {head_arch}")

    nets = _layout(kind, int(d), arch, head_arch, len(learned))
    weights = np.zeros(nets[-1].end)
    rng = np.random.default_rng(seed)
    for net in nets:
        net.init(weights, rng, init_scale)
    return ConditionalGevModel(
        kind=kind,
        input_dim=int(d),
        arch=arch,
        activation=activation,
        learned=learned,
        weights=weights,
        head_arch=head_arch,
        frozen_mu_fn=frozen_mu_fn if "mu" not in learned else None,
        frozen_sigma_fn=frozen_sigma_fn if "sigma" not in learned else None,
        frozen_source=frozen_source,
        input_shift=input_shift,
        input_scale=input_scale,
    )


# ---------------------------------------------------------------------------
# forward / backward
# ---------------------------------------------------------------------------

def _check_inputs(model, X, t):
    X = np.asarray(X, dtype=float)
    if X.ndim == 1:
        X = X[None, :] if model.input_dim > 1 or X.size == 1 else X[:, None]
    if X.ndim != 2 or X.shape[1] != model.input_dim:
        raise InvalidArgumentError(
            f"covariates have dimension {X.shape[-1]}, model expects {model.input_dim}"
        )
    t = np.broadcast_to(np.asarray(t, dtype=np.int64), (X.shape[0],))
    if not np.all((t == 0) | (t == 1)):
        raise InvalidArgumentError("treatment must be 0 or 1")
    return X, t


def _forward(model, weights, X, t):
    """Raw head outputs, plus whatever backward() and the IPM need."""
    Xn = (X - model.input_shift) / model.input_scale
    n = X.shape[0]
    n_out = len(model.learned)
    act = model.activation
    variant = model.kind.variant
    if variant == "slearner":
        inp = np.hstack([Xn, t[:, None].astype(float)])
        raw, cache = model.nets[0].forward(weights, inp, act)
        return raw, {"cache": cache}
    raw = np.empty((n, n_out))
    caches = {}
    if variant == "tlearner":
        for arm in (0, 1):
            rows = np.flatnonzero(t == arm)
            if rows.size:
                out, c = model.nets[arm].forward(weights, Xn[rows], act)
                raw[rows] = out
                caches[arm] = (rows, c)
        return raw, {"arms": caches}
    rep, rep_cache = model.nets[0].forward(weights, Xn, act)
    for arm in (0, 1):
        rows = np.flatnonzero(t == arm)
        if rows.size:
            out, c = model.nets[1 + arm].forward(weights, rep[rows], act)
            raw[rows] = out
            caches[arm] = (rows, c)
    return raw, {"arms": caches, "rep": rep, "rep_cache": rep_cache}


def _backward(model, weights, state, d_raw, d_rep=None):
    grad = np.zeros_like(weights)
    act = model.activation
    variant = model.kind.variant
    if variant == "slearner":
        model.nets[0].backward(weights, state["cache"], d_raw, act, grad)
        return grad
    if variant == "tlearner":
        for arm, (rows, c) in state["arms"].items():
            model.nets[arm].backward(weights, c, d_raw[rows], act, grad)
        return grad
    rep = state["rep"]
    d_r = np.zeros_like(rep) if d_rep is None else d_rep.copy()
    for arm, (rows, c) in state["arms"].items():
        d_r[rows] += model.nets[1 + arm].backward(weights, c, d_raw[rows], act, grad)
    model.nets[0].backward(weights, state["rep_cache"], d_r, act, grad)
    return grad


def _transform(model, X, t, raw):
    """Assemble (mu, sigma, xi) and the derivative of each w.r.t. its raw head."""
    out, deriv = {}, {}
    for j, name in enumerate(model.learned):
        r = raw[:, j]
        if name == "mu":
            out[name], deriv[name] = r, np.ones_like(r)
        elif name == "sigma":
            z = r + _SIGMA_OFFSET
            out[name] = np.logaddexp(0.0, z) + SIGMA_FLOOR
            deriv[name] = 0.5 * (1.0 + np.tanh(0.5 * z))
        else:
            th = np.tanh(r + _XI_OFFSET)
            out[name] = np.clip(_XI_MID + _XI_HALF * th, XI_MIN, XI_MAX)
            deriv[name] = _XI_HALF * (1.0 - th * th)
    if "mu" not in out:
        out["mu"] = np.broadcast_to(np.asarray(model.frozen_mu_fn(X, t), dtype=float), t.shape)
    if "sigma" not in out:
        out["sigma"] = np.broadcast_to(np.asarray(model.frozen_sigma_fn(X, t), dtype=float), t.shape)
    return out, deriv


def xi_raw_for(value: float) -> float:
    """Raw shape-head output that maps to ``value``."""
    return math.atanh((value - _XI_MID) / _XI_HALF) - _XI_OFFSET


def _raw_for(name, value):
    if name == "mu":
        return value
    if name == "sigma":
        v = max(value - SIGMA_FLOOR, 1e-12)
        return v + math.log(-math.expm1(-v)) - _SIGMA_OFFSET  # inverse softplus
    return xi_raw_for(min(max(value, XI_MIN + 1e-3), XI_MAX - 1e-3))


def warm_start(model: ConditionalGevModel, X, t, y) -> np.ndarray:
    """Weights whose output biases reproduce a constant GEV fit per arm.

    Each learned head starts at the marginal maximum-likelihood value of its
    arm (pooled over arms for the s-learner), computed on outcomes
    standardized by the frozen location and scale.  Groups too small or too
    degenerate to fit keep the neutral start.
    """
    from .gev import gev_fit_mle

    w = model.weights.copy()
    variant = model.kind.variant
    groups = [(None, model.nets[0])] if variant == "slearner" else [
        (arm, model.nets[arm] if variant == "tlearner" else model.nets[1 + arm]) for arm in (0, 1)
    ]
    for arm, net in groups:
        rows = np.arange(t.size) if arm is None else np.flatnonzero(t == arm)
        if rows.size < 20:
            continue
        Xg, tg, yg = X[rows], t[rows], y[rows]
        shift = model.frozen_mu_fn(Xg, tg) if model.frozen_mu_fn is not None else 0.0
        scale = model.frozen_sigma_fn(Xg, tg) if model.frozen_sigma_fn is not None else 1.0
        z = (yg - shift) / scale
        frozen = tuple(n for n in ("mu", "sigma") if n not in model.learned)
        try:
            fit = gev_fit_mle(z, init=GevParams(0.0, 1.0, 0.0), frozen=frozen)
        except ValueError:
            continue
        values = {
            "mu": fit.params.mu * float(np.median(scale)),
            "sigma": fit.params.sigma * float(np.median(scale)),
            "xi": fit.params.xi,
        }
        (_, _, _), (b0, _) = net.slices[-1]
        for j, name in enumerate(model.learned):
            w[b0 + j] = _raw_for(name, values[name])
    return w


def predict_arrays(model: ConditionalGevModel, X, t):
    """Vectorized ``(mu, sigma, xi)`` for covariate rows ``X`` under arm(s) ``t``."""
    X, t = _check_inputs(model, X, t)
    raw, _ = _forward(model, model.weights, X, t)
    out, _ = _transform(model, X, t, raw)
    return (
        np.array(out["mu"], dtype=float),
        np.array(out["sigma"], dtype=float),
        np.array(out["xi"], dtype=float),
    )


def predict_params(model: ConditionalGevModel, x, t: int) -> GevParams:
    x = np.asarray(x, dtype=float).ravel()
    if x.size != model.input_dim:
        raise InvalidArgumentError(
            f"covariate vector has dimension {x.size}, model expects {model.input_dim}"
        )
    mu, sigma, xi = predict_arrays(model, x[None, :], np.array([t]))
    return GevParams(float(mu[0]), float(sigma[0]), float(xi[0]))


def representations(model: ConditionalGevModel, X) -> np.ndarray:
    """Shared representation ``phi(x)`` (TARNet/CFR only)."""
    if model.kind.variant != "tarnet":
        raise InvalidArgumentError("only TARNet-style learners have a shared representation")
    X, _ = _check_inputs(model, X, 0)
    Xn = (X - model.input_shift) / model.input_scale
    rep, _ = model.nets[0].forward(model.weights, Xn, model.activation)
    return rep


# ---------------------------------------------------------------------------
# losses
# ---------------------------------------------------------------------------

def _as_arrays(batch):
    if isinstance(batch, CausalDataset):
        return batch.X, batch.t, batch.y
    batch = list(batch)
    if not batch:
        raise InvalidArgumentError("empty batch")
    ds = CausalDataset.from_records(batch)
    return ds.X, ds.t, ds.y


def _nll_terms(mu, sigma, xi, y, penalty=VIOLATION_PENALTY):
    """Per-record NLL and its partials; out-of-support records get the
    sentinel penalty plus a linear pull back toward the support."""
    lp, ok, dmu, dsigma, dxi = logpdf_and_grad(mu, sigma, xi, y)
    nll = -lp
    gmu, gsigma, gxi = -dmu, -dsigma, -dxi
    if not np.all(ok):
        bad = ~ok
        ybar = (y - mu) / sigma
        excess = -(1.0 + xi * ybar)  # >= 0 where the support is violated
        nll = np.where(bad, penalty + VIOLATION_SLOPE * excess, nll)
        gmu = np.where(bad, VIOLATION_SLOPE * xi / sigma, gmu)
        gsigma = np.where(bad, VIOLATION_SLOPE * xi * ybar / sigma, gsigma)
        gxi = np.where(bad, -VIOLATION_SLOPE * ybar, gxi)
    return nll, {"mu": gmu, "sigma": gsigma, "xi": gxi}, ok


def nll_loss(model: ConditionalGevModel, batch) -> float:
    """Mean negative conditional GEV log-likelihood over ``batch``."""
    X, t, y = _as_arrays(batch)
    if y.size == 0:
        raise InvalidArgumentError("empty batch")
    X, t = _check_inputs(model, X, t)
    raw, _ = _forward(model, model.weights, X, t)
    out, _ = _transform(model, X, t, raw)
    nll, _, _ = _nll_terms(out["mu"], out["sigma"], out["xi"], y)
    return float(nll.mean())


def _objective(model, weights, X, t, y, directions=None, drop_penalty=False):
    """Training objective (mean NLL + alpha * IPM) and its weight gradient.

    ``drop_penalty`` removes the constant part of the support-violation
    penalty, which would otherwise swamp finite differences.
    """
    raw, state = _forward(model, weights, X, t)
    out, deriv = _transform(model, X, t, raw)
    penalty = 0.0 if drop_penalty else VIOLATION_PENALTY
    nll, g, ok = _nll_terms(out["mu"], out["sigma"], out["xi"], y, penalty)
    n = y.size
    loss = float(nll.mean())
    d_raw = np.empty_like(raw)
    for j, name in enumerate(model.learned):
        d_raw[:, j] = g[name] * deriv[name] / n
    d_rep = None
    alpha = model.kind.alpha
    if alpha > 0 and directions is not None:
        ipm, d_rep = _sliced_w1(state["rep"], t, directions)
        loss += alpha * ipm
        d_rep = alpha * d_rep
    n_bad = int(n - np.count_nonzero(ok))
    return loss, _backward(model, weights, state, d_raw, d_rep), n_bad


# ---------------------------------------------------------------------------
# sliced Wasserstein IPM
# ---------------------------------------------------------------------------

def _w1_1d(a, b):
    """Exact W1 between two uniform empirical measures on the line, with
    (sub)gradients with respect to every atom."""
    n1, n0 = a.size, b.size
    ia, ib = np.argsort(a, kind="stable"), np.argsort(b, kind="stable")
    sa, sb = a[ia], b[ib]
    u = np.unique(np.concatenate([np.arange(1, n1 + 1) / n1, np.arange(1, n0 + 1) / n0]))
    left = np.concatenate([[0.0], u[:-1]])
    du = u - left
    mid = 0.5 * (left + u)
    ka = np.minimum((mid * n1).astype(np.int64), n1 - 1)
    kb = np.minimum((mid * n0).astype(np.int64), n0 - 1)
    diff = sa[ka] - sb[kb]
    value = float(np.sum(du * np.abs(diff)))
    s = np.sign(diff) * du
    ga, gb = np.empty(n1), np.empty(n0)
    ga[ia] = np.bincount(ka, weights=s, minlength=n1)
    gb[ib] = -np.bincount(kb, weights=s, minlength=n0)
    return value, ga, gb


def random_directions(dim: int, count: int, seed=None) -> np.ndarray:
    rng = np.random.default_rng(seed)
    w = rng.standard_normal((count, dim))
    return w / np.linalg.norm(w, axis=1, keepdims=True)


def _sliced_w1(R, t, directions):
    rows1, rows0 = np.flatnonzero(t == 1), np.flatnonzero(t == 0)
    dR = np.zeros_like(R)
    if rows1.size == 0 or rows0.size == 0:
        return 0.0, dR
    proj = R @ directions.T
    total = 0.0
    for k in range(directions.shape[0]):
        v, ga, gb = _w1_1d(proj[rows1, k], proj[rows0, k])
        total += v
        dR[rows1] += np.outer(ga, directions[k])
        dR[rows0] += np.outer(gb, directions[k])
    P = directions.shape[0]
    return total / P, dR / P


class SingleArmBatchWarning(UserWarning):
    pass


def ipm_penalty(representations, treatments, projections: int = 32, seed=None) -> float:
    """Sliced 1-Wasserstein distance between treated and control representations.

    Averages the exact one-dimensional W1 over ``projections`` random unit
    directions.  A batch with a single arm yields 0 and a
    :class:`SingleArmBatchWarning`.
    """
    R = np.asarray(representations, dtype=float)
    if R.ndim == 1:
        R = R[:, None]
    t = np.asarray(treatments).astype(np.int64)
    if R.shape[0] != t.size:
        raise InvalidArgumentError("one treatment per representation row is required")
    if projections < 1:
        raise InvalidArgumentError("projections must be >= 1")
    if np.all(t == t[0]):
        warnings.warn("IPM requested on a batch containing a single arm", SingleArmBatchWarning)
        return 0.0
    value, _ = _sliced_w1(R, t, random_directions(R.shape[1], projections, seed))
    return value


# ---------------------------------------------------------------------------
# training
# ---------------------------------------------------------------------------

def gradient_check(model, X, t, y, n_coords=10, seed=0, h=1e-6, directions=None):
    """Largest relative error between backprop and central differences over
    ``n_coords`` weight coordinates.

    Half the coordinates are the largest-gradient ones, the rest are drawn
    at random.  Each coordinate keeps its best agreement over the steps
    ``h * 10**k`` for ``k`` in -2..1, since heavy-tailed outcomes make the
    loss sharply curved in the shape head and no single step suits every
    batch.  Coordinates far below the dominant gradient component are
    compared on the scale of 1% of that component, where loss round-off
    would otherwise dominate.
    """
    rng = np.random.default_rng(seed)
    w = model.weights
    _, grad, _ = _objective(model, w, X, t, y, directions, drop_penalty=True)
    floor = max(1e-2 * float(np.max(np.abs(grad))), 1e-6)
    k = min(n_coords, w.size)
    top = np.argsort(-np.abs(grad), kind="stable")[: k // 2]
    rest = np.setdiff1d(np.arange(w.size), top)
    coords = np.concatenate([top, rng.choice(rest, size=k - top.size, replace=False)])
    worst = 0.0
    for c in coords:
        best = math.inf
        for step in h * 10.0 ** np.arange(1, -3, -1):
            wp, wm = w.copy(), w.copy()
            wp[c] += step
            wm[c] -= step
            fp = _objective(model, wp, X, t, y, directions, drop_penalty=True)[0]
            fm = _objective(model, wm, X, t, y, directions, drop_penalty=True)[0]
            fd = (fp - fm) / (2 * step)
            best = min(best, abs(fd - grad[c]) / max(abs(fd), abs(grad[c]), floor))
        worst = max(worst, best)
    return worst


def train(model: ConditionalGevModel, data: CausalDataset, cfg: TrainConfig = TrainConfig()):
    """Mini-batch momentum descent on the conditional NLL (+ IPM for CFR).

    Output biases first move to a constant per-arm GEV fit (see
    :func:`warm_start`) unless ``cfg.warm_start`` is off.
    With ``cfg.validation_fraction > 0`` a per-arm holdout drives the
    step decay and early stopping, and the best-scoring weights are returned.

    Returns ``(trained_model, history)`` where ``history`` holds the mean
    training loss of each epoch, net of the constant support-violation
    penalty (the linear restoring term stays in).  The input model is not
    modified.
    """
    if data.n == 0:
        raise InvalidArgumentError("empty training data")
    X, t = _check_inputs(model, data.X, data.t)
    y = np.asarray(data.y, dtype=float)
    if not np.all(np.isfinite(y)):
        raise InvalidArgumentError("training outcomes must be finite")
    if model.kind.variant != "slearner" and (np.all(t == 1) or np.all(t == 0)):
        raise InvalidArgumentError(f"{model.kind.label} needs records from both arms")
    history: list[float] = []
    if cfg.epochs == 0:
        return model, history

    rng = np.random.default_rng(cfg.seed)
    use_ipm = model.kind.alpha > 0
    rep_dim = model.arch[-1]

    if cfg.check_gradients:
        rows = rng.choice(data.n, size=min(64, data.n), replace=False)
        dirs = random_directions(rep_dim, cfg.ipm_projections, rng) if use_ipm else None
        err = gradient_check(model, X[rows], t[rows], y[rows], seed=cfg.seed, directions=dirs)
        if err > 1e-4:
            raise GradientCheckError(f"backprop gradient disagrees with finite differences (rel. err {err:.2e})")

    train_rows = np.arange(data.n)
    val_rows = None
    if cfg.validation_fraction > 0:
        val_rows, train_rows = _holdout(t, cfg.validation_fraction, rng)

    w = warm_start(model, X[train_rows], t[train_rows], y[train_rows]) if cfg.warm_start else model.weights.copy()
    velocity = np.zeros_like(w)
    lr = cfg.step_size
    best = math.inf
    best_w = w
    stale = since_decay = 0
    last_stable = w.copy()
    n = train_rows.size

    for epoch in range(cfg.epochs):
        perm = train_rows[rng.permutation(n)]
        total = 0.0
        violations = 0
        for start in range(0, n, cfg.batch_size):
            rows = perm[start:start + cfg.batch_size]
            dirs = random_directions(rep_dim, cfg.ipm_projections, rng) if use_ipm else None
            loss, grad, n_bad = _objective(model, w, X[rows], t[rows], y[rows], dirs)
            if not (math.isfinite(loss) and np.all(np.isfinite(grad))):
                raise TrainingDivergedError(
                    f"non-finite loss at epoch {epoch}", last_stable_weights=last_stable
                )
            gnorm = float(np.linalg.norm(grad))
            if gnorm > cfg.clip_norm:
                grad *= cfg.clip_norm / gnorm
            velocity = cfg.momentum * velocity - lr * grad
            w = w + velocity
            total += loss * rows.size
            violations += n_bad
        # the constant violation penalty is left out of the recorded loss
        # and the schedule; otherwise one stray record looks like divergence
        smooth = total / n - VIOLATION_PENALTY * violations / n
        history.append(smooth)
        last_stable = w.copy()
        if violations:
            log.debug("epoch %d: %d support violations", epoch, violations)

        score = smooth
        if val_rows is not None:
            score = _objective(model, w, X[val_rows], t[val_rows], y[val_rows], drop_penalty=True)[0]

        if epoch == 0 or score < best - 1e-4 * abs(best):
            best = score
            best_w = w
            stale = since_decay = 0
        else:
            stale += 1
            since_decay += 1
            if since_decay >= cfg.plateau_patience:
                lr *= cfg.decay
                since_decay = 0
            if stale >= cfg.early_stop_patience:
                log.debug("early stop at epoch %d", epoch)
                break

    # with a validation split, keep the weights that scored best on it
    return model.with_weights(best_w if val_rows is not None else w), history


def _holdout(t, fraction, rng):
    """Per-arm random split into (validation, training) row indices."""
    val, keep = [], []
    for arm in (0, 1):
        rows = rng.permutation(np.flatnonzero(t == arm))
        k = int(round(fraction * rows.size))
        if rows.size - k < 1:
            k = rows.size - 1
        val.append(rows[:k])
        keep.append(rows[k:])
    return np.sort(np.concatenate(val)), np.sort(np.concatenate(keep))


# ---------------------------------------------------------------------------
# serialization
# ---------------------------------------------------------------------------

def model_header(model: ConditionalGevModel) -> dict:
    return {
        "format": "xtreat-conditional-gev",
        "version": FORMAT_VERSION,
        "kind": model.kind.variant,
        "alpha": model.kind.alpha,
        "input_dim": model.input_dim,
        "arch": list(model.arch),
        "head_arch": list(model.head_arch),
        "activation": model.activation,
        "heads": {n: (n in model.learned) for n in HEAD_NAMES},
        "frozen_source": model.frozen_source,
        "input_shift": [float(v) for v in model.input_shift],
        "input_scale": [float(v) for v in model.input_scale],
        "n_weights": model.n_weights,
    }


def save_model(model: ConditionalGevModel, path) -> None:
    """Write magic line, JSON header line, then weights as little-endian f8."""
    header = json.dumps(model_header(model), sort_keys=True).encode("utf-8")
    with Path(path).open("wb") as fh:
        fh.write(FORMAT_MAGIC)
        fh.write(header + b"\n")
        fh.write(np.asarray(model.weights, dtype="<f8").tobytes())


def load_model(path, frozen_mu_fn=None, frozen_sigma_fn=None) -> ConditionalGevModel:
    """Read a model file.

    Frozen heads are re-attached from the header's ``frozen_source`` unless
    functions are passed explicitly.
    """
    raw = Path(path).read_bytes()
    if not raw.startswith(FORMAT_MAGIC):
        raise ParseError(f"{path} is not a conditional GEV model file")
    rest = raw[len(FORMAT_MAGIC):]
    nl = rest.find(b"\n")
    if nl < 0:
        raise ParseError(f"{path}: truncated header")
    header = json.loads(rest[:nl].decode("utf-8"))
    if header.get("version") != FORMAT_VERSION:
        raise ParseError(f"{path}: unsupported format version {header.get('version')}")
    body = rest[nl + 1:]
    weights = np.frombuffer(body, dtype="<f8").astype(float)
    if weights.size != header["n_weights"] or len(body) != 8 * header["n_weights"]:
        raise ParseError(f"{path}: expected {header['n_weights']} weights, found {len(body) / 8}")
    learned = tuple(n for n in HEAD_NAMES if header["heads"][n])
    source = header.get("frozen_source")
    if source is not None and (
        ("mu" not in learned and frozen_mu_fn is None)
        or ("sigma" not in learned and frozen_sigma_fn is None)
    ):
        from .datagen import frozen_functions

        mu_fn, sigma_fn = frozen_functions(source)
        frozen_mu_fn = frozen_mu_fn or mu_fn
        frozen_sigma_fn = frozen_sigma_fn or sigma_fn
    kind = LearnerKind(header["kind"], float(header["alpha"]))
    return ConditionalGevModel(
        kind=kind,
        input_dim=int(header["input_dim"]),
        arch=tuple(header["arch"]),
        activation=header["activation"],
        learned=learned,
        weights=weights,
        head_arch=tuple(header["head_arch"]),
        frozen_mu_fn=frozen_mu_fn if "mu" not in learned else None,
        frozen_sigma_fn=frozen_sigma_fn if "sigma" not in learned else None,
        frozen_source=source,
        input_shift=np.array(header["input_shift"]),
        input_scale=np.array(header["input_scale"]),
    )
