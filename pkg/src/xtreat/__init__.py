"""Extreme treatment effects: GEV tail modeling for causal inference."""

from .dataset import CausalDataset, CausalRecord, load_csv, save_csv
from .errors import (
    DegenerateDataError,
    DomainError,
    GradientCheckError,
    InsufficientDataError,
    InvalidArgumentError,
    ParseError,
    SupportViolationError,
    TrainingDivergedError,
    XtreatError,
)
from .gev import (
    FitResult,
    Frechet,
    GevParams,
    Gumbel,
    Weibull,
    gev_cdf,
    gev_fit_mle,
    gev_loglik_grad,
    gev_logpdf,
    gev_quantile,
    gev_sample,
    named_family_logpdf,
)
from .maxsampler import MaxSampleResult, block_maxima, eps_max_sample, kmeans

__version__ = "0.1.0"
