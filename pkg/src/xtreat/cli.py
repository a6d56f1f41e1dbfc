"""Command-line front end.

Exit codes: 0 success, 1 input error, 2 numerical non-convergence,
3 every replication of an experiment failed.
"""

from __future__ import annotations

import argparse
import csv
import json
import logging
import sys
from pathlib import Path

import numpy as np

from . import __version__
from .condmodel import LearnerKind, TrainConfig, build_learner, load_model, save_model, train
from .dataset import load_csv, load_values, save_csv
from .datagen import GENERATOR_NAMES, GeneratorSpec, generate, mda_generator, truth_for
from .errors import (
    DomainError,
    GradientCheckError,
    TrainingDivergedError,
    XtreatError,
)
from .estimators import estimate, validate_report
from .experiments import PRESET_NAMES, ExperimentConfig, load_preset, run_experiment
from .gev import GevParams, gev_fit_mle
from .maxsampler import eps_max_sample

EXIT_OK = 0
EXIT_INPUT = 1
EXIT_NONCONVERGED = 2
EXIT_ALL_FAILED = 3

log = logging.getLogger("xtreat")


def _write_text(path, text):
    with Path(path).open("w", newline="\n", encoding="utf-8") as fh:
        fh.write(text)


def _emit(text, path=None):
    if path is None:
        sys.stdout.write(text)
    else:
        _write_text(path, text)


def _json(doc) -> str:
    return json.dumps(doc, sort_keys=True, indent=2) + "\n"


def _floats(text, count, flag):
    parts = [p for p in text.split(",") if p.strip()]
    if len(parts) != count:
        raise argparse.ArgumentTypeError(f"{flag} expects {count} comma-separated numbers")
    try:
        return [float(p) for p in parts]
    except ValueError:
        raise argparse.ArgumentTypeError(f"{flag} expects numbers, got {text!r}") from None


# ---------------------------------------------------------------------------
# subcommands
# ---------------------------------------------------------------------------

def cmd_fit_gev(args) -> int:
    y = load_values(args.input)
    init = None
    if args.init is not None:
        mu, sigma, xi = _floats(args.init, 3, "--init")
        init = GevParams(mu, sigma, xi)
    frozen = []
    if args.frozen_mu is not None or args.frozen_sigma is not None:
        base = init or GevParams(0.0, 1.0, 0.0)
        mu = args.frozen_mu if args.frozen_mu is not None else base.mu
        sigma = args.frozen_sigma if args.frozen_sigma is not None else base.sigma
        init = GevParams(mu, sigma, base.xi)
        frozen = [n for n, v in (("mu", args.frozen_mu), ("sigma", args.frozen_sigma)) if v is not None]
    fit = gev_fit_mle(y, init=init, frozen=frozen)
    doc = {
        "mu": fit.params.mu,
        "sigma": fit.params.sigma,
        "xi": fit.params.xi,
        "loglik": fit.loglik,
        "converged": fit.converged,
        "iterations": fit.iterations,
        "gradient_norm": fit.gradient_norm,
        "n": int(y.size),
    }
    _emit(_json(doc), args.output)
    return EXIT_OK if fit.converged else EXIT_NONCONVERGED


def cmd_max_sample(args) -> int:
    data = load_csv(args.input)
    res = eps_max_sample(data, args.m, seed=args.seed, stratify_by_treatment=args.stratify)
    save_csv(res.data, args.output)
    sizes = np.bincount(res.assignments, minlength=res.cluster_count)
    diag = {
        "input_rows": data.n,
        "output_rows": res.data.n,
        "block_size": res.block_size,
        "cluster_count": res.cluster_count,
        "cluster_size_min": int(sizes.min()),
        "cluster_size_max": int(sizes.max()),
        "max_intra_radius": res.max_intra_radius,
    }
    _emit(_json(diag), args.diagnostics)
    return EXIT_OK


def _frozen_fns(args):
    if args.truth is None:
        return None, None, None
    truth = truth_for(args.truth, seed=args.truth_seed, covariate_path=args.covariates)
    return truth.mu, truth.sigma, truth.frozen_source


def cmd_train(args) -> int:
    data = load_csv(args.input)
    learned = tuple(h.strip() for h in args.learn.split(",") if h.strip())
    mu_fn, sigma_fn, source = _frozen_fns(args)
    kind = LearnerKind.parse(args.learner, args.alpha)
    arch = tuple(int(a) for a in args.arch.split(","))
    shift = scale = None
    if args.standardize:
        shift = data.X.mean(axis=0)
        scale = data.X.std(axis=0)
        scale[scale == 0] = 1.0
    model = build_learner(
        kind,
        data.d,
        arch=arch,
        learned=learned,
        frozen_mu_fn=mu_fn,
        frozen_sigma_fn=sigma_fn,
        seed=args.seed,
        input_shift=shift,
        input_scale=scale,
        frozen_source=source,
    )
    cfg = TrainConfig(
        epochs=args.epochs,
        batch_size=args.batch_size,
        step_size=args.step_size,
        seed=args.seed,
        validation_fraction=args.validation_fraction,
    )
    try:
        trained, history = train(model, data, cfg)
    except TrainingDivergedError as exc:
        if exc.last_stable_weights is not None:
            save_model(model.with_weights(exc.last_stable_weights), args.output)
        raise
    save_model(trained, args.output)
    hist_path = args.history or f"{args.output}.history.csv"
    rows = "".join(f"{i},{loss!r}\n" for i, loss in enumerate(history))
    _write_text(hist_path, "epoch,loss\n" + rows)
    print(_json({"model": str(args.output), "history": str(hist_path), "epochs_run": len(history)}), end="")
    return EXIT_OK


def cmd_estimate(args) -> int:
    data = load_csv(args.input)
    truth = None
    mu_fn = sigma_fn = None
    if args.truth is not None:
        truth = truth_for(args.truth, seed=args.truth_seed, covariate_path=args.covariates)
        mu_fn, sigma_fn = truth.mu, truth.sigma
    model = load_model(args.model, frozen_mu_fn=mu_fn, frozen_sigma_fn=sigma_fn)
    report = estimate(
        model,
        data,
        draws_per_x=args.draws,
        seed=args.seed,
        truth=truth,
        oracle_n=args.oracle_n,
        min_total=args.min_total,
    )
    doc = report.to_dict()
    validate_report(doc)
    _emit(_json(doc), args.output)
    return EXIT_OK if report.converged else EXIT_NONCONVERGED


def cmd_generate(args) -> int:
    if args.name in ("gaussian", "beta", "loggamma"):
        data, _ = mda_generator(args.name, args.n, args.m, args.seed, dim=args.dim)
    else:
        spec = GeneratorSpec(
            name=args.name,
            n=args.n,
            seed=args.seed,
            m=args.m,
            eval_mode=args.eval_mode,
            covariate_path=args.covariates,
        )
        data = generate(spec).data
    save_csv(data, args.output)
    return EXIT_OK


def cmd_experiment(args) -> int:
    if args.config in PRESET_NAMES and not Path(args.config).exists():
        cfg = load_preset(args.config)
    else:
        cfg = ExperimentConfig.load(args.config)
    if args.seeds is not None:
        cfg = cfg.with_overrides(seeds=tuple(int(s) for s in args.seeds.split(",")))
    out = args.output or cfg.output_dir
    if out is None:
        raise XtreatError("no output directory: pass --output or set output_dir in the config")
    result = run_experiment(cfg, out, jobs=args.jobs)
    summary = {"output_dir": str(out), "replications": len(result.records), "failed": result.n_failed}
    print(_json(summary), end="")
    return EXIT_ALL_FAILED if result.all_failed else EXIT_OK


# ---------------------------------------------------------------------------
# parser
# ---------------------------------------------------------------------------

class _Parser(argparse.ArgumentParser):
    """Usage errors are input errors (exit 1), keeping 2 for numerical failures."""

    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_INPUT, f"{self.prog}: error: {message}\n")


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="xtreat", description="Extreme treatment effect estimation.")
    p.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    p.add_argument("-v", "--verbose", action="store_true", help="debug logging on stderr")
    sub = p.add_subparsers(dest="command", required=True)

    s = sub.add_parser("fit-gev", help="maximum-likelihood GEV fit to a column of values")
    s.add_argument("input", help="file with one value per line (optional header)")
    s.add_argument("--frozen-mu", type=float, help="hold the location at this value")
    s.add_argument("--frozen-sigma", type=float, help="hold the scale at this value")
    s.add_argument("--init", help="starting point as mu,sigma,xi")
    s.add_argument("--output", help="write the JSON report here instead of stdout")
    s.set_defaults(func=cmd_fit_gev)

    s = sub.add_parser("max-sample", help="k-means spatial block maxima of a dataset csv")
    s.add_argument("input")
    s.add_argument("--m", type=int, required=True, help="block size; K = n // m clusters")
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--stratify", action="store_true", help="cluster each treatment arm separately")
    s.add_argument("--output", required=True, help="csv of per-cluster maxima")
    s.add_argument("--diagnostics", help="write the JSON diagnostics here instead of stdout")
    s.set_defaults(func=cmd_max_sample)

    s = sub.add_parser("train", help="fit a conditional GEV learner")
    s.add_argument("input", help="dataset csv (x1..xd,t,y)")
    s.add_argument("--learner", default="slearner", help="slearner, tlearner, tarnet or cfr")
    s.add_argument("--alpha", type=float, default=0.0, help="IPM weight (TARNet/CFR)")
    s.add_argument("--epochs", type=int, default=200)
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--arch", default="64,64,64", help="hidden layer widths")
    s.add_argument("--batch-size", type=int, default=64)
    s.add_argument("--step-size", type=float, default=1e-3)
    s.add_argument("--validation-fraction", type=float, default=0.0)
    s.add_argument("--learn", default="xi", help="heads produced by the network, e.g. mu,sigma,xi")
    s.add_argument("--truth", choices=GENERATOR_NAMES, help="take frozen heads from this generator")
    s.add_argument("--truth-seed", type=int, default=0, help="generator seed (IHDP beta draw)")
    s.add_argument("--covariates", help="IHDP covariate csv for --truth")
    s.add_argument("--standardize", action="store_true", help="z-score inputs inside the model")
    s.add_argument("--output", required=True, help="model file path")
    s.add_argument("--history", help="loss history csv (default: <output>.history.csv)")
    s.set_defaults(func=cmd_train)

    s = sub.add_parser("estimate", help="proposed and naive ETE from a trained model")
    s.add_argument("model")
    s.add_argument("input", help="dataset csv")
    s.add_argument("--draws", type=int, default=1, help="model draws per covariate row")
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--min-total", type=int, default=10_000, help="minimum pooled draws per arm")
    s.add_argument("--truth", choices=GENERATOR_NAMES, help="generator for error metrics")
    s.add_argument("--truth-seed", type=int, default=0)
    s.add_argument("--covariates", help="IHDP covariate csv for --truth")
    s.add_argument("--oracle-n", type=int, default=100_000)
    s.add_argument("--output", help="write the JSON report here instead of stdout")
    s.set_defaults(func=cmd_estimate)

    s = sub.add_parser("generate", help="write a generator's dataset as csv")
    s.add_argument("name", choices=GENERATOR_NAMES)
    s.add_argument("--n", type=int, default=5000)
    s.add_argument("--m", type=int, default=1, help="per-row block size")
    s.add_argument("--dim", type=int, default=1, help="covariate dimension (MDA families)")
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--eval-mode", action="store_true", help="evaluation propensity (synthetic_1d)")
    s.add_argument("--covariates", help="IHDP covariate csv")
    s.add_argument("--output", required=True)
    s.set_defaults(func=cmd_generate)

    s = sub.add_parser("experiment", help="run a replicated experiment")
    s.add_argument("config", help=f"config JSON path or preset name ({', '.join(PRESET_NAMES)})")
    s.add_argument("--output", help="results directory (overrides the config)")
    s.add_argument("--jobs", type=int, default=1, help="concurrent replications")
    s.add_argument("--seeds", help="comma-separated seed list (overrides the config)")
    s.set_defaults(func=cmd_experiment)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(
        level=logging.DEBUG if args.verbose else logging.WARNING,
        format="%(levelname)s %(name)s: %(message)s",
        stream=sys.stderr,
    )
    try:
        return args.func(args)
    except (TrainingDivergedError, GradientCheckError, DomainError) as exc:
        print(f"xtreat: numerical failure: {exc}", file=sys.stderr)
        return EXIT_NONCONVERGED
    except (XtreatError, ValueError, OSError, argparse.ArgumentTypeError, csv.Error) as exc:
        print(f"xtreat: error: {exc}", file=sys.stderr)
        return EXIT_INPUT


if __name__ == "__main__":
    sys.exit(main())
