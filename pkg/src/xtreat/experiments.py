"""Replicated experiment runner with aggregate and plot-data csv output.

An experiment is a grid of cells crossed with a seed list.  Each (cell,
seed) pair is one replication: it generates data, trains a conditional GEV
learner, scores it against the generator's ground truth and writes its own
JSON record.  Aggregation is a single ordered pass over those records, so
the csv output does not depend on ``jobs``.
"""

from __future__ import annotations

import csv
import io
import itertools
import json
import logging
import re
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field, fields, replace
from functools import lru_cache
from importlib import resources
from pathlib import Path
from typing import Optional

import numpy as np

from .condmodel import (
    ConditionalGevModel,
    LearnerKind,
    TrainConfig,
    build_learner,
    predict_arrays,
    train,
)
from .datagen import (
    IHDP_VARIANTS,
    MDA_FAMILIES,
    GeneratorSpec,
    generate,
    mda_generator,
    mda_norming,
)
from .errors import InvalidArgumentError, ParseError
from .estimators import cete, estimate, true_ete_oracle, validate_report
from .maxsampler import eps_max_sample

log = logging.getLogger(__name__)

EXPERIMENT_KINDS = ("ete_convergence", "cete_curves", "ihdp", "ablation")
PRESET_NAMES = ("fig2", "fig3", "table1", "table2", "ablation_ndk")
DEFAULT_SEEDS = tuple(range(10))

# grid axes each kind understands, in csv column order
_AXES = {
    "ete_convergence": ("learner", "n"),
    "cete_curves": ("learner", "n"),
    "ihdp": ("learner", "variant"),
    "ablation": ("family", "n", "d", "k"),
}
_CURVE_GRID = np.linspace(-3.0, 3.0, 61)


@dataclass(frozen=True)
class LearnerSpec:
    kind: str = "slearner"
    alpha: float = 0.0
    arch: tuple = (64, 64, 64)
    activation: str = "tanh"
    learned: tuple = ("xi",)
    standardize_inputs: bool = False

    def __post_init__(self):
        object.__setattr__(self, "arch", tuple(int(a) for a in self.arch))
        object.__setattr__(self, "learned", tuple(self.learned))
        LearnerKind.parse(self.kind, self.alpha)

    def learner_kind(self, name: Optional[str] = None) -> LearnerKind:
        return LearnerKind.parse(name or self.kind, self.alpha)


@dataclass(frozen=True)
class EstimatorSpec:
    draws_per_x: int = 1
    min_total: int = 10_000
    oracle_n: int = 100_000
    oracle_m: int = 1
    # the synthetic truth does not move with the seed, so its oracle is
    # averaged over this many independent oracle seeds
    oracle_repeats: int = 1
    eval_n: int = 20_000
    eval_seed: int = 99

    def __post_init__(self):
        for f in fields(self):
            if f.name != "eval_seed" and getattr(self, f.name) < 1:
                raise InvalidArgumentError(f"estimator.{f.name} must be >= 1")


def _build(cls, doc, where):
    if doc is None:
        return cls()
    if not isinstance(doc, dict):
        raise ParseError(f"{where} must be an object")
    unknown = set(doc) - {f.name for f in fields(cls)}
    if unknown:
        raise ParseError(f"unknown {where} fields {sorted(unknown)}")
    try:
        return cls(**doc)
    except TypeError as exc:
        raise ParseError(f"{where}: {exc}") from exc


@dataclass(frozen=True)
class ExperimentConfig:
    kind: str
    generator: dict = field(default_factory=dict)
    learner: LearnerSpec = field(default_factory=LearnerSpec)
    train: TrainConfig = field(default_factory=TrainConfig)
    estimator: EstimatorSpec = field(default_factory=EstimatorSpec)
    max_sampler_m: int = 1
    seeds: tuple = DEFAULT_SEEDS
    grid: tuple = ({},)
    output_dir: Optional[str] = None

    def __post_init__(self):
        if self.kind not in EXPERIMENT_KINDS:
            raise InvalidArgumentError(f"unknown experiment kind {self.kind!r}; expected one of {EXPERIMENT_KINDS}")
        seeds = tuple(int(s) for s in self.seeds)
        if not seeds:
            raise InvalidArgumentError("replication count must be >= 1 (empty seed list)")
        if len(set(seeds)) != len(seeds):
            raise InvalidArgumentError("seeds must be distinct")
        object.__setattr__(self, "seeds", seeds)
        if self.max_sampler_m < 1:
            raise InvalidArgumentError("max_sampler_m must be >= 1")
        grid = self.grid
        if isinstance(grid, dict):
            grid = (grid,)
        grid = tuple(dict(g) for g in grid)
        for g in grid:
            bad = set(g) - set(_AXES[self.kind])
            if bad:
                raise InvalidArgumentError(f"{self.kind} grids vary {_AXES[self.kind]}, not {sorted(bad)}")
        object.__setattr__(self, "grid", grid)
        object.__setattr__(self, "generator", dict(self.generator))
        for cell in self.cells():
            self._check_cell(cell)

    # -- construction -------------------------------------------------------

    @classmethod
    def from_dict(cls, doc: dict) -> "ExperimentConfig":
        if not isinstance(doc, dict):
            raise ParseError("experiment config must be a JSON object")
        doc = dict(doc)
        unknown = set(doc) - {f.name for f in fields(cls)} - {"replications"}
        if unknown:
            raise ParseError(f"unknown config fields {sorted(unknown)}")
        if "kind" not in doc:
            raise ParseError("config lacks 'kind'")
        reps = doc.pop("replications", None)
        if reps is not None:
            if "seeds" in doc:
                raise ParseError("give either 'seeds' or 'replications', not both")
            if int(reps) < 1:
                raise InvalidArgumentError("replication count must be >= 1")
            doc["seeds"] = list(range(int(reps)))
        doc["learner"] = _build(LearnerSpec, doc.get("learner"), "learner")
        doc["train"] = _build(TrainConfig, doc.get("train"), "train")
        doc["estimator"] = _build(EstimatorSpec, doc.get("estimator"), "estimator")
        return cls(**doc)

    @classmethod
    def from_json(cls, text: str) -> "ExperimentConfig":
        try:
            doc = json.loads(text)
        except json.JSONDecodeError as exc:
            raise ParseError(f"config is not valid JSON: {exc.msg}", row=exc.lineno) from exc
        return cls.from_dict(doc)

    @classmethod
    def load(cls, path) -> "ExperimentConfig":
        path = Path(path)
        if not path.is_file():
            raise InvalidArgumentError(f"config file {path} does not exist")
        return cls.from_json(path.read_text())

    def to_dict(self) -> dict:
        return {
            "kind": self.kind,
            "generator": dict(self.generator),
            "learner": {**asdict(self.learner), "arch": list(self.learner.arch), "learned": list(self.learner.learned)},
            "train": asdict(self.train),
            "estimator": asdict(self.estimator),
            "max_sampler_m": self.max_sampler_m,
            "seeds": list(self.seeds),
            "grid": [dict(g) for g in self.grid],
            "output_dir": self.output_dir,
        }

    def with_overrides(self, **changes) -> "ExperimentConfig":
        return replace(self, **changes)

    # -- grid ---------------------------------------------------------------

    def _defaults(self) -> dict:
        g = self.generator
        if self.kind in ("ete_convergence", "cete_curves"):
            return {"learner": self.learner.kind, "n": int(g.get("n", 5000))}
        if self.kind == "ihdp":
            return {"learner": self.learner.kind, "variant": g.get("variant", "original")}
        n = int(g.get("n", 10_000))
        return {
            "family": g.get("family", "gaussian"),
            "n": n,
            "d": int(g.get("d", 1)),
            "k": int(g.get("k", max(1, n // self.max_sampler_m))),
        }

    def cells(self) -> list[dict]:
        """Fully specified grid cells in declaration order."""
        base = self._defaults()
        out = []
        for g in self.grid:
            axes = list(g)
            values = [v if isinstance(v, list) else [v] for v in g.values()]
            for combo in itertools.product(*values):
                cell = dict(base)
                cell.update(zip(axes, combo))
                out.append({a: cell[a] for a in _AXES[self.kind]})
        return out

    def _check_cell(self, cell):
        if "learner" in cell:
            self.learner.learner_kind(cell["learner"])
        if self.kind == "ihdp" and cell["variant"] not in IHDP_VARIANTS:
            raise InvalidArgumentError(f"unknown IHDP variant {cell['variant']!r}")
        if self.kind == "ablation":
            if cell["family"] not in MDA_FAMILIES:
                raise InvalidArgumentError(f"unknown MDA family {cell['family']!r}")
            if not 1 <= cell["k"] <= cell["n"] or cell["d"] < 1:
                raise InvalidArgumentError(f"ablation cell needs 1 <= k <= n and d >= 1, got {cell}")
        if "n" in cell and int(cell["n"]) < 1:
            raise InvalidArgumentError("n must be >= 1")


def load_preset(name: str) -> ExperimentConfig:
    if name not in PRESET_NAMES:
        raise InvalidArgumentError(f"unknown preset {name!r}; expected one of {PRESET_NAMES}")
    text = resources.files("xtreat").joinpath("presets", f"{name}.json").read_text()
    return ExperimentConfig.from_json(text)


def group_label(cell: dict) -> str:
    return ";".join(f"{k}={v}" for k, v in cell.items())


# ---------------------------------------------------------------------------
# one replication
# ---------------------------------------------------------------------------

def _model_for(cfg: ExperimentConfig, cell: dict, d: int, X, truth=None, seed=0) -> ConditionalGevModel:
    spec = cfg.learner
    kind = spec.learner_kind(cell.get("learner"))
    shift = scale = None
    if spec.standardize_inputs:
        shift = X.mean(axis=0)
        scale = X.std(axis=0)
        scale[scale == 0] = 1.0
    frozen_mu = truth.mu if truth is not None and "mu" not in spec.learned else None
    frozen_sigma = truth.sigma if truth is not None and "sigma" not in spec.learned else None
    return build_learner(
        kind,
        d,
        arch=spec.arch,
        learned=spec.learned,
        frozen_mu_fn=frozen_mu,
        frozen_sigma_fn=frozen_sigma,
        seed=seed,
        activation=spec.activation,
        init_scale=cfg.train.weight_init_scale,
        input_shift=shift,
        input_scale=scale,
        frozen_source=truth.frozen_source if truth is not None else None,
    )


def _maybe_max_sample(cfg, data, seed):
    if cfg.max_sampler_m == 1:
        return data
    return eps_max_sample(data, cfg.max_sampler_m, seed=seed, stratify_by_treatment=True).data


@lru_cache(maxsize=8)
def _synthetic_oracle(eval_mode: bool, n: int, m: int, repeats: int) -> float:
    from .datagen import synthetic_1d_truth

    truth = synthetic_1d_truth(eval_mode)
    return float(np.mean([true_ete_oracle(truth, n, m, 10_000 + r) for r in range(repeats)]))


def _synthetic_spec(cfg, cell, seed) -> GeneratorSpec:
    doc = {**cfg.generator, "name": "synthetic_1d", "n": int(cell["n"]), "seed": seed}
    return GeneratorSpec.from_dict(doc)


def _eval_xs(cfg, d):
    rng = np.random.default_rng(cfg.estimator.eval_seed)
    return rng.standard_normal((cfg.estimator.eval_n, d))


def _run_ete_convergence(cfg, cell, seed):
    spec = _synthetic_spec(cfg, cell, seed)
    labeled = generate(spec)
    truth = labeled.truth
    data = _maybe_max_sample(cfg, labeled.data, seed)
    model = _model_for(cfg, cell, 1, data.X, truth, seed)
    trained, history = train(model, data, replace(cfg.train, seed=seed))
    est = cfg.estimator
    true = _synthetic_oracle(spec.eval_mode, est.oracle_n, est.oracle_m, est.oracle_repeats)
    report = estimate(
        trained,
        data,
        draws_per_x=est.draws_per_x,
        seed=seed,
        truth=truth,
        true_ete=true,
        eval_xs=_eval_xs(cfg, 1),
        min_total=est.min_total,
    )
    return _report_metrics(report), report, {"epochs": len(history)}


def _run_cete_curves(cfg, cell, seed):
    spec = _synthetic_spec(cfg, cell, seed)
    labeled = generate(spec)
    truth = labeled.truth
    data = _maybe_max_sample(cfg, labeled.data, seed)
    model = _model_for(cfg, cell, 1, data.X, truth, seed)
    trained, history = train(model, data, replace(cfg.train, seed=seed))
    xs = _eval_xs(cfg, 1)
    mae = const = 0.0
    for arm in (0, 1):
        t = np.full(xs.shape[0], arm, dtype=np.int64)
        xi_hat = predict_arrays(trained, xs, t)[2]
        xi_true = truth.xi(xs, t)
        mae += np.mean(np.abs(xi_hat - xi_true)) / 2
        # the median minimizes absolute error among constants
        const += np.mean(np.abs(xi_true - np.median(xi_true))) / 2
    tau_hat = cete(trained, xs)
    eps_c = float(np.mean((tau_hat - truth.cete(xs)) ** 2))
    metrics = {
        "xi_mae": float(mae),
        "const_mae": float(const),
        "mae_ratio": float(const / mae) if mae > 0 else float("inf"),
        "eps_cete": eps_c,
    }
    g = _CURVE_GRID[:, None]
    curves = {"x": _CURVE_GRID.tolist()}
    for arm in (0, 1):
        t = np.full(g.shape[0], arm, dtype=np.int64)
        curves[f"xi{arm}_hat"] = predict_arrays(trained, g, t)[2].tolist()
        curves[f"xi{arm}_true"] = np.asarray(truth.xi(g, t), dtype=float).tolist()
    curves["cete_hat"] = cete(trained, g).tolist()
    curves["cete_true"] = np.asarray(truth.cete(g), dtype=float).tolist()
    return metrics, None, {"epochs": len(history), "curves": curves}


def _run_ihdp(cfg, cell, seed):
    doc = {**cfg.generator, "variant": cell["variant"], "seed": seed}
    doc.pop("name", None)
    labeled = generate(GeneratorSpec.from_dict(doc))
    truth = labeled.truth
    data = _maybe_max_sample(cfg, labeled.data, seed)
    model = _model_for(cfg, cell, data.d, data.X, truth, seed)
    trained, history = train(model, data, replace(cfg.train, seed=seed))
    est = cfg.estimator
    true = true_ete_oracle(truth, est.oracle_n, est.oracle_m, seed)
    report = estimate(
        trained,
        data,
        draws_per_x=est.draws_per_x,
        seed=seed,
        truth=truth,
        true_ete=true,
        eval_xs=labeled.data.X,
        min_total=est.min_total,
    )
    extra = {"epochs": len(history), "beta": labeled.meta["beta"]}
    return _report_metrics(report), report, extra


def _run_ablation(cfg, cell, seed):
    n, d, k = int(cell["n"]), int(cell["d"]), int(cell["k"])
    data, _ = mda_generator(cell["family"], n, 1, seed, dim=d)
    m = n // k
    maxed = eps_max_sample(data, m, seed=seed).data
    model = _model_for(cfg, cell, d, maxed.X, None, seed)
    trained, history = train(model, maxed, replace(cfg.train, seed=seed))
    xs = _eval_xs(cfg, d)
    xi_true = mda_norming(cell["family"], xs[:, 0], m).xi
    xi_hat = predict_arrays(trained, xs, np.zeros(xs.shape[0], dtype=np.int64))[2]
    metrics = {"xi_mae": float(np.mean(np.abs(xi_hat - xi_true)))}
    return metrics, None, {"epochs": len(history), "block": m, "n_maxima": maxed.n}


_RUNNERS = {
    "ete_convergence": _run_ete_convergence,
    "cete_curves": _run_cete_curves,
    "ihdp": _run_ihdp,
    "ablation": _run_ablation,
}


def _report_metrics(report) -> dict:
    out = {
        "ete_hat": report.ete_hat,
        "true_ete": report.true_ete,
        "eps_ete": report.eps_ete,
        "eps_cete": report.eps_cete,
    }
    if report.naive_ete is not None:
        out["naive_ete"] = report.naive_ete
        out["naive_eps_ete"] = report.naive_eps_ete
    return out


def replication_path(out_dir, index: int, cell: dict, seed: int) -> Path:
    slug = re.sub(r"[^A-Za-z0-9.=-]+", "_", group_label(cell))
    return Path(out_dir) / "replications" / f"{index:03d}_{slug}_seed{seed}.json"


def run_replication(cfg_doc: dict, index: int, cell: dict, seed: int, out_dir: Optional[str]) -> dict:
    """Run one (cell, seed) pair; failures become error records."""
    cfg = ExperimentConfig.from_dict(cfg_doc)
    record = {"index": index, "group": group_label(cell), "cell": cell, "seed": seed}
    try:
        metrics, report, extra = _RUNNERS[cfg.kind](cfg, cell, seed)
        record.update(status="ok", metrics=metrics, **extra)
        if report is not None:
            doc = report.to_dict()
            validate_report(doc)
            record["report"] = doc
            record["converged"] = report.converged
    except Exception as exc:  # recorded per replication, see run_experiment
        log.warning("replication %s seed %d failed: %s", record["group"], seed, exc)
        record.update(status="error", error=f"{type(exc).__name__}: {exc}")
    if out_dir is not None:
        path = replication_path(out_dir, index, cell, seed)
        path.parent.mkdir(parents=True, exist_ok=True)
        with path.open("w", newline="\n") as fh:
            fh.write(json.dumps(record, sort_keys=True, indent=2) + "\n")
    return record


# ---------------------------------------------------------------------------
# aggregation and csv emission
# ---------------------------------------------------------------------------

def _fmt(v) -> str:
    if isinstance(v, (float, np.floating)):
        return repr(float(v))
    return str(v)


def _csv_text(header, rows) -> str:
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(header)
    for row in rows:
        writer.writerow([_fmt(v) for v in row])
    return buf.getvalue()


def _stats(values) -> tuple[float, float, int]:
    a = np.asarray([v for v in values if v is not None], dtype=float)
    if a.size == 0:
        return float("nan"), float("nan"), 0
    std = float(np.std(a, ddof=1)) if a.size > 1 else 0.0
    return float(np.mean(a)), std, int(a.size)


def _by_cell(cfg, records):
    groups = {}
    for cell in cfg.cells():
        groups.setdefault(group_label(cell), (cell, []))
    for r in records:
        if r["status"] == "ok":
            groups[r["group"]][1].append(r)
    return list(groups.values())


def aggregate_rows(cfg, records) -> list[tuple]:
    """``(group, metric, mean, std, count)`` over successful replications."""
    rows = []
    for cell, recs in _by_cell(cfg, records):
        names = sorted({k for r in recs for k in r["metrics"]})
        for name in names:
            mean, std, count = _stats(r["metrics"].get(name) for r in recs)
            rows.append((group_label(cell), name, mean, std, count))
    return rows


def _metric(recs, name):
    return [r["metrics"].get(name) for r in recs]


def _fig2_rows(cfg, records):
    header = list(_AXES[cfg.kind]) + [
        "true_mean", "true_std",
        "proposed_mean", "proposed_std",
        "naive_mean", "naive_std",
        "proposed_eps_median", "naive_eps_median", "proposed_wins", "count",
    ]
    rows = []
    for cell, recs in _by_cell(cfg, records):
        tm, ts, _ = _stats(_metric(recs, "true_ete"))
        pm, ps, count = _stats(_metric(recs, "ete_hat"))
        nm, ns, _ = _stats(_metric(recs, "naive_ete"))
        pe = [r["metrics"]["eps_ete"] for r in recs]
        ne = [r["metrics"].get("naive_eps_ete") for r in recs]
        paired = [(a, b) for a, b in zip(pe, ne) if b is not None]
        wins = sum(a < b for a, b in paired)
        pmed = float(np.median(pe)) if pe else float("nan")
        nmed = float(np.median([b for _, b in paired])) if paired else float("nan")
        rows.append(list(cell.values()) + [tm, ts, pm, ps, nm, ns, pmed, nmed, wins, count])
    return header, rows


def _fig3_rows(cfg, records):
    header = list(_AXES[cfg.kind]) + ["x"]
    series = ("xi0", "xi1", "cete")
    for s in series:
        header += [f"{s}_true", f"{s}_hat_mean", f"{s}_hat_std"]
    header.append("count")
    rows = []
    for cell, recs in _by_cell(cfg, records):
        if not recs:
            continue
        curves = [r["curves"] for r in recs]
        for i, x in enumerate(curves[0]["x"]):
            row = list(cell.values()) + [x]
            for s in series:
                mean, std, _ = _stats(c[f"{s}_hat"][i] for c in curves)
                row += [curves[0][f"{s}_true"][i], mean, std]
            row.append(len(curves))
            rows.append(row)
    return header, rows


def _table1_rows(cfg, records):
    header = ["learner", "variant", "eps_cete_mean", "eps_cete_std", "count"]
    rows = []
    for cell, recs in _by_cell(cfg, records):
        mean, std, count = _stats(_metric(recs, "eps_cete"))
        rows.append([cfg.learner.learner_kind(cell["learner"]).label, cell["variant"], mean, std, count])
    return header, rows


def _table2_rows(cfg, records):
    header = [
        "learner", "variant",
        "naive_eps_ete_mean", "naive_eps_ete_std",
        "proposed_eps_ete_mean", "proposed_eps_ete_std", "count",
    ]
    rows = []
    for cell, recs in _by_cell(cfg, records):
        nm, ns, _ = _stats(_metric(recs, "naive_eps_ete"))
        pm, ps, count = _stats(_metric(recs, "eps_ete"))
        rows.append([cfg.learner.learner_kind(cell["learner"]).label, cell["variant"], nm, ns, pm, ps, count])
    return header, rows


def _ablation_rows(cfg, records):
    header = list(_AXES[cfg.kind]) + ["xi_mae_mean", "xi_mae_std", "count"]
    rows = []
    for cell, recs in _by_cell(cfg, records):
        mean, std, count = _stats(_metric(recs, "xi_mae"))
        rows.append(list(cell.values()) + [mean, std, count])
    return header, rows


_PLOT_FILES = {
    "ete_convergence": (("fig2_ete.csv", _fig2_rows),),
    "cete_curves": (("fig3_cete.csv", _fig3_rows),),
    "ihdp": (("table1.csv", _table1_rows), ("table2.csv", _table2_rows)),
    "ablation": (("ablation.csv", _ablation_rows),),
}


@dataclass
class ExperimentResult:
    config: ExperimentConfig
    records: list
    tables: dict  # csv file name -> text

    @property
    def n_ok(self) -> int:
        return sum(r["status"] == "ok" for r in self.records)

    @property
    def n_failed(self) -> int:
        return len(self.records) - self.n_ok

    @property
    def all_failed(self) -> bool:
        return self.n_ok == 0

    def table(self, name: str) -> list[dict]:
        """Parsed rows of an emitted csv (numeric cells as float)."""
        out = []
        for row in csv.DictReader(io.StringIO(self.tables[name])):
            parsed = {}
            for k, v in row.items():
                try:
                    parsed[k] = float(v)
                except ValueError:
                    parsed[k] = v
            out.append(parsed)
        return out


def run_experiment(cfg: ExperimentConfig, out_dir=None, jobs: int = 1) -> ExperimentResult:
    """Run every (cell, seed) replication and write the results directory.

    ``out_dir`` defaults to the config's ``output_dir``; with neither, nothing
    is written and the csv text is only returned.
    """
    if jobs < 1:
        raise InvalidArgumentError("jobs must be >= 1")
    out_dir = out_dir if out_dir is not None else cfg.output_dir
    if out_dir is not None:
        out_dir = str(out_dir)
        Path(out_dir).mkdir(parents=True, exist_ok=True)
    doc = cfg.to_dict()
    tasks = [
        (doc, i * len(cfg.seeds) + j, cell, seed, out_dir)
        for i, cell in enumerate(cfg.cells())
        for j, seed in enumerate(cfg.seeds)
    ]
    if jobs == 1 or len(tasks) == 1:
        records = [run_replication(*task) for task in tasks]
    else:
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            futures = [pool.submit(run_replication, *task) for task in tasks]
            records = [f.result() for f in futures]
    records.sort(key=lambda r: r["index"])

    tables = {
        "aggregate.csv": _csv_text(("group", "metric", "mean", "std", "count"), aggregate_rows(cfg, records)),
    }
    for name, builder in _PLOT_FILES[cfg.kind]:
        header, rows = builder(cfg, records)
        tables[name] = _csv_text(header, rows)
    failures = [(r["group"], r["seed"], r["error"]) for r in records if r["status"] != "ok"]
    tables["failures.csv"] = _csv_text(("group", "seed", "error"), failures)

    if out_dir is not None:
        for name, text in tables.items():
            with (Path(out_dir) / name).open("w", newline="\n") as fh:
                fh.write(text)
        with (Path(out_dir) / "config.json").open("w", newline="\n") as fh:
            fh.write(json.dumps(doc, sort_keys=True, indent=2) + "\n")
    return ExperimentResult(cfg, records, tables)
