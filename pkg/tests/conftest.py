import warnings

import numpy as np
import pytest

from xtreat.datagen import load_ihdp_covariates
from xtreat.experiments import load_preset, run_experiment

CONSISTENCY_SEEDS = tuple(range(20))


@pytest.fixture(scope="session")
def ihdp_table():
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        return load_ihdp_covariates()


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


@pytest.fixture(scope="session")
def fig2_run(tmp_path_factory):
    """ETE convergence preset over 20 seeds, shared by the consistency
    property and the convergence acceptance criterion."""
    cfg = load_preset("fig2").with_overrides(seeds=CONSISTENCY_SEEDS)
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        return run_experiment(cfg, out_dir=tmp_path_factory.mktemp("fig2"))


def per_n(result, metric, seeds=None):
    """``{n: [metric over seeds]}`` from an ete_convergence result."""
    out = {}
    for rec in result.records:
        if rec["status"] != "ok" or (seeds is not None and rec["seed"] not in seeds):
            continue
        out.setdefault(rec["cell"]["n"], []).append(rec["metrics"][metric])
    return {n: np.array(v) for n, v in sorted(out.items())}


# acceptance criteria: id -> (title, [(passed, detail), ...])
_CRITERIA: dict = {}


@pytest.fixture
def criterion():
    """Record one checked part of an acceptance criterion."""

    def record(number, title, passed, detail):
        _CRITERIA.setdefault(number, (title, []))[1].append((bool(passed), detail))
        return bool(passed)

    return record


def pytest_terminal_summary(terminalreporter):
    if not _CRITERIA:
        return
    terminalreporter.section("acceptance criteria")
    for number in sorted(_CRITERIA):
        title, parts = _CRITERIA[number]
        ok = all(p for p, _ in parts)
        details = "; ".join(d for _, d in parts)
        terminalreporter.write_line(f"[{'PASS' if ok else 'FAIL'}] {number}. {title}: {details}")
