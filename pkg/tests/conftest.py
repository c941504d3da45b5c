import time
from pathlib import Path

import numpy as np
import pytest

from har_forge import dataset as ds
from har_forge import pipeline as pl


def demo_config(work_dir, **overrides):
    """The configuration ``har-forge demo --seed 7`` runs with."""
    cfg = pl.RunConfig(
        work_dir=Path(work_dir), synthetic=True, seed=7, epochs=15, n_per_class=4,
        forecast_epochs=8, forecast_stride=4,
    )
    for k, v in overrides.items():
        setattr(cfg, k, v)
    return cfg


def small_config(work_dir, **overrides):
    """A fast end-to-end configuration for plumbing tests."""
    base = dict(archs=("cnn",), epochs=2, n_per_class=1, forecast_activities=("H",), forecast_epochs=1,
                forecast_stride=16, figures=True)
    base.update(overrides)
    return demo_config(work_dir, **base)


@pytest.fixture(scope="session")
def demo_run(tmp_path_factory):
    work = tmp_path_factory.mktemp("demo-a")
    start = time.perf_counter()
    summary = pl.run_pipeline(demo_config(work))
    summary.timings["total"] = time.perf_counter() - start
    return summary


@pytest.fixture(scope="session")
def small_windows():
    streams = ds.synthesize_dataset(1, seed=3, duration_s=30)
    return ds.segment_windows(streams)


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


# --------------------------------------------------------------------------
# One pass/fail line per acceptance criterion in the terminal summary

_CRITERIA = {}


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    rep = outcome.get_result()
    number = getattr(item.function, "criterion", None)
    if number is None:
        return
    if rep.when == "call" or (rep.when == "setup" and rep.outcome != "passed"):
        status = {"passed": "PASS", "failed": "FAIL", "skipped": "SKIP"}[rep.outcome]
        if rep.when == "setup" and rep.outcome == "failed":
            status = "ERROR"
        detail = "; ".join(v for k, v in item.user_properties if k == "detail")
        _CRITERIA[number] = (status, item.function.__doc__.strip().splitlines()[0], detail)


def pytest_terminal_summary(terminalreporter):
    if not _CRITERIA:
        return
    terminalreporter.section("acceptance criteria")
    for number in sorted(_CRITERIA):
        status, title, detail = _CRITERIA[number]
        line = f"criterion {number}: {status} - {title}"
        terminalreporter.write_line(line + (f" ({detail})" if detail else ""))
