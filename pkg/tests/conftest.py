import time

import numpy as np
import pytest

from oakgp.config import RunConfig
from oakgp.gp import fit

_RESULTS = {}


def pytest_configure(config):
    config.addinivalue_line("markers", "criterion(number, title, limit): acceptance criterion")


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    report = outcome.get_result()
    marker = item.get_closest_marker("criterion")
    if marker is None:
        return
    number, title, limit = marker.args
    if report.when == "call" or (report.when == "setup" and report.failed):
        elapsed = getattr(item, "_criterion_elapsed", report.duration)
        _RESULTS[number] = (report.passed, title, elapsed, limit)


def pytest_terminal_summary(terminalreporter):
    if not _RESULTS:
        return
    terminalreporter.section("acceptance criteria")
    for number in sorted(_RESULTS):
        ok, title, elapsed, limit = _RESULTS[number]
        terminalreporter.write_line(
            f"criterion {number:2d}: {'PASS' if ok else 'FAIL'}  {title} "
            f"({elapsed:.1f}s, limit {limit:.0f}s)")


def toy_data(n=500, seed=0):
    """x1, x2 ~ U(-1, 1); y = x1^2 - 2 x2 + cos(3 x1) sin(5 x2) + noise of variance 0.01."""
    rng = np.random.default_rng(seed)
    X = rng.uniform(-1, 1, size=(n, 2))
    y = X[:, 0] ** 2 - 2 * X[:, 1] + np.cos(3 * X[:, 0]) * np.sin(5 * X[:, 1])
    return X, y + rng.normal(0.0, 0.1, n)


TOY_CONFIG = RunConfig(max_order=2, restarts=9, seed=0)


@pytest.fixture(scope="session")
def toy_model():
    X, y = toy_data()
    t0 = time.perf_counter()
    model = fit(X, y, TOY_CONFIG)
    return model, time.perf_counter() - t0
