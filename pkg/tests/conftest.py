from __future__ import annotations

import warnings

import numpy as np
import pytest

from sparsegof.measure import Grid, MeasureContext
from sparsegof.models import parse_model


@pytest.fixture(autouse=True)
def _quiet():
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", RuntimeWarning)
        yield


@pytest.fixture
def grid100():
    return Grid(0.0, 1.0, 100)


@pytest.fixture
def const_model():
    return parse_model("constant", 0.0, 1.0, [5.0])


@pytest.fixture
def texp_model():
    return parse_model("texp", 0.0, 1.0, [5.0, 1.5])


@pytest.fixture
def tnorm_model():
    return parse_model("tnorm:0.04", 0.0, 1.0, [5.0, 0.5])


@pytest.fixture
def const_ctx(const_model, grid100):
    return MeasureContext.from_model(const_model, grid100)


@pytest.fixture
def texp_ctx(texp_model, grid100):
    return MeasureContext.from_model(texp_model, grid100)


def ks_distance(a, b):
    """Two-sample Kolmogorov distance."""
    a, b = np.sort(a), np.sort(b)
    x = np.concatenate([a, b])
    return float(np.max(np.abs(np.searchsorted(a, x, "right") / a.size - np.searchsorted(b, x, "right") / b.size)))


ACCEPTANCE_LINES: list[str] = []


def record(criterion: str, ok: bool, detail: str) -> bool:
    """Log one acceptance line; the terminal summary repeats all of them."""
    line = f"[{'PASS' if ok else 'FAIL'}] criterion {criterion}: {detail}"
    ACCEPTANCE_LINES.append(line)
    print(line)
    return ok


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)
