import sys

import numpy as np
import pytest

from retboost.series import PriceSeries


def make_prices(closes, start="2020-01-01"):
    closes = np.asarray(closes, dtype=float)
    dates = np.datetime64(start, "D") + np.arange(len(closes))
    return PriceSeries(dates=dates, closes=closes)


def random_walk(n, seed=0, sd=0.01, start=1000.0):
    rng = np.random.default_rng(seed)
    return make_prices(start * np.exp(np.r_[0.0, np.cumsum(rng.normal(0, sd, n - 1))]))


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


def pytest_terminal_summary(terminalreporter):
    mod = sys.modules.get("test_acceptance")
    lines = getattr(mod, "RESULTS", None)
    if lines:
        terminalreporter.write_sep("=", "acceptance criteria")
        for line in lines:
            terminalreporter.write_line(line)
