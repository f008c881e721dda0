import datetime as dt

import numpy as np
import pytest

from windcast import copula, data, flow

YEAR_CONFIG = data.SynthConfig(n_days=565, seed=0, start_date="2018-01-01")
TEST_YEAR = 2019


@pytest.fixture(scope="session")
def year_dataset():
    """365 training days (2018) and a 200-day test partition (2019)."""
    return data.split_by_year(data.synthesize(YEAR_CONFIG), TEST_YEAR)


@pytest.fixture(scope="session")
def year_prices(year_dataset):
    return data.synthesize_prices(year_dataset.dates, seed=YEAR_CONFIG.seed + 1)


@pytest.fixture(scope="session")
def trained_flow(year_dataset):
    model = flow.init_flow(year_dataset, seed=0)
    model, _ = flow.train(model, year_dataset, seed=0)
    return model


@pytest.fixture(scope="session")
def fitted_copula(year_dataset):
    return copula.fit(year_dataset)


@pytest.fixture(scope="session")
def small_dataset():
    cfg = data.SynthConfig(n_days=60, seed=11, start_date="2018-11-20")
    return data.split_by_year(data.synthesize(cfg), 2019)


def make_day(date, capacity=None, forecast=None):
    capacity = np.full(96, 0.5) if capacity is None else capacity
    forecast = np.full(24, 8.0) if forecast is None else forecast
    return data.DayRecord(date, capacity, forecast)


def pytest_terminal_summary(terminalreporter):
    try:
        from tests import test_acceptance
    except ImportError:
        return
    results = test_acceptance.RESULTS
    if not results and not test_acceptance.ATTEMPTED:
        return
    terminalreporter.section("acceptance criteria")
    for number in sorted(test_acceptance.ATTEMPTED | set(results)):
        if number in results:
            ok, title, detail = results[number]
            line = f"criterion {number:2d} {'PASS' if ok else 'FAIL'}: {title} -- {detail}"
        else:
            line = f"criterion {number:2d} FAIL: test errored before reporting"
        terminalreporter.write_line(line)


__all__ = ["make_day", "YEAR_CONFIG", "TEST_YEAR", "dt"]
