import numpy as np
import pytest

from aodbench.collocation import build_samples
from aodbench.synth import SynthConfig, gen_grid_series, gen_station_truth


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


@pytest.fixture(scope="session")
def small_synth():
    config = SynthConfig(seed=3, days=50, sites=5)
    series = gen_grid_series(config)
    truth = gen_station_truth(series, config)
    return config, series, truth


@pytest.fixture(scope="session")
def small_samples(small_synth):
    _, series, truth = small_synth
    return build_samples(series, truth.records)


ACCEPTANCE_LINES: list[str] = []


@pytest.fixture
def criterion():
    """Record and print one PASS/FAIL line, then assert."""
    def record(number: int, ok: bool, detail: str):
        line = f"{'PASS' if ok else 'FAIL'} criterion {number}: {detail}"
        ACCEPTANCE_LINES.append(line)
        print(line)
        assert ok, line
    return record


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)
