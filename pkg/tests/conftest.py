import pytest

from ia_timing.model import DesignConfig
from ia_timing.sim import historical_from_config


@pytest.fixture
def tiny_config():
    """Small but complete design: three interim times, short chains."""
    return DesignConfig(n_rep=60, mcmc_iters=300, ia_grid=(0, 20, 40), block_size=16)


@pytest.fixture
def tiny_hist(tiny_config):
    return historical_from_config(tiny_config)


def pytest_terminal_summary(terminalreporter):
    mod = __import__("sys").modules.get("test_acceptance")
    results = getattr(mod, "RESULTS", None)
    if results:
        terminalreporter.section("acceptance criteria")
        for k in sorted(results):
            terminalreporter.write_line(results[k])
