import numpy as np
import pytest
from hypothesis import HealthCheck, settings

settings.register_profile("w1bench", deadline=None, max_examples=60, suppress_health_check=[HealthCheck.too_slow])
settings.load_profile("w1bench")


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


def random_funnel(rng, dim, n, box=2.5):
    """Random non-degenerate MinFunnel drawn like the default generator."""
    from w1bench.benchmark import generate_pair

    return generate_pair(dim, n, box, seed=int(rng.integers(2**31))).funnel


ACCEPTANCE_LINES = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES):
            terminalreporter.write_line(line)
