import numpy as np
import pytest
from hypothesis import HealthCheck, settings

settings.register_profile("default", deadline=None,
                          suppress_health_check=[HealthCheck.too_slow])
settings.load_profile("default")


def random_dag_adj(q, rng, p=0.5):
    order = rng.permutation(q)
    adj = np.zeros((q, q), dtype=np.uint8)
    for a in range(q):
        for b in range(a + 1, q):
            if rng.random() < p:
                adj[order[a], order[b]] = 1
    return adj


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


ACCEPTANCE_LINES: list[str] = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)
