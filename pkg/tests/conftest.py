import numpy as np
import pytest
from hypothesis import settings

settings.register_profile("default", deadline=None, max_examples=60)
settings.load_profile("default")


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


def bimodal(n, rng, means=((-1.5, 0.5), (1.5, -0.5)), std=0.4):
    comp = rng.random(n) < 0.5
    mu = np.where(comp[:, None], means[0], means[1])
    return mu + std * rng.standard_normal((n, 2))


ACCEPTANCE_LINES: list[str] = []


@pytest.fixture
def report():
    """Record one summary line per acceptance criterion."""

    def add(line: str):
        ACCEPTANCE_LINES.append(line)
        print(line)

    return add


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)
