import numpy as np
import pytest


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


def labels_with_pairs(rng, B, C):
    """Labels where every identity present appears at least twice, with >= 2 identities."""
    assert B >= 4
    y = np.repeat(rng.choice(C, size=B // 2, replace=False), 2)
    if B % 2:
        y = np.append(y, y[0])
    return rng.permutation(y)


ACCEPTANCE = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE, key=lambda s: int(s.split()[2].rstrip(":"))):
            terminalreporter.write_line(line)
