import numpy as np
import pytest

from backdoorlab.distributions import GaussianClassPair, benchmark_model


@pytest.fixture
def bench():
    return benchmark_model()


@pytest.fixture
def degenerate():
    return GaussianClassPair([3.0, 0.0], [-3.0, 0.0], np.diag([3.0, 0.0]), 0.5)


def random_spd(rng, p, floor=0.1):
    """Wishart-style covariance: A A^T / p plus a ridge."""
    A = rng.standard_normal((p, p))
    return A @ A.T / p + floor * np.eye(p)


_VERDICTS = {}


@pytest.fixture
def verdict():
    """Record one acceptance verdict: ``verdict("A1", passed, detail)``."""

    def record(name, passed, detail):
        _VERDICTS[name] = (bool(passed), detail)
        print(f"{name} {'PASS' if passed else 'FAIL'}: {detail}")

    return record


def pytest_terminal_summary(terminalreporter):
    if not _VERDICTS:
        return
    terminalreporter.section("acceptance criteria")
    for name in sorted(_VERDICTS, key=lambda k: int(k[1:])):
        passed, detail = _VERDICTS[name]
        terminalreporter.write_line(f"{name} {'PASS' if passed else 'FAIL'}: {detail}")
