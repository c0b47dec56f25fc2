import numpy as np
import pytest

from steinfit.models import GammaRate, GaussianMixtureLoc, IsotropicGaussian, TanhExpFamily


@pytest.fixture
def rng():
    return np.random.default_rng(20240611)


def model_cases():
    """(model, theta, data sampler) triples covering every builtin model."""
    return [
        (IsotropicGaussian(dim=1), np.array([0.3]), lambda r, n: r.normal(0.3, 1.0, (n, 1))),
        (IsotropicGaussian(dim=3, sigma2=2.0), np.array([0.1, -0.2, 0.5]), lambda r, n: r.normal(0, 1.5, (n, 3))),
        (GammaRate(5.0), np.array([1.3]), lambda r, n: r.gamma(5.0, 1.0, (n, 1))),
        (GaussianMixtureLoc(), np.array([-1.0]), lambda r, n: r.normal(0.0, 1.5, (n, 1))),
        (TanhExpFamily(), np.array([0.4, -0.3]), lambda r, n: r.normal(0.0, 1.0, (n, 5))),
    ]


def relerr(a, b):
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    return float(np.max(np.abs(a - b) / np.maximum(1.0, np.abs(b))))


# one line per acceptance criterion, echoed at the end of the run even when output is captured
ACCEPTANCE_LINES = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)
