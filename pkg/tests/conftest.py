import numpy as np
import pytest
from hypothesis import HealthCheck, settings, strategies as st

from spdot.spd import random_spd, sym

settings.register_profile(
    "default", deadline=None, max_examples=60, suppress_health_check=[HealthCheck.too_slow]
)
settings.load_profile("default")


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


@st.composite
def spd_matrices(draw, min_dim=2, max_dim=6, log_range=1.5):
    """SPD matrices with eigenvalues in ``[e^-log_range, e^log_range]``."""
    n = draw(st.integers(min_dim, max_dim))
    seed = draw(st.integers(0, 2**32 - 1))
    r = np.random.default_rng(seed)
    Q, _ = np.linalg.qr(r.standard_normal((n, n)))
    lam = np.exp(r.uniform(-log_range, log_range, size=n))
    return sym((Q * lam) @ Q.T)


@st.composite
def spd_tuples(draw, k=2, min_dim=2, max_dim=6):
    n = draw(st.integers(min_dim, max_dim))
    seed = draw(st.integers(0, 2**32 - 1))
    r = np.random.default_rng(seed)
    return tuple(random_spd(r, n) for _ in range(k))


ACCEPTANCE_LINES: list[str] = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)
