import pytest

from tanglepc.simulator import SimConfig, simulate
from tanglepc.tangle import EdgePolicy, Tangle


def make_diamond(policy=EdgePolicy.SEM):
    """0 <- {1, 2} <- 3; 1 and 2 issued at t=0, 3 at t=1, everything revealed by t=2."""
    t = Tangle(policy)
    t.attach(0.0, (0, 0))
    t.attach(0.0, (0, 0))
    t.attach(1.0, (1, 2))
    t.advance(2.0)
    return t


def make_chain(n, policy=EdgePolicy.SEM):
    """0 <- 1 <- ... <- n-1, one transaction per time unit."""
    t = Tangle(policy)
    for i in range(1, n):
        t.attach(float(i), (i - 1, i - 1))
    t.advance(float(n))
    return t


@pytest.fixture
def diamond():
    return make_diamond()


@pytest.fixture(scope="session")
def small_urw():
    """A modest unbiased-walk Tangle shared by unit tests."""
    return simulate(SimConfig(20, "sem", "walk", horizon=150, warmup=100, seed=11))


# -- acceptance bookkeeping ---------------------------------------------------

ACCEPTANCE_LINES: list[str] = []


@pytest.fixture
def criterion():
    """``criterion(name, ok, detail)`` records one pass/fail line and returns ``ok``."""

    def record(name: str, ok: bool, detail: str) -> bool:
        line = f"{name}: {'PASS' if ok else 'FAIL'} - {detail}"
        ACCEPTANCE_LINES.append(line)
        print(line)
        return ok

    return record


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)


@pytest.fixture(scope="session")
def urw100():
    """Unbiased-walk Tangle at lambda = 100 (about 40k transactions)."""
    return simulate(SimConfig(100, "sem", "walk", horizon=400, warmup=100, seed=7))
