import math

import numpy as np
import pytest

from cyberdse.dynamics import GeneratorParams, SmibParams, simulate_truth

OMEGA_B = 2.0 * math.pi * 50.0


@pytest.fixture(scope="session")
def params():
    return GeneratorParams(omega_b=OMEGA_B)


@pytest.fixture(scope="session")
def ninebus_truth(params):
    return simulate_truth(params, SmibParams(X_e=0.5, t_on=1.2, t_off=1.5), 20.0, 0.02)


def random_states(rng, n):
    """Plausible but arbitrary machine states, one per column."""
    return np.vstack([rng.uniform(-np.pi, np.pi, n), rng.uniform(0.95, 1.05, n),
                      rng.uniform(0.3, 1.5, n), rng.uniform(-0.8, 0.8, n)])


def random_terminals(rng, n):
    return rng.uniform(0.5, 1.3, n), rng.uniform(-np.pi, np.pi, n)


ACCEPTANCE = pytest.StashKey[list]()


@pytest.fixture
def gate(request):
    """Record one acceptance line, then assert it."""
    lines = request.config.stash.setdefault(ACCEPTANCE, [])

    def check(number: int, ok: bool, detail: str):
        line = f"criterion {number:>2}: {'PASS' if ok else 'FAIL'}  {detail}"
        lines.append(line)
        print(line)
        assert ok, line
    return check


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    lines = config.stash.get(ACCEPTANCE, [])
    if lines:
        terminalreporter.section("acceptance criteria")
        for line in sorted(lines):
            terminalreporter.write_line(line)
