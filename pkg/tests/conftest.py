import time

import numpy as np
import pytest

from precondgp.kernels import Hyperparameters, KernelOperator, KernelSpec


def random_spd(n, rng, cond=100.0):
    Q, _ = np.linalg.qr(rng.standard_normal((n, n)))
    lam = np.geomspace(1.0, cond, n)
    return (Q * lam) @ Q.T


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


@pytest.fixture
def rbf_op():
    X = np.random.default_rng(7).standard_normal((64, 1))
    return KernelOperator(KernelSpec("rbf"), X, Hyperparameters.from_values(1.0, 0.5, 1e-2))


ACCEPTANCE_LINES = []


class _Criterion:
    def __init__(self, number, budget):
        self.number = number
        self.budget = budget
        self.start = time.perf_counter()

    def report(self, ok, detail):
        """Record one PASS/FAIL line (the runtime budget is part of the verdict) and assert."""
        elapsed = time.perf_counter() - self.start
        in_budget = elapsed <= self.budget
        verdict = "PASS" if ok and in_budget else "FAIL"
        ACCEPTANCE_LINES.append(f"{verdict} criterion {self.number:>2}: {detail} [{elapsed:.1f} s, budget {self.budget:g} s]")
        assert ok, detail
        assert in_budget, f"took {elapsed:.1f} s, budget {self.budget:g} s"


@pytest.fixture
def criterion():
    return _Criterion


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)
