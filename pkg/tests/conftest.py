"""Shared fixtures plus the acceptance-criteria result banner."""

import numpy as np
import pytest

from binuq import SeededRng, validate_dataset


def make_dataset(n=60, d=2, seed=0, noise=0.1, hetero=False):
    """Small regression dataset on the package's synthetic mean function."""
    gen = np.random.default_rng(seed)
    X = gen.uniform(0.0, 1.0, (n, d))
    f = 3.0 * X[:, 0]
    if d >= 2:
        f = f + np.sin(4.0 * np.pi * X[:, 0]) * X[:, 1]
    sd = (0.1 + 0.9 * X[:, 0]) if hetero else noise
    y = f + sd * gen.standard_normal(n)
    return validate_dataset(X, y)


@pytest.fixture
def rng():
    return SeededRng(0)


# ---------------------------------------------------------------------------
# Acceptance reporting: each criterion test records exactly one PASS/FAIL
# line; the lines are replayed in the terminal summary so the outcome of
# every criterion is visible even under captured output.
# ---------------------------------------------------------------------------

def pytest_configure(config):
    config._criteria_lines = []


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    lines = getattr(config, "_criteria_lines", [])
    if lines:
        terminalreporter.section("acceptance criteria")
        for _, line in sorted(lines):
            terminalreporter.write_line(line)


@pytest.fixture
def criterion(request):
    def record(number: int, ok: bool, detail: str):
        line = f"{'PASS' if ok else 'FAIL'}: criterion {number} - {detail}"
        request.config._criteria_lines.append((number, line))
        assert ok, line

    return record
