"""Shared fixtures, sampling helpers, and the acceptance summary hook."""

import numpy as np
import pytest
from hypothesis import settings

from sowinfree.geometry import norm, project_skew

settings.register_profile("suite", deadline=None, max_examples=60)
settings.load_profile("suite")

# acceptance tests record one line per criterion here; the terminal-summary
# hook prints them after the run so the gate is readable at a glance
_ACCEPTANCE: dict = {}
_CRITERIA = 10


def unit_skew(n: int, rng: np.random.Generator) -> np.ndarray:
    """Random unit-norm element of so(n)."""
    while True:
        u = project_skew(rng.standard_normal((n, n)))
        size = float(norm(u))
        if size > 1e-12:
            return u / size


def skew_with_norm(n: int, rng: np.random.Generator, size: float) -> np.ndarray:
    return size * unit_skew(n, rng)


@pytest.fixture
def rng():
    return np.random.default_rng(20260822)


@pytest.fixture
def criterion():
    """Record one acceptance line: criterion(num, label, ok, detail)."""

    def record(num: int, label: str, ok: bool, detail: str = "") -> None:
        _ACCEPTANCE[int(num)] = (label, bool(ok), detail)

    return record


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    if not _ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for num in range(1, _CRITERIA + 1):
        if num in _ACCEPTANCE:
            label, ok, detail = _ACCEPTANCE[num]
            status = "PASS" if ok else "FAIL"
            tail = f"  [{detail}]" if detail else ""
            terminalreporter.write_line(f"criterion {num:2d}: {status}  {label}{tail}")
        else:
            terminalreporter.write_line(f"criterion {num:2d}: NOT RUN")
