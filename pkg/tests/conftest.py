import numpy as np
import pytest

ACCEPTANCE_RESULTS = []


def record_criterion(number: int, name: str, ok: bool, detail: str = ""):
    """Collect one acceptance-criterion verdict for the end-of-run summary."""
    ACCEPTANCE_RESULTS.append((number, name, ok, detail))


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    if not ACCEPTANCE_RESULTS:
        return
    terminalreporter.section("acceptance criteria")
    for number, name, ok, detail in sorted(ACCEPTANCE_RESULTS):
        status = "PASS" if ok else "FAIL"
        line = f"criterion {number:2d} [{status}] {name}"
        if detail:
            line += f" ({detail})"
        terminalreporter.write_line(line)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


def int_valued(rng, shape, lo=-3, hi=4, dtype=np.float32):
    """Integer-valued float arrays: exact under any summation order."""
    return rng.integers(lo, hi, size=shape).astype(dtype)
