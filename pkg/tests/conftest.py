import numpy as np
import pytest
from hypothesis import settings
from threadpoolctl import threadpool_limits

settings.register_profile("default", deadline=None, max_examples=60)
settings.load_profile("default")

_LIMIT = threadpool_limits(limits=1)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


_CRITERIA: dict[int, str] = {}


def record(n: int, ok: bool, detail: str) -> None:
    """Remember one acceptance line; printed in the terminal summary."""
    line = f"criterion {n:2d}: {'PASS' if ok else 'FAIL'}  {detail}"
    _CRITERIA[n] = line
    print(line)


def pytest_terminal_summary(terminalreporter):
    if _CRITERIA:
        terminalreporter.section("acceptance criteria")
        for n in sorted(_CRITERIA):
            terminalreporter.write_line(_CRITERIA[n])
