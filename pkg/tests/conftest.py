import numpy as np
import pytest
from hypothesis import settings

settings.register_profile("default", deadline=None, max_examples=60)
settings.load_profile("default")


@pytest.fixture
def rng():
    return np.random.default_rng(20240611)


_ACCEPTANCE_LINES: dict[int, str] = {}


@pytest.fixture
def acceptance():
    """Record the verdict line of an acceptance criterion.

    Call ``acceptance(number, passed, detail)``; the lines are printed in the
    terminal summary, one per criterion.
    """

    def record(number: int, passed: bool, detail: str) -> bool:
        _ACCEPTANCE_LINES[number] = f"ACCEPTANCE {number}: {'PASS' if passed else 'FAIL'} - {detail}"
        return passed

    return record


def pytest_terminal_summary(terminalreporter):
    if _ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for k in sorted(_ACCEPTANCE_LINES):
            terminalreporter.write_line(_ACCEPTANCE_LINES[k])
