import numpy as np
import pytest
from hypothesis import settings

from mapborrow.case_study import load_bundle

# single-core CI boxes make wall-clock deadlines flaky; correctness is what is checked
settings.register_profile("default", deadline=None)
settings.load_profile("default")

ACCEPTANCE_LINES = []


def record_acceptance(number: int, ok: bool, detail: str):
    line = f"criterion {number}: {'PASS' if ok else 'FAIL'}  {detail}"
    ACCEPTANCE_LINES.append(line)
    print(line)
    return ok


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES):
            terminalreporter.write_line(line)


@pytest.fixture(scope="session")
def bundle():
    return load_bundle()


@pytest.fixture(scope="session")
def phase2(bundle):
    return bundle.phase2_evidence()


@pytest.fixture
def rng():
    return np.random.default_rng(20170613)
