from pathlib import Path

import numpy as np
import pytest

DATA_DIR = Path(__file__).parent / "data"

# criterion lines collected by test_acceptance, echoed in the terminal summary
ACCEPTANCE_LINES = []


@pytest.fixture
def rng():
    return np.random.default_rng(20240611)


@pytest.fixture(scope="session")
def gmm_spec_path():
    return DATA_DIR / "gmm_acceptance.json"


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES):
            terminalreporter.write_line(line)
