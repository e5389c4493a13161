from __future__ import annotations

import sys
from importlib import resources
from pathlib import Path

import pytest

sys.path.insert(0, str(Path(__file__).parent))


@pytest.fixture(scope="session")
def fixture_dir() -> Path:
    return Path(str(resources.files("cmore.data").joinpath("fixture")))


HOSTAGE_STATEMENT = (
    "The boarding crew freed 14 Iranian and Pakistani fishermen who had been held as hostages over two months."
)
HOSTAGE_EVIDENCE = (
    "The navy said it rescued 14 people who were being held hostage on the dhow. "
    "The operation took place in the Gulf of Aden."
)

# One line per acceptance criterion, filled in by test_acceptance.py.
ACCEPTANCE: dict[int, str] = {}


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE:
        terminalreporter.section("acceptance criteria")
        for n in sorted(ACCEPTANCE):
            terminalreporter.write_line(ACCEPTANCE[n])
