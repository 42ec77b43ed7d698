import json
from pathlib import Path

import numpy as np
import pytest

from gridadmm.netdata import load_case_text

FIXTURES = Path(__file__).parent / "fixtures"
TWO_BUS = (FIXTURES / "two_bus.m").read_text()
REFERENCES = json.loads((FIXTURES / "references.json").read_text())


@pytest.fixture
def two_bus():
    return load_case_text(TWO_BUS, "two_bus")


@pytest.fixture
def rng():
    return np.random.default_rng(20240611)


@pytest.fixture(scope="session")
def references():
    return REFERENCES


_ACCEPTANCE = []


def record_acceptance(line):
    _ACCEPTANCE.append(line)


def pytest_terminal_summary(terminalreporter):
    if _ACCEPTANCE:
        terminalreporter.section("acceptance criteria")
        for line in sorted(_ACCEPTANCE, key=lambda s: int(s.split()[2].rstrip(":"))):
            terminalreporter.write_line(line)
