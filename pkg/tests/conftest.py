import json
from pathlib import Path

import pytest

import proposalkit

DATA = Path(proposalkit.__file__).parent / "data"


@pytest.fixture
def data_dir() -> Path:
    return DATA


@pytest.fixture
def golden(data_dir):
    return (data_dir / "golden_gt.json", data_dir / "golden_det.json",
            json.loads((data_dir / "golden_report.json").read_text()))


# acceptance criteria report one line each in the terminal summary
ACCEPTANCE: list[str] = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE:
            terminalreporter.write_line(line)
