import sys
from pathlib import Path

import pytest

sys.path.insert(0, str(Path(__file__).parent))

# filled by the acceptance suite, one (label, passed, detail) per criterion
ACCEPTANCE = []


@pytest.fixture
def record(capsys):
    def _record(label: str, passed: bool, detail: str):
        line = f"{label}: {'PASS' if passed else 'FAIL'} ({detail})"
        ACCEPTANCE.append(line)
        with capsys.disabled():
            print("\n" + line)
        return passed
    return _record


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE:
            terminalreporter.write_line(line)
