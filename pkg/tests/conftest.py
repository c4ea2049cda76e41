import pytest

# one line per acceptance criterion, filled in by test_acceptance.py
CRITERIA = {}


def record(n: int, ok: bool, detail: str = ""):
    line = f"criterion {n:2d}: {'PASS' if ok else 'FAIL'}  {detail}"
    CRITERIA[n] = line
    print(line)
    return ok


def pytest_terminal_summary(terminalreporter):
    if not CRITERIA:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(CRITERIA):
        terminalreporter.write_line(CRITERIA[n])


@pytest.fixture
def report():
    return record
