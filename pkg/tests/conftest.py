import pytest

_LINES: list[str] = []


@pytest.fixture
def accept():
    """Record one acceptance line; the summary is printed at the end of the run."""

    def report(number: int, name: str, ok: bool, detail: str = "") -> bool:
        line = f"{'PASS' if ok else 'FAIL'} [{number:2d}] {name}" + (f": {detail}" if detail else "")
        _LINES.append(line)
        print(line)
        return ok

    return report


def pytest_terminal_summary(terminalreporter):
    if _LINES:
        terminalreporter.section("acceptance criteria")
        for line in _LINES:
            terminalreporter.write_line(line)
