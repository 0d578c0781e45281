import pytest

_LINES: list[str] = []


@pytest.fixture
def report_criterion():
    """Record one ``CRITERION n: PASS|FAIL detail`` line for the terminal summary."""

    def record(number: int, ok: bool, detail: str) -> bool:
        _LINES.append(f"CRITERION {number:>2}: {'PASS' if ok else 'FAIL'}  {detail}")
        print(_LINES[-1])
        return ok

    return record


def pytest_terminal_summary(terminalreporter):
    if _LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(_LINES, key=lambda s: int(s.split()[1].rstrip(":"))):
            terminalreporter.write_line(line)
