import pytest

ACCEPTANCE_LINES: list = []


@pytest.fixture
def record():
    """Log one acceptance verdict; the lines are repeated in the terminal summary."""

    def _record(criterion: int, ok: bool, detail: str) -> bool:
        line = f"CRITERION {criterion:2d}: {'PASS' if ok else 'FAIL'} | {detail}"
        ACCEPTANCE_LINES.append(line)
        print(line)
        return ok

    return _record


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES):
            terminalreporter.write_line(line)
