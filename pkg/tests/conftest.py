import pytest

ACCEPTANCE_LINES: list[str] = []


@pytest.fixture
def record_criterion():
    """Collect one "PASS/FAIL criterion k: ..." line, echoed live and in the terminal summary."""
    def record(key: str, ok: bool, detail: str):
        line = f"{'PASS' if ok else 'FAIL'} criterion {key}: {detail}"
        ACCEPTANCE_LINES.append(line)
        print(line)
        return ok
    return record


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)
