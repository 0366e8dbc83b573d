import pytest

ACCEPTANCE_LINES = pytest.StashKey[list]()


@pytest.fixture
def record_criterion(request):
    """Store one pass/fail line per acceptance criterion for the terminal summary."""
    lines = request.config.stash.setdefault(ACCEPTANCE_LINES, [])

    def record(number: int, title: str, passed: bool, seconds: float, detail: str):
        line = f"criterion {number:>2} {'PASS' if passed else 'FAIL'} [{seconds:6.2f} s] {title}: {detail}"
        lines.append((number, line))
        print(line)

    return record


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    lines = config.stash.get(ACCEPTANCE_LINES, [])
    if lines:
        terminalreporter.section("acceptance criteria")
        for _, line in sorted(lines):
            terminalreporter.write_line(line)
