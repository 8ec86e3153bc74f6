import pytest

ACCEPTANCE_LINES: list = []


@pytest.fixture
def report(request):
    """Record one PASS/FAIL line per acceptance criterion and assert on it."""
    terminal = request.config.pluginmanager.getplugin("terminalreporter")

    def _report(num, name, ok, detail):
        line = f"[{'PASS' if ok else 'FAIL'}] criterion {num:>2} {name}: {detail}"
        ACCEPTANCE_LINES.append(line)
        if terminal is not None:
            terminal.write_line("")
            terminal.write_line(line)
        assert ok, line

    return _report


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)
