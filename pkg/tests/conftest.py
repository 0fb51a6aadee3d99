import pytest

_ACCEPTANCE = {}


@pytest.fixture
def acceptance_log():
    """Record one verdict line per acceptance criterion."""

    def log(number, passed, detail):
        line = f"criterion {number:2d}: {'PASS' if passed else 'FAIL'} {detail}"
        _ACCEPTANCE[number] = line
        print(line)

    return log


def pytest_terminal_summary(terminalreporter):
    if not _ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(_ACCEPTANCE):
        terminalreporter.write_line(_ACCEPTANCE[n])
