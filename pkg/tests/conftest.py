import pytest

_AC_KEY = pytest.StashKey[dict]()


def pytest_configure(config):
    config.stash[_AC_KEY] = {}


@pytest.fixture
def ac_report(request):
    """Record one acceptance line: ``ac_report(3, ok, "slope -0.46")``."""
    lines = request.config.stash[_AC_KEY]

    def record(number: int, ok: bool, detail: str):
        lines[number] = f"AC{number:<2} {'PASS' if ok else 'FAIL'}  {detail}"
        return ok

    return record


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    lines = config.stash[_AC_KEY]
    if not lines:
        return
    terminalreporter.section("acceptance criteria")
    for k in sorted(lines):
        terminalreporter.write_line(lines[k])
