import pytest

_LINES = pytest.StashKey[dict]()


def pytest_configure(config):
    config.stash[_LINES] = {}
    config.addinivalue_line("markers", "criterion(n): acceptance criterion number")


@pytest.fixture
def report(request):
    """report(ok, detail) records the PASS/FAIL line for the test's criterion."""
    n = request.node.get_closest_marker("criterion").args[0]
    lines = request.config.stash[_LINES]

    def _report(ok, detail):
        line = f"{'PASS' if ok else 'FAIL'} criterion {n}: {detail}"
        lines[n] = line
        print(line)
        return ok

    return _report


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    rep = outcome.get_result()
    mark = item.get_closest_marker("criterion")
    if mark is None or not rep.failed:
        return
    lines = item.config.stash[_LINES]
    n = mark.args[0]
    if not lines.get(n, "").startswith("FAIL"):
        msg = str(call.excinfo.value).splitlines()[0] if call.excinfo else rep.when
        lines[n] = f"FAIL criterion {n}: {call.excinfo.typename if call.excinfo else 'error'}: {msg}"


def pytest_terminal_summary(terminalreporter, config):
    lines = config.stash.get(_LINES, {})
    if lines:
        terminalreporter.section("acceptance criteria")
        for n in sorted(lines):
            terminalreporter.write_line(lines[n])
