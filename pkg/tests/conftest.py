import pytest

ACCEPTANCE_LINES: dict[int, str] = {}


@pytest.fixture
def criterion(capsys):
    """``check(number, ok, detail)``: print one PASS/FAIL line, remember it, then assert."""

    def check(number: int, ok: bool, detail: str):
        line = f"criterion {number:2d} {'PASS' if ok else 'FAIL'}: {detail}"
        ACCEPTANCE_LINES[number] = line
        with capsys.disabled():
            print(f"\n{line}")
        assert ok, line

    return check


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for n in sorted(ACCEPTANCE_LINES):
            terminalreporter.write_line(ACCEPTANCE_LINES[n])


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    rep = outcome.get_result()
    mark = item.get_closest_marker("criterion")
    if mark is not None and rep.failed and mark.args[0] not in ACCEPTANCE_LINES:
        # the test died before reaching its verdict (e.g. a fixture raised)
        exc = call.excinfo.typename if call.excinfo else "error"
        ACCEPTANCE_LINES[mark.args[0]] = f"criterion {mark.args[0]:2d} FAIL: {exc} during {rep.when}"
