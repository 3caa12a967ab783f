"""Collects one pass/fail line per acceptance criterion for the terminal summary."""
import pytest

CRITERIA = {}
DETAILS = {}


def pytest_configure(config):
    config.addinivalue_line("markers", "criterion(n): acceptance criterion number")


@pytest.fixture
def report_detail(request):
    marker = request.node.get_closest_marker("criterion")

    def record(text):
        DETAILS.setdefault(marker.args[0], []).append(text)

    return record


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    rep = outcome.get_result()
    marker = item.get_closest_marker("criterion")
    if marker is None:
        return
    num = marker.args[0]
    if rep.when == "call" or (rep.when == "setup" and not rep.passed):
        if rep.skipped:
            status = "SKIP"
        elif rep.passed:
            status = "PASS"
        else:
            status = "FAIL"
        prev = CRITERIA.get(num)
        if prev is None or prev == "PASS" or status == "FAIL":
            CRITERIA[num] = status
        if rep.skipped and isinstance(rep.longrepr, tuple):
            DETAILS.setdefault(num, []).append(rep.longrepr[2])


def pytest_terminal_summary(terminalreporter):
    if not CRITERIA:
        return
    terminalreporter.section("acceptance criteria")
    for num in sorted(CRITERIA):
        detail = "; ".join(DETAILS.get(num, []))
        terminalreporter.write_line(f"criterion {num}: {CRITERIA[num]}" + (f"  [{detail}]" if detail else ""))
