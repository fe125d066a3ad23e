"""Collects ``criterion`` marked tests into a one-line-per-criterion summary."""

import pytest

_RESULTS = {}


def pytest_configure(config):
    config.addinivalue_line("markers", "criterion(n): acceptance criterion number n")


@pytest.fixture
def detail(request):
    """Call ``detail("text")`` to attach a short note to the acceptance line."""

    def note(text):
        request.node.user_properties.append(("detail", str(text)))

    return note


def pytest_runtest_logreport(report):
    marker = next((m for m in getattr(report, "_criterion", ()) or ()), None)
    if marker is None:
        return
    if report.when == "call" or (report.when == "setup" and report.outcome != "passed"):
        notes = [v for k, v in report.user_properties if k == "detail"]
        _RESULTS[marker] = ("PASS" if report.outcome == "passed" else "FAIL", "; ".join(notes))


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    report = outcome.get_result()
    m = item.get_closest_marker("criterion")
    if m is not None:
        report._criterion = (m.args[0],)


def pytest_terminal_summary(terminalreporter):
    if not _RESULTS:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(_RESULTS):
        status, note = _RESULTS[n]
        terminalreporter.write_line(f"criterion {n}: {status}" + (f"  ({note})" if note else ""))
