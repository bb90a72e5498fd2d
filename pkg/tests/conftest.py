"""Acceptance reporting: tests marked ``criterion(n, name)`` get one summary line."""

import pytest

_RESULTS = {}
_DETAILS = {}


def pytest_configure(config):
    config.addinivalue_line("markers", "criterion(number, name): acceptance criterion covered by a test")


@pytest.fixture
def detail(request):
    """Call ``detail("text")`` to attach measurements to the summary line."""
    marker = request.node.get_closest_marker("criterion")

    def add(text):
        if marker is not None:
            _DETAILS.setdefault(marker.args[0], []).append(str(text))
        print(text)

    return add


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    rep = outcome.get_result()
    marker = item.get_closest_marker("criterion")
    if marker is None:
        return
    if rep.when == "call" or (rep.when == "setup" and rep.failed):
        num, name = marker.args
        _RESULTS[num] = (name, rep.passed, round(rep.duration, 1))


def pytest_terminal_summary(terminalreporter):
    if not _RESULTS:
        return
    terminalreporter.section("acceptance criteria")
    for num in sorted(_RESULTS):
        name, ok, secs = _RESULTS[num]
        extra = "; ".join(_DETAILS.get(num, []))
        line = f"criterion {num} ({name}): {'PASS' if ok else 'FAIL'} in {secs}s"
        terminalreporter.write_line(line + (f" | {extra}" if extra else ""))
