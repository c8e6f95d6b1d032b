import pytest

ACCEPTANCE = {}


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    rep = outcome.get_result()
    marker = item.get_closest_marker("criterion")
    if marker is None or rep.when != "call":
        return
    number, title = marker.args
    ok = rep.passed
    prev = ACCEPTANCE.get(number)
    if prev is not None:
        ok = ok and prev[1]
    detail = getattr(item, "_detail", "")
    ACCEPTANCE[number] = (title, ok, detail or (prev[2] if prev else ""))


def pytest_configure(config):
    config.addinivalue_line("markers", "criterion(number, title): acceptance criterion")


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for number in sorted(ACCEPTANCE):
        title, ok, detail = ACCEPTANCE[number]
        line = f"[{'PASS' if ok else 'FAIL'}] {number}. {title}"
        if detail:
            line += f"  ({detail})"
        terminalreporter.write_line(line)


@pytest.fixture
def detail(request):
    """Attach a measured-value note to the acceptance line of the current test."""

    def note(text):
        request.node._detail = text

    return note
