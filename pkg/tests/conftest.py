import pytest

_CRITERIA = {}


def pytest_configure(config):
    config.addinivalue_line("markers", "criterion(name, budget): acceptance criterion with a runtime budget in seconds")


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    rep = outcome.get_result()
    marker = item.get_closest_marker("criterion")
    if marker is None or rep.when not in ("setup", "call"):
        return
    name, budget = marker.args
    if rep.when == "call" and rep.passed and call.duration > budget:
        rep.outcome = "failed"
        rep.longrepr = f"{name}: took {call.duration:.1f}s, budget is {budget}s"
    if rep.failed or rep.when == "call":
        _CRITERIA[name] = (rep.passed, call.duration, budget)


def pytest_terminal_summary(terminalreporter):
    if not _CRITERIA:
        return
    terminalreporter.section("acceptance criteria")
    for name, (ok, seconds, budget) in _CRITERIA.items():
        terminalreporter.write_line(f"{'PASS' if ok else 'FAIL'}  {name}  ({seconds:.1f}s of {budget}s)")
