import time

import pytest

# wall-clock budget for the whole suite, checked as part of the invariant criterion
SUITE_BUDGET = 600.0
_results = {}
_start = [0.0]


def pytest_configure(config):
    config.addinivalue_line("markers", "criterion(number, title): acceptance criterion")


def pytest_sessionstart(session):
    _start[0] = time.perf_counter()


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    rep = outcome.get_result()
    mark = item.get_closest_marker("criterion")
    if mark is None or not (rep.when == "call" or rep.failed):
        return
    number, title = mark.args
    ok = rep.passed and not hasattr(rep, "wasxfail")
    entry = _results.setdefault(number, {"title": title, "ok": True, "notes": []})
    entry["ok"] = entry["ok"] and ok
    entry["notes"] += [str(v) for k, v in item.user_properties if k == "measured"]


def pytest_sessionfinish(session, exitstatus):
    if _results and 8 in _results:
        elapsed = time.perf_counter() - _start[0]
        _results[8]["notes"].append(f"suite wall time {elapsed:.0f} s (budget {SUITE_BUDGET:.0f} s)")
        if elapsed > SUITE_BUDGET:
            _results[8]["ok"] = False
            session.exitstatus = pytest.ExitCode.TESTS_FAILED


def pytest_terminal_summary(terminalreporter):
    if not _results:
        return
    terminalreporter.section("acceptance criteria")
    for number in sorted(_results):
        r = _results[number]
        status = "PASS" if r["ok"] else "FAIL"
        terminalreporter.write_line(f"criterion {number} {status}: {r['title']}")
        for note in r["notes"]:
            terminalreporter.write_line(f"    {note}")
