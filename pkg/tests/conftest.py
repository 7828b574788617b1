import time
from collections import OrderedDict

import pytest
from hypothesis import HealthCheck, settings

from tangleproof import reference_params, run
from tangleproof.bottleneck import force_bottlenecks

settings.register_profile("default", deadline=None, max_examples=40,
                          suppress_health_check=[HealthCheck.too_slow])
settings.load_profile("default")

_CRITERIA: "OrderedDict[int, dict]" = OrderedDict()


def pytest_configure(config):
    config.addinivalue_line("markers", "criterion(number, title): acceptance criterion")


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    rep = outcome.get_result()
    mark = item.get_closest_marker("criterion")
    if mark is None:
        return
    number, title = mark.args
    entry = _CRITERIA.setdefault(number, {"title": title, "failed": [], "passed": 0, "seconds": 0.0})
    if rep.when == "call":
        entry["seconds"] += rep.duration
    if rep.failed:
        entry["failed"].append(item.callspec.id if hasattr(item, "callspec") else item.name)
    elif rep.when == "call" and rep.passed:
        entry["passed"] += 1


def pytest_terminal_summary(terminalreporter):
    if not _CRITERIA:
        return
    terminalreporter.section("acceptance criteria")
    for number in sorted(_CRITERIA):
        e = _CRITERIA[number]
        status = "FAIL" if e["failed"] else "PASS"
        detail = f" failing: {', '.join(e['failed'])}" if e["failed"] else ""
        terminalreporter.write_line(
            f"criterion {number:>2} {status}  {e['title']} ({e['seconds']:.1f}s){detail}")


@pytest.fixture(scope="session")
def params():
    return reference_params()


@pytest.fixture(scope="session")
def short_trace(params):
    return run(params, 11, 20_000)


@pytest.fixture(scope="session")
def forced(params):
    """One forced bottleneck at the first admissible arrival, 500 steps of margin."""
    trace, plans = force_bottlenecks(params, 1)
    return trace, plans[0]


@pytest.fixture
def timer():
    start = time.perf_counter()
    return lambda: time.perf_counter() - start
