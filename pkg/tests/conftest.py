import sys
from pathlib import Path

import pytest

sys.path.insert(0, str(Path(__file__).parent))

_verdicts: dict[int, list] = {}


def pytest_configure(config):
    config.addinivalue_line("markers", "slow: long-running end-to-end checks")
    config.addinivalue_line("markers", "criterion(n, title): acceptance criterion checked by this test")


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    mark = item.get_closest_marker("criterion")
    if mark is None:
        return
    rep = outcome.get_result()
    n, title = mark.args
    entry = _verdicts.setdefault(n, [title, "PASS", 0])
    if rep.failed or (rep.when == "call" and rep.skipped):
        entry[1] = "FAIL"
    if rep.when == "call":
        entry[2] += 1


def pytest_terminal_summary(terminalreporter):
    if not _verdicts:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(_verdicts):
        title, verdict, ran = _verdicts[n]
        if ran == 0:
            verdict = "FAIL"
        terminalreporter.write_line(f"criterion {n}: {verdict}  {title}")
