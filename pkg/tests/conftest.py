import sys
from pathlib import Path

import pytest

sys.path.insert(0, str(Path(__file__).parent))

_criteria = {}


@pytest.fixture
def detail(request):
    """Call with a short measurement summary; it is echoed on the criterion line."""
    def note(text: str) -> None:
        request.node.criterion_detail = text
        print(text)
    return note


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    rep = outcome.get_result()
    m = item.get_closest_marker("criterion")
    if m is None:
        return
    n, name = m.args
    ok = rep.passed if rep.when == "call" else not rep.failed
    prev = _criteria.get(n, (name, True, ""))
    _criteria[n] = (name, prev[1] and ok, getattr(item, "criterion_detail", "") or prev[2])


def pytest_terminal_summary(terminalreporter):
    if not _criteria:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(_criteria):
        name, ok, text = _criteria[n]
        line = f"criterion {n:2d} {'PASS' if ok else 'FAIL'}  {name}"
        terminalreporter.write_line(line + (f"  [{text}]" if text else ""))
