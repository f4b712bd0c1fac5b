from __future__ import annotations

import pytest

# criterion number -> (title, outcomes, details)
_CRITERIA: dict[int, tuple[str, list[str], list[str]]] = {}


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    rep = outcome.get_result()
    mark = item.get_closest_marker("criterion")
    if mark is None:
        return
    if rep.when != "call" and rep.passed:
        return
    number, title = mark.args
    _, outcomes, details = _CRITERIA.setdefault(number, (title, [], []))
    outcomes.append(rep.outcome)
    details.extend(str(value) for name, value in item.user_properties if name == "detail")
    if rep.failed and rep.when == "call":
        message = rep.longreprtext.strip().splitlines()
        details.append(message[-1] if message else "failed")


def pytest_terminal_summary(terminalreporter):
    if not _CRITERIA:
        return
    terminalreporter.section("acceptance criteria")
    for number in sorted(_CRITERIA):
        title, outcomes, details = _CRITERIA[number]
        if "failed" in outcomes:
            status = "FAIL"
        elif outcomes and all(o == "skipped" for o in outcomes):
            status = "SKIP"
        else:
            status = "PASS"
        line = f"criterion {number:>2} {status}  {title}"
        if details:
            line += "  [" + "; ".join(dict.fromkeys(details)) + "]"
        terminalreporter.write_line(line)
