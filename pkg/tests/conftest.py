"""Collects acceptance outcomes and prints one line per criterion at the end."""
import pytest

_OUTCOMES: dict[int, tuple[str, str, str]] = {}


def pytest_configure(config):
    config.addinivalue_line("markers", "criterion(number, title): acceptance criterion")


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    rep = outcome.get_result()
    mark = item.get_closest_marker("criterion")
    if mark is None or (rep.when != "call" and not rep.failed):
        return
    number, title = mark.args
    detail = "; ".join(v for k, v in item.user_properties if k == "detail")
    verdict = "PASS" if rep.passed else ("SKIP" if rep.skipped else "FAIL")
    prev = _OUTCOMES.get(number)
    if prev is not None:
        # parametrized criteria: any failure wins, details accumulate
        verdict = verdict if prev[1] == "PASS" else prev[1]
        detail = "; ".join(x for x in (prev[2], detail) if x)
    _OUTCOMES[number] = (title, verdict, detail)


def pytest_terminal_summary(terminalreporter):
    if not _OUTCOMES:
        return
    tr = terminalreporter
    tr.section("acceptance criteria")
    for number in sorted(_OUTCOMES):
        title, verdict, detail = _OUTCOMES[number]
        tr.write_line(f"{verdict} criterion {number:2d} {title}" + (f": {detail}" if detail else ""))
