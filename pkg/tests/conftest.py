import re
from collections import defaultdict

CRITERION = re.compile(r"test_criterion_(\d+)_")

_outcomes: dict[int, list] = defaultdict(list)


def pytest_runtest_logreport(report):
    m = CRITERION.search(report.nodeid)
    if not m:
        return
    if report.when == "call" or (report.when == "setup" and report.outcome != "passed"):
        details = [v for k, v in report.user_properties if k == "detail"]
        _outcomes[int(m.group(1))].append((report.outcome, details))


def pytest_terminal_summary(terminalreporter):
    if not _outcomes:
        return
    terminalreporter.section("acceptance criteria")
    for number in sorted(_outcomes):
        results = _outcomes[number]
        ok = all(outcome == "passed" for outcome, _ in results)
        details = "; ".join(d for _, ds in results for d in ds)
        terminalreporter.write_line(f"criterion {number:>2}: {'PASS' if ok else 'FAIL'}  {details}")
