import re

from _oracles import CRITERIA

_NODE = re.compile(r"test_acceptance\.py::test_c(\d+)_(\w+)")


def pytest_runtest_logreport(report):
    m = _NODE.search(report.nodeid)
    if m and (report.when == "call" or report.failed):
        n = int(m.group(1))
        CRITERIA.setdefault(n, {})["passed"] = report.passed
        CRITERIA[n]["name"] = m.group(2).replace("_", " ")


def pytest_terminal_summary(terminalreporter):
    done = {n: c for n, c in CRITERIA.items() if "passed" in c}
    if not done:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(done):
        c = done[n]
        status = "PASS" if c["passed"] else "FAIL"
        terminalreporter.write_line(f"{status} criterion {n:2d} {c['name']}: {c.get('detail', '')}")
