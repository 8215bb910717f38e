import sys
from pathlib import Path

sys.path.insert(0, str(Path(__file__).parent))

# criterion number -> (title, [(outcome, detail), ...])
_CRITERIA = {}


def pytest_runtest_makereport(item, call):
    mark = item.get_closest_marker("acceptance")
    if mark is None or call.when != "call":
        return
    number, title = mark.args
    detail = dict(item.user_properties).get("detail", "")
    outcome = "PASS" if call.excinfo is None else "FAIL"
    _CRITERIA.setdefault(number, (title, []))[1].append((outcome, f"{item.name}: {detail}" if detail else item.name))


def pytest_terminal_summary(terminalreporter):
    if not _CRITERIA:
        return
    terminalreporter.section("acceptance criteria")
    for number in sorted(_CRITERIA):
        title, runs = _CRITERIA[number]
        status = "PASS" if all(o == "PASS" for o, _ in runs) else "FAIL"
        terminalreporter.write_line(f"criterion {number}: {status}  {title}")
        for outcome, detail in runs:
            terminalreporter.write_line(f"    {outcome}  {detail}")
