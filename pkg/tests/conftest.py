"""Collects acceptance verdicts and prints one line per criterion."""

VERDICTS = {}


def record(number, title, ok, detail=""):
    VERDICTS[number] = (title, bool(ok), detail)
    return bool(ok)


def pytest_terminal_summary(terminalreporter):
    if not VERDICTS:
        return
    terminalreporter.section("acceptance criteria")
    for number in sorted(VERDICTS):
        title, ok, detail = VERDICTS[number]
        line = f"{'PASS' if ok else 'FAIL'}  criterion {number}: {title}"
        terminalreporter.write_line(line + (f"  ({detail})" if detail else ""))
