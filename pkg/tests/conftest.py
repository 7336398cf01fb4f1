"""Collects acceptance results and prints one line per criterion after the run."""

ACCEPTANCE = {}


def record(cid: int, name: str, passed: bool, detail: str) -> None:
    ACCEPTANCE[cid] = (name, passed, detail)


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for cid in sorted(ACCEPTANCE):
        name, passed, detail = ACCEPTANCE[cid]
        terminalreporter.write_line(f"[{'PASS' if passed else 'FAIL'}] {cid:2d} {name}: {detail}")
