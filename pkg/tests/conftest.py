"""Collects one verdict line per acceptance criterion for the terminal summary."""

CRITERIA: dict[str, str] = {}


def record(name: str, ok: bool, detail: str) -> bool:
    line = f"criterion {name}: {'PASS' if ok else 'FAIL'} ({detail})"
    CRITERIA[name] = line
    print(line)
    return ok


def pytest_terminal_summary(terminalreporter):
    if CRITERIA:
        terminalreporter.section("acceptance criteria")
        for name in sorted(CRITERIA, key=lambda k: int(k.split()[0].rstrip("abcd"))):
            terminalreporter.write_line(CRITERIA[name])
