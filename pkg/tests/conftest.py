import pytest

RESULTS: list[str] = []


@pytest.fixture
def report():
    """Record one PASS/FAIL line for the end-of-run summary."""
    def _report(label: str, ok: bool, detail: str = "") -> bool:
        line = f"{'PASS' if ok else 'FAIL'} {label}" + (f" ({detail})" if detail else "")
        RESULTS.append(line)
        print(line)
        return ok
    return _report


def pytest_terminal_summary(terminalreporter):
    if RESULTS:
        terminalreporter.section("acceptance criteria")
        for line in RESULTS:
            terminalreporter.write_line(line)
