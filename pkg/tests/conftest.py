import pytest

# (criterion number, "PASS"/"FAIL", detail) rows filled in by test_acceptance.py
ACCEPTANCE: list[tuple[int, str, str]] = []


@pytest.fixture
def acceptance():
    """Record one acceptance line, then fail the test if the criterion failed."""

    def record(n: int, ok: bool, detail: str) -> None:
        line = (n, "PASS" if ok else "FAIL", detail)
        ACCEPTANCE.append(line)
        print(f"criterion {n:2d}: {line[1]}  {detail}")
        if not ok:
            pytest.fail(f"criterion {n} failed: {detail}", pytrace=False)

    return record


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for n, verdict, detail in sorted(ACCEPTANCE):
        terminalreporter.write_line(f"criterion {n:2d}: {verdict}  {detail}")
