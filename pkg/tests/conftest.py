"""Collects acceptance-criterion verdicts and prints them in the terminal summary."""
import pytest

VERDICTS: dict = {}


@pytest.fixture
def verdict():
    def record(number: int, passed: bool, detail: str) -> bool:
        line = f"criterion {number}: {'PASS' if passed else 'FAIL'}  {detail}"
        VERDICTS[number] = line
        print(line)
        return passed
    return record


def pytest_terminal_summary(terminalreporter):
    if VERDICTS:
        terminalreporter.section("acceptance criteria")
        for number in sorted(VERDICTS):
            terminalreporter.write_line(VERDICTS[number])
