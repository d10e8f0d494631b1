import numpy as np
import pytest

acceptance_lines: list[str] = []


def record_pass(line: str) -> None:
    """Collect an acceptance-criterion pass line for the terminal summary."""
    acceptance_lines.append(line)


def pytest_terminal_summary(terminalreporter):
    if acceptance_lines:
        terminalreporter.section("acceptance criteria")
        for line in acceptance_lines:
            terminalreporter.line(f"[PASS] {line}")


@pytest.fixture
def rng():
    return np.random.default_rng(20240817)
