from pathlib import Path

import pytest

FIXTURE_DIR = Path(__file__).parent / "fixtures"


@pytest.fixture
def fixture_dir() -> Path:
    return FIXTURE_DIR


def fixture_paths() -> list[Path]:
    return sorted(FIXTURE_DIR.glob("*.onnx"))


# (criterion number, title, "PASS" | "FAIL", detail) rows filled in by test_acceptance
ACCEPTANCE_RESULTS: list[tuple[int, str, str, str]] = []


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE_RESULTS:
        return
    terminalreporter.section("acceptance criteria")
    for number, title, verdict, detail in sorted(ACCEPTANCE_RESULTS):
        terminalreporter.write_line(f"{verdict} criterion {number}: {title}" + (f" ({detail})" if detail else ""))
