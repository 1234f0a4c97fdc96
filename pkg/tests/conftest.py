from importlib import resources
from pathlib import Path

import pytest

from otlab.config import load_config

CONFIG_DIR = Path(str(resources.files("otlab") / "configs"))


def shipped(name: str) -> dict:
    return load_config(CONFIG_DIR / name)


@pytest.fixture
def config_dir() -> Path:
    return CONFIG_DIR


ACCEPTANCE_LINES: dict = {}


def record_criterion(number: int, title: str, ok: bool, detail: str) -> None:
    """Remember one acceptance line; printed at the end of the session."""
    ACCEPTANCE_LINES[number] = f"criterion {number} [{'PASS' if ok else 'FAIL'}] {title}: {detail}"
    print(ACCEPTANCE_LINES[number])


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE_LINES:
        return
    terminalreporter.section("acceptance criteria")
    for k in sorted(ACCEPTANCE_LINES):
        terminalreporter.write_line(ACCEPTANCE_LINES[k])
