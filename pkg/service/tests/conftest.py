"""Service test fixtures plus the acceptance-summary hook."""

from __future__ import annotations

import pytest
from fastapi.testclient import TestClient

from rerank_service.app import create_app
from rerank_service.config import Settings


@pytest.fixture
def client():
    app = create_app(Settings(model="tiny"))
    with TestClient(app) as test_client:
        yield test_client


ACCEPTANCE_RESULTS: dict[int, tuple[str, str]] = {}


def record_acceptance(number: int, description: str, passed: bool = True) -> None:
    ACCEPTANCE_RESULTS[number] = (description, "PASS" if passed else "FAIL")


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    if not ACCEPTANCE_RESULTS:
        return
    terminalreporter.section("acceptance criteria")
    for number in sorted(ACCEPTANCE_RESULTS):
        description, outcome = ACCEPTANCE_RESULTS[number]
        terminalreporter.write_line(f"criterion {number}: {outcome} — {description}")
