import sys
from pathlib import Path

import pytest
from hypothesis import HealthCheck, settings

sys.path.insert(0, str(Path(__file__).parent))

settings.register_profile(
    "repo", max_examples=60, deadline=None, suppress_health_check=[HealthCheck.too_slow]
)
settings.load_profile("repo")

from iotlysa import analyze, corpus  # noqa: E402


@pytest.fixture(scope="session")
def street():
    return corpus.load("street")


@pytest.fixture(scope="session")
def street_estimate(street):
    system, cfg = street
    return analyze(system, cfg)


@pytest.fixture(scope="session")
def encrypted():
    return corpus.load("street_encrypted")


def pytest_terminal_summary(terminalreporter):
    module = sys.modules.get("test_acceptance")
    lines = getattr(module, "RESULTS", None)
    if lines:
        terminalreporter.section("acceptance criteria")
        for n in sorted(lines):
            terminalreporter.write_line(lines[n])
