import sys
from pathlib import Path

import pytest
from hypothesis import HealthCheck, settings

sys.path.insert(0, str(Path(__file__).parent))

settings.register_profile("default", deadline=None, max_examples=60, suppress_health_check=[HealthCheck.too_slow])
settings.load_profile("default")

# acceptance lines collected by test_acceptance.py, printed in the terminal summary
ACCEPTANCE = {}


@pytest.fixture
def record_acceptance():
    def record(key, passed, detail):
        line = f"{key} {'PASS' if passed else 'FAIL'}: {detail}"
        ACCEPTANCE[key] = line
        print(line)
        return passed

    return record


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for key in sorted(ACCEPTANCE, key=lambda k: int(k[2:])):
        terminalreporter.write_line(ACCEPTANCE[key])
