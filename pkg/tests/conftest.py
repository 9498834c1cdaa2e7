import sys

import pytest
from hypothesis import HealthCheck, settings

from rde_lab import Measure
from rde_lab.rde_model import bundled

settings.register_profile("default", deadline=None, max_examples=40,
                          suppress_health_check=[HealthCheck.too_slow])
settings.load_profile("default")


@pytest.fixture
def uniform2():
    return Measure.of([0.5, 0.5])


@pytest.fixture(params=["ex-a", "ex-b", "ex-c", "ex-d"])
def bundled_spec(request):
    return bundled(request.param)


def pytest_terminal_summary(terminalreporter):
    mod = sys.modules.get("test_acceptance")
    results = getattr(mod, "RESULTS", None)
    if results:
        terminalreporter.section("acceptance criteria")
        for n in sorted(results):
            terminalreporter.write_line(results[n])
