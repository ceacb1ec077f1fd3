import time

import pytest

from pmusplit.grid import bundled_path, load_ieee39
from pmusplit.harness import load_scenario, run, scenario_case

SCENARIOS = ("flt1617", "flt2122", "trip2829")


@pytest.fixture(scope="session")
def case39():
    return load_ieee39()


@pytest.fixture(scope="session")
def scenario_runs(case39):
    """Live closed-loop run of each bundled scenario, with its wall time."""
    out = {}
    for name in SCENARIOS:
        script, overrides = load_scenario(bundled_path(f"{name}.json"))
        case = scenario_case(case39, overrides)
        t0 = time.perf_counter()
        result = run(case, script)
        out[name] = (result, time.perf_counter() - t0, case, script)
    return out


def pytest_terminal_summary(terminalreporter):
    from tests import test_acceptance

    lines = test_acceptance.summary_lines()
    if lines:
        terminalreporter.section("acceptance criteria")
        for line in lines:
            terminalreporter.write_line(line)
