"""Shared fixtures: small validated scenarios sized for fast solves.

The tiny scenarios keep the default physics but shrink the horizon and
the user set; loop feasibility at short horizons needs the larger a_max
(racetrack turn caps) and enough slots for the closed polygon to respect
the speed band.
"""

import pytest

from uavmec.scenario import Scenario, load_scenario, generate_tasks


def make_scenario(**overrides) -> Scenario:
    """Validated scenario from a plain config dict (TOML-shaped)."""
    return load_scenario(overrides)


@pytest.fixture(scope="session")
def reference_scenario():
    """The reference desk scale: 2 UAVs, 8 users, 50 slots."""
    return load_scenario({})


@pytest.fixture(scope="session")
def tiny_scenario():
    """2 UAVs, 2 users, 10 slots; users sit under the initial loops."""
    return load_scenario({
        "time": {"horizon_s": 20.0, "n_slots": 10},
        "users": {"count": 2, "positions_m": [[800.0, 1200.0],
                                              [2000.0, 1000.0]]},
        "uavs": {"count": 2, "a_max_mps2": 20.0},
    })


@pytest.fixture(scope="session")
def micro_scenario():
    """1 UAV, 1 user, 6 slots; the coarse closed pentagon turns 72 deg
    per slot, which needs the generous acceleration cap."""
    return load_scenario({
        "time": {"horizon_s": 12.0, "n_slots": 6},
        "users": {"count": 1, "positions_m": [[1250.0, 1500.0]]},
        "uavs": {"count": 1, "a_max_mps2": 30.0},
    })


@pytest.fixture()
def tiny_tasks(tiny_scenario):
    return generate_tasks(tiny_scenario, 0)


@pytest.fixture()
def micro_tasks(micro_scenario):
    return generate_tasks(micro_scenario, 0)


# one pass/fail line per acceptance criterion, printed after the run
ACCEPTANCE_LINES = []


@pytest.fixture(scope="session")
def acceptance_report():
    """Callable the acceptance tests use to file their verdict line."""
    def _report(num, ok, detail):
        ACCEPTANCE_LINES.append(
            f"criterion {num:>2}: {'PASS' if ok else 'FAIL'} - {detail}")
    return _report


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)
