import numpy as np
import pytest
from hypothesis import settings

from seeuav.bcd import initial_plan, initial_powers, preset_scenario
from seeuav.scenario import Scenario

settings.register_profile("default", max_examples=60, deadline=None)
settings.load_profile("default")


def small_scenario(suavs=1, juavs=1, users=((0.0, 0.0), (150.0, 80.0)), eves=((450.0, -300.0),),
                   period=20.0, delta=1.0, **kw) -> Scenario:
    return Scenario(legit_users=np.array(users), eavesdroppers=np.array(eves), suav_count=suavs,
                    juav_count=juavs, horizon=period, slot_delta=delta, **kw)


@pytest.fixture
def sc_small():
    return small_scenario()


@pytest.fixture
def start_small(sc_small):
    return initial_plan(sc_small), initial_powers(sc_small)


@pytest.fixture(scope="session")
def preset_b():
    return preset_scenario("B", seed=0, period=40.0, slots=40)


# one "criterion N PASS/FAIL" line per acceptance test, repeated in the terminal summary
ACCEPTANCE_LINES: list[str] = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES, key=lambda s: int(s.split()[1])):
            terminalreporter.write_line(line)
