import numpy as np
import pytest

from conftest import small_scenario
from seeuav import bcd
from seeuav.bcd import (RunError, RunOptions, default_geometry, initial_plan, preset_scenario, radius_cap,
                        run_benchmark, run_see, see_of, sweep_period)
from seeuav.kinematics import check_feasibility, propulsion_energy


@pytest.fixture(scope="module")
def sc_bcd():
    return small_scenario(suavs=1, juavs=1, period=20.0, delta=1.0)


@pytest.fixture(scope="module")
def see_run(sc_bcd):
    return run_see(sc_bcd)


def test_see_trace_non_decreasing(see_run):
    see = np.concatenate([[see_run.trace.initial_see], see_run.trace.see])
    assert np.all(np.diff(see) >= -1e-6)
    assert see_run.trace.termination in ("converged", "max_iter")


def test_terminates_by_fractional_test(see_run, sc_bcd):
    tr = see_run.trace
    assert tr.termination == "converged"
    see = np.concatenate([[tr.initial_see], tr.see])
    assert see[-1] - see[-2] < sc_bcd.tol * abs(see[-2])
    assert np.all(np.diff(see[:-1]) >= sc_bcd.tol * np.abs(see[:-2]))


def test_final_blocks_are_valid(see_run, sc_bcd):
    assert check_feasibility(see_run.plan, sc_bcd) == []
    assert see_run.schedule.violations() == []
    see_run.powers.validate(sc_bcd, tol=1e-9)
    m = see_run.metrics()
    assert m["see"] == pytest.approx(see_run.trace.see[-1], rel=1e-12)


def test_runs_are_deterministic(sc_bcd, see_run):
    again = run_see(sc_bcd)
    assert np.array_equal(again.plan.q, see_run.plan.q)
    assert np.array_equal(again.powers.p, see_run.powers.p)
    assert again.trace.to_dict(include_times=False) == see_run.trace.to_dict(include_times=False)


def test_circular_keeps_initial_plan(sc_bcd):
    res = run_benchmark(sc_bcd, "circular")
    assert res.plan.allclose(initial_plan(sc_bcd))
    assert np.all(np.diff(np.concatenate([[res.trace.initial_see], res.trace.see])) >= -1e-6)


def test_energy_min_uses_least_energy(sc_bcd, see_run):
    res = run_benchmark(sc_bcd, "energy_min")
    e_min = propulsion_energy(res.plan, sc_bcd).total
    assert e_min <= propulsion_energy(see_run.plan, sc_bcd).total * (1 + 1e-6)
    assert e_min <= propulsion_energy(initial_plan(sc_bcd), sc_bcd).total


def test_rate_max_reaches_most_secrecy(sc_bcd, see_run):
    res = run_benchmark(sc_bcd, "rate_max")
    assert res.metrics()["secrecy_sum_bps"] >= see_run.metrics()["secrecy_sum_bps"] * (1 - 1e-6)
    # rate_max tracks the secrecy sum, which must not fall between iterations
    sec = [r.secrecy_sum for r in res.trace.records]
    assert np.all(np.diff(sec) >= -1e-6 * max(sec))


def test_single_slot_smoke():
    sc = small_scenario(suavs=1, juavs=0, period=20.0, delta=20.0)
    assert sc.N == 1
    res = run_see(sc, RunOptions(max_iter=3))
    assert np.isfinite(res.metrics()["see"])
    assert check_feasibility(res.plan, sc) == []


def test_see_units():
    sc = small_scenario(period=20.0, delta=0.5)
    assert see_of(100.0, 4.0, sc, "bps-per-joule") == 25.0
    assert see_of(100.0, 4.0, sc, "bits-per-joule") == 12.5


@pytest.mark.parametrize("field,value", [("scheme", "fastest"), ("scheduler", "random"),
                                         ("see_units", "nats"), ("max_iter", 0)])
def test_bad_options_rejected(field, value):
    with pytest.raises(ValueError):
        RunOptions(**{field: value})


def test_scheme_names_accept_dashes():
    assert RunOptions(scheme="energy-min").scheme == "energy_min"


def test_stage_failure_keeps_partial_trace(sc_bcd, monkeypatch):
    calls = {"n": 0}
    real = bcd.sca_power_loop

    def flaky(*args, **kw):
        calls["n"] += 1
        if calls["n"] == 2:
            raise RuntimeError("synthetic solver failure")
        return real(*args, **kw)

    monkeypatch.setattr(bcd, "sca_power_loop", flaky)
    with pytest.raises(RunError) as err:
        run_benchmark(sc_bcd, "circular", RunOptions(eps=0.0, max_iter=4))
    assert len(err.value.trace.records) == 1
    assert "synthetic" in err.value.trace.termination


def test_dump_programs(sc_bcd, tmp_path):
    run_benchmark(sc_bcd, "circular", RunOptions(max_iter=1, dump_dir=str(tmp_path)))
    files = sorted(tmp_path.iterdir())
    assert files and files[0].name.startswith("00001_power")
    assert "minimize" in files[0].read_text()


def test_sweep_records_failures_and_continues(sc_bcd):
    rows = sweep_period(sc_bcd, [3.0, 20.0], "circular", RunOptions(max_iter=1), slots=20)
    assert rows[0].error and "too short" in rows[0].error
    assert not rows[1].error and np.isfinite(rows[1].see)


def test_radius_cap_rejects_short_period():
    with pytest.raises(ValueError):
        radius_cap(small_scenario(period=3.0, delta=1.0))


def test_presets_share_geometry():
    a, b, c = (preset_scenario(n, seed=3) for n in "ABC")
    assert np.array_equal(a.legit_users, b.legit_users)
    assert np.array_equal(a.eavesdroppers, b.eavesdroppers)
    assert (a.M2, a.M1, b.M2, b.M1, c.M2, c.M1) == (1, 0, 1, 1, 2, 2)
    assert b.N == 40 and b.slot_delta == 1.0
    assert preset_scenario("B", seed=3) == b
    assert preset_scenario("B", seed=4) != b


def test_default_geometry_keeps_eavesdroppers_apart():
    rng = np.random.default_rng(11)
    for _ in range(50):
        users, eves = default_geometry(3, 2, rng)
        assert np.all(np.linalg.norm(users, axis=1) <= 400.0)
        gaps = np.linalg.norm(users[:, None] - eves[None], axis=2)
        assert np.all(gaps >= 200.0)
        off = np.linalg.norm(eves - users.mean(axis=0), axis=1)
        assert np.all((off >= 300.0) & (off <= 600.0))
