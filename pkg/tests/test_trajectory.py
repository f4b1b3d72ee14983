import math

import numpy as np
import pytest

from conftest import small_scenario
from seeuav.bcd import initial_plan, initial_powers
from seeuav.convex import Affine, ConvexProgram, Linear, SquaredNorm, solve
from seeuav.kinematics import TrajectoryPlan, check_feasibility, circular_initializer, propulsion_energy
from seeuav.link import PowerSchedule, ScheduleMatrix, pair_secrecy_table, secrecy_report
from seeuav.scheduling import greedy_schedule, prune_nonpositive
from seeuav.trajectory import (DINKELBACH_EPS, MU_MIN, TrajectoryError, TrajectoryTrace, assemble_p33,
                               dinkelbach, dinkelbach_generic, sca_trajectory_loop, true_see)


def staged(sc):
    plan, powers = initial_plan(sc), initial_powers(sc)
    table = pair_secrecy_table(plan, powers, sc)
    return plan, powers, prune_nonpositive(greedy_schedule(table), table)


@pytest.fixture(scope="module")
def jam_case():
    sc = small_scenario(suavs=1, juavs=1, period=20.0, delta=1.0)
    return (sc,) + staged(sc)


@pytest.fixture(scope="module")
def solved(jam_case):
    sc, plan, powers, x = jam_case
    p33 = assemble_p33(x, powers, plan, 0.0, sc)
    rep = solve(p33.prog, warm_start=p33.x0)
    assert rep.ok, rep.message
    return p33, rep.x


def test_tight_start_reproduces_true_values(jam_case):
    sc, plan, powers, x = jam_case
    zeta = 3e-3
    p33 = assemble_p33(x, powers, plan, zeta, sc, margin=0.0)
    table = pair_secrecy_table(plan, powers, sc)
    included = sum(table[k, m, n - 1] for k, m, n in p33.pairs)
    assert p33.secrecy_sum(p33.x0) * sc.bandwidth == pytest.approx(included, rel=1e-9)
    true_e = propulsion_energy(plan, sc).total
    assert p33.energy(p33.x0) == pytest.approx(true_e, rel=1e-9)
    # the program objective is the negated parametric value
    cp = p33.prog.compile()
    f0 = cp.evaluate(p33.x0, derivs=False).f0
    assert -f0 == pytest.approx(p33.secrecy_sum(p33.x0) - zeta * true_e, rel=1e-6)


def test_margin_start_is_strictly_feasible(jam_case):
    sc, plan, powers, x = jam_case
    p33 = assemble_p33(x, powers, plan, 1e-3, sc)
    cp = p33.prog.compile()
    ev = cp.evaluate(p33.x0, derivs=False)
    assert ev.ok and np.all(ev.rows < 0)
    assert np.max(np.abs(cp.equality_residual(p33.x0))) < 1e-8


def test_signal_slacks_tight_at_optimum(solved):
    p33, xs = solved
    sc = p33.sc
    H2 = sc.altitude**2
    pw = initial_powers(sc).p
    jj, ii = p33.idx["S_pairs"]
    assert jj.size > 0
    S, z = xs[p33.idx["S"]], xs[p33.idx["z"]]
    for t, (j, i) in enumerate(zip(jj, ii)):
        n = p33.pairs[j][2]
        # e^z (H^2 + S) / (p b0), with z measured against the noise floor
        ratio = math.exp(z[t]) * (H2 + S[t]) * sc.noise_power / (pw[i, n - 1] * sc.beta0)
        assert abs(ratio - 1.0) <= 1e-5


def test_interference_log_chain_consistent(solved):
    # B w equals the interference log evaluated at the slack distances
    p33, xs = solved
    sc = p33.sc
    H2 = sc.altitude**2
    pw = initial_powers(sc).p
    jj, ii = p33.idx["S_pairs"]
    S, w = xs[p33.idx["S"]], xs[p33.idx["w"]]
    for j in np.unique(jj):
        n = p33.pairs[j][2]
        rx = sum(pw[i, n - 1] * sc.beta0 / (H2 + S[t]) for t, i in zip(np.flatnonzero(jj == j), ii[jj == j]))
        assert abs(w[j] - (math.log2(rx + sc.noise_power) - math.log2(sc.noise_power))) <= 1e-5


def test_distance_slacks_bind_at_linearization(solved, jam_case):
    sc, plan_r, _, _ = jam_case
    p33, xs = solved
    q = xs[p33.idx["q"]]
    jj, ii = p33.idx["S_pairs"]
    S = xs[p33.idx["S"]]
    for t, (j, i) in enumerate(zip(jj, ii)):
        k, _, n = p33.pairs[j]
        d = plan_r.q[i, n] - sc.legit_users[k]
        chi = d @ d + 2 * d @ (q[i, n] - plan_r.q[i, n])
        assert S[t] == pytest.approx(chi, rel=1e-6, abs=1e-3)


def test_speed_slack_binds_when_energy_active(jam_case):
    sc, plan, powers, x = jam_case
    p33 = assemble_p33(x, powers, plan, 5e-3, sc)
    rep = solve(p33.prog, warm_start=p33.x0)
    assert rep.ok
    v = rep.x[p33.idx["v"]][:, 1:, :]
    mu = rep.x[p33.idx["mu"]]
    vr = plan.v[:, 1:-1, :]
    ups = np.sum(vr * vr, axis=2) + 2 * np.sum(vr * (v - vr), axis=2)
    assert np.all(mu >= MU_MIN - 1e-9)
    assert np.allclose(mu**2, ups, rtol=1e-5)


def test_optimum_plan_is_feasible(solved):
    p33, xs = solved
    assert check_feasibility(p33.plan(xs), p33.sc) == []


def test_empty_schedule_has_no_rate_terms(jam_case):
    sc, plan, powers, _ = jam_case
    p33 = assemble_p33(ScheduleMatrix.empty(sc), powers, plan, 1e-3, sc)
    assert p33.pairs == []
    assert p33.secrecy_sum(p33.x0) == 0.0


def test_negative_zeta_rejected(jam_case):
    sc, plan, powers, x = jam_case
    with pytest.raises(TrajectoryError):
        assemble_p33(x, powers, plan, -1.0, sc)


def test_slow_expansion_point_is_rescaled():
    sc = small_scenario(suavs=1, juavs=0, period=20.0, delta=1.0)
    base = initial_plan(sc)
    v = np.array(base.v)
    v[0, 5] *= 0.1 / np.linalg.norm(v[0, 5])          # below mu_min, same heading
    plan = TrajectoryPlan(base.q, v, base.a, base.delta)
    p33 = assemble_p33(ScheduleMatrix.empty(sc), initial_powers(sc), plan, 1e-3, sc, include_rates=False)
    # the guard keeps mu_min feasible, so the program still solves
    assert solve(p33.prog, warm_start=p33.x0).ok


# ------------------------------------------------------------ Dinkelbach

def ratio_step(zeta, warm):
    """max x - zeta x^2 over [1, 2], solved with the barrier method."""
    prog = ConvexProgram()
    xv = prog.variable("x", 1)
    prog.minimize(Linear(-Affine.of(xv)), SquaredNorm([Affine.of(xv)], zeta))
    prog.leq(1.0 - Affine.of(xv), 0.0)
    prog.leq(Affine.of(xv), 2.0)
    rep = solve(prog)
    assert rep.ok
    x = float(rep.x[0])
    return x, x, x * x


def test_scalar_ratio_converges_to_one():
    x, st = dinkelbach_generic(ratio_step, eps=1e-9)
    assert st.status == "optimal"
    assert x / x**2 == pytest.approx(1.0, abs=1e-4)
    assert x == pytest.approx(1.0, abs=1e-4)
    F = [f for _, f in st.history]
    assert np.all(np.diff(F) < 0)


def test_scalar_ratio_fixed_point_stops_at_once():
    _, st = dinkelbach_generic(ratio_step, zeta0=1.0, eps=1e-9)
    assert st.iteration == 1 and st.status == "optimal"


def test_dinkelbach_detects_increasing_F():
    values = iter([(None, 3.0, 1.0), (None, 10.0, 1.0)])
    _, st = dinkelbach_generic(lambda z, w: next(values), zeta0=0.0)
    assert st.status == "numeric_failure"


def test_dinkelbach_on_trajectory_program(jam_case):
    sc, plan, powers, x = jam_case
    new, st, sol = dinkelbach(x, powers, plan, sc)
    F = np.array([f for _, f in st.history])
    assert st.status == "optimal"
    assert F[0] >= 0.0
    assert np.all(np.diff(F) < 0)
    assert abs(F[-1]) <= DINKELBACH_EPS
    # restarting at the returned ratio is a fixed point
    _, st2, _ = dinkelbach(x, powers, plan, sc, zeta0=st.zeta)
    assert st2.iteration == 1


# ------------------------------------------------------------ SCA loop

def test_sca_improves_circular_start():
    sc = small_scenario(suavs=1, juavs=0, period=40.0, delta=1.0)
    plan, powers, x = staged(sc)
    trace = TrajectoryTrace()
    final = sca_trajectory_loop(x, powers, plan, sc, trace=trace)
    assert true_see(final, powers, x, sc) >= true_see(plan, powers, x, sc)
    rows = [r for r in trace.rows if "true_metric" in r]
    vals = [true_see(plan, powers, x, sc)] + [r["true_metric"] for r in rows if r["accepted"]]
    assert np.all(np.diff(vals) >= -1e-6 * abs(vals[0]))
    assert check_feasibility(final, sc) == []


def test_sca_iterates_stay_feasible(jam_case):
    sc, plan, powers, x = jam_case
    cur = plan
    for _ in range(3):
        nxt = sca_trajectory_loop(x, powers, cur, sc, max_iter=1)
        assert check_feasibility(nxt, sc) == []
        assert true_see(nxt, powers, x, sc) >= true_see(cur, powers, x, sc) * (1 - 1e-9)
        cur = nxt


def test_energy_mode_lowers_energy(jam_case):
    sc, plan, powers, x = jam_case
    final = sca_trajectory_loop(x, powers, plan, sc, mode="energy")
    assert propulsion_energy(final, sc).total <= propulsion_energy(plan, sc).total


def test_secrecy_mode_raises_secrecy(jam_case):
    sc, plan, powers, x = jam_case
    final = sca_trajectory_loop(x, powers, plan, sc, mode="secrecy", max_iter=3)
    before = secrecy_report(plan, powers, x, sc).secrecy_sum
    assert secrecy_report(final, powers, x, sc).secrecy_sum >= before


def test_unknown_mode_rejected(jam_case):
    sc, plan, powers, x = jam_case
    with pytest.raises(TrajectoryError):
        sca_trajectory_loop(x, powers, plan, sc, mode="fastest")
