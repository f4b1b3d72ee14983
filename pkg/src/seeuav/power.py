"""Transmit-power design by successive convex approximation.

Rates are handled in normalized form: gains are divided by the noise power
and rates by the bandwidth, so every log reads ``log2(1 + sum_i g_i p_i)``.
The ``log2(noise)`` offsets cancel in every rate difference.
"""

from __future__ import annotations

import csv
import io
import logging
import math
from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from .convex import Affine, ConvexProgram, Linear, NegLog, solve
from .kinematics import TrajectoryPlan
from .link import PowerSchedule, ScheduleMatrix, gains, secrecy_report
from .scenario import Scenario

log = logging.getLogger(__name__)

LN2 = math.log(2.0)
INNER_TOL = 1e-3
INNER_MAX_ITER = 30
INTERIOR = 1e-6

DumpHook = Callable[[str, ConvexProgram], None]


class PowerError(RuntimeError):
    pass


@dataclass(frozen=True)
class AffineBound:
    """Affine function ``const + slopes . (p - p_ref)`` in bps; ``p`` is the slot's UAV power vector."""

    const: float
    slopes: np.ndarray
    p_ref: np.ndarray

    def __call__(self, p) -> float:
        return float(self.const + self.slopes @ (np.asarray(p, dtype=float) - self.p_ref))


def log_affine_tangent(a, b: float, x_ref, scale: float = 1.0) -> AffineBound:
    """First-order expansion of ``scale * log2(a . x + b)`` at ``x_ref``.

    The log of an affine function is concave, so for ``scale > 0`` the
    expansion over-estimates it wherever ``a . x + b > 0``.
    """
    a = np.asarray(a, dtype=float)
    x_ref = np.array(x_ref, dtype=float)
    s = float(a @ x_ref) + b
    if s <= 0:
        raise ValueError("expansion point outside the log domain")
    return AffineBound(scale * math.log2(s), scale * a / (s * LN2), x_ref)


def _log_tangent(h: np.ndarray, mask: np.ndarray, p_ref: np.ndarray, sc: Scenario) -> AffineBound:
    """Tangent upper bound of ``B log2(sum_{i in mask} p_i h_i + noise)`` at ``p_ref``."""
    return log_affine_tangent(np.where(mask, h, 0.0), sc.noise_power, p_ref, sc.bandwidth)


def _slot_gains(node, n: int, plan: TrajectoryPlan, sc: Scenario) -> np.ndarray:
    return gains(np.atleast_2d(node), plan, sc)[0, :, n - 1]


def build_tilde_upper(k2: int, m2: int, n: int, p_r: PowerSchedule, plan: TrajectoryPlan,
                      sc: Scenario) -> AffineBound:
    """Upper bound on the interference log of user ``k2`` served by SUAV ``m2`` in slot ``n`` (1-based)."""
    h = _slot_gains(sc.legit_users[k2], n, plan, sc)
    mask = np.ones(sc.uav_count, dtype=bool)
    mask[m2] = False
    return _log_tangent(h, mask, p_r.p[:, n - 1], sc)


def build_bar_upper(k1: int, m2: int, n: int, p_r: PowerSchedule, plan: TrajectoryPlan,
                    sc: Scenario) -> AffineBound:
    """Upper bound on the total-power log at eavesdropper ``k1``; independent of ``m2``."""
    h = _slot_gains(sc.eavesdroppers[k1], n, plan, sc)
    return _log_tangent(h, np.ones(sc.uav_count, dtype=bool), p_r.p[:, n - 1], sc)


@dataclass
class PowerResult:
    powers: PowerSchedule
    objective: float                 # surrogate sum of tau, bps summed over slots
    tau: np.ndarray                  # (K2, N) bps
    gamma: np.ndarray                # (K2, N) bps
    newton_iterations: int = 0


def _pairs(schedule: ScheduleMatrix, slots: list[int]):
    out = []
    for n in slots:
        for k2, m2 in np.argwhere(schedule.x[:, :, n - 1]):
            out.append((int(k2), int(m2), n))
    return out


def _build(schedule: ScheduleMatrix, plan: TrajectoryPlan, p_r: PowerSchedule, sc: Scenario,
           slots: list[int]):
    """Assemble the power program over ``slots`` (1-based); returns program, start point, layout."""
    m = sc.uav_count
    pairs = _pairs(schedule, slots)
    slot_pos = {n: j for j, n in enumerate(slots)}
    gl = gains(sc.legit_users, plan, sc) / sc.noise_power      # (K2, M, N)
    ge = gains(sc.eavesdroppers, plan, sc) / sc.noise_power    # (K1, M, N)
    k1 = sc.K1
    prog = ConvexProgram(name="power")
    P = prog.variable("p", (len(slots), m))
    T = prog.variable("tau", len(pairs))
    G = prog.variable("gamma", len(pairs))
    pr = np.clip(p_r.p, INTERIOR * sc.p_max, (1.0 - INTERIOR) * sc.p_max)
    x0 = np.zeros(prog.n)
    for n in slots:
        x0[P[slot_pos[n]]] = pr[:, n - 1]

    kk = np.array([k for k, _, _ in pairs], dtype=int)
    mm = np.array([s for _, s, _ in pairs], dtype=int)
    nn = np.array([n for _, _, n in pairs], dtype=int)
    rows_p = P[[slot_pos[n] for n in nn]]                     # (pairs, M) variable indices
    interf = np.ones((len(pairs), m), dtype=bool)
    interf[np.arange(len(pairs)), mm] = False
    pref = pr[:, nn - 1].T                                     # (pairs, M)

    # legitimate side: tau + gamma + tildeR_up(p) - log2(1 + sum_i g p) <= 0
    g_leg = gl[kk, :, nn - 1]                                  # (pairs, M)
    g_int = np.where(interf, g_leg, 0.0)
    a_r = 1.0 + np.sum(g_int * pref, axis=1)
    slope = g_int / (a_r[:, None] * LN2)
    const = np.log2(a_r) - np.sum(slope * pref, axis=1)
    lin = Affine.of(T) + Affine.of(G) + const
    full = Affine.const(np.ones(len(pairs)))
    for i in range(m):
        lin = lin + Affine.of(rows_p[:, i], slope[:, i])
        full = full + Affine.of(rows_p[:, i], g_leg[:, i])
    prog.subject_to([Linear(lin), NegLog(full, 1.0 / LN2)], "secrecy")

    # eavesdropper side: barR_up(p) - log2(1 + sum_{interferers} g p) - gamma <= 0, every k1
    if k1:
        rep = np.repeat(np.arange(len(pairs)), k1)
        ke = np.tile(np.arange(k1), len(pairs))
        g_eve = ge[ke, :, nn[rep] - 1]                          # (pairs*K1, M)
        pref_e = pref[rep]
        a_e = 1.0 + np.sum(g_eve * pref_e, axis=1)
        slope_e = g_eve / (a_e[:, None] * LN2)
        const_e = np.log2(a_e) - np.sum(slope_e * pref_e, axis=1)
        lin_e = Affine.const(const_e) - Affine.of(G[rep])
        intf_e = Affine.const(np.ones(rep.size))
        rp = rows_p[rep]
        ie = interf[rep]
        for i in range(m):
            lin_e = lin_e + Affine.of(rp[:, i], slope_e[:, i])
            intf_e = intf_e + Affine.of(rp[:, i], np.where(ie[:, i], g_eve[:, i], 0.0))
        prog.subject_to([Linear(lin_e), NegLog(intf_e, 1.0 / LN2)], "eavesdropper")

    pv = Affine.of(P)
    prog.leq(pv, sc.p_max, "p_max")
    prog.leq(-pv, 0.0, "p_min")
    prog.minimize(Linear(-Affine.of(T)))

    # strictly feasible start from the clipped expansion point
    cp = prog.compile()
    x0[G] = 0.0
    x0[T] = 0.0
    rows = cp.evaluate(x0, derivs=False).rows
    npair = len(pairs)
    leg_val = -rows[:npair]                                    # legit value minus (tau + gamma) at 0
    if k1:
        eve_val = rows[npair:npair + npair * k1].reshape(npair, k1).max(axis=1)
    else:
        eve_val = np.zeros(npair)
    x0[G] = eve_val + 1.0
    x0[T] = leg_val - x0[G] - 1.0
    layout = {"pairs": pairs, "P": P, "T": T, "G": G, "slot_pos": slot_pos}
    return prog, x0, layout


def _solve_slots(schedule, plan, p_r, sc, slots, dump: DumpHook | None):
    prog, x0, lay = _build(schedule, plan, p_r, sc, slots)
    if dump is not None:
        dump(prog.name, prog)
    rep = solve(prog, warm_start=x0)
    return rep, lay


def solve_p21(schedule: ScheduleMatrix, plan: TrajectoryPlan, p_r: PowerSchedule, sc: Scenario,
              per_slot: bool = False, dump: DumpHook | None = None) -> PowerResult:
    """One surrogate power step. Slots without scheduled pairs keep ``p_r``.

    The slot programs are independent, so by default they are stacked into one
    block-diagonal program; ``per_slot=True`` solves them one at a time.
    """
    p_r.validate(sc, tol=1e-9)
    active = [n + 1 for n in range(sc.N) if schedule.x[:, :, n].any()]
    p_new = np.clip(np.array(p_r.p), 0.0, sc.p_max)
    tau = np.zeros((sc.K2, sc.N))
    gamma = np.zeros((sc.K2, sc.N))
    if not active:
        return PowerResult(PowerSchedule(p_new), 0.0, tau, gamma)
    groups = [[n] for n in active] if per_slot else [active]
    newton = 0
    for slots in groups:
        rep, lay = _solve_slots(schedule, plan, p_r, sc, slots, dump)
        if not rep.ok:
            if len(slots) > 1:
                log.debug("joint power solve failed (%s); retrying per slot", rep.message)
                return solve_p21(schedule, plan, p_r, sc, per_slot=True, dump=dump)
            raise PowerError(f"power program for slot {slots[0]} failed: {rep.status} ({rep.message})")
        newton += rep.newton_iterations
        x = rep.x
        for n, j in lay["slot_pos"].items():
            p_new[:, n - 1] = np.clip(x[lay["P"][j]], 0.0, sc.p_max)
        for (k2, _, n), ti, gi in zip(lay["pairs"], lay["T"], lay["G"]):
            tau[k2, n - 1] = x[ti] * sc.bandwidth
            gamma[k2, n - 1] = x[gi] * sc.bandwidth
    return PowerResult(PowerSchedule(p_new), float(tau.sum()), tau, gamma, newton)


@dataclass
class PowerTrace:
    objective: list[float] = field(default_factory=list)     # true secrecy sum (bps over slots)
    surrogate: list[float] = field(default_factory=list)
    iterations: int = 0


def true_objective(schedule: ScheduleMatrix, plan: TrajectoryPlan, powers: PowerSchedule,
                   sc: Scenario) -> float:
    return secrecy_report(plan, powers, schedule, sc).secrecy_sum


def sca_power_loop(schedule: ScheduleMatrix, plan: TrajectoryPlan, p_init: PowerSchedule,
                   sc: Scenario, tol: float = INNER_TOL, max_iter: int = INNER_MAX_ITER,
                   trace: PowerTrace | None = None, dump: DumpHook | None = None) -> PowerSchedule:
    """Iterate the surrogate step until the true objective improves by less than ``tol`` (relative).

    A step that lowers the true objective is rejected and the loop stops, so
    the returned objective never falls below that of ``p_init``.
    """
    trace = trace if trace is not None else PowerTrace()
    cur = p_init
    cur_obj = true_objective(schedule, plan, cur, sc)
    trace.objective.append(cur_obj)
    for it in range(max_iter):
        res = solve_p21(schedule, plan, cur, sc, dump=dump)
        trace.iterations = it + 1
        trace.surrogate.append(res.objective)
        new_obj = true_objective(schedule, plan, res.powers, sc)
        if new_obj < cur_obj:
            log.debug("power step lowered the objective (%.6g < %.6g); keeping incumbent", new_obj, cur_obj)
            break
        gain = new_obj - cur_obj
        cur, cur_obj = res.powers, new_obj
        trace.objective.append(cur_obj)
        if gain <= tol * max(abs(cur_obj), 1e-12):
            break
    return cur


def power_to_csv(powers: PowerSchedule) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["uav_id", "slot", "watts"])
    for i in range(powers.p.shape[0]):
        for n in range(powers.p.shape[1]):
            w.writerow([i, n + 1, f"{powers.p[i, n]:.12g}"])
    return buf.getvalue()


def power_from_csv(text: str, m: int, n_slots: int) -> PowerSchedule:
    p = np.full((m, n_slots), np.nan)
    for row in csv.DictReader(io.StringIO(text)):
        p[int(row["uav_id"]), int(row["slot"]) - 1] = float(row["watts"])
    if np.isnan(p).any():
        raise ValueError("power CSV has missing (uav, slot) rows")
    return PowerSchedule(p)
