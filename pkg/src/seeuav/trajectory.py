"""Trajectory design: surrogate bounds, the parametric program, Dinkelbach and the SCA loop.

Inside the convex program every rate is divided by the bandwidth and every
log auxiliary is shifted by the noise power:

    z' = z - ln(noise),   w' = w - log2(noise)

so the exponential constraints read ``exp(-z' + ln(p b0 / (noise H^2))) <= 1 + S / H^2``
and the log-sum-exp epigraphs read ``w' >= log2(sum exp(z') + 1)``. Secrecy
slacks are therefore in bits/s/Hz and the Dinkelbach parameter in
(bits/s/Hz) per joule.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from .convex import (Affine, ConvexProgram, CubedNorm, Exp, Linear, LogSumExp, QuadOverLin,
                     Reciprocal, SolveReport, SquaredNorm, solve)
from .kinematics import TrajectoryPlan, propulsion_energy
from .link import PowerSchedule, ScheduleMatrix, pair_secrecy_table, secrecy_report
from .scenario import Scenario

log = logging.getLogger(__name__)

LN2 = math.log(2.0)
MU_MIN = 1.0
DINKELBACH_EPS = 1e-2
DINKELBACH_MAX_ITER = 30
SCA_TOL = 1e-3
SCA_MAX_ITER = 20
POWER_FLOOR = 1e-15    # UAVs at or below this fraction of P_max are treated as silent

DumpHook = Callable[[str, ConvexProgram], None]


class TrajectoryError(RuntimeError):
    pass


# ---------------------------------------------------------------- bounds

def taylor_speed_lb(v, v_r):
    """First-order lower bound of ``|v|^2`` around ``v_r`` (last axis is the 2-D vector)."""
    v, v_r = np.asarray(v, dtype=float), np.asarray(v_r, dtype=float)
    return np.sum(v_r * v_r, axis=-1) + 2.0 * np.sum(v_r * (v - v_r), axis=-1)


def taylor_dist_lb(q, q_r, w):
    """First-order lower bound of ``|q - w|^2`` around ``q_r``."""
    q, q_r, w = (np.asarray(a, dtype=float) for a in (q, q_r, w))
    d = q_r - w
    return np.sum(d * d, axis=-1) + 2.0 * np.sum(d * (q - q_r), axis=-1)


@dataclass(frozen=True)
class DistanceBound:
    """``const - sum_i coef_i (|q_i - w|^2 - d_ref_i)`` in bps; exact when every ``|q_i - w|^2 = d_ref_i``."""

    const: float
    coef: np.ndarray
    d_ref: np.ndarray
    node: np.ndarray

    def __call__(self, q_slot) -> float:
        d = np.sum((np.asarray(q_slot, dtype=float) - self.node) ** 2, axis=-1)
        return float(self.const - self.coef @ (d - self.d_ref))


def _log_dist_bound(node, q_ref_slot, p_slot, mask, sc: Scenario) -> DistanceBound:
    """Tangent lower bound of ``B log2(sum_{i in mask} p_i b0 / (H^2 + d_i) + noise)`` in the ``d_i``."""
    node = np.asarray(node, dtype=float)
    d_r = np.sum((np.asarray(q_ref_slot) - node) ** 2, axis=-1)
    rx = np.where(mask, p_slot * sc.beta0 / (sc.altitude**2 + d_r), 0.0)
    a = float(rx.sum()) + sc.noise_power
    coef = sc.bandwidth * rx / ((sc.altitude**2 + d_r) * a * LN2)
    return DistanceBound(sc.bandwidth * math.log2(a), coef, d_r, node)


def build_bar_lb(k2: int, m2: int, n: int, q_r: TrajectoryPlan, powers: PowerSchedule,
                 sc: Scenario) -> DistanceBound:
    """Lower bound on the total received-power log at user ``k2`` in slot ``n`` (1-based)."""
    mask = np.ones(sc.uav_count, dtype=bool)
    return _log_dist_bound(sc.legit_users[k2], q_r.q[:, n], powers.p[:, n - 1], mask, sc)


def build_tilde_lb(k1: int, m2: int, n: int, q_r: TrajectoryPlan, powers: PowerSchedule,
                   sc: Scenario) -> DistanceBound:
    """Lower bound on the interference log at eavesdropper ``k1`` when SUAV ``m2`` transmits."""
    mask = np.ones(sc.uav_count, dtype=bool)
    mask[m2] = False
    return _log_dist_bound(sc.eavesdroppers[k1], q_r.q[:, n], powers.p[:, n - 1], mask, sc)


# ---------------------------------------------------------------- program

@dataclass
class P33:
    """Assembled program plus the index layout needed to read a solution back."""

    prog: ConvexProgram
    zeta: float
    idx: dict
    pairs: list
    x0: np.ndarray
    sc: Scenario
    include_rates: bool
    include_energy: bool

    def plan(self, x: np.ndarray) -> TrajectoryPlan:
        q = x[self.idx["q"]]
        v = x[self.idx["v"]]
        a = x[self.idx["a"]]
        wrap = lambda arr: np.concatenate([arr, arr[:, :1]], axis=1)
        return TrajectoryPlan(wrap(q), wrap(v), wrap(a), self.sc.slot_delta)

    def secrecy_sum(self, x: np.ndarray) -> float:
        """Sum of secrecy slacks, bits/s/Hz summed over slots."""
        return float(np.sum(x[self.idx["Phi"]])) if "Phi" in self.idx else 0.0

    def energy(self, x: np.ndarray) -> float:
        """Surrogate propulsion energy (joules) with the speed slack in place of the speed."""
        sc = self.sc
        v = x[self.idx["v"]][:, 1:, :]
        a = x[self.idx["a"]][:, 1:, :]
        mu = x[self.idx["mu"]]
        sp = np.linalg.norm(v, axis=2)
        acc2 = np.sum(a * a, axis=2)
        return float(sc.slot_delta * np.sum(sc.c1 * sp**3 + sc.c2 / mu + sc.c2 * acc2 / (mu * sc.gravity**2)))


def _scheduled_pairs(schedule: ScheduleMatrix, plan_r: TrajectoryPlan, powers: PowerSchedule,
                     sc: Scenario, positive_only: bool):
    pairs = [(int(k), int(m), int(n) + 1) for k, m, n in np.argwhere(schedule.x)]
    if positive_only and pairs:
        tab = pair_secrecy_table(plan_r, powers, sc)
        pairs = [(k, m, n) for k, m, n in pairs if tab[k, m, n - 1] > 0.0]
    return sorted(pairs, key=lambda t: (t[2], t[0]))


def _sq(Q, uav, slot, node):
    """Per-instance 2-D affine pieces of ``q_uav[slot] - node``."""
    return [Affine.of(Q[uav, slot, d]) - node[:, d] for d in range(2)]


def assemble_p33(schedule: ScheduleMatrix, powers: PowerSchedule, plan_r: TrajectoryPlan,
                 zeta: float, sc: Scenario, include_rates: bool = True,
                 include_energy: bool = True, positive_only: bool = True,
                 margin: float = 1e-6) -> P33:
    """Build the parametric trajectory program ``max sum Phi - zeta * E~``.

    ``include_rates=False`` leaves only kinematics and energy (energy-minimizing
    benchmark); ``zeta=0`` drops the energy from the objective. Pairs whose
    secrecy is not positive at ``plan_r`` are left out when ``positive_only``.
    ``x0`` is a strictly feasible start built from ``plan_r`` with relative
    slack ``margin`` (``margin=0`` gives the tight point, useful for checks).
    """
    if zeta < 0:
        raise TrajectoryError("zeta must be non-negative")
    m, n_slots, d = sc.uav_count, sc.N, sc.slot_delta
    prog = ConvexProgram(name=f"trajectory(zeta={zeta:.6g})")
    Q = prog.variable("q", (m, n_slots + 1, 2))
    V = prog.variable("v", (m, n_slots + 1, 2))
    A = prog.variable("a", (m, n_slots + 1, 2))
    MU = prog.variable("mu", (m, n_slots))
    idx = {"q": Q, "v": V, "a": A, "mu": MU}
    x0 = np.zeros(prog.n)
    x0[Q] = plan_r.q[:, :-1]
    x0[V] = plan_r.v[:, :-1]
    x0[A] = plan_r.a[:, :-1]

    # kinematics with periodic wrap-around
    nxt = (np.arange(n_slots + 1) + 1) % (n_slots + 1)
    prog.equal(Affine.of(Q[:, nxt]) - Affine.of(Q) - Affine.of(V, d) - Affine.of(A, 0.5 * d * d), "position")
    prog.equal(Affine.of(V[:, nxt]) - Affine.of(V) - Affine.of(A, d), "velocity")
    k_all = m * (n_slots + 1)
    prog.subject_to([SquaredNorm([Affine.of(V[..., 0]), Affine.of(V[..., 1])]),
                     Linear(Affine.const(np.full(k_all, -sc.v_max**2)))], "speed")
    prog.subject_to([SquaredNorm([Affine.of(A[..., 0]), Affine.of(A[..., 1])]),
                     Linear(Affine.const(np.full(k_all, -sc.a_max**2)))], "acceleration")

    # speed slack: mu_min <= mu, mu^2 <= linearized |v|^2 (traffic slots only)
    vt = plan_r.v[:, 1:-1, :]
    vhat = vt.copy()
    slow = np.sum(vt * vt, axis=2) < MU_MIN**2
    if np.any(slow):
        nrm = np.linalg.norm(vt, axis=2, keepdims=True)
        dirn = np.where(nrm > 0, vt / np.where(nrm > 0, nrm, 1.0), np.array([1.0, 0.0]))
        vhat = np.where(slow[..., None], 2.0 * MU_MIN * dirn, vt)
    ups = (Affine.of(V[:, 1:, 0], 2.0 * vhat[..., 0]) + Affine.of(V[:, 1:, 1], 2.0 * vhat[..., 1])
           - np.sum(vhat * vhat, axis=2))
    prog.leq(MU_MIN - Affine.of(MU), 0.0, "mu_min")
    prog.subject_to([SquaredNorm([Affine.of(MU)]), Linear(-ups)], "speed_slack")
    ups0 = taylor_speed_lb(vt, vhat)
    mu0 = np.sqrt(np.maximum(ups0, 0.0))
    if margin:
        mu0 = mu0 * math.sqrt(1.0 - 1e-3)
    # phase I repairs the start if the floor pushes mu past the slack row
    x0[MU] = np.maximum(mu0, MU_MIN * (1.0 + 1e-3))

    if include_energy and zeta > 0:
        vv = [Affine.of(V[:, 1:, 0]), Affine.of(V[:, 1:, 1])]
        aa = [Affine.of(A[:, 1:, 0]), Affine.of(A[:, 1:, 1])]
        prog.minimize(CubedNorm(vv, zeta * d * sc.c1),
                      Reciprocal(Affine.of(MU), zeta * d * sc.c2),
                      QuadOverLin(aa, Affine.of(MU), zeta * d * sc.c2 / sc.gravity**2))

    pairs = _scheduled_pairs(schedule, plan_r, powers, sc, positive_only) if include_rates else []
    if pairs:
        x0 = _add_rate_constraints(prog, idx, x0, pairs, powers, plan_r, sc, margin)
    # a UAV whose positions enter no atom is free to translate rigidly, which
    # leaves the Newton system singular; pin its first position instead
    used = np.zeros(prog.n, dtype=bool)
    for atom, _ in prog.all_atoms():
        used[atom.arg.cols] = True
    for i in range(m):
        if not used[Q[i]].any():
            prog.equal(Affine.of(Q[i, 0]) - plan_r.q[i, 0], "anchor")
    return P33(prog, zeta, idx, pairs, x0, sc, include_rates, include_energy)


def _put(x0: np.ndarray, prog: ConvexProgram, index, values) -> np.ndarray:
    """Write start values, growing ``x0`` to the current variable count."""
    if x0.size < prog.n:
        x0 = np.concatenate([x0, np.zeros(prog.n - x0.size)])
    x0[index] = values
    return x0


def _add_rate_constraints(prog, idx, x0, pairs, powers, plan_r, sc: Scenario, margin: float):
    m = sc.uav_count
    Q = idx["q"]
    H2 = sc.altitude**2
    P = len(pairs)
    kk = np.array([p[0] for p in pairs])
    mm = np.array([p[1] for p in pairs])
    nn = np.array([p[2] for p in pairs])
    pw = powers.p[:, nn - 1].T                                  # (P, M)
    on = pw > POWER_FLOOR * sc.p_max
    interf = on.copy()
    interf[np.arange(P), mm] = False
    qr = plan_r.q[:, nn, :].transpose(1, 0, 2)                  # (P, M, 2)
    slack = lambda val: margin * (1.0 + np.abs(val))

    PHI = prog.variable("Phi", P)
    phi = prog.variable("phi", P)
    W = prog.variable("w", P)
    idx.update(Phi=PHI, phi=phi, w=W)
    prog.minimize(Linear(-Affine.of(PHI)))

    # legitimate side -------------------------------------------------
    wk = sc.legit_users[kk]                                     # (P, 2)
    d_r = np.sum((qr - wk[:, None, :]) ** 2, axis=2)            # (P, M)
    snr = np.where(on, pw * sc.beta0 / (sc.noise_power * (H2 + d_r)), 0.0)
    a_r = 1.0 + snr.sum(axis=1)
    c = snr / ((H2 + d_r) * a_r[:, None] * LN2)                # per-UAV slope in d
    bar_r = np.log2(a_r)

    ii_j, ii_i = np.nonzero(interf)                              # (j, i) interference terms
    T = ii_j.size
    S = prog.variable("S", T)
    Z = prog.variable("z", T)
    idx.update(S=S, z=Z, S_pairs=(ii_j, ii_i))
    L = np.log(pw[ii_j, ii_i] * sc.beta0 / (sc.noise_power * H2))
    prog.subject_to([Exp(Affine.of(Z, -1.0) + L), Linear(Affine.of(S, -1.0 / H2) - 1.0)], "signal_exp")
    node = wk[ii_j]
    chi_c = qr[ii_j, ii_i] - node
    chi = (np.sum(chi_c**2, axis=1) - 2.0 * np.sum(chi_c * qr[ii_j, ii_i], axis=1)
           + Affine.of(Q[ii_i, nn[ii_j], 0], 2.0 * chi_c[:, 0]) + Affine.of(Q[ii_i, nn[ii_j], 1], 2.0 * chi_c[:, 1]))
    prog.subject_to([Linear(Affine.of(S) - chi)], "chi")
    prog.subject_to([LogSumExp(Affine.of(Z), ii_j, np.ones(P), 1.0 / LN2), Linear(-Affine.of(W))], "w_epigraph")

    lin = Affine.of(PHI) + Affine.of(phi) + Affine.of(W) - (bar_r + np.sum(c * d_r, axis=1))
    atoms = [Linear(lin)]
    for i in range(m):
        if np.any(c[:, i] > 0):
            atoms.append(SquaredNorm(_sq(Q, np.full(P, i), nn, wk), c[:, i]))
    prog.subject_to(atoms, "secrecy")

    S0 = d_r[ii_j, ii_i] - slack(d_r[ii_j, ii_i])
    Z0 = L - np.log1p(S0 / H2) + (margin if margin else 0.0)
    x0 = _put(x0, prog, S, S0)
    x0 = _put(x0, prog, Z, Z0)
    lse0 = np.log2(1.0 + np.bincount(ii_j, weights=np.exp(Z0), minlength=P))
    W0 = lse0 + slack(lse0)
    x0 = _put(x0, prog, W, W0)

    # eavesdropper side: shared total-power auxiliaries per (k1, slot) -----
    k1n = sc.K1
    slots = np.unique(nn)
    spos = {int(s): j for j, s in enumerate(slots)}
    if k1n == 0:
        x0 = _put(x0, prog, phi, 0.0)
        x0 = _put(x0, prog, PHI, bar_r - W0 - slack(bar_r - W0))
        return x0
    WB = prog.variable("wbar", (k1n, slots.size))
    idx["wbar"] = WB
    pw_s = powers.p[:, slots - 1].T                              # (slots, M)
    on_s = pw_s > POWER_FLOOR * sc.p_max
    e_k, e_s, e_i = np.nonzero(np.broadcast_to(on_s[None], (k1n,) + on_s.shape))
    ZB = prog.variable("Zbar", e_k.size)
    zb = prog.variable("zbar", e_k.size)
    idx.update(Zbar=ZB, zbar=zb, Zbar_terms=(e_k, slots[e_s], e_i))
    we = sc.eavesdroppers[e_k]
    qe = plan_r.q[e_i, slots[e_s], :]
    de = np.sum((qe - we) ** 2, axis=1)
    Le = np.log(pw_s[e_s, e_i] * sc.beta0 / (sc.noise_power * H2))
    prog.subject_to([Exp(Affine.of(zb, -1.0) + Le), Linear(Affine.of(ZB, -1.0 / H2) - 1.0)], "eve_signal_exp")
    xi_c = qe - we
    xi = (np.sum(xi_c**2, axis=1) - 2.0 * np.sum(xi_c * qe, axis=1)
          + Affine.of(Q[e_i, slots[e_s], 0], 2.0 * xi_c[:, 0]) + Affine.of(Q[e_i, slots[e_s], 1], 2.0 * xi_c[:, 1]))
    prog.subject_to([Linear(Affine.of(ZB) - xi)], "xi")
    grp = e_k * slots.size + e_s
    order = np.argsort(grp, kind="stable")
    prog.subject_to([LogSumExp(Affine.of(zb[order]), grp[order], np.ones(k1n * slots.size), 1.0 / LN2),
                     Linear(-Affine.of(WB.ravel()))], "wbar_epigraph")
    ZB0 = de - slack(de)
    zb0 = Le - np.log1p(ZB0 / H2) + (margin if margin else 0.0)
    x0 = _put(x0, prog, ZB, ZB0)
    x0 = _put(x0, prog, zb, zb0)
    lse_e = np.log2(1.0 + np.bincount(grp, weights=np.exp(zb0), minlength=k1n * slots.size))
    WB0 = lse_e + slack(lse_e)
    x0 = _put(x0, prog, WB.ravel(), WB0)

    # per (pair, k1): wbar - tilde_lb - phi <= 0
    rj = np.repeat(np.arange(P), k1n)
    rk = np.tile(np.arange(k1n), P)
    wv = sc.eavesdroppers[rk]
    dv = np.sum((qr[rj] - wv[:, None, :]) ** 2, axis=2)          # (P*K1, M)
    ie = interf[rj]
    snr_e = np.where(ie, pw[rj] * sc.beta0 / (sc.noise_power * (H2 + dv)), 0.0)
    b_r = 1.0 + snr_e.sum(axis=1)
    ce = snr_e / ((H2 + dv) * b_r[:, None] * LN2)
    til_r = np.log2(b_r)
    wb_idx = WB[rk, [spos[int(s)] for s in nn[rj]]]
    lin_e = Affine.of(wb_idx) - Affine.of(phi[rj]) - (til_r + np.sum(ce * dv, axis=1))
    atoms = [Linear(lin_e)]
    for i in range(m):
        if np.any(ce[:, i] > 0):
            atoms.append(SquaredNorm(_sq(Q, np.full(rj.size, i), nn[rj], wv), ce[:, i]))
    prog.subject_to(atoms, "eavesdropper")
    gap = x0[wb_idx] - til_r
    phi0 = np.full(P, -np.inf)
    np.maximum.at(phi0, rj, gap)
    phi0 = phi0 + slack(phi0)
    x0 = _put(x0, prog, phi, phi0)
    legit0 = bar_r - W0 - phi0
    x0 = _put(x0, prog, PHI, legit0 - slack(legit0))
    return x0


# ---------------------------------------------------------------- Dinkelbach

@dataclass
class DinkelbachState:
    zeta: float = 0.0
    F: float = np.inf
    iteration: int = 0
    history: list = field(default_factory=list)     # (zeta, F)
    status: str = "running"


def dinkelbach_generic(step: Callable[[float, object], tuple], zeta0: float = 0.0,
                       eps: float = DINKELBACH_EPS, max_iter: int = DINKELBACH_MAX_ITER):
    """Maximize num/den given ``step(zeta, warm) -> (solution, num, den)`` that maximizes ``num - zeta den``."""
    st = DinkelbachState(zeta=zeta0)
    warm = None
    best = None
    prev_F = np.inf
    while st.iteration < max_iter:
        sol, num, den = step(st.zeta, warm)
        st.iteration += 1
        F = num - st.zeta * den
        st.F = F
        st.history.append((st.zeta, F))
        best, warm = sol, sol
        if F <= eps:
            st.status = "optimal"
            return best, st
        if F >= prev_F:
            st.status = "numeric_failure"
            return best, st
        prev_F = F
        st.zeta = num / den
    st.status = "max_iter"
    return best, st


@dataclass
class InnerSolution:
    x: np.ndarray
    p33: P33
    report: SolveReport


def dinkelbach(schedule: ScheduleMatrix, powers: PowerSchedule, plan_r: TrajectoryPlan, sc: Scenario,
               zeta0: float = 0.0, eps: float = DINKELBACH_EPS, dump: DumpHook | None = None):
    """Parametric maximization of secrecy/energy at a fixed expansion point.

    Returns ``(plan, state, solution)``. ``state.zeta`` is the final ratio in
    (bits/s/Hz)/J, i.e. secrecy summed over slots divided by energy.
    """
    def step(zeta, warm):
        p33 = assemble_p33(schedule, powers, plan_r, zeta, sc)
        if dump is not None:
            dump(p33.prog.name, p33.prog)
        if warm is not None:
            # same feasible set, new objective weight: resume from the early central path
            x_w, t_w = warm.report.restart_point()
            rep = solve(p33.prog, warm_start=x_w, t0=t_w)
        else:
            rep = solve(p33.prog, warm_start=p33.x0)
        if not rep.ok and warm is not None:
            rep = solve(p33.prog, warm_start=p33.x0)
        if not rep.ok:
            raise TrajectoryError(f"trajectory program failed at zeta={zeta:.6g}: {rep.status} ({rep.message})")
        sol = InnerSolution(rep.x, p33, rep)
        return sol, p33.secrecy_sum(rep.x), p33.energy(rep.x)

    sol, st = dinkelbach_generic(step, zeta0, eps)
    if st.status == "optimal":
        st.zeta = sol.p33.secrecy_sum(sol.x) / sol.p33.energy(sol.x)
    return sol.p33.plan(sol.x), st, sol


# ---------------------------------------------------------------- SCA

def true_see(plan: TrajectoryPlan, powers: PowerSchedule, schedule: ScheduleMatrix, sc: Scenario) -> float:
    """Secrecy sum (bps over slots) per joule of propulsion energy."""
    return secrecy_report(plan, powers, schedule, sc).secrecy_sum / propulsion_energy(plan, sc).total


@dataclass
class TrajectoryTrace:
    rows: list = field(default_factory=list)


def sca_trajectory_loop(schedule: ScheduleMatrix, powers: PowerSchedule, plan_init: TrajectoryPlan,
                        sc: Scenario, mode: str = "see", tol: float = SCA_TOL,
                        max_iter: int = SCA_MAX_ITER, trace: TrajectoryTrace | None = None,
                        dump: DumpHook | None = None) -> TrajectoryPlan:
    """Move the expansion point until the true metric improves by less than ``tol`` (relative).

    ``mode`` selects the metric: ``"see"`` (Dinkelbach), ``"secrecy"``
    (secrecy sum only) or ``"energy"`` (minimize propulsion energy). A step
    that worsens the true metric is rejected and the loop stops.
    """
    trace = trace if trace is not None else TrajectoryTrace()

    def metric(plan):
        if mode == "see":
            return true_see(plan, powers, schedule, sc)
        if mode == "secrecy":
            return secrecy_report(plan, powers, schedule, sc).secrecy_sum
        if mode == "energy":
            return -propulsion_energy(plan, sc).total
        raise TrajectoryError(f"unknown trajectory mode {mode!r}")

    cur = plan_init
    cur_val = metric(cur)
    zeta = 0.0
    for it in range(max_iter):
        if mode == "see":
            # the expansion point is feasible with value 0 at its own ratio, so F(zeta0) >= 0
            zeta0 = secrecy_report(cur, powers, schedule, sc).secrecy_sum / sc.bandwidth
            zeta0 /= propulsion_energy(cur, sc).total
            new, st, _ = dinkelbach(schedule, powers, cur, sc, zeta0=zeta0, dump=dump)
            zeta = st.zeta
            for j, (z, F) in enumerate(st.history):
                trace.rows.append({"sca_iter": it + 1, "dinkelbach_iter": j + 1, "zeta": z, "F": F})
        else:
            p33 = assemble_p33(schedule, powers, cur, 0.0 if mode == "secrecy" else 1.0, sc,
                               include_rates=(mode == "secrecy"))
            if dump is not None:
                dump(p33.prog.name, p33.prog)
            rep = solve(p33.prog, warm_start=p33.x0)
            if not rep.ok:
                raise TrajectoryError(f"trajectory program failed: {rep.status} ({rep.message})")
            new = p33.plan(rep.x)
        new_val = metric(new)
        energy = propulsion_energy(new, sc).total
        sec = secrecy_report(new, powers, schedule, sc).secrecy_sum
        trace.rows.append({"sca_iter": it + 1, "true_metric": new_val, "energy_J": energy,
                           "secrecy_sum": sec, "accepted": bool(new_val >= cur_val)})
        if new_val < cur_val:
            log.debug("trajectory step lowered the metric (%.6g < %.6g); keeping incumbent", new_val, cur_val)
            break
        gain = new_val - cur_val
        cur, cur_val = new, new_val
        if gain <= tol * max(abs(cur_val), 1e-300):
            break
    return cur
