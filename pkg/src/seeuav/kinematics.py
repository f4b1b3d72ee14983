"""Trajectory representation, mobility constraints and fixed-wing propulsion energy."""

from __future__ import annotations

import csv
import io
import math
from dataclasses import dataclass

import numpy as np

from .scenario import Scenario

DYNAMICS_TOL = 1e-6
NORM_TOL = 1e-9


class KinematicsError(ValueError):
    pass


@dataclass(frozen=True, eq=False)
class TrajectoryPlan:
    """Per-UAV position/velocity/acceleration at slot indices ``0..N+1``.

    Arrays have shape ``(M, N + 2, 2)``. Slot 0 and N+1 are the periodic
    boundary points; traffic and energy use slots 1..N only.
    """

    q: np.ndarray
    v: np.ndarray
    a: np.ndarray
    delta: float

    def __post_init__(self) -> None:
        for name in ("q", "v", "a"):
            arr = np.array(getattr(self, name), dtype=float)
            if arr.ndim != 3 or arr.shape[2] != 2:
                raise KinematicsError(f"{name} must have shape (M, N+2, 2), got {arr.shape}")
            arr.setflags(write=False)
            object.__setattr__(self, name, arr)
        if not (self.q.shape == self.v.shape == self.a.shape):
            raise KinematicsError("q, v, a shapes differ")
        if self.q.shape[1] < 3:
            raise KinematicsError("a plan needs at least one traffic slot (N >= 1)")

    @property
    def uav_count(self) -> int:
        return self.q.shape[0]

    @property
    def slot_count(self) -> int:
        return self.q.shape[1] - 2

    def traffic_positions(self) -> np.ndarray:
        """Positions for slots 1..N, shape (M, N, 2)."""
        return self.q[:, 1:-1, :]

    def subset(self, uavs: list[int]) -> "TrajectoryPlan":
        return TrajectoryPlan(self.q[uavs], self.v[uavs], self.a[uavs], self.delta)

    def allclose(self, other: "TrajectoryPlan", atol: float = 0.0) -> bool:
        return (self.q.shape == other.q.shape
                and np.allclose(self.q, other.q, rtol=0, atol=atol)
                and np.allclose(self.v, other.v, rtol=0, atol=atol)
                and np.allclose(self.a, other.a, rtol=0, atol=atol))


@dataclass(frozen=True)
class EnergyReport:
    per_uav: np.ndarray      # joules, shape (M,)
    total: float             # joules
    slot_power: np.ndarray   # watts, shape (M, N)


def slot_power(speed: np.ndarray, accel: np.ndarray, sc: Scenario) -> np.ndarray:
    """Instantaneous fixed-wing propulsion power for given speed/acceleration norms."""
    return sc.c1 * speed**3 + (sc.c2 / speed) * (1.0 + accel**2 / sc.gravity**2)


def propulsion_energy(plan: TrajectoryPlan, sc: Scenario) -> EnergyReport:
    """Propulsion energy over slots 1..N, each slot weighted by its duration."""
    v = np.linalg.norm(plan.v[:, 1:-1, :], axis=2)
    a = np.linalg.norm(plan.a[:, 1:-1, :], axis=2)
    zero = np.argwhere(v <= 0.0)
    if len(zero):
        i, n = zero[0]
        raise KinematicsError(
            f"zero speed for UAV {i} at slot {n + 1}: fixed-wing energy model undefined"
        )
    power = slot_power(v, a, sc)
    per_uav = plan.delta * power.sum(axis=1)
    return EnergyReport(per_uav=per_uav, total=float(per_uav.sum()), slot_power=power)


def min_power_speed(sc: Scenario) -> float:
    """Speed minimizing c1 v^3 + c2 / v at zero acceleration."""
    return (sc.c2 / (3.0 * sc.c1)) ** 0.25


def _forward(q0: np.ndarray, v0: np.ndarray, a: np.ndarray, delta: float):
    """Integrate the discrete dynamics for n = 0..N from (q0, v0)."""
    steps = a.shape[0]
    q = np.empty((steps + 1, 2))
    v = np.empty((steps + 1, 2))
    q[0], v[0] = q0, v0
    for n in range(steps):
        q[n + 1] = q[n] + v[n] * delta + 0.5 * a[n] * delta**2
        v[n + 1] = v[n] + a[n] * delta
    return q, v


def _close_period(q0, v0, a, delta):
    """Add a linear-in-n acceleration correction so q[N+1]=q[0] and v[N+1]=v[0]."""
    steps = a.shape[0]
    q, v = _forward(q0, v0, a, delta)
    gap_q = q[-1] - q0
    gap_v = v[-1] - v0
    if np.max(np.abs(gap_q)) == 0.0 and np.max(np.abs(gap_v)) == 0.0:
        return a
    basis = [np.ones(steps), np.arange(steps) - (steps - 1) / 2.0]
    effect = np.empty((2, 2))
    for j, b in enumerate(basis):
        dq, dv = _forward(np.zeros(2), np.zeros(2), np.outer(b, [1.0, 0.0]), delta)
        effect[:, j] = [dq[-1, 0], dv[-1, 0]]
    coef = np.linalg.solve(effect, -np.vstack([gap_q, gap_v]))  # (2 basis, 2 dims)
    return a + np.outer(basis[0], coef[0]) + np.outer(basis[1], coef[1])


def circular_initializer(sc: Scenario, center, radius: float) -> TrajectoryPlan:
    """Uniform circular flight sampled at slot boundaries.

    UAV ``i`` flies radius ``radius + 10 i`` with phase ``2 pi i / M``; one
    loop spans the N+1 transitions between q[0] and q[N+1]. Accelerations are
    finite differences of the exact velocities, then corrected so the
    discrete recursion closes the period exactly.
    """
    if not radius > 0.0:
        raise KinematicsError("radius must be strictly positive (a fixed-wing UAV cannot hover)")
    m = sc.uav_count
    n = sc.N
    steps = n + 1
    period = steps * sc.slot_delta
    omega = 2.0 * math.pi / period
    r_max = radius + 10.0 * (m - 1)
    if omega * r_max > sc.v_max:
        raise KinematicsError(
            f"speed constraint binding: 2*pi*{r_max:g}/{period:g} = {omega * r_max:.3f} m/s > v_max {sc.v_max:g}"
        )
    if omega**2 * r_max > sc.a_max:
        raise KinematicsError(
            f"acceleration constraint binding: (2*pi/{period:g})^2*{r_max:g} = {omega**2 * r_max:.3f} m/s^2 > a_max {sc.a_max:g}"
        )
    center = np.asarray(center, dtype=float)
    q = np.empty((m, n + 2, 2))
    v = np.empty((m, n + 2, 2))
    a = np.empty((m, n + 2, 2))
    t = np.arange(n + 2) * sc.slot_delta
    for i in range(m):
        r = radius + 10.0 * i
        theta = omega * t + 2.0 * math.pi * i / m
        q_exact = center + r * np.column_stack([np.cos(theta), np.sin(theta)])
        v_exact = r * omega * np.column_stack([-np.sin(theta), np.cos(theta)])
        acc = (v_exact[1:] - v_exact[:-1]) / sc.slot_delta
        acc = _close_period(q_exact[0], v_exact[0], acc, sc.slot_delta)
        qi, vi = _forward(q_exact[0], v_exact[0], acc, sc.slot_delta)
        qi[-1], vi[-1] = qi[0], vi[0]
        q[i], v[i] = qi, vi
        a[i, :-1] = acc
        a[i, -1] = acc[0]
    return TrajectoryPlan(q, v, a, sc.slot_delta)


@dataclass(frozen=True)
class Violation:
    constraint: str
    uav: int
    slot: int
    magnitude: float


def check_feasibility(plan: TrajectoryPlan, sc: Scenario) -> list[Violation]:
    """List every violated mobility constraint (empty list means feasible)."""
    out: list[Violation] = []
    d = plan.delta
    q, v, a = plan.q, plan.v, plan.a
    pos_res = np.linalg.norm(q[:, 1:] - q[:, :-1] - v[:, :-1] * d - 0.5 * a[:, :-1] * d**2, axis=2)
    vel_res = np.linalg.norm(v[:, 1:] - v[:, :-1] - a[:, :-1] * d, axis=2)
    for name, res in (("position_dynamics", pos_res), ("velocity_dynamics", vel_res)):
        for i, n in np.argwhere(res > DYNAMICS_TOL):
            out.append(Violation(name, int(i), int(n), float(res[i, n])))
    per_q = np.linalg.norm(q[:, 0] - q[:, -1], axis=1)
    per_v = np.linalg.norm(v[:, 0] - v[:, -1], axis=1)
    for name, res in (("periodic_position", per_q), ("periodic_velocity", per_v)):
        for i in np.flatnonzero(res > DYNAMICS_TOL):
            out.append(Violation(name, int(i), 0, float(res[i])))
    speed = np.linalg.norm(v, axis=2) - sc.v_max
    for i, n in np.argwhere(speed > NORM_TOL):
        out.append(Violation("speed", int(i), int(n), float(speed[i, n])))
    acc = np.linalg.norm(a[:, :-1], axis=2) - sc.a_max
    for i, n in np.argwhere(acc > NORM_TOL):
        out.append(Violation("acceleration", int(i), int(n), float(acc[i, n])))
    if plan.delta != sc.slot_delta:
        out.append(Violation("slot_duration", -1, -1, abs(plan.delta - sc.slot_delta)))
    if plan.slot_count != sc.N or plan.uav_count != sc.uav_count:
        out.append(Violation("shape", -1, -1, float("nan")))
    return out


CSV_COLUMNS = ["uav_id", "slot", "qx", "qy", "vx", "vy", "ax", "ay"]


def _fmt(x: float) -> str:
    return f"{x:.12g}"


def trajectory_to_csv(plan: TrajectoryPlan) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(CSV_COLUMNS)
    for i in range(plan.uav_count):
        for n in range(plan.q.shape[1]):
            w.writerow([i, n, *map(_fmt, plan.q[i, n]), *map(_fmt, plan.v[i, n]), *map(_fmt, plan.a[i, n])])
    return buf.getvalue()


def trajectory_from_csv(text: str, delta: float) -> TrajectoryPlan:
    rows = list(csv.DictReader(io.StringIO(text)))
    if not rows:
        raise KinematicsError("empty trajectory CSV")
    missing = set(CSV_COLUMNS) - set(rows[0])
    if missing:
        raise KinematicsError(f"trajectory CSV missing columns {sorted(missing)}")
    m = max(int(r["uav_id"]) for r in rows) + 1
    s = max(int(r["slot"]) for r in rows) + 1
    data = np.full((m, s, 6), np.nan)
    for r in rows:
        data[int(r["uav_id"]), int(r["slot"])] = [float(r[c]) for c in CSV_COLUMNS[2:]]
    if np.isnan(data).any():
        raise KinematicsError("trajectory CSV has missing (uav, slot) rows")
    return TrajectoryPlan(data[..., 0:2], data[..., 2:4], data[..., 4:6], delta)
