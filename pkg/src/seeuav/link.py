"""LoS channel gains, SINR rates and worst-case secrecy rates."""

from __future__ import annotations

import csv
import io
import json
from dataclasses import dataclass

import numpy as np

from .kinematics import TrajectoryPlan
from .scenario import Scenario


class LinkError(ValueError):
    pass


@dataclass(frozen=True, eq=False)
class PowerSchedule:
    """Transmit power ``p[i, n]`` in watts for every UAV and traffic slot 1..N (column n-1)."""

    p: np.ndarray

    def __post_init__(self) -> None:
        arr = np.array(self.p, dtype=float)
        if arr.ndim != 2:
            raise LinkError("power array must have shape (M, N)")
        arr.setflags(write=False)
        object.__setattr__(self, "p", arr)

    @classmethod
    def constant(cls, sc: Scenario, watts: float) -> "PowerSchedule":
        return cls(np.full((sc.uav_count, sc.N), float(watts)))

    def validate(self, sc: Scenario, tol: float = 1e-12) -> None:
        if self.p.shape != (sc.uav_count, sc.N):
            raise LinkError(f"power shape {self.p.shape} != {(sc.uav_count, sc.N)}")
        if np.any(self.p < -tol) or np.any(self.p > sc.p_max + tol):
            raise LinkError("0 <= p <= P_max violated")


@dataclass(frozen=True, eq=False)
class ScheduleMatrix:
    """Binary user/SUAV assignment ``x[k2, m2, n]`` for traffic slots 1..N."""

    x: np.ndarray

    def __post_init__(self) -> None:
        arr = np.array(self.x, dtype=bool)
        if arr.ndim != 3:
            raise LinkError("schedule array must have shape (K2, M2, N)")
        arr.setflags(write=False)
        object.__setattr__(self, "x", arr)

    @classmethod
    def empty(cls, sc: Scenario) -> "ScheduleMatrix":
        return cls(np.zeros((sc.K2, sc.M2, sc.N), dtype=bool))

    def violations(self) -> list[str]:
        out = []
        per_suav = self.x.sum(axis=0)
        per_user = self.x.sum(axis=1)
        for m2, n in np.argwhere(per_suav > 1):
            out.append(f"SUAV {m2} serves {per_suav[m2, n]} users in slot {n + 1}")
        for k2, n in np.argwhere(per_user > 1):
            out.append(f"user {k2} served by {per_user[k2, n]} SUAVs in slot {n + 1}")
        return out

    def serving_suav(self) -> np.ndarray:
        """(K2, N) array with the serving SUAV index or -1."""
        served = self.x.any(axis=1)
        return np.where(served, self.x.argmax(axis=1), -1)

    def __eq__(self, other: object) -> bool:
        if not isinstance(other, ScheduleMatrix):
            return NotImplemented
        return self.x.shape == other.x.shape and bool(np.array_equal(self.x, other.x))

    __hash__ = None  # type: ignore[assignment]


def channel_gain(uav_pos, ground_pos, sc: Scenario):
    """LoS power gain beta0 / (|q - w|^2 + H^2); broadcasts over leading axes."""
    d2 = np.sum((np.asarray(uav_pos, dtype=float) - np.asarray(ground_pos, dtype=float)) ** 2, axis=-1)
    return sc.beta0 / (d2 + sc.altitude**2)


def gains(nodes: np.ndarray, plan: TrajectoryPlan, sc: Scenario) -> np.ndarray:
    """Gains for traffic slots, shape (K, M, N)."""
    q = plan.traffic_positions()  # (M, N, 2)
    return channel_gain(q[None, :, :, :], np.asarray(nodes, dtype=float)[:, None, None, :], sc)


def pair_rates(nodes: np.ndarray, plan: TrajectoryPlan, powers: PowerSchedule, sc: Scenario) -> np.ndarray:
    """Rate (bps) at each ground node when each SUAV transmits, shape (K, M2, N).

    The denominator holds every other SUAV and every JUAV as interference.
    """
    h = gains(nodes, plan, sc)                # (K, M, N)
    rx = h * powers.p[None, :, :]             # received powers
    m2 = sc.M2
    signal = rx[:, :m2, :]
    mask = 1.0 - np.eye(sc.uav_count)[:, :m2]  # (M, M2): 1 where i interferes with m2
    interference = np.einsum("kin,im->kmn", rx, mask)
    return sc.bandwidth * np.log2(1.0 + signal / (interference + sc.noise_power))


def pair_rate(k_pos, m2: int, n: int, plan: TrajectoryPlan, powers: PowerSchedule, sc: Scenario) -> float:
    """Rate (bps) of ground node at ``k_pos`` served by SUAV ``m2`` in traffic slot ``n`` (1-based)."""
    if not sc.is_suav(m2):
        raise LinkError(f"UAV {m2} is not a source UAV")
    if not 1 <= n <= sc.N:
        raise LinkError(f"slot {n} outside 1..{sc.N}")
    q = plan.q[:, n, :]
    h = channel_gain(q, np.asarray(k_pos, dtype=float)[None, :], sc)
    p = powers.p[:, n - 1]
    interference = sum(p[i] * h[i] for i in range(sc.uav_count) if i != m2)
    return float(sc.bandwidth * np.log2(1.0 + p[m2] * h[m2] / (interference + sc.noise_power)))


def pair_secrecy_table(plan: TrajectoryPlan, powers: PowerSchedule, sc: Scenario) -> np.ndarray:
    """R_{k2,m2}[n] - max_{k1} R_{k1,m2}[n], shape (K2, M2, N), in bps."""
    legit = pair_rates(sc.legit_users, plan, powers, sc)
    eve = pair_rates(sc.eavesdroppers, plan, powers, sc).max(axis=0)
    return legit - eve[None, :, :]


@dataclass(frozen=True)
class RateReport:
    legit: np.ndarray        # (K2, N) scheduled legitimate rate, bps
    eve_worst: np.ndarray    # (K2, N) worst-case eavesdropper rate on the scheduled link, bps
    increments: np.ndarray   # (K2, N) clamped per-slot secrecy, bps
    totals: np.ndarray       # (K2,) sum over slots of clamped secrecy (bps summed over slots)
    delta: float

    @property
    def unclamped(self) -> np.ndarray:
        return self.legit - self.eve_worst

    @property
    def secrecy_sum(self) -> float:
        return float(self.totals.sum())

    @property
    def secrecy_bits(self) -> float:
        return float(self.totals.sum() * self.delta)

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["user", "slot", "legit_bps", "eve_worst_bps", "secrecy_bps"])
        for k in range(self.legit.shape[0]):
            for n in range(self.legit.shape[1]):
                w.writerow([k, n + 1, f"{self.legit[k, n]:.12g}", f"{self.eve_worst[k, n]:.12g}",
                            f"{self.increments[k, n]:.12g}"])
        return buf.getvalue()

    def summary(self) -> dict:
        return {
            "per_user_secrecy_sum_bps": self.totals.tolist(),
            "secrecy_sum_bps": self.secrecy_sum,
            "secrecy_bits": self.secrecy_bits,
        }

    def to_json(self) -> str:
        return json.dumps(self.summary(), indent=2)


def secrecy_report(plan: TrajectoryPlan, powers: PowerSchedule, schedule: ScheduleMatrix,
                   sc: Scenario) -> RateReport:
    x = schedule.x.astype(float)
    legit_pairs = pair_rates(sc.legit_users, plan, powers, sc)        # (K2, M2, N)
    eve_pairs = pair_rates(sc.eavesdroppers, plan, powers, sc)        # (K1, M2, N)
    legit = np.einsum("kmn,kmn->kn", x, legit_pairs)
    eve_by_k1 = np.einsum("kmn,jmn->jkn", x, eve_pairs)               # (K1, K2, N)
    eve_worst = eve_by_k1.max(axis=0)
    inc = np.maximum(legit - eve_worst, 0.0)
    return RateReport(legit=legit, eve_worst=eve_worst, increments=inc, totals=inc.sum(axis=1),
                      delta=plan.delta)


def see_value(report: RateReport, energy_total: float, units: str = "bps-per-joule") -> float:
    """Secrecy energy efficiency for the chosen numerator convention."""
    if units == "bps-per-joule":
        num = report.secrecy_sum
    elif units == "bits-per-joule":
        num = report.secrecy_bits
    else:
        raise LinkError(f"unknown SEE units {units!r}")
    return num / energy_total
