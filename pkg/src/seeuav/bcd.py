"""Block coordinate descent over scheduling, power and trajectory, plus benchmark schemes.

Each outer iteration schedules users at the current powers and plan, runs the
power SCA at the new schedule, then moves the trajectory. Every stage either
improves its objective or keeps the incumbent, so the recorded SEE column is
non-decreasing.
"""

from __future__ import annotations

import logging
import math
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from .convex import ConvexProgram
from .kinematics import TrajectoryPlan, circular_initializer, propulsion_energy
from .link import PowerSchedule, ScheduleMatrix, pair_secrecy_table, secrecy_report
from .power import PowerTrace, sca_power_loop
from .scenario import Scenario
from .scheduling import exhaustive_schedule, greedy_schedule, schedule_objective
from .trajectory import TrajectoryTrace, sca_trajectory_loop

log = logging.getLogger(__name__)

SCHEMES = ("see", "circular", "energy_min", "rate_max")
SEE_UNITS = ("bps-per-joule", "bits-per-joule")
MAX_OUTER = 25
DEFAULT_SLOTS = 40


class RunError(RuntimeError):
    """A stage failed; ``trace`` holds every iteration completed before the failure."""

    def __init__(self, message: str, trace: "RunTrace"):
        super().__init__(message)
        self.trace = trace


@dataclass
class RunOptions:
    scheme: str = "see"
    scheduler: str = "greedy"
    max_iter: int = MAX_OUTER
    eps: float | None = None            # fractional-increase test; None uses the scenario tolerance
    power_iters: int = 30
    trajectory_iters: int = 20
    see_units: str = "bps-per-joule"
    seed: int = 0
    dump_dir: str | None = None

    def __post_init__(self) -> None:
        self.scheme = self.scheme.replace("-", "_")
        if self.scheme not in SCHEMES:
            raise ValueError(f"unknown scheme {self.scheme!r}; expected one of {SCHEMES}")
        if self.scheduler not in ("greedy", "exhaustive"):
            raise ValueError(f"unknown scheduler {self.scheduler!r}")
        if self.see_units not in SEE_UNITS:
            raise ValueError(f"unknown SEE units {self.see_units!r}")
        if self.max_iter < 1:
            raise ValueError("max_iter must be at least 1")


@dataclass
class IterationRecord:
    iteration: int
    schedule_objective: float       # secrecy sum after scheduling, bps summed over slots
    power_objective: float          # secrecy sum after the power stage
    see_after_power: float
    see: float                      # after the trajectory stage
    energy_J: float
    secrecy_sum: float
    wall_time_s: float


@dataclass
class RunTrace:
    scheme: str
    see_units: str
    records: list[IterationRecord] = field(default_factory=list)
    initial_see: float = math.nan
    termination: str = ""
    trajectory_rows: list[dict] = field(default_factory=list)
    power_objectives: list[list[float]] = field(default_factory=list)

    @property
    def see(self) -> np.ndarray:
        return np.array([r.see for r in self.records])

    def to_dict(self, include_times: bool = True) -> dict:
        recs = [asdict(r) for r in self.records]
        if not include_times:
            for r in recs:
                r.pop("wall_time_s")
        return {"scheme": self.scheme, "see_units": self.see_units, "initial_see": self.initial_see,
                "termination": self.termination, "iterations": recs,
                "trajectory": self.trajectory_rows, "power": self.power_objectives}


@dataclass
class RunResult:
    scenario: Scenario
    schedule: ScheduleMatrix
    powers: PowerSchedule
    plan: TrajectoryPlan
    trace: RunTrace

    def metrics(self) -> dict:
        rep = secrecy_report(self.plan, self.powers, self.schedule, self.scenario)
        energy = propulsion_energy(self.plan, self.scenario).total
        return {"see": see_of(rep.secrecy_sum, energy, self.scenario, self.trace.see_units),
                "see_units": self.trace.see_units, "secrecy_sum_bps": rep.secrecy_sum,
                "secrecy_bits": rep.secrecy_bits, "energy_J": energy}


def see_of(secrecy_sum: float, energy: float, sc: Scenario, units: str) -> float:
    num = secrecy_sum * sc.slot_delta if units == "bits-per-joule" else secrecy_sum
    return num / energy


class ProgramDumper:
    """Writes each convex program handed to it as ``<counter>_<name>.txt`` under ``root``."""

    def __init__(self, root: str | Path):
        self.root = Path(root)
        self.root.mkdir(parents=True, exist_ok=True)
        self.count = 0

    def __call__(self, name: str, prog: ConvexProgram) -> None:
        self.count += 1
        safe = "".join(c if c.isalnum() or c in "-_." else "_" for c in name)
        (self.root / f"{self.count:05d}_{safe}.txt").write_text(prog.dump())


# ------------------------------------------------------------ initial point

def radius_cap(sc: Scenario) -> float:
    """Largest base radius whose staggered circles stay within 90% of the speed and acceleration limits."""
    period = (sc.N + 1) * sc.slot_delta
    omega = 2.0 * math.pi / period
    r_cap = min(0.9 * sc.v_max / omega, 0.9 * sc.a_max / omega**2) - 10.0 * (sc.uav_count - 1)
    if r_cap <= 0.0:
        raise ValueError(f"period {sc.horizon:g} s is too short for a feasible circular start")
    return r_cap


def default_radius(sc: Scenario, center, grid: int = 48) -> float:
    """Circle radius with the best SEE at half power and greedy scheduling.

    A fixed-period circle that is too small forces a slow, power-hungry
    flight; one that is too large leaves the users. The radius is picked on a
    grid up to :func:`radius_cap`; ties go to the lower-energy circle.
    """
    r_cap = radius_cap(sc)
    powers = initial_powers(sc)
    best, best_key = r_cap, None
    for r in np.linspace(r_cap / grid, r_cap, grid):
        plan = circular_initializer(sc, center, float(r))
        table = pair_secrecy_table(plan, powers, sc)
        sec = schedule_objective(greedy_schedule(table), table)
        energy = propulsion_energy(plan, sc).total
        key = (sec / energy, -energy)
        if best_key is None or key > best_key:
            best, best_key = float(r), key
    return best


def initial_plan(sc: Scenario) -> TrajectoryPlan:
    center = sc.initial_center if sc.initial_center is not None else sc.legit_users.mean(axis=0)
    radius = sc.initial_radius if sc.initial_radius is not None else default_radius(sc, center)
    return circular_initializer(sc, center, radius)


def initial_powers(sc: Scenario) -> PowerSchedule:
    return PowerSchedule.constant(sc, 0.5 * sc.p_max)


# ------------------------------------------------------------ stages

def _schedule(opts: RunOptions, plan, powers, sc, incumbent: ScheduleMatrix | None):
    table = pair_secrecy_table(plan, powers, sc)
    x = greedy_schedule(table) if opts.scheduler == "greedy" else exhaustive_schedule(table)
    val = schedule_objective(x, table)
    if incumbent is not None:
        # greedy is not optimal in general; never trade down from the last schedule
        old = schedule_objective(incumbent, table)
        if old > val:
            return incumbent, old
    return x, val


def _metric(opts: RunOptions, see: float, secrecy: float) -> float:
    return secrecy if opts.scheme == "rate_max" else see


def _outer_loop(sc: Scenario, opts: RunOptions, plan: TrajectoryPlan, powers: PowerSchedule,
                move_trajectory: bool, trace: RunTrace) -> RunResult:
    eps = sc.tol if opts.eps is None else opts.eps
    dump = ProgramDumper(opts.dump_dir) if opts.dump_dir else None
    mode = "secrecy" if opts.scheme == "rate_max" else "see"
    schedule = None
    energy = propulsion_energy(plan, sc).total
    first, _ = _schedule(opts, plan, powers, sc, None)
    sec0 = secrecy_report(plan, powers, first, sc).secrecy_sum
    trace.initial_see = see_of(sec0, energy, sc, opts.see_units)
    prev = _metric(opts, trace.initial_see, sec0)
    trace.termination = "max_iter"
    for it in range(1, opts.max_iter + 1):
        t_start = time.perf_counter()
        try:
            schedule, sched_val = _schedule(opts, plan, powers, sc, schedule)
            ptrace = PowerTrace()
            powers = sca_power_loop(schedule, plan, powers, sc, max_iter=opts.power_iters,
                                    trace=ptrace, dump=dump)
            trace.power_objectives.append(ptrace.objective)
            pow_val = secrecy_report(plan, powers, schedule, sc).secrecy_sum
            see_p = see_of(pow_val, energy, sc, opts.see_units)
            if move_trajectory:
                ttrace = TrajectoryTrace()
                plan = sca_trajectory_loop(schedule, powers, plan, sc, mode=mode,
                                           max_iter=opts.trajectory_iters, trace=ttrace, dump=dump)
                for row in ttrace.rows:
                    trace.trajectory_rows.append({"bcd_iter": it, **row})
                energy = propulsion_energy(plan, sc).total
        except Exception as exc:
            trace.termination = f"failed: {exc}"
            raise RunError(f"iteration {it} failed: {exc}", trace) from exc
        sec = secrecy_report(plan, powers, schedule, sc).secrecy_sum
        see = see_of(sec, energy, sc, opts.see_units)
        trace.records.append(IterationRecord(it, sched_val, pow_val, see_p, see, energy, sec,
                                             time.perf_counter() - t_start))
        log.info("%s iter %d: SEE %.6g (secrecy %.6g, energy %.6g J)", opts.scheme, it, see, sec, energy)
        cur = _metric(opts, see, sec)
        if cur - prev < eps * abs(prev) or (prev == 0.0 and cur == 0.0):
            trace.termination = "converged"
            break
        prev = cur
    return RunResult(sc, schedule, powers, plan, trace)


def run_see(sc: Scenario, opts: RunOptions | None = None) -> RunResult:
    """Full alternation: scheduling, power SCA, then trajectory SCA with Dinkelbach."""
    opts = opts or RunOptions()
    trace = RunTrace(scheme="see", see_units=opts.see_units)
    return _outer_loop(sc, opts, initial_plan(sc), initial_powers(sc), True, trace)


def run_benchmark(sc: Scenario, scheme: str, opts: RunOptions | None = None) -> RunResult:
    """Run ``scheme`` (see, circular, energy_min or rate_max) from the default initial point."""
    opts = opts or RunOptions()
    opts = RunOptions(**{**asdict(opts), "scheme": scheme})
    if opts.scheme == "see":
        return run_see(sc, opts)
    trace = RunTrace(scheme=opts.scheme, see_units=opts.see_units)
    plan = initial_plan(sc)
    if opts.scheme == "circular":
        return _outer_loop(sc, opts, plan, initial_powers(sc), False, trace)
    if opts.scheme == "energy_min":
        dump = ProgramDumper(opts.dump_dir) if opts.dump_dir else None
        ttrace = TrajectoryTrace()
        plan = sca_trajectory_loop(ScheduleMatrix.empty(sc), initial_powers(sc), plan, sc,
                                   mode="energy", max_iter=opts.trajectory_iters, trace=ttrace,
                                   dump=dump)
        trace.trajectory_rows.extend({"bcd_iter": 0, **row} for row in ttrace.rows)
        return _outer_loop(sc, opts, plan, initial_powers(sc), False, trace)
    return _outer_loop(sc, opts, plan, initial_powers(sc), True, trace)


# ------------------------------------------------------------ presets and sweeps

PRESETS = {
    "A": dict(users=2, eves=1, suavs=1, juavs=0),
    "B": dict(users=2, eves=1, suavs=1, juavs=1),
    "C": dict(users=2, eves=2, suavs=2, juavs=2),
}


def default_geometry(users: int, eves: int, rng: np.random.Generator,
                     disc: float = 400.0, eve_offset=(300.0, 600.0), min_gap: float = 200.0):
    """Users uniform on a disc around the origin; eavesdroppers 300-600 m from the user centroid.

    Eavesdropper draws closer than ``min_gap`` to any user are rejected, since
    a co-located eavesdropper leaves no secrecy to optimize.
    """
    r = disc * np.sqrt(rng.uniform(0.0, 1.0, users))
    th = rng.uniform(0.0, 2.0 * math.pi, users)
    w_users = np.column_stack([r * np.cos(th), r * np.sin(th)])
    centroid = w_users.mean(axis=0)
    w_eves = []
    while len(w_eves) < eves:
        d = rng.uniform(*eve_offset)
        a = rng.uniform(0.0, 2.0 * math.pi)
        p = centroid + d * np.array([math.cos(a), math.sin(a)])
        if np.min(np.linalg.norm(w_users - p, axis=1)) >= min_gap:
            w_eves.append(p)
    return w_users, np.array(w_eves)


def preset_scenario(name: str, seed: int = 0, period: float = 40.0, slots: int = DEFAULT_SLOTS,
                    **overrides) -> Scenario:
    """Scenario A (1 SUAV), B (1 SUAV + 1 JUAV) or C (2 SUAVs + 2 JUAVs) on the default geometry."""
    spec = PRESETS[name.upper()]
    rng = np.random.default_rng(seed)
    users, eves = default_geometry(spec["users"], spec["eves"], rng)
    return Scenario(legit_users=users, eavesdroppers=eves, suav_count=spec["suavs"],
                    juav_count=spec["juavs"], horizon=period, slot_delta=period / slots, **overrides)


@dataclass
class SweepRow:
    period_s: float
    scheme: str
    see: float = math.nan
    secrecy_sum_bps: float = math.nan
    secrecy_bits: float = math.nan
    energy_J: float = math.nan
    iterations: int = 0
    error: str = ""


def _sweep_one(args) -> SweepRow:
    template, period, slots, scheme, opts = args
    row = SweepRow(period, scheme)
    try:
        sc = template.with_changes(horizon=period, slot_delta=period / slots)
        res = run_benchmark(sc, scheme, opts)
    except Exception as exc:  # one bad period must not sink the sweep
        row.error = str(exc)
        return row
    m = res.metrics()
    row.see, row.secrecy_sum_bps, row.secrecy_bits, row.energy_J = (
        m["see"], m["secrecy_sum_bps"], m["secrecy_bits"], m["energy_J"])
    row.iterations = len(res.trace.records)
    return row


def sweep_period(template: Scenario, periods, scheme: str, opts: RunOptions | None = None,
                 slots: int = DEFAULT_SLOTS, workers: int = 1) -> list[SweepRow]:
    """One full run per period with the slot count held at ``slots``."""
    opts = opts or RunOptions()
    jobs = [(template, float(T), slots, scheme, opts) for T in periods]
    if workers > 1 and len(jobs) > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            return list(pool.map(_sweep_one, jobs))
    return [_sweep_one(j) for j in jobs]
