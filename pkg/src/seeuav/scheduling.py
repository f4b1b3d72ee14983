"""Per-slot user/SUAV assignment.

``greedy_schedule`` follows the paper's local-benefit procedure step by step;
it does not reassign users that lose a SUAV conflict, so it is not always
assignment-optimal. ``exhaustive_schedule`` enumerates every partial injective
assignment and is the optimal reference.
"""

from __future__ import annotations

import csv
import io
import itertools
import math

import numpy as np

from .link import ScheduleMatrix

EXHAUSTIVE_LIMIT = 1_000_000


class ScheduleTooLarge(ValueError):
    pass


def _greedy_slot(r: np.ndarray, counter: list[int]) -> np.ndarray:
    """Assignment for one slot; ``r`` is the (K2, M2) secrecy matrix."""
    k2, m2 = r.shape
    r = r.copy()
    x = np.ones((k2, m2), dtype=bool)
    # zero out negative-secrecy pairs
    for k in range(k2):
        for m in range(m2):
            counter[0] += 1
            if r[k, m] < 0:
                x[k, m] = False
                r[k, m] = 0.0
    # step 1: each user keeps its best SUAV (lowest index on ties)
    best = np.full(k2, -1)
    for k in range(k2):
        b = 0
        for m in range(1, m2):
            counter[0] += 1
            if r[k, m] > r[k, b]:
                b = m
        best[k] = b
        x[k, :] = False
        x[k, b] = True
    # step 2: drop kept pairs with zero secrecy
    for k in range(k2):
        counter[0] += 1
        if r[k, best[k]] == 0.0:
            x[k, best[k]] = False
            best[k] = -1
    # steps 3-4: resolve SUAVs claimed by several users (lowest user index on ties)
    for m in range(m2):
        claim = [k for k in range(k2) if best[k] == m]
        if len(claim) > 1:
            win = claim[0]
            for k in claim[1:]:
                counter[0] += 1
                if r[k, m] > r[win, m]:
                    win = k
            for k in claim:
                if k != win:
                    x[k, m] = False
                    best[k] = -1
    return x


def greedy_schedule(table: np.ndarray, stats: dict | None = None) -> ScheduleMatrix:
    """Schedule each slot of a (K2, M2, N) secrecy table with the greedy procedure.

    If ``stats`` is given, ``stats["comparisons"]`` receives the number of
    scalar comparisons performed.
    """
    table = np.asarray(table, dtype=float)
    if not np.all(np.isfinite(table)):
        raise ValueError("secrecy table must be finite")
    counter = [0]
    x = np.zeros(table.shape, dtype=bool)
    for n in range(table.shape[2]):
        x[:, :, n] = _greedy_slot(table[:, :, n], counter)
    if stats is not None:
        stats["comparisons"] = counter[0]
    return ScheduleMatrix(x)


def partial_assignment_count(k2: int, m2: int) -> int:
    """Number of partial injective user->SUAV assignments (including the empty one)."""
    return sum(math.comb(k2, j) * math.perm(m2, j) for j in range(min(k2, m2) + 1))


def _exhaustive_slot(r: np.ndarray) -> np.ndarray:
    k2, m2 = r.shape
    best_val, best = 0.0, ()
    options = [[None] + [m for m in range(m2) if r[k, m] > 0] for k in range(k2)]
    for choice in itertools.product(*options):
        used = [m for m in choice if m is not None]
        if len(used) != len(set(used)):
            continue
        val = sum(r[k, m] for k, m in enumerate(choice) if m is not None)
        if val > best_val:
            best_val, best = val, choice
    x = np.zeros((k2, m2), dtype=bool)
    for k, m in enumerate(best):
        if m is not None:
            x[k, m] = True
    return x


def exhaustive_schedule(table: np.ndarray) -> ScheduleMatrix:
    """Optimal per-slot assignment by enumeration; pairs with secrecy <= 0 are never used."""
    table = np.asarray(table, dtype=float)
    k2, m2, n_slots = table.shape
    count = partial_assignment_count(k2, m2)
    if count > EXHAUSTIVE_LIMIT:
        raise ScheduleTooLarge(
            f"{count} assignments per slot exceeds {EXHAUSTIVE_LIMIT}; use the greedy scheduler"
        )
    x = np.zeros(table.shape, dtype=bool)
    for n in range(n_slots):
        x[:, :, n] = _exhaustive_slot(table[:, :, n])
    return ScheduleMatrix(x)


def schedule_objective(schedule: ScheduleMatrix, table: np.ndarray) -> float:
    """Sum of scheduled secrecy values, negatives clamped at zero."""
    return float(np.sum(np.maximum(np.asarray(table), 0.0) * schedule.x))


def slot_objectives(schedule: ScheduleMatrix, table: np.ndarray) -> np.ndarray:
    return np.sum(np.maximum(np.asarray(table), 0.0) * schedule.x, axis=(0, 1))


def prune_nonpositive(schedule: ScheduleMatrix, table: np.ndarray) -> ScheduleMatrix:
    return ScheduleMatrix(schedule.x & (np.asarray(table) > 0))


def schedule_to_csv(schedule: ScheduleMatrix, table: np.ndarray | None = None) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["slot", "user", "suav", "slot_objective_bps"])
    per_slot = slot_objectives(schedule, table) if table is not None else None
    for k, m, n in sorted(map(tuple, np.argwhere(schedule.x)), key=lambda t: (t[2], t[0])):
        obj = "" if per_slot is None else f"{per_slot[n]:.12g}"
        w.writerow([n + 1, k, m, obj])
    return buf.getvalue()


def schedule_from_csv(text: str, k2: int, m2: int, n_slots: int) -> ScheduleMatrix:
    x = np.zeros((k2, m2, n_slots), dtype=bool)
    for row in csv.DictReader(io.StringIO(text)):
        x[int(row["user"]), int(row["suav"]), int(row["slot"]) - 1] = True
    return ScheduleMatrix(x)
