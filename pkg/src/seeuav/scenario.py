"""Problem instance, physical constants and JSON scenario ingestion.

UAV indexing is flat and global: indices ``0..M2-1`` are source UAVs
(SUAVs), ``M2..M2+M1-1`` are jamming UAVs (JUAVs).
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field, fields, replace
from pathlib import Path
from typing import Any

import numpy as np


class ScenarioError(ValueError):
    """Raised when a scenario document is malformed or violates an invariant."""


def db_to_linear(db: float) -> float:
    return 10.0 ** (db / 10.0)


def dbm_to_watts(dbm: float) -> float:
    return 10.0 ** ((dbm - 30.0) / 10.0)


def table1_defaults() -> dict[str, float]:
    """Default physical parameter block (linear units).

    Channel gain -60 dB, noise -110 dBm, 0.5 s slots, 1 MHz, 100 m altitude,
    1 W, 50 m/s, 5 m/s^2, fixed-wing coefficients c1/c2 and tolerance 1e-2.
    """
    return {
        "beta0": db_to_linear(-60.0),
        "noise_power": dbm_to_watts(-110.0),
        "slot_delta": 0.5,
        "bandwidth": 1.0e6,
        "altitude": 100.0,
        "p_max": 1.0,
        "v_max": 50.0,
        "a_max": 5.0,
        "gravity": 9.8,
        "c1": 9.26e-4,
        "c2": 2250.0,
        "tol": 1.0e-2,
    }


def _frozen_points(points: Any, name: str) -> np.ndarray:
    arr = np.array(points, dtype=float)
    if arr.ndim != 2 or arr.shape[1] != 2:
        raise ScenarioError(f"{name} must be a list of 2-D points, got shape {arr.shape}")
    if not np.all(np.isfinite(arr)):
        raise ScenarioError(f"{name} contains non-finite coordinates")
    arr.setflags(write=False)
    return arr


@dataclass(frozen=True, eq=False)
class Scenario:
    """Immutable problem instance.

    ``slot_count`` is derived from ``horizon / slot_delta`` and is never set
    independently.
    """

    legit_users: np.ndarray
    eavesdroppers: np.ndarray
    suav_count: int
    juav_count: int
    horizon: float
    altitude: float = 100.0
    bandwidth: float = 1.0e6
    slot_delta: float = 0.5
    beta0: float = 1.0e-6
    noise_power: float = 1.0e-14
    p_max: float = 1.0
    v_max: float = 50.0
    a_max: float = 5.0
    gravity: float = 9.8
    c1: float = 9.26e-4
    c2: float = 2250.0
    tol: float = 1.0e-2
    initial_center: tuple[float, float] | None = None
    initial_radius: float | None = None
    slot_count: int = field(init=False)

    def __post_init__(self) -> None:
        object.__setattr__(self, "legit_users", _frozen_points(self.legit_users, "legit_users"))
        object.__setattr__(self, "eavesdroppers", _frozen_points(self.eavesdroppers, "eavesdroppers"))
        if len(self.legit_users) < 1:
            raise ScenarioError("K2 >= 1 violated: at least one legitimate user is required")
        if len(self.eavesdroppers) < 1:
            raise ScenarioError("K1 >= 1 violated: at least one eavesdropper is required")
        if int(self.suav_count) != self.suav_count or self.suav_count < 1:
            raise ScenarioError("M2 >= 1 violated: at least one source UAV is required")
        if int(self.juav_count) != self.juav_count or self.juav_count < 0:
            raise ScenarioError("M1 >= 0 violated: jamming UAV count must be a non-negative integer")
        object.__setattr__(self, "suav_count", int(self.suav_count))
        object.__setattr__(self, "juav_count", int(self.juav_count))
        for name in ("horizon", "altitude", "bandwidth", "slot_delta", "beta0", "noise_power",
                     "p_max", "v_max", "a_max", "gravity", "c1", "c2", "tol"):
            value = float(getattr(self, name))
            if not math.isfinite(value) or value <= 0.0:
                raise ScenarioError(f"{name} must be finite and strictly positive, got {value}")
            object.__setattr__(self, name, value)
        n = round(self.horizon / self.slot_delta)
        if n < 1 or abs(n * self.slot_delta - self.horizon) > 1e-9 * self.horizon:
            raise ScenarioError(
                f"N*delta = T violated: horizon {self.horizon} s is not an integer "
                f"multiple of slot {self.slot_delta} s"
            )
        object.__setattr__(self, "slot_count", int(n))
        if self.initial_center is not None:
            c = tuple(float(x) for x in self.initial_center)
            if len(c) != 2 or not all(math.isfinite(x) for x in c):
                raise ScenarioError("initial_center must be a finite 2-D point")
            object.__setattr__(self, "initial_center", c)
        if self.initial_radius is not None and not float(self.initial_radius) > 0:
            raise ScenarioError("initial_radius must be strictly positive")

    @property
    def K1(self) -> int:
        return len(self.eavesdroppers)

    @property
    def K2(self) -> int:
        return len(self.legit_users)

    @property
    def M2(self) -> int:
        return self.suav_count

    @property
    def M1(self) -> int:
        return self.juav_count

    @property
    def uav_count(self) -> int:
        return self.suav_count + self.juav_count

    @property
    def N(self) -> int:
        return self.slot_count

    def is_suav(self, i: int) -> bool:
        return 0 <= i < self.suav_count

    def interferers(self, m2: int) -> list[int]:
        """Flat indices of the interference set M2 \\ {m2} U M1."""
        return [i for i in range(self.uav_count) if i != m2]

    def with_changes(self, **changes: Any) -> "Scenario":
        return replace(self, **changes)

    def __eq__(self, other: object) -> bool:
        if not isinstance(other, Scenario):
            return NotImplemented
        for f in fields(self):
            a, b = getattr(self, f.name), getattr(other, f.name)
            if isinstance(a, np.ndarray):
                if a.shape != b.shape or not np.array_equal(a, b):
                    return False
            elif a != b:
                return False
        return True

    __hash__ = None  # type: ignore[assignment]

    def to_dict(self) -> dict[str, Any]:
        """Serialize with explicit unit tags (linear physics values)."""
        out: dict[str, Any] = {
            "legit_users": self.legit_users.tolist(),
            "eavesdroppers": self.eavesdroppers.tolist(),
            "suav_count": self.suav_count,
            "juav_count": self.juav_count,
            "period_s": self.horizon,
            "slot_s": self.slot_delta,
            "altitude_m": self.altitude,
            "bandwidth_hz": self.bandwidth,
            "beta0_linear": self.beta0,
            "noise_w": self.noise_power,
            "p_max_w": self.p_max,
            "v_max_mps": self.v_max,
            "a_max_mps2": self.a_max,
            "gravity_mps2": self.gravity,
            "c1": self.c1,
            "c2": self.c2,
            "tolerance": self.tol,
        }
        if self.initial_center is not None:
            out["initial_center"] = list(self.initial_center)
        if self.initial_radius is not None:
            out["initial_radius_m"] = self.initial_radius
        return out

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2)


# key in document -> Scenario field
_PLAIN_KEYS = {
    "period_s": "horizon",
    "slot_s": "slot_delta",
    "altitude_m": "altitude",
    "bandwidth_hz": "bandwidth",
    "p_max_w": "p_max",
    "v_max_mps": "v_max",
    "a_max_mps2": "a_max",
    "gravity_mps2": "gravity",
    "c1": "c1",
    "c2": "c2",
    "tolerance": "tol",
    "initial_radius_m": "initial_radius",
}
_TAGGED = {
    "beta0": {"beta0_db": db_to_linear, "beta0_linear": float},
    "noise_power": {"noise_dbm": dbm_to_watts, "noise_w": float, "noise_db": db_to_linear},
}
_STRUCTURAL = {"legit_users", "eavesdroppers", "suav_count", "juav_count", "initial_center"}
_FORBIDDEN = {"slot_count", "N"}


def scenario_from_dict(doc: dict[str, Any]) -> Scenario:
    if not isinstance(doc, dict):
        raise ScenarioError("scenario document must be a JSON object")
    bad = _FORBIDDEN & doc.keys()
    if bad:
        raise ScenarioError(f"{sorted(bad)} cannot be configured: N is derived from period_s / slot_s")
    known = set(_PLAIN_KEYS) | _STRUCTURAL | {k for tags in _TAGGED.values() for k in tags}
    unknown = set(doc) - known
    if unknown:
        raise ScenarioError(f"unknown scenario keys: {sorted(unknown)}")
    for key in ("legit_users", "eavesdroppers", "suav_count", "period_s"):
        if key not in doc:
            raise ScenarioError(f"missing required key {key!r}")

    defaults = table1_defaults()
    kwargs: dict[str, Any] = {
        name: defaults[name]
        for name in ("altitude", "bandwidth", "slot_delta", "beta0", "noise_power", "p_max",
                     "v_max", "a_max", "gravity", "c1", "c2", "tol")
    }
    kwargs["legit_users"] = doc["legit_users"]
    kwargs["eavesdroppers"] = doc["eavesdroppers"]
    kwargs["suav_count"] = doc["suav_count"]
    kwargs["juav_count"] = doc.get("juav_count", 0)
    if "initial_center" in doc:
        kwargs["initial_center"] = tuple(doc["initial_center"])
    for key, name in _PLAIN_KEYS.items():
        if key in doc:
            try:
                kwargs[name] = float(doc[key])
            except (TypeError, ValueError) as exc:
                raise ScenarioError(f"{key} must be numeric") from exc
    for name, tags in _TAGGED.items():
        given = [k for k in tags if k in doc]
        if len(given) > 1:
            raise ScenarioError(f"{name} given more than once: {given}")
        if given:
            key = given[0]
            try:
                kwargs[name] = tags[key](float(doc[key]))
            except (TypeError, ValueError) as exc:
                raise ScenarioError(f"{key} must be numeric") from exc
    return Scenario(**kwargs)


def load_scenario(config_text: str) -> Scenario:
    """Parse a JSON scenario document and validate it."""
    try:
        doc = json.loads(config_text)
    except json.JSONDecodeError as exc:
        raise ScenarioError(f"scenario is not valid JSON: {exc}") from exc
    return scenario_from_dict(doc)


def load_scenario_file(path: str | Path) -> Scenario:
    return load_scenario(Path(path).read_text())
