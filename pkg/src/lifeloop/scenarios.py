"""Scripted mission scenarios: disturbance profiles, activity and fault injections."""

from __future__ import annotations

import json
from bisect import bisect_right
from dataclasses import asdict, dataclass
from pathlib import Path

from .constants import P_ATM


@dataclass(frozen=True)
class Profile:
    """Piecewise profile over time in minutes.

    ``points`` are (t_min, value) pairs. ``interp`` is "step" (hold each value
    until the next point) or "linear". With ``period`` the pattern repeats;
    otherwise the last value holds after the final point.
    """

    points: tuple
    interp: str = "step"
    period: float | None = None

    def __post_init__(self):
        if not self.points:
            raise ValueError("profile needs at least one point")
        ts = [p[0] for p in self.points]
        if ts[0] != 0.0 or any(b <= a for a, b in zip(ts, ts[1:])):
            raise ValueError("profile times must start at 0 and increase")
        if self.interp not in ("step", "linear"):
            raise ValueError("interp must be 'step' or 'linear'")
        if self.period is not None and self.period <= ts[-1]:
            raise ValueError("period must exceed the last breakpoint")
        object.__setattr__(self, "_ts", tuple(float(p[0]) for p in self.points))
        object.__setattr__(self, "_vs", tuple(float(p[1]) for p in self.points))

    @classmethod
    def constant(cls, value: float) -> "Profile":
        return cls(((0.0, float(value)),))

    def __call__(self, t_min: float) -> float:
        t = t_min % self.period if self.period is not None else t_min
        ts, vs = self._ts, self._vs
        i = max(bisect_right(ts, t) - 1, 0)
        if self.interp == "linear" and i + 1 < len(ts) and t >= ts[0]:
            return vs[i] + (vs[i + 1] - vs[i]) * (t - ts[i]) / (ts[i + 1] - ts[i])
        return vs[i]


@dataclass(frozen=True)
class Fault:
    """Scripted fault. Kinds: ``o2_cell_drift`` (magnitude fraction/s on
    ``cell``), ``leak`` (conductance mol s^-1 Pa^-1), ``breach`` (conductance),
    ``scrubber_bias`` (truth effectiveness multiplier)."""

    kind: str
    onset_min: float
    magnitude: float
    cell: int = 0

    def __post_init__(self):
        if self.kind not in ("o2_cell_drift", "leak", "breach", "scrubber_bias"):
            raise ValueError(f"unknown fault kind {self.kind!r}")


@dataclass(frozen=True)
class ScenarioScript:
    name: str
    duration_min: float = 1440.0
    W: Profile = Profile.constant(250.0)
    T_ext: Profile = Profile.constant(40.0)
    q_rad: Profile = Profile.constant(1.0)
    toxic: Profile = Profile.constant(0.0)
    P_a: Profile = Profile.constant(P_ATM)
    activity: float | None = None        # None: follows W / 500 W
    faults: tuple = ()
    seed: int = 0

    def __post_init__(self):
        if self.duration_min < 0:
            raise ValueError("duration must be non-negative")

    def disturbance(self, t_s: float) -> dict:
        m = t_s / 60.0
        return dict(W=self.W(m), T_ext=self.T_ext(m), q_rad=self.q_rad(m),
                    c_toxic=self.toxic(m), P_a=self.P_a(m))

    def activity_at(self, t_s: float) -> float:
        if self.activity is not None:
            return self.activity
        return min(1.0, max(0.0, self.W(t_s / 60.0) / 500.0))

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, data: dict) -> "ScenarioScript":
        kw = dict(data)
        for key in ("W", "T_ext", "q_rad", "toxic", "P_a"):
            if key in kw:
                v = kw[key]
                if isinstance(v, (int, float)):
                    kw[key] = Profile.constant(v)
                else:
                    kw[key] = Profile(tuple(tuple(p) for p in v["points"]),
                                      v.get("interp", "step"), v.get("period"))
        kw["faults"] = tuple(Fault(**f) for f in kw.get("faults", ()))
        return cls(**kw)

    @classmethod
    def load(cls, path: str | Path) -> "ScenarioScript":
        return cls.from_dict(json.loads(Path(path).read_text()))


def scenario_library() -> dict:
    """The three reference missions, each run until the O2 tank empties."""
    return {
        "A": ScenarioScript("A", W=Profile.constant(250.0)),
        "B": ScenarioScript("B", W=Profile(((0.0, 500.0), (5.0, 80.0)), "step", period=8.0)),
        "C": ScenarioScript("C", W=Profile.constant(250.0),
                            T_ext=Profile(((0.0, 60.0), (90.0, 300.0)), "linear")),
    }


def get_scenario(name_or_path: str) -> ScenarioScript:
    lib = scenario_library()
    if name_or_path in lib:
        return lib[name_or_path]
    return ScenarioScript.load(name_or_path)
