"""Per-computation time/energy cost model.

Profiles map each computation class ``(stage, kind)`` to measured (or
synthetic) ``(frequency, time, energy)`` points. Only Pareto-optimal points
matter for planning; they are relaxed into a continuous curve
``e(t) = a * exp(b * t) + c``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Dict, Iterable, List, Optional, Sequence, Tuple

import numpy as np
from scipy.optimize import minimize_scalar

DEFAULT_P_BLOCKING_W = 75.0
C_GRID_SIZE = 64


class DegenerateFitError(ValueError):
    """Profile has no time/energy tradeoff to fit (single point or flat energy)."""


def round_half_up(x: float) -> int:
    return int(math.floor(x + 0.5))


@dataclass(frozen=True)
class ProfilePoint:
    freq_mhz: int
    time_s: float
    energy_j: float

    def __post_init__(self):
        if self.freq_mhz <= 0 or self.time_s <= 0 or self.energy_j <= 0:
            raise ValueError(f"profile point must be positive: {self}")

    def time_q(self, quantum_s: float) -> int:
        return max(1, round_half_up(self.time_s / quantum_s))


@dataclass(frozen=True)
class FrequencyProfile:
    stage: int
    kind: str
    points: Tuple[ProfilePoint, ...]

    def __post_init__(self):
        pts = tuple(sorted(self.points, key=lambda p: -p.freq_mhz))
        if len(pts) < 2:
            raise ValueError(f"profile ({self.stage}, {self.kind}) needs at least 2 points")
        if any(a.freq_mhz == b.freq_mhz for a, b in zip(pts, pts[1:])):
            raise ValueError(f"profile ({self.stage}, {self.kind}) repeats a frequency")
        object.__setattr__(self, "points", pts)
        object.__setattr__(self, "kind", str(getattr(self.kind, "value", self.kind)))

    @property
    def key(self) -> Tuple[int, str]:
        return (self.stage, self.kind)

    @property
    def pareto_points(self) -> List[ProfilePoint]:
        return pareto_filter(self.points)

    def at(self, freq_mhz: int) -> ProfilePoint:
        for p in self.points:
            if p.freq_mhz == freq_mhz:
                return p
        raise KeyError(freq_mhz)


@dataclass
class ProfileSet:
    profiles: Dict[Tuple[int, str], FrequencyProfile]
    p_blocking_w: float = DEFAULT_P_BLOCKING_W

    def __getitem__(self, key: Tuple[int, str]) -> FrequencyProfile:
        stage, kind = key
        return self.profiles[(stage, str(getattr(kind, "value", kind)))]

    def __contains__(self, key) -> bool:
        stage, kind = key
        return (stage, str(getattr(kind, "value", kind))) in self.profiles

    @classmethod
    def of(cls, profiles: Iterable[FrequencyProfile], p_blocking_w: float = DEFAULT_P_BLOCKING_W) -> "ProfileSet":
        return cls({p.key: p for p in profiles}, p_blocking_w)


def pareto_filter(points: Sequence[ProfilePoint]) -> List[ProfilePoint]:
    """Points not dominated in (time, energy), ascending in time.

    Of exact duplicates in (time, energy) the higher frequency is kept.
    """
    if not points:
        raise ValueError("no profile points")
    ordered = sorted(points, key=lambda p: (p.time_s, p.energy_j, -p.freq_mhz))
    kept: List[ProfilePoint] = []
    for p in ordered:
        if not kept or p.energy_j < kept[-1].energy_j:
            kept.append(p)
    return kept


@dataclass(frozen=True)
class ExpCurve:
    """``e(t) = a * exp(b * t) + c`` with ``t`` in seconds and ``e`` in joules.

    ``t_min``/``t_max`` are in duration quanta of ``quantum_s`` seconds.
    """

    a: float
    b: float
    c: float
    t_min: int
    t_max: int
    rmse: float = 0.0
    quantum_s: float = 1e-6

    def __call__(self, t_s):
        return self.a * np.exp(self.b * t_s) + self.c

    def energy(self, t: int) -> float:
        """Energy in joules at ``t`` quanta, clamped to the valid interval."""
        t = min(max(t, self.t_min), self.t_max)
        return self.a * math.exp(self.b * t * self.quantum_s) + self.c


def _loglinear(t: np.ndarray, e: np.ndarray, c: float) -> Tuple[float, float, float]:
    slope, intercept = np.polyfit(t, np.log(e - c), 1)
    a = float(np.exp(intercept))
    pred = a * np.exp(slope * t) + c
    rmse = float(np.sqrt(np.mean((pred - e) ** 2)))
    return a, float(slope), rmse


def fit_exp(points: Sequence[ProfilePoint], quantum_s: float = 1e-6) -> ExpCurve:
    """Fit ``a * exp(b * t) + c`` to Pareto-optimal points.

    ``c`` is swept over a fixed grid on ``[0, 0.999 * min(energy)]`` with a
    log-linear solve for ``(a, b)`` at each value; the best grid cell is then
    polished with a bounded scalar search over ``c``. Two points get the
    exact solve with ``c = 0``.
    """
    pts = sorted(points, key=lambda p: p.time_s)
    if len(pts) < 2:
        raise DegenerateFitError("need at least two Pareto points")
    t = np.array([p.time_s for p in pts], dtype=float)
    e = np.array([p.energy_j for p in pts], dtype=float)
    if np.all(e == e[0]) or np.all(t == t[0]):
        raise DegenerateFitError("energy does not vary with time")
    t_min, t_max = pts[0].time_q(quantum_s), pts[-1].time_q(quantum_s)

    if len(pts) == 2:
        b = math.log(e[1] / e[0]) / (t[1] - t[0])
        a = e[0] * math.exp(-b * t[0])
        return ExpCurve(a, b, 0.0, t_min, t_max, 0.0, quantum_s)

    c_hi = 0.999 * float(e.min())
    grid = np.linspace(0.0, c_hi, C_GRID_SIZE)
    fits = [_loglinear(t, e, c) for c in grid]
    k = min(range(len(grid)), key=lambda i: fits[i][2])
    a, b, rmse = fits[k]
    c = float(grid[k])

    lo, hi = float(grid[max(k - 1, 0)]), float(grid[min(k + 1, len(grid) - 1)])
    res = minimize_scalar(lambda cc: _loglinear(t, e, cc)[2], bounds=(lo, hi), method="bounded",
                          options={"xatol": 1e-12 * max(c_hi, 1.0)})
    a2, b2, rmse2 = _loglinear(t, e, float(res.x))
    if rmse2 < rmse:
        a, b, rmse, c = a2, b2, rmse2, float(res.x)
    if not (a > 0 and b < 0):
        raise DegenerateFitError(f"fitted curve is not decreasing (a={a}, b={b})")
    return ExpCurve(a, b, c, t_min, t_max, rmse, quantum_s)


def effective_energy(energy_j: float, time_s: float, p_blocking_w: float) -> float:
    """Energy of a computation net of what blocking would draw in the same time."""
    if time_s < 0:
        raise ValueError("time must be non-negative")
    return energy_j - p_blocking_w * time_s


def e_plus(curve: ExpCurve, t: int, tau: int) -> float:
    """Joules needed to speed a computation up from ``t`` to ``t - tau`` quanta."""
    return curve.energy(t - tau) - curve.energy(t)


def e_minus(curve: ExpCurve, t: int, tau: int) -> float:
    """Joules saved by slowing a computation down from ``t`` to ``t + tau`` quanta."""
    return curve.energy(t) - curve.energy(t + tau)


def synth_profile(work_cycles: float, p_static_w: float, k_w_per_mhz3: float,
                  frequencies_mhz: Sequence[int], stage: int = 0, kind: str = "forward") -> FrequencyProfile:
    """Cubic dynamic power model: ``t = work / f`` and ``P = p_static + k f^3``."""
    if work_cycles <= 0 or p_static_w <= 0 or k_w_per_mhz3 < 0:
        raise ValueError("work and static power must be positive, k non-negative")
    points = []
    for f in frequencies_mhz:
        time_s = work_cycles / (f * 1e6)
        power = p_static_w + k_w_per_mhz3 * f ** 3
        points.append(ProfilePoint(int(f), time_s, power * time_s))
    return FrequencyProfile(stage, kind, tuple(points))


@dataclass(frozen=True)
class DurationDomain:
    """Planning domain of one computation on the step grid.

    Planned durations are multiples of the step ``tau`` between ``lo`` (the
    fastest profiled time rounded up to the grid) and ``hi`` (the
    minimum-energy time rounded up). Fixed computations have ``lo == hi``.
    """

    lo: int
    hi: int
    curve: Optional[ExpCurve] = None
    fixed_energy_j: float = 0.0
    points: Tuple[ProfilePoint, ...] = field(default=())  # Pareto points, ascending time
    max_point: Optional[ProfilePoint] = None  # highest profiled frequency
    fixed_time: int = 0  # realized duration when there is no profile
    profile: Tuple[ProfilePoint, ...] = field(default=())  # every profiled point

    @property
    def is_fixed(self) -> bool:
        return self.lo == self.hi

    def energy_j(self, t: int) -> float:
        if self.curve is None:
            return self.fixed_energy_j
        return self.curve.energy(t)

    def effective_mj(self, t: int, p_blocking_w: float, quantum_s: float) -> float:
        """Effective energy (mJ) of a planned duration. Time past the slowest
        profiled duration is spent blocking, which adds no effective energy."""
        if self.curve is None:
            busy = self.fixed_time
        else:
            busy = min(max(t, self.curve.t_min), self.curve.t_max)
        return 1000.0 * (self.energy_j(t) - p_blocking_w * busy * quantum_s)

    def speedup_cost(self, t: int, step: int, p_blocking_w: float, quantum_s: float) -> Optional[int]:
        """Effective-energy increase (mJ) of running ``step`` quanta faster, or
        ``None`` if that would leave the domain."""
        if self.curve is None or t - step < self.lo:
            return None
        return round_half_up(self.effective_mj(t - step, p_blocking_w, quantum_s)
                             - self.effective_mj(t, p_blocking_w, quantum_s))

    def slowdown_gain(self, t: int, step: int, p_blocking_w: float, quantum_s: float) -> Optional[int]:
        """Effective-energy decrease (mJ) of running ``step`` quanta slower, or
        ``None`` if that would leave the domain."""
        if self.curve is None or t + step > self.hi:
            return None
        return round_half_up(self.effective_mj(t, p_blocking_w, quantum_s)
                             - self.effective_mj(t + step, p_blocking_w, quantum_s))


def truncate_sweep(profile: FrequencyProfile) -> FrequencyProfile:
    """Drop the tail of a high-to-low frequency sweep once a frequency takes
    both more time and more energy than the one above it, as an online
    profiler that stops at that point would record."""
    kept = [profile.points[0]]
    for p in profile.points[1:]:
        prev = kept[-1]
        if p.time_s >= prev.time_s and p.energy_j >= prev.energy_j:
            break
        kept.append(p)
    if len(kept) < 2:
        kept = list(profile.points[:2])
    return FrequencyProfile(profile.stage, profile.kind, tuple(kept))
