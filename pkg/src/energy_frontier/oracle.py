"""Exact discrete frontier by exhaustive enumeration (small instances only)."""

from __future__ import annotations

from dataclasses import dataclass
from typing import List, Optional, Sequence, Tuple

import numpy as np

from .costmodel import ProfileSet, pareto_filter, round_half_up
from .dag import Kind, NodeDag
from .frontier import Frontier, lookup

MAX_COMBINATIONS = 10 ** 7
_CHUNK = 1 << 16


class BudgetExceededError(ValueError):
    pass


@dataclass(frozen=True)
class ExactPoint:
    time: int
    energy_mj: float  # effective
    frequencies: Tuple[Optional[int], ...]


@dataclass(frozen=True)
class ExactFrontier:
    points: Tuple[ExactPoint, ...]  # ascending time, strictly descending energy
    combinations: int

    def best_within(self, budget: float) -> Optional[ExactPoint]:
        """Lowest-energy point with time <= budget."""
        best = None
        for p in self.points:
            if p.time > budget:
                break
            best = p
        return best


def _options(dag: NodeDag, profiles: ProfileSet, quantum_s: float, p_blocking_w: float):
    """Per computation: (times, effective energies mJ, frequencies) of its Pareto points."""
    opts = []
    for c in dag.computations:
        if c.kind is Kind.CONSTANT:
            t = round_half_up((c.duration_us or 0.0) * 1e-6 / quantum_s)
            opts.append(([t], [0.0], [None]))
            continue
        pts = pareto_filter(profiles[(c.stage, c.kind.value)].points)
        times = [p.time_q(quantum_s) for p in pts]
        effs = [1000.0 * (p.energy_j - p_blocking_w * t * quantum_s) for p, t in zip(pts, times)]
        opts.append((times, effs, [p.freq_mhz for p in pts]))
    return opts


def _pareto_rows(times: np.ndarray, energies: np.ndarray, ids: np.ndarray):
    order = np.lexsort((ids, energies, times))
    t, e, i = times[order], energies[order], ids[order]
    prev_min = np.minimum.accumulate(np.concatenate(([np.inf], e[:-1])))
    keep = e < prev_min
    return t[keep], e[keep], i[keep]


def brute_force_frontier(dag: NodeDag, profiles: ProfileSet, quantum_s: float = 1e-6,
                         p_blocking_w: Optional[float] = None,
                         max_combinations: int = MAX_COMBINATIONS) -> ExactFrontier:
    """Evaluate every assignment of Pareto-optimal frequencies and keep the
    (iteration time, effective energy) Pareto set."""
    p_b = profiles.p_blocking_w if p_blocking_w is None else p_blocking_w
    opts = _options(dag, profiles, quantum_s, p_b)
    radices = np.array([len(o[0]) for o in opts], dtype=np.int64)
    total = 1
    for r in radices:
        total *= int(r)
        if total > max_combinations:
            raise BudgetExceededError(f"more than {max_combinations} frequency assignments")

    n = len(opts)
    time_tab = [np.array(o[0], dtype=np.int64) for o in opts]
    eff_tab = [np.array(o[1], dtype=float) for o in opts]
    preds = dag.predecessors
    order = [v for v in dag.topological_order if v < n]
    sink_preds = preds[dag.sink]

    kept_t, kept_e, kept_i = [], [], []
    for start in range(0, total, _CHUNK):
        ids = np.arange(start, min(start + _CHUNK, total), dtype=np.int64)
        rest = ids.copy()
        digits = np.empty((n, len(ids)), dtype=np.int64)
        for c in range(n - 1, -1, -1):
            digits[c] = rest % radices[c]
            rest //= radices[c]
        energy = np.zeros(len(ids))
        finish = np.zeros((n, len(ids)), dtype=np.int64)
        for c in range(n):
            energy += eff_tab[c][digits[c]]
        for v in order:
            ps = [p for p in preds[v] if p < n]
            begin = np.max(finish[ps], axis=0) if ps else 0
            finish[v] = begin + time_tab[v][digits[v]]
        ps = [p for p in sink_preds if p < n]
        times = np.max(finish[ps], axis=0) if ps else np.zeros(len(ids), dtype=np.int64)
        t, e, i = _pareto_rows(times, energy, ids)
        kept_t.append(t)
        kept_e.append(e)
        kept_i.append(i)
    t, e, i = _pareto_rows(np.concatenate(kept_t), np.concatenate(kept_e), np.concatenate(kept_i))

    points = []
    for tt, ee, idx in zip(t.tolist(), e.tolist(), i.tolist()):
        digs = []
        for c in range(n - 1, -1, -1):
            digs.append(idx % int(radices[c]))
            idx //= int(radices[c])
        digs.reverse()
        points.append(ExactPoint(int(tt), float(ee), tuple(opts[c][2][d] for c, d in enumerate(digs))))
    return ExactFrontier(tuple(points), total)


@dataclass(frozen=True)
class GapReport:
    gaps: Tuple[float, ...]     # per exact point whose budget the frontier can meet
    uncovered: int              # exact budgets faster than the fastest frontier schedule
    point_gaps: Tuple[float, ...]  # per frontier schedule, at its own realized time

    @property
    def max_gap(self) -> float:
        return max(self.gaps + self.point_gaps, default=0.0)

    @property
    def mean_gap(self) -> float:
        vals = self.gaps + self.point_gaps
        return sum(vals) / len(vals) if vals else 0.0


def _rel(alg: float, exact: float) -> float:
    if alg == exact:
        return 0.0
    return (alg - exact) / abs(exact)


def gap_report(exact: ExactFrontier, frontier: Frontier) -> GapReport:
    """Relative effective-energy gap of the realized frontier against the
    exact optimum, both at every exact time budget (via lookup) and at every
    frontier schedule's own realized time."""
    gaps: List[float] = []
    uncovered = 0
    fastest = frontier.fastest.realized_time
    for p in exact.points:
        if p.time < fastest:
            uncovered += 1
            continue
        gaps.append(_rel(lookup(frontier, p.time).realized_energy_mj, p.energy_mj))
    point_gaps = []
    for s in frontier.schedules:
        best = exact.best_within(s.realized_time)
        assert best is not None, "frontier schedule faster than every assignment"
        point_gaps.append(_rel(s.realized_energy_mj, best.energy_mj))
    return GapReport(tuple(gaps), uncovered, tuple(point_gaps))


def recursive_frontier(dag: NodeDag, profiles: ProfileSet, quantum_s: float = 1e-6,
                       p_blocking_w: Optional[float] = None) -> List[Tuple[int, float]]:
    """Plain recursive enumeration; a second, independent implementation used to
    cross-check :func:`brute_force_frontier`."""
    p_b = profiles.p_blocking_w if p_blocking_w is None else p_blocking_w
    opts = _options(dag, profiles, quantum_s, p_b)
    n = len(opts)
    outcomes = []

    def walk(c: int, times: List[int], energy: float):
        if c == n:
            finish = {}
            for v in dag.topological_order:
                start = max((finish.get(p, 0) for p in dag.predecessors[v]), default=0)
                finish[v] = start + (times[v] if v < n else 0)
            outcomes.append((finish[dag.sink], energy))
            return
        for t, e in zip(opts[c][0], opts[c][1]):
            walk(c + 1, times + [t], energy + e)

    walk(0, [], 0.0)
    outcomes.sort()
    front: List[Tuple[int, float]] = []
    for t, e in outcomes:
        if not front or e < front[-1][1]:
            front.append((t, e))
    return front
