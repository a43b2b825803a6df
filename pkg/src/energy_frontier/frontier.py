"""Iterative time-energy frontier discovery.

Planning happens on a grid of ``tau`` quanta: every computation's planned
duration is a multiple of ``tau`` between its fastest and its minimum-energy
profiled time (both rounded up to the grid). Starting from the minimum-energy
schedule, each step removes exactly ``tau`` from the iteration time by
speeding up the computations on a minimum cut of the critical sub-DAG and
slowing down the ones that cut crosses backwards.
"""

from __future__ import annotations

import bisect
import dataclasses
import logging
from dataclasses import dataclass, field
from functools import cached_property
from typing import Dict, List, Optional, Sequence, Tuple

from .costmodel import (
    DegenerateFitError,
    DurationDomain,
    ProfilePoint,
    ProfileSet,
    fit_exp,
    pareto_filter,
    round_half_up,
)
from .dag import EdgeDag, Kind, NodeDag, annotate_slack, critical_subdag, iteration_time, to_edge_centric
from .flow import build_capacity_dag, max_flow_lower_bounds, min_cut_from_flow

log = logging.getLogger(__name__)

DEFAULT_TAU_US = 1000


class OptimizationError(RuntimeError):
    """Frontier discovery reached a state the algorithm should never produce."""


class ProfileError(ValueError):
    """A computation has no usable profile."""


def grid_up(t: int, tau: int) -> int:
    return -(-t // tau) * tau


@dataclass(frozen=True, eq=False)
class PlanningProblem:
    dag: NodeDag
    edag: EdgeDag
    domains: Tuple[DurationDomain, ...]
    tau: int
    quantum_s: float
    p_blocking_w: float

    @classmethod
    def build(cls, dag: NodeDag, profiles: ProfileSet, tau: int, quantum_s: float = 1e-6,
              p_blocking_w: Optional[float] = None) -> "PlanningProblem":
        if tau <= 0:
            raise ValueError("tau must be a positive number of quanta")
        if quantum_s <= 0:
            raise ValueError("quantum must be positive")
        p_b = profiles.p_blocking_w if p_blocking_w is None else p_blocking_w
        per_class: Dict[Tuple[int, str], DurationDomain] = {}
        domains = []
        for c in dag.computations:
            if c.kind is Kind.CONSTANT:
                t = round_half_up((c.duration_us or 0.0) * 1e-6 / quantum_s)
                g = grid_up(t, tau)
                domains.append(DurationDomain(g, g, fixed_energy_j=p_b * t * quantum_s, fixed_time=t))
                continue
            key = (c.stage, c.kind.value)
            if key not in per_class:
                if key not in profiles:
                    raise ProfileError(f"no profile for stage {c.stage} {c.kind.value}")
                per_class[key] = _domain_for(profiles[key].points, tau, quantum_s)
            domains.append(per_class[key])
        return cls(dag, to_edge_centric(dag), tuple(domains), tau, quantum_s, p_b)

    @property
    def num_stages(self) -> int:
        return self.dag.num_stages

    def effective_mj(self, energy_j: float, time_q: int) -> float:
        return 1000.0 * (energy_j - self.p_blocking_w * time_q * self.quantum_s)

    def all_max(self) -> List[Tuple[int, float, Optional[int]]]:
        """(time, energy J, frequency) of every computation at its highest profiled frequency."""
        out = []
        for dom in self.domains:
            if dom.max_point is None:
                out.append((dom.fixed_time, dom.fixed_energy_j, None))
            else:
                p = dom.max_point
                out.append((p.time_q(self.quantum_s), p.energy_j, p.freq_mhz))
        return out


def _domain_for(points: Sequence[ProfilePoint], tau: int, quantum_s: float) -> DurationDomain:
    pareto = tuple(pareto_filter(points))
    fastest = max(points, key=lambda p: p.freq_mhz)
    try:
        curve = fit_exp(pareto, quantum_s)
    except DegenerateFitError:
        p = pareto[0]
        g = grid_up(p.time_q(quantum_s), tau)
        return DurationDomain(g, g, None, p.energy_j, pareto, fastest, p.time_q(quantum_s), tuple(points))
    return DurationDomain(grid_up(curve.t_min, tau), grid_up(curve.t_max, tau), curve, 0.0, pareto, fastest,
                          profile=tuple(points))


@dataclass(frozen=True)
class EnergySchedule:
    """One frontier point: planned durations/energies plus, once discretized,
    the frequency assignment and its profiled (realized) times and energies.

    Energies named ``*_energy_mj`` are effective energies in millijoules.
    """

    durations: Tuple[int, ...]
    energies_mj: Tuple[int, ...]
    planned_time: int
    planned_energy_mj: float
    frequencies: Tuple[Optional[int], ...] = ()
    realized_durations: Tuple[int, ...] = ()
    realized_energies_mj: Tuple[float, ...] = ()
    realized_time: Optional[int] = None
    realized_energy_mj: Optional[float] = None
    schedule_id: int = 0
    sped_up: Tuple[int, ...] = ()
    slowed_down: Tuple[int, ...] = ()
    cut_cost_mj: Optional[int] = None

    @property
    def is_discretized(self) -> bool:
        return self.realized_time is not None


def planned_schedule(problem: PlanningProblem, durations: Sequence[int], **extra) -> EnergySchedule:
    durations = tuple(int(t) for t in durations)
    for cid, (t, dom) in enumerate(zip(durations, problem.domains)):
        if not dom.lo <= t <= dom.hi:
            raise ValueError(f"planned duration {t} of computation {cid} outside [{dom.lo}, {dom.hi}]")
    energies = [dom.energy_j(t) for t, dom in zip(durations, problem.domains)]
    eff = sum(dom.effective_mj(t, problem.p_blocking_w, problem.quantum_s)
              for t, dom in zip(durations, problem.domains))
    return EnergySchedule(
        durations,
        tuple(round_half_up(1000.0 * e) for e in energies),
        iteration_time(problem.dag, durations),
        eff,
        **extra,
    )


def min_energy_schedule(problem: PlanningProblem) -> EnergySchedule:
    """Every computation at its minimum-energy duration (the slow end)."""
    return planned_schedule(problem, [dom.hi for dom in problem.domains])


def fastest_schedule(problem: PlanningProblem) -> EnergySchedule:
    return planned_schedule(problem, [dom.lo for dom in problem.domains])


def get_next_schedule(problem: PlanningProblem, schedule: EnergySchedule,
                      tau: Optional[int] = None) -> Optional[EnergySchedule]:
    """Cheapest schedule whose iteration time is ``tau`` shorter, or ``None``
    when the iteration time cannot be reduced any further."""
    tau = problem.tau if tau is None else tau
    durations = schedule.durations
    annotation = annotate_slack(problem.edag, dict(enumerate(durations)))
    critical = critical_subdag(problem.edag, annotation)
    cap = build_capacity_dag(critical, dict(enumerate(durations)), dict(enumerate(problem.domains)), tau,
                             problem.p_blocking_w, problem.quantum_s)
    flow = max_flow_lower_bounds(cap.graph)
    if flow is None:
        raise OptimizationError("capacity DAG admits no feasible flow")
    cut = min_cut_from_flow(cap.graph, flow)
    if cut.infinite:
        return None

    up = sorted(cap.payloads[i] for i in cut.forward if cap.payloads[i] is not None)
    down = sorted(
        cap.payloads[i]
        for i in cut.backward
        if cap.payloads[i] is not None and durations[cap.payloads[i]] + tau <= problem.domains[cap.payloads[i]].hi
    )
    target = annotation.iteration_time - tau

    def apply(slow: Sequence[int]) -> List[int]:
        new = list(durations)
        for c in up:
            new[c] -= tau
        for c in slow:
            new[c] += tau
        return new

    new = apply(down)
    reached = iteration_time(problem.dag, new)
    if reached > target:
        # A slowed computation also sits on a path that had exactly tau of
        # slack; keep only the slowdowns that fit.
        log.debug("slowdowns overshoot at T=%d; keeping a subset", annotation.iteration_time)
        keep: List[int] = []
        for c in down:
            if iteration_time(problem.dag, apply(keep + [c])) <= target:
                keep.append(c)
        down = keep
        new = apply(down)
        reached = iteration_time(problem.dag, new)
    if reached != target:
        raise OptimizationError(f"step from T={annotation.iteration_time} reached {reached}, expected {target}")
    return planned_schedule(problem, new, sped_up=tuple(up), slowed_down=tuple(down), cut_cost_mj=cut.cost)


def discretize(problem: PlanningProblem, schedule: EnergySchedule) -> EnergySchedule:
    """Slowest profiled frequency that runs within each planned duration
    (the highest frequency when none does)."""
    freqs: List[Optional[int]] = []
    times: List[int] = []
    energies: List[float] = []
    q = problem.quantum_s
    for t, dom in zip(schedule.durations, problem.domains):
        if not dom.points:
            freqs.append(None)
            times.append(dom.fixed_time)
            energies.append(1000.0 * dom.fixed_energy_j)
            continue
        fits = [p for p in dom.points if p.time_q(q) <= t]
        p = min(fits, key=lambda p: p.freq_mhz) if fits else dom.max_point
        freqs.append(p.freq_mhz)
        times.append(p.time_q(q))
        energies.append(1000.0 * p.energy_j)
    eff = sum(problem.effective_mj(e / 1000.0, t) for e, t in zip(energies, times))
    return dataclasses.replace(
        schedule,
        frequencies=tuple(freqs),
        realized_durations=tuple(times),
        realized_energies_mj=tuple(energies),
        realized_time=iteration_time(problem.dag, times),
        realized_energy_mj=eff,
    )


@dataclass(frozen=True, eq=False)
class Frontier:
    schedules: Tuple[EnergySchedule, ...]  # decreasing planned time, T* first
    t_min: int
    t_star: int
    problem: Optional[PlanningProblem] = field(default=None, repr=False)

    def __post_init__(self):
        if not self.schedules:
            raise ValueError("frontier needs at least one schedule")

    @property
    def steps(self) -> int:
        return len(self.schedules) - 1

    @cached_property
    def _index(self) -> Tuple[List[int], List[int]]:
        # Realized points that are Pareto-optimal in (time, effective energy),
        # ascending in time and strictly descending in energy.
        order = sorted(range(len(self.schedules)),
                       key=lambda i: (self.schedules[i].realized_time, self.schedules[i].realized_energy_mj, i))
        times, ids = [], []
        best = None
        for i in order:
            s = self.schedules[i]
            if best is None or s.realized_energy_mj < best:
                times.append(s.realized_time)
                ids.append(i)
                best = s.realized_energy_mj
        return times, ids

    @property
    def fastest(self) -> EnergySchedule:
        return self.schedules[self._index[1][0]]

    def lookup(self, straggler_time: float) -> EnergySchedule:
        return lookup(self, straggler_time)


def all_max_schedule(problem: PlanningProblem, schedule_id: int = 0) -> EnergySchedule:
    """Every computation at its highest frequency, planned at its profiled time."""
    rows = problem.all_max()
    times = tuple(t for t, _, _ in rows)
    energies = tuple(1000.0 * e for _, e, _ in rows)
    t = iteration_time(problem.dag, times)
    eff = sum(problem.effective_mj(e, tq) for tq, e, _ in rows)
    return EnergySchedule(times, tuple(round_half_up(e) for e in energies), t, eff,
                          frequencies=tuple(f for _, _, f in rows), realized_durations=times,
                          realized_energies_mj=energies, realized_time=t, realized_energy_mj=eff,
                          schedule_id=schedule_id)


def _clip_to(problem: PlanningProblem, fastest: EnergySchedule, hint: EnergySchedule) -> EnergySchedule:
    """Reclaim what slack the all-max schedule has, without lengthening it.

    Computations are visited in id order; each tries the frequency ``hint``
    gave it and then successively faster Pareto points, keeping the first one
    that neither lengthens the iteration nor raises effective energy.
    """
    q = problem.quantum_s
    times = list(fastest.realized_durations)
    energies = list(fastest.realized_energies_mj)
    freqs = list(fastest.frequencies)
    for cid, dom in enumerate(problem.domains):
        if not dom.points or hint.frequencies[cid] == freqs[cid]:
            continue
        current = problem.effective_mj(energies[cid] / 1000.0, times[cid])
        for p in sorted(dom.points, key=lambda p: -p.time_q(q)):
            if p.time_q(q) > hint.realized_durations[cid] or p.freq_mhz == freqs[cid]:
                continue
            if problem.effective_mj(p.energy_j, p.time_q(q)) >= current:
                continue
            trial = times[:cid] + [p.time_q(q)] + times[cid + 1:]
            if iteration_time(problem.dag, trial) <= fastest.planned_time:
                times[cid], energies[cid], freqs[cid] = p.time_q(q), 1000.0 * p.energy_j, p.freq_mhz
                break
    t = iteration_time(problem.dag, times)
    eff = sum(problem.effective_mj(e / 1000.0, tq) for e, tq in zip(energies, times))
    return dataclasses.replace(
        fastest,
        durations=tuple(times),
        energies_mj=tuple(round_half_up(e) for e in energies),
        planned_energy_mj=eff,
        frequencies=tuple(freqs),
        realized_durations=tuple(times),
        realized_energies_mj=tuple(energies),
        realized_energy_mj=eff,
    )


def discover_frontier(problem: PlanningProblem) -> Frontier:
    """Walk from the minimum-energy schedule down to the fastest one.

    The walk stays on the tau grid, whose fastest point is the all-max
    assignment with every duration rounded up to the grid. If that point
    realizes slower than the all-max assignment itself, one final clipped
    step lands exactly on the all-max schedule.
    """
    schedule = min_energy_schedule(problem)
    t_grid = fastest_schedule(problem).planned_time
    t_star = schedule.planned_time
    found = [discretize(problem, schedule)]
    while schedule.planned_time > t_grid:
        nxt = get_next_schedule(problem, schedule)
        if nxt is None:
            raise OptimizationError(f"no cut found at T={schedule.planned_time} above the grid minimum {t_grid}")
        schedule = dataclasses.replace(nxt, schedule_id=len(found))
        found.append(discretize(problem, schedule))
    fastest = all_max_schedule(problem, len(found))
    if found[-1].realized_time > fastest.planned_time:
        found.append(_clip_to(problem, fastest, found[-1]))
    t_min = fastest.planned_time
    log.info("frontier: T_min=%d T*=%d steps=%d", t_min, t_star, len(found) - 1)
    return Frontier(tuple(found), t_min, t_star, problem)


def lookup(frontier: Frontier, straggler_time: float) -> EnergySchedule:
    """Lowest-energy schedule whose realized iteration time fits within the
    straggler's; the fastest schedule if none does."""
    times, ids = frontier._index
    k = bisect.bisect_right(times, straggler_time)
    return frontier.schedules[ids[max(k - 1, 0)]]
