"""Discrete-event emulation of energy schedules.

A schedule runs on a pipeline DAG with zero-latency dependencies: every
computation starts as soon as all its predecessors have finished. Energy is
accounted as computation energy, plus blocking power for the idle time within
an iteration, plus blocking power while waiting for a straggler pipeline.
"""

from __future__ import annotations

import csv
import io
import math
from dataclasses import dataclass, field
from typing import Dict, Iterable, List, Mapping, Optional, Sequence, Tuple, Union

from .dag import Kind, NodeDag
from .frontier import EnergySchedule, Frontier, PlanningProblem, discover_frontier, lookup

# Strong scaling setup: (GPUs, pipelines, microbatches per pipeline)
# for a fixed global batch size of 1536.
STRONG_SCALING = ((1024, 16, 96), (2048, 32, 48), (4096, 64, 24), (8192, 128, 12))

Durations = Union[Mapping[int, int], Sequence[int]]


@dataclass(frozen=True)
class Timeline:
    starts: Tuple[int, ...]
    ends: Tuple[int, ...]
    iteration_time: int
    stage_of: Tuple[int, ...]

    def busy(self, stage: int) -> List[Tuple[int, int]]:
        return sorted((s, e) for s, e, st in zip(self.starts, self.ends, self.stage_of) if st == stage)

    def gaps(self, stage: int) -> List[Tuple[int, int]]:
        """Idle intervals of a stage between its first start and last end."""
        out = []
        intervals = self.busy(stage)
        for (_, end), (nxt, _) in zip(intervals, intervals[1:]):
            if nxt > end:
                out.append((end, nxt))
        return out


def simulate(dag: NodeDag, durations: Durations) -> Timeline:
    n = len(dag.computations)
    dur = [int(durations[i]) for i in range(n)]
    if any(d < 0 for d in dur):
        raise ValueError("durations must be non-negative")
    finish = [0] * dag.num_nodes
    start = [0] * dag.num_nodes
    for node in dag.topological_order:
        start[node] = max((finish[p] for p in dag.predecessors[node]), default=0)
        finish[node] = start[node] + (dur[node] if node < n else 0)
    return Timeline(tuple(start[:n]), tuple(finish[:n]), start[dag.sink],
                    tuple(c.stage for c in dag.computations))


@dataclass(frozen=True)
class EnergyReport:
    computation_mj: float
    blocking_mj: float
    straggler_mj: float
    effective_mj: float
    per_stage: Dict[int, Tuple[float, float]] = field(default_factory=dict)  # stage -> (computation, blocking)

    @property
    def total_mj(self) -> float:
        return self.computation_mj + self.blocking_mj + self.straggler_mj


def energy_report(timeline: Timeline, energies_mj: Sequence[float], num_stages: int, p_blocking_w: float,
                  quantum_s: float = 1e-6, straggler_time: Optional[int] = None) -> EnergyReport:
    """Three-part energy of one pipeline iteration that ends at ``straggler_time``.

    Also checks that the total equals the effective energy plus blocking power
    over the whole straggler iteration on every stage.
    """
    t_iter = timeline.iteration_time
    t_prime = t_iter if straggler_time is None else straggler_time
    if t_prime < t_iter:
        raise ValueError(f"straggler time {t_prime} is shorter than the iteration time {t_iter}")
    mw = 1000.0 * p_blocking_w * quantum_s  # mJ per quantum of blocking
    durations = [e - s for s, e in zip(timeline.starts, timeline.ends)]
    comp = float(sum(energies_mj))
    blocking = mw * (num_stages * t_iter - sum(durations))
    straggler = mw * num_stages * (t_prime - t_iter)
    effective = sum(e - mw * t for e, t in zip(energies_mj, durations))
    total = comp + blocking + straggler
    reformulated = effective + mw * num_stages * t_prime
    if abs(total - reformulated) > 1e-6 * max(1.0, abs(total)):
        raise AssertionError(f"energy decomposition mismatch: {total} vs {reformulated}")
    per_stage: Dict[int, Tuple[float, float]] = {}
    for stage in range(num_stages):
        ids = [i for i, st in enumerate(timeline.stage_of) if st == stage]
        e = sum(energies_mj[i] for i in ids)
        per_stage[stage] = (e, mw * (t_iter - sum(durations[i] for i in ids)))
    return EnergyReport(comp, blocking, straggler, effective, per_stage)


def schedule_report(problem: PlanningProblem, schedule: EnergySchedule,
                    straggler_time: Optional[int] = None) -> EnergyReport:
    """Energy report of a discretized schedule's realized times and energies."""
    timeline = simulate(problem.dag, schedule.realized_durations)
    return energy_report(timeline, schedule.realized_energies_mj, problem.num_stages, problem.p_blocking_w,
                         problem.quantum_s, straggler_time)


# -- baselines --------------------------------------------------------------


@dataclass(frozen=True)
class BaselinePoint:
    label: str
    time: int
    energy_mj: float  # effective
    frequencies: Tuple[Optional[int], ...]


def _evaluate(problem: PlanningProblem, freqs: Sequence[Optional[int]], label: str) -> BaselinePoint:
    times, energies = [], []
    q = problem.quantum_s
    for f, dom, (t_max, e_max, _) in zip(freqs, problem.domains, problem.all_max()):
        if f is None:
            times.append(t_max)
            energies.append(e_max)
            continue
        p = _profile_point(problem, dom, f)
        times.append(p.time_q(q))
        energies.append(p.energy_j)
    eff = sum(problem.effective_mj(e, t) for e, t in zip(energies, times))
    return BaselinePoint(label, simulate(problem.dag, times).iteration_time, eff, tuple(freqs))


def _profile_point(problem: PlanningProblem, dom, freq: int):
    for p in dom.profile:
        if p.freq_mhz == freq:
            return p
    raise KeyError(freq)


def all_max_point(problem: PlanningProblem) -> BaselinePoint:
    return _evaluate(problem, [f for _, _, f in problem.all_max()], "all-max")


def _class_frequencies(problem: PlanningProblem, cid: int) -> List[int]:
    return sorted({p.freq_mhz for p in problem.domains[cid].profile}, reverse=True)


def zeus_global(problem: PlanningProblem) -> List[BaselinePoint]:
    """One frequency for every computation, swept over the frequencies all
    classes support (highest first)."""
    profiled = [c.id for c in problem.dag.computations if problem.domains[c.id].max_point is not None]
    if not profiled:
        return [all_max_point(problem)]
    common = set(_class_frequencies(problem, profiled[0]))
    for cid in profiled[1:]:
        common &= set(_class_frequencies(problem, cid))
    points = []
    for f in sorted(common, reverse=True):
        freqs = [f if problem.domains[c.id].max_point is not None else None for c in problem.dag.computations]
        points.append(_evaluate(problem, freqs, f"global@{f}"))
    return points


def zeus_per_stage(problem: PlanningProblem) -> List[BaselinePoint]:
    """Per-stage frequencies that balance forward time against the slowest
    stage, swept over the slowest stage's frequencies.

    The bottleneck is the stage with the longest forward time at maximum
    frequency; every other stage takes its lowest frequency whose forward
    time does not exceed the bottleneck's. Critical paths are ignored.
    """
    dag = problem.dag
    q = problem.quantum_s
    by_stage: Dict[int, List[int]] = {}
    forward_of: Dict[int, int] = {}
    for c in dag.computations:
        if problem.domains[c.id].max_point is None:
            continue
        by_stage.setdefault(c.stage, []).append(c.id)
        if c.kind is Kind.FORWARD:
            forward_of.setdefault(c.stage, c.id)
    if not forward_of:
        return zeus_global(problem)

    stage_freqs: Dict[int, List[int]] = {}
    for stage, ids in by_stage.items():
        common = set(_class_frequencies(problem, ids[0]))
        for cid in ids[1:]:
            common &= set(_class_frequencies(problem, cid))
        stage_freqs[stage] = sorted(common, reverse=True)

    def fwd_time(stage: int, f: int) -> int:
        return _profile_point(problem, problem.domains[forward_of[stage]], f).time_q(q)

    bottleneck = max(forward_of, key=lambda s: (fwd_time(s, stage_freqs[s][0]), -s))
    points = []
    for f in stage_freqs[bottleneck]:
        target = fwd_time(bottleneck, f)
        chosen = {bottleneck: f}
        for stage in by_stage:
            if stage == bottleneck:
                continue
            if stage not in forward_of:
                chosen[stage] = stage_freqs[stage][0]
                continue
            fits = [g for g in stage_freqs[stage] if fwd_time(stage, g) <= target]
            chosen[stage] = min(fits) if fits else stage_freqs[stage][0]
        freqs = [chosen.get(c.stage) if problem.domains[c.id].max_point is not None else None
                 for c in dag.computations]
        points.append(_evaluate(problem, freqs, f"per-stage@{f}"))
    return points


# -- straggler scenarios ----------------------------------------------------


@dataclass(frozen=True)
class ClusterScenario:
    pipelines: int
    factor: float = 1.0
    scaling: str = "weak"

    def __post_init__(self):
        if self.pipelines < 1:
            raise ValueError("need at least one pipeline")
        if not self.factor >= 1.0:
            raise ValueError(f"straggler factor must be >= 1, got {self.factor}")
        if self.scaling not in ("weak", "strong"):
            raise ValueError(f"unknown scaling mode {self.scaling!r}")


@dataclass(frozen=True)
class SavingsRow:
    factor: float
    straggler_time: int
    schedule_id: int
    savings_mj: float
    savings_pct: float
    intrinsic_mj: float
    extrinsic_mj: Optional[float]  # None with a single pipeline
    baseline_mj: float


def straggler_savings(frontier: Frontier, scenario: ClusterScenario) -> SavingsRow:
    """Cluster energy saved against running everything at maximum frequency.

    The straggler pipeline runs all-max and takes ``factor`` times the
    frontier's fastest iteration time; every other pipeline runs the frontier
    schedule looked up for that time and then waits. With one pipeline there
    is no straggler and only intrinsic savings remain.
    """
    problem = frontier.problem
    if problem is None:
        raise ValueError("frontier carries no planning problem")
    fastest = frontier.fastest
    baseline = all_max_point(problem)
    mw = 1000.0 * problem.p_blocking_w * problem.quantum_s
    n = problem.num_stages
    p = scenario.pipelines
    if p == 1:
        t_prime = fastest.realized_time
        chosen = fastest
        intrinsic = baseline.energy_mj - fastest.realized_energy_mj
        savings, extrinsic = intrinsic, None
    else:
        t_prime = max(math.floor(scenario.factor * fastest.realized_time), fastest.realized_time)
        chosen = lookup(frontier, t_prime)
        intrinsic = (p - 1) * (baseline.energy_mj - fastest.realized_energy_mj)
        extrinsic = (p - 1) * (fastest.realized_energy_mj - chosen.realized_energy_mj)
        savings = intrinsic + extrinsic
    total = p * (baseline.energy_mj + mw * n * t_prime)
    return SavingsRow(scenario.factor, t_prime, chosen.schedule_id, savings, 100.0 * savings / total,
                      intrinsic, extrinsic, total)


def savings_sweep(frontier: Frontier, factors: Iterable[float], pipelines: int) -> List[SavingsRow]:
    return [straggler_savings(frontier, ClusterScenario(pipelines, f)) for f in factors]


def strong_scaling_table(make_problem, factor: float = 1.0,
                         rows: Sequence[Tuple[int, int, int]] = STRONG_SCALING) -> List[Tuple[int, int, int, SavingsRow]]:
    """Savings for each strong-scaling row; ``make_problem(microbatches)``
    returns the planning problem of one pipeline with that many microbatches."""
    out = []
    for gpus, pipelines, microbatches in rows:
        fr = discover_frontier(make_problem(microbatches))
        out.append((gpus, pipelines, microbatches, straggler_savings(fr, ClusterScenario(pipelines, factor, "strong"))))
    return out


# -- writers ----------------------------------------------------------------


def _fmt(x: Optional[float], digits: int = 3) -> str:
    return "" if x is None else f"{x:.{digits}f}"


def savings_csv(rows: Sequence[SavingsRow]) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["factor", "savings_pct", "savings_mj"])
    for r in rows:
        w.writerow([f"{r.factor:g}", _fmt(r.savings_pct, 4), _fmt(r.savings_mj)])
    return buf.getvalue()


def breakdown_csv(rows: Sequence[SavingsRow]) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["factor", "straggler_time_us", "schedule_id", "intrinsic_mj", "extrinsic_mj", "baseline_mj"])
    for r in rows:
        w.writerow([f"{r.factor:g}", r.straggler_time, r.schedule_id, _fmt(r.intrinsic_mj), _fmt(r.extrinsic_mj),
                    _fmt(r.baseline_mj)])
    return buf.getvalue()


def timeline_csv(dag: NodeDag, timeline: Timeline, frequencies: Sequence[Optional[int]], quantum_us: float = 1.0) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["computation_id", "stage", "microbatch", "kind", "start_us", "end_us", "freq_mhz"])
    for c in dag.computations:
        w.writerow([c.id, c.stage, "" if c.microbatch is None else c.microbatch, c.kind.value,
                    f"{timeline.starts[c.id] * quantum_us:g}", f"{timeline.ends[c.id] * quantum_us:g}",
                    "" if frequencies[c.id] is None else frequencies[c.id]])
    return buf.getvalue()


def timeline_svg(dag: NodeDag, timeline: Timeline, frequencies: Sequence[Optional[int]],
                 width: int = 960, row_height: int = 28) -> str:
    """Stages as rows, computations as rectangles; darker means higher frequency."""
    known = [f for f in frequencies if f is not None]
    f_lo, f_hi = (min(known), max(known)) if known else (0, 0)
    span = max(timeline.iteration_time, 1)
    margin = 60
    scale = (width - margin - 10) / span
    num_stages = dag.num_stages
    height = row_height * num_stages + 30
    out = [f'<svg xmlns="http://www.w3.org/2000/svg" width="{width}" height="{height}" '
           f'viewBox="0 0 {width} {height}" font-family="monospace" font-size="11">']
    for s in range(num_stages):
        y = 10 + s * row_height
        out.append(f'<text x="4" y="{y + row_height / 2 + 4:.1f}">stage {s}</text>')
    for c in dag.computations:
        x = margin + timeline.starts[c.id] * scale
        w = max((timeline.ends[c.id] - timeline.starts[c.id]) * scale, 0.5)
        y = 10 + c.stage * row_height
        f = frequencies[c.id]
        shade = 0.5 if f is None or f_hi == f_lo else (f - f_lo) / (f_hi - f_lo)
        base = (70, 130, 180) if c.kind is Kind.FORWARD else (205, 92, 92) if c.kind is Kind.BACKWARD else (128, 128, 128)
        rgb = tuple(int(255 - (255 - ch) * (0.35 + 0.65 * shade)) for ch in base)
        out.append(f'<rect x="{x:.2f}" y="{y + 2}" width="{w:.2f}" height="{row_height - 4}" '
                   f'fill="rgb{rgb}" stroke="black" stroke-width="0.5"><title>{c.label} '
                   f'{"" if f is None else f"{f} MHz"}</title></rect>')
        if w > 18:
            out.append(f'<text x="{x + 2:.2f}" y="{y + row_height / 2 + 4:.1f}">{c.label.split("@")[0]}</text>')
    out.append(f'<text x="{margin}" y="{height - 4}">iteration time {timeline.iteration_time} quanta</text>')
    out.append("</svg>")
    return "\n".join(out) + "\n"
