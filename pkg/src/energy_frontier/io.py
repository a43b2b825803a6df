"""File formats: DAG and profile inputs, frontier and schedule outputs.

All times on disk are microseconds (profiles: seconds) and all energies are
millijoules (profiles: joules). Internally times are integer quanta.
"""

from __future__ import annotations

import csv
import io
import json
import re
from pathlib import Path
from typing import Any, Dict, List, Optional, Tuple, Union

from .costmodel import DEFAULT_P_BLOCKING_W, FrequencyProfile, ProfilePoint, ProfileSet, synth_profile, truncate_sweep
from .dag import Computation, Kind, MalformedDagError, NodeDag, build_1f1b, build_gpipe, iteration_time
from .frontier import EnergySchedule, Frontier, PlanningProblem

FORMAT_VERSION = 1
BUILTIN_FREQUENCIES = tuple(range(1410, 779, -90))  # 8 frequencies
_SPEC = re.compile(r"^(1f1b|gpipe):(\d+)x(\d+)$")

JsonLike = Union[str, Path, Dict[str, Any]]


class InputError(ValueError):
    """An input file or argument is malformed."""


def _load(src: JsonLike) -> Dict[str, Any]:
    if isinstance(src, dict):
        return src
    try:
        with open(src) as f:
            return json.load(f)
    except OSError as e:
        raise InputError(f"cannot read {src}: {e.strerror}") from e
    except json.JSONDecodeError as e:
        raise InputError(f"{src} is not valid JSON: {e}") from e


# -- DAGs -------------------------------------------------------------------


def dag_from_json(src: JsonLike) -> NodeDag:
    obj = _load(src)
    try:
        comps = [
            Computation(int(c["id"]), int(c["stage"]), None if c.get("microbatch") is None else int(c["microbatch"]),
                        Kind(c["kind"]), None if c.get("duration_us") is None else float(c["duration_us"]))
            for c in obj["computations"]
        ]
        edges = [(int(u), int(v)) for u, v in obj.get("edges", [])]
        return NodeDag.from_dependencies(comps, edges)
    except (KeyError, TypeError) as e:
        raise InputError(f"malformed DAG: missing or invalid field {e}") from e
    except (MalformedDagError, ValueError) as e:
        raise InputError(f"malformed DAG: {e}") from e


def dag_to_json(dag: NodeDag) -> Dict[str, Any]:
    comps = []
    for c in dag.computations:
        entry: Dict[str, Any] = {"id": c.id, "stage": c.stage, "microbatch": c.microbatch, "kind": c.kind.value}
        if c.duration_us is not None:
            entry["duration_us"] = c.duration_us
        comps.append(entry)
    real = len(dag.computations)
    edges = [[u, v] for u, v in dag.edges if u < real and v < real]
    return {"computations": comps, "edges": edges}


def parse_dag_spec(spec: str) -> Tuple[NodeDag, bool]:
    """``1f1b:NxM``, ``gpipe:NxM`` or ``file:path``. The flag tells whether
    the DAG is builtin (and may fall back to synthetic profiles)."""
    if spec.startswith("file:"):
        return dag_from_json(spec[len("file:"):]), False
    m = _SPEC.match(spec)
    if not m:
        raise InputError(f"bad DAG spec {spec!r}; expected 1f1b:NxM, gpipe:NxM or file:<path>")
    n, mb = int(m.group(2)), int(m.group(3))
    if n < 1 or mb < 1:
        raise InputError("a pipeline needs at least one stage and one microbatch")
    return (build_1f1b if m.group(1) == "1f1b" else build_gpipe)(n, mb), True


# -- profiles ---------------------------------------------------------------


def profiles_from_json(src: JsonLike, p_blocking_w: Optional[float] = None) -> ProfileSet:
    """Load profiles; ``p_blocking_w`` overrides the file's blocking power."""
    obj = _load(src)
    try:
        profiles = [
            FrequencyProfile(int(p["stage"]), Kind(p["kind"]).value,
                             tuple(ProfilePoint(int(q["freq_mhz"]), float(q["time_s"]), float(q["energy_j"]))
                                   for q in p["points"]))
            for p in obj["profiles"]
        ]
        p_b = float(obj.get("p_blocking_watts", DEFAULT_P_BLOCKING_W)) if p_blocking_w is None else p_blocking_w
    except (KeyError, TypeError) as e:
        raise InputError(f"malformed profiles: missing or invalid field {e}") from e
    except ValueError as e:
        raise InputError(f"malformed profiles: {e}") from e
    if p_b < 0:
        raise InputError("blocking power must be non-negative")
    return ProfileSet.of(profiles, p_b)


def profiles_to_json(profiles: ProfileSet) -> Dict[str, Any]:
    return {
        "p_blocking_watts": profiles.p_blocking_w,
        "profiles": [
            {"stage": stage, "kind": kind,
             "points": [{"freq_mhz": p.freq_mhz, "time_s": p.time_s, "energy_j": p.energy_j} for p in prof.points]}
            for (stage, kind), prof in sorted(profiles.profiles.items())
        ],
    }


def builtin_profiles(num_stages: int, p_blocking_w: float = DEFAULT_P_BLOCKING_W) -> ProfileSet:
    """Deterministic synthetic profiles with mildly imbalanced stages and a
    cubic power model; backward passes do twice the forward work."""
    profs = []
    for s in range(num_stages):
        work = 1.2e7 * (1.0 + 0.08 * ((3 * s) % 5))
        profs.append(truncate_sweep(synth_profile(work, 80.0, 8e-8, BUILTIN_FREQUENCIES, s, "forward")))
        profs.append(truncate_sweep(synth_profile(2 * work, 80.0, 8e-8, BUILTIN_FREQUENCIES, s, "backward")))
    return ProfileSet.of(profs, p_blocking_w)


# -- frontier outputs -------------------------------------------------------


def _us(quanta: int, quantum_us: float) -> str:
    return f"{quanta * quantum_us:g}"


def frontier_csv(frontier: Frontier, quantum_us: float = 1.0) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["t_planned_us", "t_realized_us", "energy_planned_mj", "energy_realized_mj", "schedule_id"])
    for s in frontier.schedules:
        w.writerow([_us(s.planned_time, quantum_us), _us(s.realized_time, quantum_us),
                    f"{s.planned_energy_mj:.3f}", f"{s.realized_energy_mj:.3f}", s.schedule_id])
    return buf.getvalue()


def schedule_to_json(schedule: EnergySchedule, quantum_us: float = 1.0) -> Dict[str, Any]:
    return {
        "schedule_id": schedule.schedule_id,
        "t_planned_us": schedule.planned_time * quantum_us,
        "t_realized_us": schedule.realized_time * quantum_us,
        "energy_planned_mj": round(schedule.planned_energy_mj, 3),
        "energy_realized_mj": round(schedule.realized_energy_mj, 3),
        "computations": [
            {"id": cid, "freq_mhz": f, "t_planned_us": t * quantum_us, "e_planned_mj": e}
            for cid, (f, t, e) in enumerate(zip(schedule.frequencies, schedule.durations, schedule.energies_mj))
        ],
    }


def schedule_filename(schedule_id: int) -> str:
    return f"schedule_{schedule_id:05d}.json"


def frontier_bundle(frontier: Frontier, profiles: ProfileSet, quantum_us: float) -> Dict[str, Any]:
    """Everything needed to reload a frontier without re-planning."""
    problem = frontier.problem
    return {
        "version": FORMAT_VERSION,
        "tau_us": problem.tau * quantum_us,
        "quantum_us": quantum_us,
        "p_blocking_watts": problem.p_blocking_w,
        "T_min_us": frontier.t_min * quantum_us,
        "T_star_us": frontier.t_star * quantum_us,
        "dag": dag_to_json(problem.dag),
        "profiles": profiles_to_json(profiles),
        "schedules": [
            {"schedule_id": s.schedule_id, "durations": list(s.durations), "energies_mj": list(s.energies_mj),
             "planned_time": s.planned_time, "planned_energy_mj": s.planned_energy_mj,
             "frequencies": list(s.frequencies), "sped_up": list(s.sped_up), "slowed_down": list(s.slowed_down),
             "cut_cost_mj": s.cut_cost_mj}
            for s in frontier.schedules
        ],
    }


def load_bundle(src: JsonLike) -> Frontier:
    obj = _load(src)
    try:
        if obj.get("version") != FORMAT_VERSION:
            raise InputError(f"unsupported frontier bundle version {obj.get('version')!r}")
        quantum_us = float(obj["quantum_us"])
        dag = dag_from_json(obj["dag"])
        profiles = profiles_from_json(obj["profiles"], float(obj["p_blocking_watts"]))
        tau = int(round(float(obj["tau_us"]) / quantum_us))
        problem = PlanningProblem.build(dag, profiles, tau, quantum_us * 1e-6)
        schedules = tuple(_realize(problem, s) for s in obj["schedules"])
        return Frontier(schedules, int(round(obj["T_min_us"] / quantum_us)),
                        int(round(obj["T_star_us"] / quantum_us)), problem)
    except (KeyError, TypeError, IndexError) as e:
        raise InputError(f"malformed frontier bundle: {e}") from e


def _realize(problem: PlanningProblem, entry: Dict[str, Any]) -> EnergySchedule:
    """Recompute realized values from the stored frequency assignment."""
    q = problem.quantum_s
    freqs = [None if f is None else int(f) for f in entry["frequencies"]]
    if len(freqs) != len(problem.domains):
        raise InputError("schedule does not match the DAG")
    times, energies = [], []
    for f, dom, (t_max, e_max, _) in zip(freqs, problem.domains, problem.all_max()):
        if f is None:
            times.append(t_max)
            energies.append(1000.0 * e_max)
            continue
        point = next((p for p in dom.profile if p.freq_mhz == f), None)
        if point is None:
            raise InputError(f"frequency {f} MHz is not profiled")
        times.append(point.time_q(q))
        energies.append(1000.0 * point.energy_j)
    eff = sum(problem.effective_mj(e / 1000.0, t) for e, t in zip(energies, times))
    return EnergySchedule(
        tuple(int(t) for t in entry["durations"]), tuple(int(e) for e in entry["energies_mj"]),
        int(entry["planned_time"]), float(entry["planned_energy_mj"]), tuple(freqs), tuple(times), tuple(energies),
        iteration_time(problem.dag, times), eff, int(entry["schedule_id"]),
        tuple(entry.get("sped_up", ())), tuple(entry.get("slowed_down", ())), entry.get("cut_cost_mj"),
    )


def dump_json(obj: Any) -> str:
    return json.dumps(obj, indent=2) + "\n"
