"""Command-line interface.

Exit codes: 0 on success, 2 on invalid input, 3 when frontier discovery
fails.
"""

from __future__ import annotations

import argparse
import json
import logging
import math
import sys
from pathlib import Path
from typing import List, Optional, Sequence

from .costmodel import DEFAULT_P_BLOCKING_W
from .dag import min_imbalance_partition
from .emulator import breakdown_csv, savings_sweep, savings_csv, simulate, timeline_csv, timeline_svg
from .frontier import DEFAULT_TAU_US, OptimizationError, PlanningProblem, ProfileError, discover_frontier, lookup
from .io import (
    InputError,
    builtin_profiles,
    dump_json,
    frontier_bundle,
    frontier_csv,
    load_bundle,
    parse_dag_spec,
    profiles_from_json,
    schedule_filename,
    schedule_to_json,
)

EXIT_OK, EXIT_INPUT, EXIT_OPTIMIZE = 0, 2, 3
BUNDLE = "frontier.json"

def _read_layers(path: str) -> List[float]:
    try:
        text = Path(path).read_text()
    except OSError as e:
        raise InputError(f"cannot read {path}: {e.strerror}") from e
    try:
        values = json.loads(text)
        if isinstance(values, dict):
            values = values["layers"]
    except (json.JSONDecodeError, KeyError):
        values = text.replace(",", " ").split()
    try:
        return [float(v) for v in values]
    except (TypeError, ValueError) as e:
        raise InputError(f"{path}: layer latencies must be numbers") from e


def _quantum_us(args) -> float:
    if not args.quantum_us > 0:
        raise InputError("--quantum-us must be positive")
    return args.quantum_us


def cmd_partition(args) -> int:
    layers = _read_layers(args.layers)
    try:
        result = min_imbalance_partition(layers, args.stages)
    except ValueError as e:
        raise InputError(str(e)) from e
    out = {"boundaries": list(result.boundaries), "ratio": result.ratio,
           "stage_sums": result.stage_sums(layers)}
    sys.stdout.write(dump_json(out))
    return EXIT_OK


def _problem(args):
    quantum_us = _quantum_us(args)
    dag, builtin = parse_dag_spec(args.dag)
    if args.profiles:
        profiles = profiles_from_json(args.profiles, args.p_blocking_watts)
    elif builtin:
        profiles = builtin_profiles(dag.num_stages,
                                    DEFAULT_P_BLOCKING_W if args.p_blocking_watts is None else args.p_blocking_watts)
    else:
        raise InputError("--profiles is required for a DAG read from a file")
    tau_q = args.tau_us / quantum_us
    if not args.tau_us > 0 or not math.isclose(tau_q, round(tau_q)):
        raise InputError("--tau-us must be a positive multiple of the quantum")
    try:
        problem = PlanningProblem.build(dag, profiles, int(round(tau_q)), quantum_us * 1e-6)
    except ProfileError as e:
        raise InputError(str(e)) from e
    return problem, profiles, quantum_us


def cmd_optimize(args) -> int:
    problem, profiles, quantum_us = _problem(args)
    frontier = discover_frontier(problem)
    out = Path(args.out)
    (out / "schedules").mkdir(parents=True, exist_ok=True)
    (out / "frontier.csv").write_text(frontier_csv(frontier, quantum_us))
    for s in frontier.schedules:
        (out / "schedules" / schedule_filename(s.schedule_id)).write_text(dump_json(schedule_to_json(s, quantum_us)))
    (out / BUNDLE).write_text(dump_json(frontier_bundle(frontier, profiles, quantum_us)))
    summary = (f"T_min_us={frontier.t_min * quantum_us:g} T_star_us={frontier.t_star * quantum_us:g} "
               f"steps={frontier.steps}\n")
    (out / "summary.txt").write_text(summary)
    sys.stdout.write(summary)
    return EXIT_OK


def _find_bundle(path: Path) -> Path:
    if path.is_dir():
        path = path / BUNDLE
    if _is_bundle(path):
        return path
    for parent in path.parents:
        if _is_bundle(parent / BUNDLE):
            return parent / BUNDLE
    raise InputError(f"no {BUNDLE} found for {path}")


def _is_bundle(path: Path) -> bool:
    try:
        obj = json.loads(path.read_text())
    except (OSError, json.JSONDecodeError):
        return False
    return isinstance(obj, dict) and "schedules" in obj and "dag" in obj


def cmd_emulate(args) -> int:
    if args.pipelines < 1:
        raise InputError("--pipelines must be at least 1")
    if any(not f >= 1.0 for f in args.straggler_factor):
        raise InputError("--straggler-factor must be >= 1")
    src = Path(args.schedule)
    frontier = load_bundle(_find_bundle(src))
    problem = frontier.problem
    quantum_us = problem.quantum_s * 1e6

    rows = savings_sweep(frontier, args.straggler_factor, args.pipelines)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    (out / "savings.csv").write_text(savings_csv(rows))
    (out / "breakdown.csv").write_text(breakdown_csv(rows))

    if src.is_file() and not _is_bundle(src):
        try:
            chosen_id = int(json.loads(src.read_text())["schedule_id"])
            chosen = next(s for s in frontier.schedules if s.schedule_id == chosen_id)
        except (KeyError, ValueError, TypeError, StopIteration, json.JSONDecodeError) as e:
            raise InputError(f"{src}: not a schedule of this frontier") from e
    else:
        chosen = lookup(frontier, rows[0].straggler_time)
    timeline = simulate(problem.dag, chosen.realized_durations)
    (out / "timeline.csv").write_text(timeline_csv(problem.dag, timeline, chosen.frequencies, quantum_us))
    (out / "timeline.svg").write_text(timeline_svg(problem.dag, timeline, chosen.frequencies))
    sys.stdout.write(savings_csv(rows))
    return EXIT_OK


def cmd_oracle(args) -> int:
    from .oracle import BudgetExceededError, brute_force_frontier

    problem, profiles, quantum_us = _problem(args)
    try:
        exact = brute_force_frontier(problem.dag, profiles, problem.quantum_s, problem.p_blocking_w)
    except BudgetExceededError as e:
        raise InputError(str(e)) from e
    sys.stdout.write("t_us,energy_mj,frequencies\n")
    for p in exact.points:
        freqs = " ".join("-" if f is None else str(f) for f in p.frequencies)
        sys.stdout.write(f"{p.time * quantum_us:g},{p.energy_mj:.3f},{freqs}\n")
    return EXIT_OK


def cmd_serve(args) -> int:
    import uvicorn

    from .service import create_app

    if args.workers < 1:
        raise InputError("--workers must be at least 1")
    app = create_app(workdir=args.workdir, workers=args.workers, quantum_us=_quantum_us(args),
                     p_blocking_w=args.p_blocking_watts)
    uvicorn.run(app, host=args.host, port=args.port, log_level="info" if args.verbose else "warning")
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="energy-frontier",
                                     description="Time-energy frontiers of pipeline-parallel training iterations.")
    parser.add_argument("--quantum-us", type=float, default=1.0, help="time quantum in microseconds (default 1)")
    parser.add_argument("--p-blocking-watts", type=float, default=None,
                        help=f"blocking power in watts (default: profile file value, else {DEFAULT_P_BLOCKING_W:g})")
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True, metavar="{partition,optimize,emulate,serve}")

    p = sub.add_parser("partition", help="split layers into stages with minimum imbalance")
    p.add_argument("--layers", required=True, help="JSON list or whitespace-separated layer latencies")
    p.add_argument("--stages", type=int, required=True)
    p.set_defaults(func=cmd_partition)

    def planning_args(p):
        p.add_argument("--dag", required=True, help="1f1b:NxM, gpipe:NxM or file:<path>")
        p.add_argument("--profiles", help="profile JSON (builtin DAGs default to synthetic profiles)")
        p.add_argument("--tau-us", type=float, default=float(DEFAULT_TAU_US), help="planning step (default 1000)")

    p = sub.add_parser("optimize", help="discover the frontier and write schedules")
    planning_args(p)
    p.add_argument("--out", required=True, help="output directory")
    p.set_defaults(func=cmd_optimize)

    p = sub.add_parser("emulate", help="emulate straggler scenarios on an optimized frontier")
    p.add_argument("--schedule", required=True, help="optimize output directory, its frontier.json, or a schedule file")
    p.add_argument("--straggler-factor", type=float, nargs="+", default=[1.2])
    p.add_argument("--pipelines", type=int, default=16)
    p.add_argument("--out", default=".", help="output directory (default: current)")
    p.set_defaults(func=cmd_emulate)

    p = sub.add_parser("serve", help="run the job service")
    p.add_argument("--host", default="127.0.0.1")
    p.add_argument("--port", type=int, default=8000)
    p.add_argument("--workers", type=int, default=2, help="concurrent characterizations (default 2)")
    p.add_argument("--workdir", default=None, help="job directory (env PERSEUS_WORKDIR, else ./jobs)")
    p.set_defaults(func=cmd_serve)

    p = sub.add_parser("oracle")  # debugging aid, deliberately unlisted
    planning_args(p)
    p.set_defaults(func=cmd_oracle)
    return parser


def main(argv: Optional[Sequence[str]] = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except InputError as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_INPUT
    except OptimizationError as e:
        print(f"optimization failed: {e}", file=sys.stderr)
        return EXIT_OPTIMIZE


if __name__ == "__main__":
    sys.exit(main())
