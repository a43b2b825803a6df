"""Instance generators shared by the test modules."""

from __future__ import annotations

import math
import random
from typing import List, Tuple

from energy_frontier.costmodel import FrequencyProfile, ProfilePoint, ProfileSet, synth_profile, truncate_sweep
from energy_frontier.dag import NodeDag, build_1f1b
from energy_frontier.frontier import Frontier

# Frequencies every 30 MHz from 1410 down to 720.
FINE_FREQUENCIES = tuple(range(1410, 700, -30))


def exp_profile(rng: random.Random, stage: int, kind: str, k: int) -> FrequencyProfile:
    """``k`` points lying exactly on a random decreasing convex exponential
    ``a * exp(b * t) + c``, evenly spaced in time (rounded to microseconds)."""
    t_fast = rng.uniform(0.010, 0.040)
    t_slow = t_fast * rng.uniform(1.2, 1.6)
    e_fast = rng.uniform(250, 400) * t_fast
    e_slow = rng.uniform(0.6, 0.85) * e_fast
    c = rng.uniform(0.3, 0.9) * e_slow
    b = math.log((e_fast - c) / (e_slow - c)) / (t_fast - t_slow)
    a = (e_fast - c) * math.exp(-b * t_fast)
    points = []
    for i in range(k):
        t = round((t_fast + (t_slow - t_fast) * i / (k - 1)) * 1e6) * 1e-6
        points.append(ProfilePoint(1400 - 100 * i, t, a * math.exp(b * t) + c))
    return FrequencyProfile(stage, kind, tuple(points))


def exp_instance(rng: random.Random, num_stages: int, num_microbatches: int, k: int,
                 builder=build_1f1b) -> Tuple[NodeDag, ProfileSet]:
    dag = builder(num_stages, num_microbatches)
    profiles = [exp_profile(rng, s, kind, k) for s in range(num_stages) for kind in ("forward", "backward")]
    return dag, ProfileSet.of(profiles)


def imbalanced_instance(rng: random.Random, num_stages: int, num_microbatches: int,
                        frequencies=FINE_FREQUENCIES, max_ratio: float = 1.4) -> Tuple[NodeDag, ProfileSet]:
    """Cubic-power profiles shared by all stages, with stage work drawn up to
    ``max_ratio`` times the lightest stage; backward is about twice forward."""
    p_static = rng.uniform(60, 100)
    k = rng.uniform(0.6, 1.0) * 1e-7
    ratio = rng.uniform(1.05, max_ratio)
    works = [1e7] + [1e7 * rng.uniform(1, ratio) for _ in range(num_stages - 1)]
    rng.shuffle(works)
    profiles = []
    for s, w in enumerate(works):
        profiles.append(truncate_sweep(synth_profile(w, p_static, k, frequencies, s, "forward")))
        profiles.append(truncate_sweep(synth_profile(2 * w * rng.uniform(0.95, 1.05), p_static, k, frequencies, s,
                                                     "backward")))
    return build_1f1b(num_stages, num_microbatches), ProfileSet.of(profiles)


def step_violations(frontier: Frontier) -> List[Tuple[int, int]]:
    """Consecutive planned times that are not exactly ``tau`` apart, except a
    final clipped step that lands on the frontier's ``t_min``."""
    tau = frontier.problem.tau
    times = [s.planned_time for s in frontier.schedules]
    bad = []
    for i, (a, b) in enumerate(zip(times, times[1:])):
        last = i == len(times) - 2
        if a - b == tau:
            continue
        if last and b == frontier.t_min and 0 < a - b:
            continue
        bad.append((a, b))
    return bad


# Acceptance criterion number -> (passed, detail); printed in the terminal summary.
ACCEPTANCE_RESULTS = {}


def record(criterion: int, passed: bool, detail: str) -> None:
    ACCEPTANCE_RESULTS[criterion] = (passed, detail)
    print(f"\nACCEPTANCE {criterion:2d} {'PASS' if passed else 'FAIL'}: {detail}")
