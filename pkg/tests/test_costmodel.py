import math
import random

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy.optimize import curve_fit

from energy_frontier.costmodel import (
    DegenerateFitError,
    ExpCurve,
    FrequencyProfile,
    ProfilePoint,
    ProfileSet,
    e_minus,
    e_plus,
    effective_energy,
    fit_exp,
    pareto_filter,
    round_half_up,
    synth_profile,
    truncate_sweep,
)
from energy_frontier.dag import build_1f1b
from energy_frontier.frontier import PlanningProblem

from helpers import exp_profile


def test_round_half_up():
    assert [round_half_up(x) for x in (0.5, 1.5, 2.5, -0.5, 2.4999)] == [1, 2, 3, 0, 2]


def test_profile_point_quanta():
    p = ProfilePoint(1410, 0.0325, 9.1)
    assert p.time_q(1e-6) == 32500
    assert p.time_q(1e-3) == 33  # 32.5 rounds half up
    with pytest.raises(ValueError):
        ProfilePoint(1410, 0.0, 1.0)


def test_profile_rejects_duplicates_and_single_points():
    with pytest.raises(ValueError):
        FrequencyProfile(0, "forward", (ProfilePoint(1000, 0.01, 1.0),))
    with pytest.raises(ValueError):
        FrequencyProfile(0, "forward", (ProfilePoint(1000, 0.01, 1.0), ProfilePoint(1000, 0.02, 0.5)))


@settings(max_examples=200, deadline=None)
@given(st.lists(st.tuples(st.integers(1, 50), st.integers(1, 50)), min_size=1, max_size=12, unique=True))
def test_pareto_filter_matches_pairwise_dominance(pairs):
    points = [ProfilePoint(2000 - i, t / 1000, e / 10) for i, (t, e) in enumerate(pairs)]
    kept = pareto_filter(points)
    expected = {(p.time_s, p.energy_j) for p in points
                if not any((q.time_s <= p.time_s and q.energy_j <= p.energy_j)
                           and (q.time_s, q.energy_j) != (p.time_s, p.energy_j) for q in points)}
    assert {(p.time_s, p.energy_j) for p in kept} == expected
    times = [p.time_s for p in kept]
    energies = [p.energy_j for p in kept]
    assert times == sorted(times) and all(a > b for a, b in zip(energies, energies[1:]))


def test_pareto_filter_example():
    pts = [ProfilePoint(1410, 1.9, 10.0), ProfilePoint(1200, 2.3, 8.0), ProfilePoint(1000, 2.8, 8.5)]
    assert [p.freq_mhz for p in pareto_filter(pts)] == [1410, 1200]


def test_fit_recovers_exact_exponential():
    rng = random.Random(7)
    for _ in range(20):
        prof = exp_profile(rng, 0, "forward", rng.randint(4, 8))
        curve = fit_exp(prof.pareto_points)
        for p in prof.points:
            assert curve.energy(p.time_q(1e-6)) == pytest.approx(p.energy_j, rel=1e-3)


def test_fit_is_close_to_scipy_least_squares():
    # Independent fit: scipy's nonlinear least squares on the same points.
    rng = random.Random(2)
    for _ in range(10):
        prof = exp_profile(rng, 0, "forward", 6)
        t = np.array([p.time_s for p in prof.pareto_points])
        e = np.array([p.energy_j for p in prof.pareto_points])
        ours = fit_exp(prof.pareto_points)
        params, _ = curve_fit(lambda x, a, b, c: a * np.exp(b * x) + c, t, e, p0=(ours.a, ours.b, ours.c),
                              maxfev=20000)
        theirs = params[0] * np.exp(params[1] * t) + params[2]
        assert ours(t) == pytest.approx(theirs, rel=5e-3)


def test_fit_two_points_is_exact():
    pts = [ProfilePoint(1410, 0.010, 4.0), ProfilePoint(1000, 0.014, 3.0)]
    curve = fit_exp(pts)
    assert curve.c == 0.0
    assert curve.energy(10000) == pytest.approx(4.0)
    assert curve.energy(14000) == pytest.approx(3.0)
    assert curve.energy(20000) == pytest.approx(3.0)  # clamped to the interval


def test_fit_degenerate():
    with pytest.raises(DegenerateFitError):
        fit_exp([ProfilePoint(1410, 0.01, 4.0)])
    with pytest.raises(DegenerateFitError):
        fit_exp([ProfilePoint(1410, 0.01, 4.0), ProfilePoint(1000, 0.01, 4.0)])


def test_effective_energy():
    assert effective_energy(10.0, 0.02, 75.0) == pytest.approx(8.5)
    with pytest.raises(ValueError):
        effective_energy(1.0, -1.0, 75.0)


@settings(max_examples=100, deadline=None)
@given(st.floats(0.5, 5.0), st.floats(-200.0, -10.0), st.floats(0.0, 2.0), st.integers(100, 2000))
def test_convexity_e_plus_dominates_e_minus(a, b, c, tau):
    curve = ExpCurve(a, b, c, 10_000, 30_000)
    for t in range(10_000 + tau, 30_000 - tau, 997):
        assert e_plus(curve, t, tau) >= e_minus(curve, t, tau) > 0


def test_synth_profile_has_interior_minimum_energy_frequency():
    prof = synth_profile(1e7, 80.0, 8e-8, list(range(1410, 700, -30)))
    best = min(prof.points, key=lambda p: p.energy_j)
    assert 720 < best.freq_mhz < 1410
    assert prof.points[0].time_s == pytest.approx(1e7 / 1410e6)


def test_truncate_sweep_stops_at_first_dominated_frequency():
    prof = synth_profile(1e7, 80.0, 8e-8, list(range(1410, 700, -30)))
    cut = truncate_sweep(prof)
    best = min(prof.points, key=lambda p: p.energy_j)
    assert cut.points[-1].freq_mhz == best.freq_mhz
    assert len(cut.points) < len(prof.points)


def test_domain_capacities_use_effective_energy():
    rng = random.Random(4)
    prof = exp_profile(rng, 0, "forward", 5)
    back = exp_profile(rng, 0, "backward", 5)
    problem = PlanningProblem.build(build_1f1b(1, 1), ProfileSet.of([prof, back], 75.0), 500)
    dom = problem.domains[0]
    curve = dom.curve
    t = dom.lo + 500
    raw = 1000 * (curve.energy(t - 500) - curve.energy(t))
    # running faster also shortens the busy time, which raises effective energy
    assert dom.speedup_cost(t, 500, 75.0, 1e-6) == round_half_up(raw + 75.0 * 500 * 1e-3)
    assert dom.speedup_cost(dom.lo, 500, 75.0, 1e-6) is None
    assert dom.slowdown_gain(dom.hi, 500, 75.0, 1e-6) is None
    # past the slowest profiled time a slowdown only adds blocking, which is not effective energy
    assert dom.effective_mj(dom.hi, 75.0, 1e-6) == pytest.approx(
        1000 * (curve.energy(curve.t_max) - 75.0 * curve.t_max * 1e-6))
    assert math.isclose(dom.energy_j(curve.t_min), prof.points[0].energy_j, rel_tol=1e-3)
