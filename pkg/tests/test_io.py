import json
import random

import pytest

from energy_frontier.costmodel import ProfileSet
from energy_frontier.dag import build_gpipe
from energy_frontier.frontier import PlanningProblem, discover_frontier
from energy_frontier.io import (
    InputError,
    builtin_profiles,
    dag_from_json,
    dag_to_json,
    frontier_bundle,
    frontier_csv,
    load_bundle,
    parse_dag_spec,
    profiles_from_json,
    profiles_to_json,
    schedule_filename,
    schedule_to_json,
)

from helpers import exp_instance


def test_dag_round_trip_keeps_constants():
    dag = build_gpipe(2, 3)
    obj = dag_to_json(dag)
    obj["computations"].append({"id": len(obj["computations"]), "stage": 0, "microbatch": None,
                                "kind": "constant", "duration_us": 250.0})
    obj["edges"].append([0, obj["computations"][-1]["id"]])
    back = dag_from_json(obj)
    assert dag_to_json(back) == obj
    assert back.computations[-1].duration_us == 250.0


@pytest.mark.parametrize("bad", [
    {},
    {"computations": [{"id": 0, "stage": 0, "kind": "sideways"}]},
    {"computations": [{"id": 0, "stage": 0, "microbatch": 0, "kind": "forward"}], "edges": [[0, 0]]},
    {"computations": [{"id": 0, "stage": 0, "microbatch": 0, "kind": "forward"},
                      {"id": 1, "stage": 0, "microbatch": 0, "kind": "backward"}], "edges": [[0, 1], [1, 0]]},
])
def test_malformed_dags(bad):
    with pytest.raises(InputError):
        dag_from_json(bad)


def test_unreadable_files(tmp_path):
    with pytest.raises(InputError):
        dag_from_json(tmp_path / "missing.json")
    (tmp_path / "x.json").write_text("{not json")
    with pytest.raises(InputError):
        profiles_from_json(tmp_path / "x.json")


def test_dag_specs():
    dag, builtin = parse_dag_spec("1f1b:3x5")
    assert builtin and dag.num_stages == 3 and len(dag.computations) == 30
    for bad in ("1f1b:0x4", "pipedream:2x2", "gpipe:2", "file:/nonexistent.json"):
        with pytest.raises(InputError):
            parse_dag_spec(bad)


def test_profiles_round_trip_and_override():
    _, profiles = exp_instance(random.Random(0), 2, 1, 4)
    obj = profiles_to_json(profiles)
    assert profiles_to_json(profiles_from_json(obj)) == obj
    assert profiles_from_json(obj, 12.5).p_blocking_w == 12.5
    with pytest.raises(InputError):
        profiles_from_json({"profiles": [{"stage": 0, "kind": "forward", "points": [{"freq_mhz": 1}]}]})
    with pytest.raises(InputError):
        profiles_from_json(obj, -1.0)


def test_builtin_profiles_are_deterministic():
    a, b = builtin_profiles(4), builtin_profiles(4)
    assert profiles_to_json(a) == profiles_to_json(b)
    assert isinstance(a, ProfileSet) and len(a.profiles) == 8


@pytest.fixture(scope="module")
def optimized():
    dag, profiles = exp_instance(random.Random(5), 2, 3, 4)
    return discover_frontier(PlanningProblem.build(dag, profiles, 500)), profiles


def test_frontier_csv_and_schedule_json(optimized):
    fr, _ = optimized
    lines = frontier_csv(fr).splitlines()
    assert lines[0] == "t_planned_us,t_realized_us,energy_planned_mj,energy_realized_mj,schedule_id"
    assert len(lines) == len(fr.schedules) + 1
    s = fr.schedules[3]
    obj = schedule_to_json(s)
    assert obj["schedule_id"] == 3 and len(obj["computations"]) == len(s.durations)
    assert schedule_filename(3) == "schedule_00003.json"
    assert json.loads(json.dumps(obj)) == obj


def test_bundle_reload_reproduces_frontier(optimized):
    fr, profiles = optimized
    back = load_bundle(json.loads(json.dumps(frontier_bundle(fr, profiles, 1.0))))
    assert (back.t_min, back.t_star) == (fr.t_min, fr.t_star)
    assert frontier_csv(back) == frontier_csv(fr)
    for a, b in zip(fr.schedules, back.schedules):
        assert a.realized_durations == b.realized_durations
        assert a.realized_energy_mj == pytest.approx(b.realized_energy_mj, rel=1e-12)


def test_bundle_rejects_tampering(optimized):
    fr, profiles = optimized
    obj = frontier_bundle(fr, profiles, 1.0)
    obj["schedules"][0]["frequencies"][0] = 1
    with pytest.raises(InputError):
        load_bundle(obj)
    obj = frontier_bundle(fr, profiles, 1.0)
    obj["version"] = 99
    with pytest.raises(InputError):
        load_bundle(obj)
    del obj["version"]
    with pytest.raises(InputError):
        load_bundle(obj)
