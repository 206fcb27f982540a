import json
from fractions import Fraction
from pathlib import Path

import numpy as np
import pytest

from cddro.instance import (SHAPES, CapacityLevel, CddpInstance, Door, DoorSide, GeneratorConfig,
                            InstanceError, Scenario, ScenarioGroup, derive_scenario_data,
                            generate_instance, instance_to_dict, parse_shape, read_instance,
                            scenario_data, write_instance)

FIXTURE = Path(__file__).parent / "fixtures" / "two_door.json"


def one_by_one(levels=((10.0, 1.0), (20.0, 2.0)), distance=2.0, H=None, D=(0.0, 0.0)):
    side = DoorSide((Door(tuple(CapacityLevel(c, k) for c, k in levels)),), 1)
    sc = Scenario(0, 0, (0,), (0,), H if H is not None else {(0, 0): 5.0}, (D[0],), (D[1],))
    return CddpInstance(side, side, np.array([[distance]]), 1000.0,
                        [ScenarioGroup(0, (0,), Fraction(1))], [sc])


def test_zero_volumes_accept_every_door():
    inst = one_by_one(H={})
    sd = derive_scenario_data(inst, {}, (0.3,), (1.0,), (0, 1), (0,))
    assert sd.S == {0: 0.0, 1: 0.0} and sd.R == {0: 0.0}
    assert sd.accepted_strip == {0: (1,), 1: (1,)}
    assert sd.accepted_stack == {0: (1,)}


def test_standard_cost_is_rate_times_distance_times_volume():
    sd = scenario_data(one_by_one(), 0)
    assert sd.G(0, 1, 0, 1) == 10.0
    assert sd.G(0, 0, 0, 1) == 1000.0 and sd.G(0, 1, 0, 0) == 1000.0


def test_membership_rule_uses_best_level_net_of_disruption():
    inst = one_by_one()
    sd = derive_scenario_data(inst, {(0, 0): 12.0}, (0.5,), (0.0,), (0,), (0,))
    # net capacities 5 and 10 are both below 12
    assert sd.accepted_strip[0] == ()
    assert sd.accepted_stack[0] == (1,)


def test_negative_volume_and_bad_disruption_are_rejected():
    inst = one_by_one()
    with pytest.raises(InstanceError, match="negative volume"):
        derive_scenario_data(inst, {(0, 0): -1.0}, (0.0,), (0.0,), (0,), (0,), label="7")
    with pytest.raises(InstanceError, match="disruption"):
        derive_scenario_data(inst, {(0, 0): 1.0}, (1.5,), (0.0,), (0,), (0,))


def test_accepted_sets_shrink_as_disruption_grows():
    inst = one_by_one()
    prev = None
    for D in np.linspace(0, 1, 11):
        acc = derive_scenario_data(inst, {(0, 0): 7.0}, (D,), (0.0,), (0,), (0,)).accepted_strip[0]
        if prev is not None:
            assert set(acc) <= set(prev)
        prev = acc


def test_i1_shape_has_five_equiprobable_scenarios():
    inst = generate_instance(3, "I1")
    assert len(inst.scenarios) == 5
    assert all(w == 0.2 for w in inst.nominal.weights.values())
    assert inst.strip.n == inst.stack.n == 4
    for s in inst.scenarios:
        assert len(s.H) == 17
        assert all(v > 0 for v in s.H.values())


def test_generator_is_deterministic(tmp_path):
    a, b = tmp_path / "a.json", tmp_path / "b.json"
    write_instance(generate_instance(11, "I1"), a)
    write_instance(generate_instance(11, "I1"), b)
    assert a.read_bytes() == b.read_bytes()
    write_instance(generate_instance(12, "I1"), b)
    assert a.read_bytes() != b.read_bytes()


def test_dense_shape_and_oversized_shape():
    inst = generate_instance(0, [(2, 2, 3, 1, 1, 6)])
    assert all(len(s.H) == 6 for s in inst.scenarios)
    with pytest.raises(InstanceError, match="exceeds"):
        generate_instance(0, [(2, 2, 3, 1, 1, 7)])


def test_parse_shape():
    assert parse_shape("I3") == SHAPES["I3"]
    assert parse_shape("5,8,8,4,4,17;2,3,3,1,1,2") == [(5, 8, 8, 4, 4, 17), (2, 3, 3, 1, 1, 2)]
    with pytest.raises(InstanceError):
        parse_shape("1,2,3")


def test_doors_beyond_group_width_are_fully_disrupted():
    inst = generate_instance(2, "I3")
    g0 = inst.scenario_groups[0]
    for sid in g0.scenarios:
        s = inst.scenario(sid)
        assert s.D_strip[4] == 1.0 and s.D_stack[4] == 1.0
        assert all(d < 1.0 for d in s.D_strip[:4])


def test_group_weights_sum_to_one_and_sums_are_exact():
    inst = generate_instance(5, "I7")
    assert sum(Fraction(g.weight) for g in inst.scenario_groups) == 1
    assert abs(sum(inst.nominal.weights.values()) - 1.0) < 1e-12
    for s in inst.scenarios:
        sd = scenario_data(inst, s.id)
        for m in s.origins:
            assert sd.S[m] == sum(v for (a, _), v in s.H.items() if a == m)
        for n in s.destinations:
            assert sd.R[n] == sum(v for (_, b), v in s.H.items() if b == n)


def test_penalty_dominates_any_standard_cost():
    inst = generate_instance(4, "I1")
    for s in inst.scenarios:
        assert inst.outsourcing_penalty > inst.max_standard_cost(s.H)


def test_partial_disruptions_follow_the_config():
    inst = generate_instance(1, "I1", GeneratorConfig(partial_disruption_prob=1.0))
    assert all(0.0 < d < 1.0 for s in inst.scenarios for d in s.D_strip)


def test_round_trip(tmp_path):
    inst = generate_instance(9, "I3")
    p = tmp_path / "i.json"
    write_instance(inst, p)
    back = read_instance(p)
    assert instance_to_dict(back) == instance_to_dict(inst)


def test_missing_field_is_named(tmp_path):
    data = json.loads(FIXTURE.read_text())
    del data["outsourcing_penalty"]
    p = tmp_path / "bad.json"
    p.write_text(json.dumps(data))
    with pytest.raises(InstanceError, match="outsourcing_penalty"):
        read_instance(p)


def test_malformed_json_reports_position(tmp_path):
    p = tmp_path / "bad.json"
    p.write_text('{"version": 1,\n "strip": }')
    with pytest.raises(InstanceError, match="line 2"):
        read_instance(p)


def test_hand_written_fixture():
    inst = read_instance(FIXTURE)
    assert inst.strip.n == 1 and inst.stack.n == 1
    assert len(inst.strip.doors[0].levels) == 2
    assert len(inst.scenarios) == 2
    s1 = scenario_data(inst, 1)
    assert s1.S == {0: 12.0, 1: 3.0}
    assert s1.accepted_strip == {0: (), 1: (1,)}
    assert s1.accepted_stack == {0: (1,)}


def test_levels_must_increase():
    with pytest.raises(InstanceError, match="strictly increasing"):
        DoorSide((Door((CapacityLevel(10, 1), CapacityLevel(10, 2))),), 1)
