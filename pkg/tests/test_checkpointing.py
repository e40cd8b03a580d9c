import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from adjopt.adjoint import compute_gradient
from adjopt.checkpointing import (ADJOINT, ADVANCE, DISK, RAM, RESTORE, STORE, Action,
                                  CheckpointPlan, PlanError, adjoint_with_checkpoints, minimal_advances,
                                  plan_multistage, simulate)
from adjopt.problems import heat_control, transient_control
from adjopt.tape import TapeError

from oracles import brute_force_re_advances, re_advance_table


@pytest.mark.parametrize("snaps", [1, 2, 3, 4, 5])
def test_planner_matches_exhaustive_search_table(snaps):
    table = re_advance_table()
    for n in range(1, 21):
        plan = plan_multistage(n, snaps)
        assert plan.re_advances == table[(n, snaps)], (n, snaps)
        assert minimal_advances(n, snaps) == n + table[(n, snaps)]


@pytest.mark.parametrize("n,s", [(5, 1), (7, 2), (9, 3), (15, 1), (20, 1), (24, 2)])
def test_planner_matches_live_search(n, s):
    assert plan_multistage(n, s).re_advances == brute_force_re_advances(n, s)


@settings(max_examples=40, deadline=None)
@given(n=st.integers(1, 40), ram=st.integers(0, 4), disk=st.integers(0, 3))
def test_every_plan_is_valid_and_respects_capacity(n, ram, disk):
    if ram + disk == 0 and n > 1:
        with pytest.raises(PlanError):
            plan_multistage(n, ram, disk)
        return
    plan = plan_multistage(n, ram, disk)
    res = simulate(plan)
    assert res.peak[RAM] <= ram and res.peak[DISK] <= disk
    adjoints = [a.step for a in plan.actions if a.kind == ADJOINT]
    assert adjoints == list(range(n, 0, -1))
    # total capacity is what bounds the advance count; splitting it across tiers does not
    assert res.advances == minimal_advances(n, ram + disk)


@settings(max_examples=30, deadline=None)
@given(n=st.integers(2, 30), s=st.integers(1, 4))
def test_more_slots_never_cost_more(n, s):
    assert minimal_advances(n, s + 1) <= minimal_advances(n, s)
    assert minimal_advances(n + 1, s) >= minimal_advances(n, s) + 1


def _slot_traffic(plan):
    """Stores into plus restores out of each (tier, slot)."""
    held, traffic = {}, {}
    for a in plan.actions:
        if a.kind == STORE:
            held[(a.tier, a.slot)] = a.step
            traffic[(a.tier, a.slot)] = traffic.get((a.tier, a.slot), 0) + 1
        elif a.kind == RESTORE and a.step:
            key = next(k for k, v in held.items() if v == a.step)
            traffic[key] += 1
    return traffic


@pytest.mark.parametrize("n,ram,disk", [(12, 1, 2), (20, 2, 2), (30, 1, 3)])
def test_busiest_slots_go_to_ram(n, ram, disk):
    plan = plan_multistage(n, ram, disk)
    traffic = _slot_traffic(plan)
    on_ram = [v for (t, _), v in traffic.items() if t == RAM]
    on_disk = [v for (t, _), v in traffic.items() if t == DISK]
    assert on_disk and min(on_ram) >= max(on_disk)
    assert plan.cost == plan.advances + plan.disk_weight * plan.simulate().disk_events


def test_plan_text_format():
    text = str(plan_multistage(3, 1))
    lines = text.splitlines()
    assert lines[0] == "# steps=3 ram=1 disk=0"
    assert lines[1] == "advance 0 -> 1"
    assert text.endswith("\n")
    assert "adjoint 1" in lines


def test_simulator_rejects_broken_plans():
    bad = [
        [Action(ADVANCE, 0, 2), Action(ADJOINT, 1)],                      # wrong order
        [Action(ADVANCE, 1, 2)],                                          # not at state 1
        [Action(ADVANCE, 0, 1), Action(STORE, 1, tier=RAM, slot=0), Action(ADJOINT, 2)],
        [Action(ADVANCE, 0, 2), Action(ADJOINT, 2)],                      # stops early
    ]
    for actions in bad:
        with pytest.raises(PlanError):
            simulate(CheckpointPlan(2, 0, 0, actions))


def test_bad_capacities():
    with pytest.raises(PlanError):
        plan_multistage(0, 1)
    with pytest.raises(PlanError):
        plan_multistage(5, -1)


@pytest.mark.parametrize("ram,disk", [(1, 0), (2, 1), (0, 2), (5, 0)])
def test_checkpointed_gradient_is_bitwise_identical(ram, disk):
    p = transient_control(4, steps=7, m0=0.3)
    g = compute_gradient(p.tape, p.functional, [p.control])[0]
    value = p.tape.evaluate(p.functional)
    plan = plan_multistage(7, ram, disk)
    run = adjoint_with_checkpoints(p.tape, p.functional, [p.control], plan)
    assert np.array_equal(run.gradients[0], g)
    assert run.value == value
    assert run.advances == plan.advances


def test_checkpointing_needs_a_chain_and_matching_plan():
    p = heat_control(3)
    with pytest.raises(TapeError):
        adjoint_with_checkpoints(p.tape, p.functional, [p.control], plan_multistage(1, 1))
    p = transient_control(3, steps=3)
    with pytest.raises(PlanError):
        adjoint_with_checkpoints(p.tape, p.functional, [p.control], plan_multistage(4, 1))
