"""Replan prompt, corrective triplets, and the whole-task loop."""

from __future__ import annotations

import pytest

from conftest import run_row, scene_for_row, suite_row

from sdtplan.backends import OracleConfig, ScriptedOracle
from sdtplan.interpreter import ExecutionHistory, HistoryEntry, execute_plan
from sdtplan.replanner import RunConfig, build_replan_prompt, replan, run_task
from sdtplan.sdt import ActionName
from sdtplan.triplets import ActionTriplet, goal_satisfied, parse_goal
from sdtplan.world import ActionOutcome, ConcreteAction


def test_replan_prompt_names_unmet_clause_and_is_deterministic(sdt, suite):
    state = scene_for_row(suite_row(suite, 2), sdt)
    unmet = ["UNMET type=PotatoSliced need=exists"]
    prompt = build_replan_prompt("task text", ExecutionHistory(), state, unmet)
    assert "UNMET type=PotatoSliced need=exists" in prompt
    assert prompt == build_replan_prompt("task text", ExecutionHistory(), state, unmet)


def test_replan_prompt_lists_actions_newest_last(sdt, suite):
    state = scene_for_row(suite_row(suite, 2), sdt)
    history = ExecutionHistory()
    fridge_id = next(o for o in state.objects.values() if o.type_name == "Fridge").object_id
    for i, action in enumerate((ActionName.OPEN, ActionName.CLOSE)):
        history.append(
            HistoryEntry(
                triplet=ActionTriplet(action, "Fridge"),
                concrete=ConcreteAction(action, fridge_id),
                outcome=ActionOutcome.success(),
            )
        )
    prompt = build_replan_prompt("task", history, state, ["UNMET type=Mug need=exists"])
    open_pos = prompt.find("(OpenObject,")
    close_pos = prompt.find("(CloseObject,")
    assert 0 < open_pos < close_pos


def test_replan_suggests_knife_and_slice_for_missing_sliced_witness(sdt, suite):
    row = suite_row(suite, 2)
    state = scene_for_row(row, sdt)
    backend = ScriptedOracle()
    goal = parse_goal("GOAL:{type=PotatoSliced; flags=isCooked; temp=-; in=Sink}")
    additions = replan(row["task"], ExecutionHistory(), state, goal, sdt, backend)
    actions = [t.action for t in additions[:2]]
    assert actions == [ActionName.PICKUP, ActionName.SLICE]
    assert "ButterKnife" in additions[0].arg1
    assert "Potato" in additions[1].arg1


def test_replan_moves_slice_to_goal_receptacle(sdt, suite):
    row = suite_row(suite, 14)
    state = scene_for_row(row, sdt, injected=False)
    backend = ScriptedOracle()
    # slice the apple on the counter so the only unmet conjunct is placement
    plan_text = (
        "[['PickupObject', 'Knife', 0], ['SliceObject', 'Apple', 0], "
        "['PutObject', 'Knife', 'Sink']]"
    )
    from sdtplan.triplets import parse_triplets

    state, history, status = execute_plan(
        parse_triplets(plan_text), state, row["task"], sdt, backend, None
    )
    assert status == "Completed"
    for obj in state.objects.values():
        if obj.type_name == "AppleSliced":
            obj.temperature = "Cold"
    goal = parse_goal("GOAL:{type=AppleSliced; flags=-; temp=Cold; in=DiningTable}")
    additions = replan(row["task"], history, state, goal, sdt, backend)
    assert [t.action for t in additions] == [ActionName.PICKUP, ActionName.PUT]
    assert "AppleSliced" in additions[0].arg1
    assert additions[1].arg2.startswith("DiningTable|")


def test_replan_rejects_satisfied_goal(sdt, suite):
    state = scene_for_row(suite_row(suite, 10), sdt)
    goal = parse_goal("GOAL:{type=Mug; flags=-; temp=-; in=CounterTop}")
    assert goal_satisfied(state, goal)[0]
    with pytest.raises(ValueError):
        replan("task", ExecutionHistory(), state, goal, sdt, ScriptedOracle())


def test_run_task_row2_two_replans(sdt, suite):
    report = run_row(suite_row(suite, 2), sdt)
    assert report.success
    assert report.failures == 0
    assert report.resolver_iterations == 0
    assert report.replanner_invocations == 2
    # replanner work is re-verified against the goal oracle
    assert goal_satisfied(report.final_state, report.goal)[0]


def test_run_task_row10_clean_run(sdt, suite):
    report = run_row(suite_row(suite, 10), sdt)
    assert (report.failures, report.resolver_iterations, report.replanner_invocations) == (0, 0, 0)
    assert report.success


def test_run_task_unreachable_goal_fails_after_cap(sdt, suite):
    row = dict(suite_row(suite, 10))
    row["task"] = "Put a clean plate on the counter."  # no plate in the mug scene
    report = run_row(row, sdt)
    assert not report.success
    assert report.status == "Aborted"


def test_run_task_respects_replan_cap(sdt, suite):
    row = suite_row(suite, 2)
    scene = scene_for_row(row, sdt)
    backend = ScriptedOracle(OracleConfig(omit_slice=True))
    config = RunConfig(replan_cap=1)
    report = run_task(row["task"], scene, sdt, backend, config, task_id=2)
    assert report.replanner_invocations == 1
    assert not report.success


def test_run_task_reports_unplannable_task_instead_of_raising(sdt, suite):
    scene = scene_for_row(suite_row(suite, 10), sdt)
    report = run_task("Do fourteen somersaults.", scene, sdt, ScriptedOracle(), task_id="x")
    assert not report.success
    assert report.status.startswith("PlanningFailed")


def test_run_task_survives_backend_crash_mid_execution(sdt, suite):
    row = suite_row(suite, 3)  # needs grounding queries (two drawers)
    scene = scene_for_row(row, sdt)

    class FlakyBackend:
        name = "flaky"
        deterministic = False

        def __init__(self):
            self.inner = ScriptedOracle()
            self.calls = 0

        def complete(self, prompt):
            self.calls += 1
            if self.calls > 1:
                from sdtplan.errors import BackendError

                raise BackendError("connection reset")
            return self.inner.complete(prompt)

    report = run_task(row["task"], scene, sdt, FlakyBackend(), RunConfig(), task_id=3)
    assert not report.success
    assert report.status.startswith("ExecutionFailed")
    assert report.history.entries  # partial progress retained


def test_misorder_heat_fault_fixed_by_replanner(sdt, suite):
    row = suite_row(suite, 2)
    scene = scene_for_row(row, sdt)
    backend = ScriptedOracle(OracleConfig(misorder_heat=True))
    report = run_task(row["task"], scene, sdt, backend, RunConfig(), task_id=2)
    assert report.success
    assert report.failures == 0
    # toggling with the door open cooked nothing; the replanner reheats, then relocates
    assert report.replanner_invocations == 2
    heat_fix = report.replan_additions[0]
    assert ActionName.TOGGLE_ON in [t.action for t in heat_fix]


def test_wash_replan_template_cleans_dirty_goal_object(sdt, suite):
    # knife already parked in a drawer but still dirty: only the wash fix applies
    row = suite_row(suite, 3)
    state = scene_for_row(row, sdt, injected=False)
    backend = ScriptedOracle()
    knife = next(o for o in state.objects.values() if o.type_name == "Knife")
    goal = parse_goal("GOAL:{type=Knife; flags=!isDirty; temp=-; in=Drawer}")
    additions = replan(row["task"], ExecutionHistory(), state, goal, sdt, backend)
    actions = [t.action for t in additions]
    assert ActionName.TOGGLE_ON in actions and ActionName.TOGGLE_OFF in actions
    state, history, status = execute_plan(
        additions, state, row["task"], sdt, backend, None
    )
    assert status == "Completed"
    assert not state.objects[knife.object_id].flag("isDirty")


def test_all_tasks_succeed_without_perturbations(sdt, suite):
    for row in suite["tasks"]:
        clean_row = dict(row)
        clean_row["inject"] = []
        clean_row["oracle_faults"] = {}
        report = run_row(clean_row, sdt)
        assert report.success, (row["id"], report.status, report.unmet_final)


def test_success_implies_goal_satisfied(sdt, suite):
    for row in suite["tasks"]:
        report = run_row(row, sdt)
        assert report.success
        ok, _ = goal_satisfied(report.final_state, report.goal)
        assert ok
