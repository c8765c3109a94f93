"""Relevance filter, plan prompt assembly, plan queries."""

from __future__ import annotations

import pytest

from conftest import ScriptedBackend, scene_for_row, suite_row

from sdtplan.backends import ScriptedOracle
from sdtplan.errors import PlanParseError
from sdtplan.planner import (
    build_plan_prompt,
    filter_relevant_objects,
    load_examples,
    plan,
    relevant_types,
)
from sdtplan.sdt import ActionName


def test_filter_knife_task_keeps_washing_chain(sdt, suite):
    state = scene_for_row(suite_row(suite, 5), sdt, injected=False)
    task = "Place a clean knife in the drawer"
    kept = {d.type_name for d in filter_relevant_objects(state, task, sdt)}
    assert {"Knife", "Drawer", "Sink", "Faucet"} <= kept
    assert "Lettuce" not in kept


def test_filter_empty_scene(tmp_path, sdt):
    from sdtplan.world import load_scene

    path = tmp_path / "empty.json"
    path.write_text('{"agent": {"position": [0, 0.9, 0]}, "objects": []}')
    state = load_scene(path, sdt)
    assert filter_relevant_objects(state, "Place a clean knife in the drawer", sdt) == []


def test_filter_unmentioned_scene_keeps_receptacles_only(sdt, suite):
    state = scene_for_row(suite_row(suite, 10), sdt, injected=False)
    kept = filter_relevant_objects(state, "Water the plants outside", sdt)
    from sdtplan.sdt import AffordanceTag

    assert kept
    assert all(sdt.entry(d.type_name).has(AffordanceTag.RECEPTACLE) for d in kept)


def test_relevant_types_closed_under_implication(sdt):
    kept = relevant_types("Place a cooked potato slice in the sink", sdt)
    assert {"Potato", "PotatoSliced", "Sink"} <= kept
    # sliceable food implies knives, heatable food implies the microwave
    assert {"Knife", "ButterKnife", "Microwave"} <= kept
    again = relevant_types("Place a cooked potato slice in the sink", sdt)
    assert kept == again


def test_prompt_deterministic(sdt, suite):
    state = scene_for_row(suite_row(suite, 9), sdt)
    task = suite_row(suite, 9)["task"]
    objects = filter_relevant_objects(state, task, sdt)
    examples = load_examples()
    assert build_plan_prompt(task, objects, sdt, examples) == build_plan_prompt(
        task, objects, sdt, examples
    )


def test_prompt_contains_each_rule_sentence_once(sdt, suite):
    for task_id in (1, 9, 13):
        row = suite_row(suite, task_id)
        state = scene_for_row(row, sdt)
        objects = filter_relevant_objects(state, row["task"], sdt)
        prompt = build_plan_prompt(row["task"], objects, sdt, load_examples())
        block_types = relevant_types(row["task"], sdt) | {o.type_name for o in objects}
        for type_name in block_types:
            for rule in sdt.entry(type_name).rules:
                assert prompt.count(rule.text) == 1, (type_name, rule.text)


def test_prompt_bottle_rules_present(sdt, suite):
    state = scene_for_row(suite_row(suite, 9), sdt)
    task = "Set a chilled bottle of wine on the table."
    prompt = build_plan_prompt(task, filter_relevant_objects(state, task, sdt), sdt, [])
    assert "Pickupable" in prompt
    assert "Will fill up with water when placed under a running faucet." in prompt


def test_prompt_omits_examples_section_when_empty(sdt, suite):
    state = scene_for_row(suite_row(suite, 9), sdt)
    task = suite_row(suite, 9)["task"]
    objects = filter_relevant_objects(state, task, sdt)
    prompt = build_plan_prompt(task, objects, sdt, [])
    assert "## Worked Examples" not in prompt
    with_examples = build_plan_prompt(task, objects, sdt, load_examples())
    assert "## Worked Examples" in with_examples


def test_plan_reproduces_eight_step_wine_plan(sdt, suite):
    row = suite_row(suite, 9)
    state = scene_for_row(row, sdt)
    triplets, goal = plan(row["task"], state, sdt, ScriptedOracle())
    rendered = [[t.action.value, t.arg1, t.arg2 or 0] for t in triplets]
    assert rendered == [
        ["PickupObject", "WineBottle", 0],
        ["OpenObject", "Fridge", 0],
        ["PutObject", "WineBottle", "Fridge"],
        ["CloseObject", "Fridge", 0],
        ["OpenObject", "Fridge", 0],
        ["PickupObject", "WineBottle", 0],
        ["CloseObject", "Fridge", 0],
        ["PutObject", "WineBottle", "DiningTable"],
    ]
    (clause,) = goal.clauses
    assert clause.object_type == "WineBottle"
    assert clause.required_temperature == "Cold"
    assert clause.receptacle_type == "DiningTable"


def test_plan_parses_prose_wrapped_reply(sdt, suite):
    row = suite_row(suite, 10)
    state = scene_for_row(row, sdt)
    backend = ScriptedBackend(
        [
            "Certainly! The robot should do this:\n"
            "Action-Triplets:[['PickupObject', 'Mug', 0], ['PutObject', 'Mug', 'CoffeeMachine']]\n"
            "GOAL:{type=Mug; flags=!isDirty; temp=-; in=CoffeeMachine}\nDone!"
        ]
    )
    triplets, goal = plan(row["task"], state, sdt, backend)
    assert [t.action for t in triplets] == [ActionName.PICKUP, ActionName.PUT]
    assert backend.calls == 1


def test_plan_retries_then_fails_on_garbage(sdt, suite):
    row = suite_row(suite, 10)
    state = scene_for_row(row, sdt)
    backend = ScriptedBackend(["gibberish", "more gibberish"])
    with pytest.raises(PlanParseError):
        plan(row["task"], state, sdt, backend)
    assert backend.calls == 2


def test_plan_retry_recovers_on_second_reply(sdt, suite):
    row = suite_row(suite, 10)
    state = scene_for_row(row, sdt)
    backend = ScriptedBackend(
        [
            "gibberish",
            "Action-Triplets:[['PickupObject', 'Mug', 0]]\n"
            "GOAL:{type=Mug; flags=-; temp=-; in=-}",
        ]
    )
    triplets, _ = plan(row["task"], state, sdt, backend)
    assert len(triplets) == 1
    assert backend.calls == 2
