"""Failure resolver: pair map, failure queries, recovery loop, memory."""

from __future__ import annotations

import random

import pytest

from conftest import random_state, scene_for_row, suite_row

from sdtplan.backends import ScriptedOracle
from sdtplan.resolver import (
    AdaptiveMemory,
    FailureContext,
    build_action_pairs,
    build_failure_query,
    resolve_failure,
)
from sdtplan.sdt import ActionName, POSE_ACTIONS, condition_fn
from sdtplan.triplets import ActionTriplet, RecoveryPair
from sdtplan.world import (
    ActionOutcome,
    ConcreteAction,
    MSG_NOT_VISIBLE,
    MSG_NO_VALID_POSITION,
    object_descriptions,
    step,
    type_of_id,
)


def by_type(state, type_name):
    return next(o for o in state.objects.values() if o.type_name == type_name)


def not_visible_ctx(triplet, index=0, task="task"):
    return FailureContext(
        failed_index=index,
        failed_triplet=triplet,
        failed_concrete=None,
        outcome=ActionOutcome.error("NotVisible", MSG_NOT_VISIBLE),
        task=task,
        history_tail=[],
    )


# ---------------------------------------------------------------------------
# Action pair map


def test_pairs_hidden_bottle_scene(sdt, suite):
    state = scene_for_row(suite_row(suite, 9), sdt)
    fridge = by_type(state, "Fridge")
    pairs = build_action_pairs(state, sdt)
    assert (ActionName.OPEN, fridge.object_id) in pairs
    # once the fridge is open, the pair map offers the crouch-gated pickup
    state, _ = step(state, ConcreteAction(ActionName.OPEN, fridge.object_id), sdt)
    bottle = by_type(state, "WineBottle")
    pairs = build_action_pairs(state, sdt, focus=bottle.object_id)
    assert (ActionName.PICKUP, bottle.object_id) in pairs
    assert (ActionName.CROUCH, fridge.object_id) in pairs


def test_pairs_empty_scene_pose_only(tmp_path, sdt):
    from sdtplan.world import load_scene

    path = tmp_path / "empty.json"
    path.write_text('{"agent": {"position": [0, 0.9, 0]}, "objects": []}')
    pairs = build_action_pairs(load_scene(path, sdt), sdt)
    assert [p[0] for p in pairs] == [ActionName.CROUCH, ActionName.STAND]


def test_pairs_match_brute_force_enumeration(sdt):
    rng = random.Random(41)
    actions = [a for a in ActionName if a not in POSE_ACTIONS]
    for _ in range(30):
        state = random_state(rng, sdt, max_objects=8)
        pairs = build_action_pairs(state, sdt)
        object_pairs = {p for p in pairs if p[0] not in POSE_ACTIONS}
        pose_pairs = [p for p in pairs if p[0] in POSE_ACTIONS]
        # brute force over the same counterfactual views
        from sdtplan.resolver import _counterfactual_views

        expected = set()
        for view in _counterfactual_views(state, sdt):
            for desc in object_descriptions(view):
                for action in actions:
                    if condition_fn(sdt, desc, action):
                        expected.add((action, desc.object_id))
        assert object_pairs == expected
        assert [p[0] for p in pose_pairs] == [ActionName.CROUCH, ActionName.STAND]


def test_pairs_deterministic_order(sdt, suite):
    state = scene_for_row(suite_row(suite, 9), sdt)
    assert build_action_pairs(state, sdt) == build_action_pairs(state, sdt)


# ---------------------------------------------------------------------------
# Failure query


def test_first_query_has_no_repeat_section(sdt, suite):
    state = scene_for_row(suite_row(suite, 9), sdt)
    ctx = not_visible_ctx(ActionTriplet(ActionName.PICKUP, "WineBottle"))
    query = build_failure_query(ctx, build_action_pairs(state, sdt), AdaptiveMemory())
    assert "## Do Not Repeat" not in query
    assert MSG_NOT_VISIBLE in query


def test_second_query_lists_prior_attempt_with_feedback(sdt, suite):
    state = scene_for_row(suite_row(suite, 9), sdt)
    ctx = not_visible_ctx(ActionTriplet(ActionName.PICKUP, "WineBottle"))
    memory = AdaptiveMemory()
    fridge = by_type(state, "Fridge")
    attempted = [RecoveryPair(ActionName.OPEN, fridge.object_id)]
    memory.record(ctx.key, attempted, "step still failing")
    query = build_failure_query(ctx, build_action_pairs(state, sdt), memory)
    assert "## Do Not Repeat" in query
    assert f"(OpenObject,{fridge.object_id})" in query
    assert "step still failing" in query


def test_query_contains_verbatim_error_strings(sdt, suite):
    state = scene_for_row(suite_row(suite, 3), sdt)
    ctx = FailureContext(
        failed_index=6,
        failed_triplet=ActionTriplet(ActionName.PUT, "Knife", "Drawer"),
        failed_concrete=ConcreteAction(ActionName.PUT, by_type(state, "Drawer").object_id),
        outcome=ActionOutcome.error("NoValidPosition", MSG_NO_VALID_POSITION),
        task="Place a rinsed knife inside a drawer.",
        history_tail=[],
    )
    query = build_failure_query(ctx, build_action_pairs(state, sdt), AdaptiveMemory())
    assert "No valid positions to place object found." in query


# ---------------------------------------------------------------------------
# Recovery loop


def test_knife_full_drawer_resolved_in_one_iteration(sdt, suite):
    row = suite_row(suite, 3)
    state = scene_for_row(row, sdt)
    knife = by_type(state, "Knife")
    small = min(
        (o for o in state.objects.values() if o.type_name == "Drawer"),
        key=lambda o: o.capacity,
    )
    state, _ = step(state, ConcreteAction(ActionName.PICKUP, knife.object_id), sdt)
    state, _ = step(state, ConcreteAction(ActionName.OPEN, small.object_id), sdt)
    state, outcome = step(state, ConcreteAction(ActionName.PUT, small.object_id), sdt)
    assert outcome.error_code == "NoValidPosition"
    ctx = FailureContext(
        failed_index=6,
        failed_triplet=ActionTriplet(ActionName.PUT, "Knife", "Drawer"),
        failed_concrete=ConcreteAction(ActionName.PUT, small.object_id),
        outcome=outcome,
        task=row["task"],
        history_tail=[],
    )
    state, status, iterations, attempts = resolve_failure(
        ctx, state, sdt, AdaptiveMemory(), ScriptedOracle(), budget=5
    )
    assert status == "Resolved"
    assert iterations == 1
    resolving = attempts[-1]
    assert [p.action for p in resolving.proposed] == [ActionName.OPEN, ActionName.PUT]
    alt = resolving.proposed[0].target
    assert type_of_id(alt) == "Drawer" and alt != small.object_id
    assert state.objects[knife.object_id].parent_receptacle == alt


def test_hidden_bottle_resolved_in_four_iterations(sdt, suite):
    row = suite_row(suite, 9)
    state = scene_for_row(row, sdt)
    ctx = not_visible_ctx(ActionTriplet(ActionName.PICKUP, "WineBottle"), task=row["task"])
    state, status, iterations, attempts = resolve_failure(
        ctx, state, sdt, AdaptiveMemory(), ScriptedOracle(), budget=5
    )
    assert status == "Resolved"
    assert iterations == 4
    resolving = attempts[-1]
    assert [p.action for p in resolving.proposed] == [ActionName.CROUCH, ActionName.PICKUP]
    assert type_of_id(resolving.proposed[0].target) == "Fridge"
    assert type_of_id(resolving.proposed[1].target) == "WineBottle"
    assert state.held_object == by_type(state, "WineBottle").object_id


class RepeatingBackend:
    """Adversarial: proposes once, then repeats that proposal forever."""

    name = "adversarial"
    deterministic = True

    def __init__(self, rng, pair_pool):
        self.reply = None
        self.rng = rng
        self.pair_pool = pair_pool

    def complete(self, prompt: str) -> str:
        if self.reply is None:
            action, target = self.rng.choice(self.pair_pool)
            self.reply = f"[({action.value},{target})]"
        return self.reply


def test_adversarial_repeats_blocked_and_budget_respected(sdt):
    rng = random.Random(53)
    runs = 0
    while runs < 100:
        state = random_state(rng, sdt, max_objects=6)
        pairs = [p for p in build_action_pairs(state, sdt)]
        if not pairs:
            continue
        runs += 1
        backend = RepeatingBackend(rng, pairs)
        ctx = not_visible_ctx(ActionTriplet(ActionName.PICKUP, "Unicorn"))
        memory = AdaptiveMemory()
        _, status, iterations, attempts = resolve_failure(
            ctx, state, sdt, memory, backend, budget=4
        )
        assert iterations <= 4
        executed = [tuple(a.proposed) for a in attempts if a.executed]
        assert len(executed) == len(set(executed))  # nothing ran twice
        assert status in ("Resolved", "Exhausted")


def test_memory_rejects_duplicate_records():
    memory = AdaptiveMemory()
    key = (0, "NotVisible")
    seq = [RecoveryPair(ActionName.CROUCH, "Fridge|-01.30|+00.90|+00.99")]
    memory.record(key, seq, "failed")
    assert memory.seen(key, seq)
    with pytest.raises(ValueError):
        memory.record(key, seq, "again")


def test_invalid_pairs_rejected_without_execution(sdt, suite):
    state = scene_for_row(suite_row(suite, 9), sdt)

    class BogusBackend:
        name = "bogus"
        deterministic = True

        def complete(self, prompt):
            return "[(SliceObject,Fridge|-01.30|+00.90|+00.99)]"

    ctx = not_visible_ctx(ActionTriplet(ActionName.PICKUP, "WineBottle"))
    _, status, iterations, attempts = resolve_failure(
        ctx, state, sdt, AdaptiveMemory(), BogusBackend(), budget=2
    )
    assert status == "Exhausted"
    assert iterations == 2
    assert attempts[0].feedback.startswith("invalid pair")
    assert attempts[0].executed == []


def test_executed_recovery_actions_are_affordance_valid(sdt, suite):
    from sdtplan.sdt import AffordanceTag

    required = {
        ActionName.PICKUP: AffordanceTag.PICKUPABLE,
        ActionName.PUT: AffordanceTag.RECEPTACLE,
        ActionName.OPEN: AffordanceTag.OPENABLE,
        ActionName.CLOSE: AffordanceTag.OPENABLE,
        ActionName.TOGGLE_ON: AffordanceTag.TOGGLEABLE,
        ActionName.TOGGLE_OFF: AffordanceTag.TOGGLEABLE,
        ActionName.SLICE: AffordanceTag.SLICEABLE,
    }
    for task_id in (3, 9, 12):
        row = suite_row(suite, task_id)
        from conftest import run_row

        report = run_row(row, sdt)
        assert report.success
        for entry in report.history.entries:
            for attempt in entry.attempts:
                for concrete, outcome in attempt.executed:
                    if concrete.name in POSE_ACTIONS or not outcome.ok:
                        continue
                    tag = required.get(concrete.name)
                    if tag is None or concrete.target is None:
                        continue
                    type_name = type_of_id(concrete.target)
                    assert tag in sdt.affordances(type_name), (concrete.render(), tag)
