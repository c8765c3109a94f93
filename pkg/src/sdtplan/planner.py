"""Adaptive planner: relevance filtering, plan prompt assembly, plan queries.

The relevance pass is lexical plus rule-implication (keeping a sliceable
food pulls in the knife types; anything coolable pulls in the appliance
whose rules chill contents). Over-inclusion is harmless, so every
receptacle in view rides along.
"""

from __future__ import annotations

import importlib.resources
import json
from typing import Optional

from . import lexicon, prompts
from .backends import LLMBackend
from .errors import BadAction, GoalParseError, MalformedEntry, NoTripletsFound, PlanParseError
from .sdt import SDT, ActionName, AffordanceTag, ObjectDescription, render_type_text
from .triplets import ActionTriplet, GoalCondition, parse_goal, parse_triplets
from .world import WorldState, object_descriptions

_RETRY_REMINDER = (
    "\n\nFORMAT REMINDER: reply with exactly one line starting with "
    "'Action-Triplets:' containing a list of [Action, Object1, Object2-or-0] "
    "lists, followed by one GOAL:{type=..; flags=..; temp=..; in=..} line per "
    "goal clause."
)


def _types_with_treatment_effect(sdt: SDT, field_name: str, to: object) -> set[str]:
    out = set()
    for type_name in sdt.type_names():
        for rule in sdt.entry(type_name).rules:
            for eff in rule.effects:
                if eff.scope == "self":
                    continue
                if eff.field_name == field_name and eff.to == to:
                    out.add(type_name)
    return out


def relevant_types(task: str, sdt: SDT) -> set[str]:
    """Task-mentioned types plus their sliced derivatives and implied tools.

    Closed under the implication step: sliceable food implies the knife
    types, cookable/heatable implies the heating appliances, coolable the
    chilling ones, dirtyable/fillable the water source.
    """
    kept = {t for t in lexicon.type_mentions(task) if t in sdt}
    kept |= {f"{t}Sliced" for t in list(kept) if f"{t}Sliced" in sdt}
    heaters = _types_with_treatment_effect(sdt, "temperature", "Hot")
    coolers = _types_with_treatment_effect(sdt, "temperature", "Cold")
    washers = _types_with_treatment_effect(sdt, "isDirty", False) | _types_with_treatment_effect(
        sdt, "isFilled", True
    )
    tools = set(sdt.slicing_tool_types())
    while True:
        implied: set[str] = set()
        for type_name in kept:
            entry = sdt.entry(type_name)
            if entry.has(AffordanceTag.SLICEABLE):
                implied |= tools
            if entry.has(AffordanceTag.COOKABLE) or entry.has(AffordanceTag.HEATABLE):
                implied |= heaters
            if entry.has(AffordanceTag.COOLABLE):
                implied |= coolers
            if entry.has(AffordanceTag.DIRTYABLE) or entry.has(AffordanceTag.FILLABLE):
                implied |= washers
        if implied <= kept:
            return kept
        kept |= implied


def filter_relevant_objects(state: WorldState, task: str, sdt: SDT) -> list[ObjectDescription]:
    """Visible objects worth showing the model for this task, id-sorted."""
    kept_types = relevant_types(task, sdt)
    out = []
    for desc in object_descriptions(state):
        entry = sdt.get(desc.type_name)
        if entry is None:
            continue
        if desc.type_name in kept_types or entry.has(AffordanceTag.RECEPTACLE):
            out.append(desc)
    return out


def load_examples() -> list[dict]:
    """Worked task/plan examples shipped as package data."""
    ref = importlib.resources.files("sdtplan.data").joinpath("examples.json")
    return json.loads(ref.read_text(encoding="utf-8"))


def build_plan_prompt(
    task: str,
    objects: list[ObjectDescription],
    sdt: SDT,
    examples: list[dict],
) -> str:
    """Deterministic plan prompt with fixed section order.

    Knowledge blocks cover the task-relevant types even when no instance is
    currently in view (a hidden knife is still plannable-for), plus the
    types of every listed object. Each rule sentence appears exactly once.
    """
    block_types = sorted(relevant_types(task, sdt) | {o.type_name for o in objects if o.type_name in sdt})
    lines = [prompts.PLAN_HEADER, "", prompts.SEC_INSTRUCTIONS]
    lines.append(
        "You control a household robot. Decompose the task into action triplets "
        "[Action, Object1, Object2-or-0] executed in order."
    )
    lines.append("Allowed actions: " + ", ".join(a.value for a in ActionName) + ".")
    lines.append("")
    lines.append(prompts.SEC_KNOWLEDGE)
    for i, type_name in enumerate(block_types):
        if i:
            lines.append("")
        lines.append(render_type_text(sdt.entry(type_name)))
    lines.append("")
    lines.append(prompts.SEC_OBJECTS)
    for desc in objects:
        lines.append(prompts.render_state_line(desc))
    if examples:
        lines.append("")
        lines.append(prompts.SEC_EXAMPLES)
        for ex in examples:
            lines.append(f"Task: {ex['task']}")
            lines.append(f"Action-Triplets:{ex['triplets']}")
            lines.append(ex["goal"])
            lines.append("")
        lines.pop()
    lines.append("")
    lines.append(prompts.SEC_TASK)
    lines.append(task)
    lines.append("")
    lines.append(prompts.SEC_OUTPUT)
    lines.append(
        "One line 'Action-Triplets:[[...], ...]' (third slot 0 when there is no "
        "second object), then one GOAL:{type=<T>; flags=<f1,f2|->; temp=<Hot|Cold|->; "
        "in=<R|->} line per goal clause."
    )
    return "\n".join(lines)


def _parse_plan_reply(text: str) -> tuple[list[ActionTriplet], GoalCondition]:
    triplets = parse_triplets(text)
    goal = parse_goal(text)
    return triplets, goal


def plan(
    task: str,
    state: WorldState,
    sdt: SDT,
    backend: LLMBackend,
    examples: Optional[list[dict]] = None,
) -> tuple[list[ActionTriplet], GoalCondition]:
    """One backend call (plus one reformat retry) for triplets and goal."""
    if examples is None:
        examples = load_examples()
    objects = filter_relevant_objects(state, task, sdt)
    prompt = build_plan_prompt(task, objects, sdt, examples)
    reply = backend.complete(prompt)
    try:
        return _parse_plan_reply(reply)
    except (NoTripletsFound, BadAction, MalformedEntry, GoalParseError) as first_err:
        retry_reply = backend.complete(prompt + _RETRY_REMINDER)
        try:
            return _parse_plan_reply(retry_reply)
        except (NoTripletsFound, BadAction, MalformedEntry, GoalParseError) as exc:
            raise PlanParseError(
                f"unparseable plan after retry: {exc} (first error: {first_err})"
            ) from exc
