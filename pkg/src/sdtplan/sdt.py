"""Semantic digital twin: object affordances, interaction rules and the action filter.

The twin is the single source of truth for both prompting (rendered rule
sentences) and simulation (machine-readable preconditions/effects). Loading
validates the closed affordance and action vocabularies and the coupling
between a type's rules and its affordance tags.
"""

from __future__ import annotations

import json
import logging
from dataclasses import dataclass, field
from enum import Enum
from pathlib import Path
from typing import Iterable, Optional

from .errors import ParseError, UnknownType, ValidationError

log = logging.getLogger(__name__)


class ActionName(str, Enum):
    GOTO = "GotoObject"
    PICKUP = "PickupObject"
    PUT = "PutObject"
    OPEN = "OpenObject"
    CLOSE = "CloseObject"
    TOGGLE_ON = "ToggleOnObject"
    TOGGLE_OFF = "ToggleOffObject"
    SLICE = "SliceObject"
    CROUCH = "Crouch"
    STAND = "Stand"

    def __str__(self) -> str:  # renders as the wire name in traces/prompts
        return self.value


class AffordanceTag(str, Enum):
    PICKUPABLE = "Pickupable"
    RECEPTACLE = "Receptacle"
    OPENABLE = "Openable"
    TOGGLEABLE = "Toggleable"
    SLICEABLE = "Sliceable"
    FILLABLE = "Fillable"
    BREAKABLE = "Breakable"
    DIRTYABLE = "Dirtyable"
    COOKABLE = "Cookable"
    COOLABLE = "Coolable"
    HEATABLE = "Heatable"
    MOVEABLE = "Moveable"

    def __str__(self) -> str:
        return self.value


#: Agent-pose actions: they target no object and never pass the action filter.
POSE_ACTIONS = frozenset({ActionName.CROUCH, ActionName.STAND})

#: Boolean state flags every scene object carries.
FLAG_NAMES = (
    "isOpen",
    "isDirty",
    "isCooked",
    "isSliced",
    "isToggled",
    "isFilled",
    "isBroken",
)

TEMPERATURES = ("Hot", "Cold", "RoomTemp")

#: Affordances that permit a type to own a rule triggered by an action on itself.
_TRIGGER_AFFORDANCES: dict[ActionName, frozenset[AffordanceTag]] = {
    ActionName.PICKUP: frozenset({AffordanceTag.PICKUPABLE}),
    ActionName.PUT: frozenset({AffordanceTag.RECEPTACLE}),
    ActionName.OPEN: frozenset({AffordanceTag.OPENABLE}),
    ActionName.CLOSE: frozenset({AffordanceTag.OPENABLE}),
    ActionName.TOGGLE_ON: frozenset({AffordanceTag.TOGGLEABLE}),
    ActionName.TOGGLE_OFF: frozenset({AffordanceTag.TOGGLEABLE}),
    # Sliceable = patient of the cut; Pickupable = held instrument.
    ActionName.SLICE: frozenset({AffordanceTag.SLICEABLE, AffordanceTag.PICKUPABLE}),
}

#: Affordance an instance's type must carry for an effect on the field to apply.
_FLAG_EFFECT_AFFORDANCES: dict[str, AffordanceTag] = {
    "isFilled": AffordanceTag.FILLABLE,
    "isDirty": AffordanceTag.DIRTYABLE,
    "isCooked": AffordanceTag.COOKABLE,
    "isSliced": AffordanceTag.SLICEABLE,
    "isOpen": AffordanceTag.OPENABLE,
    "isToggled": AffordanceTag.TOGGLEABLE,
    "isBroken": AffordanceTag.BREAKABLE,
}

_PREDICATE_SCOPES = ("self", "container", "colocated")
_EFFECT_SCOPES = ("self", "contents", "nearby")


@dataclass(frozen=True)
class StatePredicate:
    """Condition over the rule owner, its container, or co-located objects.

    ``scope`` selects whose state is inspected. ``type_name`` (colocated
    only) restricts which neighbour may satisfy the predicate. Exactly one
    of ``flag``/``temperature`` is set.
    """

    scope: str = "self"
    flag: Optional[str] = None
    value: bool = True
    temperature: Optional[str] = None
    type_name: Optional[str] = None


@dataclass(frozen=True)
class StateEffect:
    """State mutation applied when a rule fires.

    ``scope`` picks the targets relative to the rule owner: itself, its
    direct contents, or objects nearby. Application is affordance-gated:
    an effect only touches instances whose type carries the affordance
    matching the mutated field.
    """

    field_name: str
    to: object
    scope: str = "self"


@dataclass(frozen=True)
class InteractionRule:
    trigger_action: ActionName
    preconditions: tuple[StatePredicate, ...]
    effects: tuple[StateEffect, ...]
    text: str

    @property
    def reactive(self) -> bool:
        """True when the rule reacts to an action performed on another object."""
        return any(p.scope in ("container", "colocated") for p in self.preconditions)


@dataclass(frozen=True)
class ObjectTypeEntry:
    type_name: str
    affordances: frozenset[AffordanceTag]
    description: str
    rules: tuple[InteractionRule, ...]

    def has(self, tag: AffordanceTag) -> bool:
        return tag in self.affordances

    @property
    def is_slicing_tool(self) -> bool:
        """Held instrument convention: Pickupable, not itself Sliceable, carries a cut rule."""
        return (
            self.has(AffordanceTag.PICKUPABLE)
            and not self.has(AffordanceTag.SLICEABLE)
            and any(r.trigger_action is ActionName.SLICE for r in self.rules)
        )


@dataclass(frozen=True)
class ObjectDescription:
    """Prompt- and filter-facing view of one scene object (the O of the action filter)."""

    object_id: str
    type_name: str
    flags: dict[str, bool] = field(default_factory=dict)
    temperature: str = "RoomTemp"
    parent_receptacle: Optional[str] = None
    distance: float = 0.0

    def flag(self, name: str) -> bool:
        return bool(self.flags.get(name, False))


class SDT:
    """Immutable, queryable collection of object type entries."""

    def __init__(self, entries: Iterable[ObjectTypeEntry]):
        self._entries: dict[str, ObjectTypeEntry] = {}
        for entry in entries:
            if entry.type_name in self._entries:
                raise ValidationError(f"duplicate type entry: {entry.type_name}")
            self._entries[entry.type_name] = entry

    def __contains__(self, type_name: str) -> bool:
        return type_name in self._entries

    def __len__(self) -> int:
        return len(self._entries)

    def entry(self, type_name: str) -> ObjectTypeEntry:
        try:
            return self._entries[type_name]
        except KeyError:
            raise UnknownType(f"type not in knowledge base: {type_name!r}") from None

    def get(self, type_name: str) -> Optional[ObjectTypeEntry]:
        return self._entries.get(type_name)

    def affordances(self, type_name: str) -> frozenset[AffordanceTag]:
        return self.entry(type_name).affordances

    def type_names(self) -> list[str]:
        return sorted(self._entries)

    def slicing_tool_types(self) -> list[str]:
        return sorted(t for t, e in self._entries.items() if e.is_slicing_tool)

    def effect_affordance(self, field_name: str, to: object) -> Optional[AffordanceTag]:
        """Affordance an instance needs before an effect on ``field_name`` applies."""
        if field_name == "temperature":
            if to == "Hot":
                return AffordanceTag.HEATABLE
            if to == "Cold":
                return AffordanceTag.COOLABLE
            return None  # RoomTemp relaxation applies to anything
        if field_name == "parent_receptacle":
            return None
        return _FLAG_EFFECT_AFFORDANCES.get(field_name)


def _parse_predicate(raw: dict, where: str) -> StatePredicate:
    scope = raw.get("scope", "self")
    if scope not in _PREDICATE_SCOPES:
        raise ValidationError(f"{where}: unknown predicate scope {scope!r}")
    flag = raw.get("flag")
    temperature = raw.get("temperature")
    if flag is None and temperature is None and "type" not in raw:
        raise ValidationError(f"{where}: predicate must name a flag, temperature or type")
    if flag is not None and flag not in FLAG_NAMES:
        raise ValidationError(f"{where}: unknown flag {flag!r}")
    if temperature is not None and temperature not in TEMPERATURES:
        raise ValidationError(f"{where}: unknown temperature {temperature!r}")
    return StatePredicate(
        scope=scope,
        flag=flag,
        value=bool(raw.get("is", True)),
        temperature=temperature,
        type_name=raw.get("type"),
    )


def _parse_effect(raw: dict, where: str) -> StateEffect:
    if "set" not in raw or "to" not in raw:
        raise ValidationError(f"{where}: effect needs 'set' and 'to' fields")
    field_name = raw["set"]
    to = raw["to"]
    scope = raw.get("scope", "self")
    if scope not in _EFFECT_SCOPES:
        raise ValidationError(f"{where}: unknown effect scope {scope!r}")
    if field_name in FLAG_NAMES:
        if not isinstance(to, bool):
            raise ValidationError(f"{where}: flag effect {field_name} needs a boolean")
    elif field_name == "temperature":
        if to not in TEMPERATURES:
            raise ValidationError(f"{where}: bad temperature value {to!r}")
    elif field_name == "parent_receptacle":
        if to is not None and not isinstance(to, str):
            raise ValidationError(f"{where}: parent_receptacle effect needs id or null")
    else:
        raise ValidationError(f"{where}: effect field {field_name!r} does not exist on instances")
    return StateEffect(field_name=field_name, to=to, scope=scope)


def _validate_rule(entry_name: str, affordances: frozenset[AffordanceTag], rule: InteractionRule) -> None:
    where = f"{entry_name}/{rule.trigger_action}"
    if not rule.text.strip():
        raise ValidationError(f"{where}: rule text must be non-empty")
    # Self-triggered rules answer to the trigger action's affordance;
    # reactive rules (conditioned on container/colocated state) do not,
    # their legitimacy comes from the effect gates below.
    if not rule.reactive:
        needed = _TRIGGER_AFFORDANCES.get(rule.trigger_action, frozenset())
        if needed and not (affordances & needed):
            raise ValidationError(
                f"{where}: trigger requires one of {sorted(str(a) for a in needed)}"
            )
    for eff in rule.effects:
        if eff.scope != "self":
            continue
        gate = _effect_gate(eff)
        if gate is not None and gate not in affordances:
            raise ValidationError(
                f"{where}: effect on {eff.field_name} requires affordance {gate}"
            )


def _effect_gate(eff: StateEffect) -> Optional[AffordanceTag]:
    if eff.field_name == "temperature":
        if eff.to == "Hot":
            return AffordanceTag.HEATABLE
        if eff.to == "Cold":
            return AffordanceTag.COOLABLE
        return None
    return _FLAG_EFFECT_AFFORDANCES.get(eff.field_name)


def parse_sdt_data(data: object) -> SDT:
    """Build a validated SDT from already-decoded JSON data."""
    if not isinstance(data, list):
        raise ParseError("knowledge base file must be a top-level array of entries")
    entries = []
    for i, raw in enumerate(data):
        where = f"entry {i}"
        if not isinstance(raw, dict) or "type" not in raw:
            raise ParseError(f"{where}: each entry needs a 'type' field")
        type_name = raw["type"]
        where = type_name
        tags = set()
        for tag in raw.get("affordances", []):
            try:
                tags.add(AffordanceTag(tag))
            except ValueError:
                raise ValidationError(f"{where}: unknown affordance tag {tag!r}") from None
        rules = []
        for j, raw_rule in enumerate(raw.get("rules", [])):
            rwhere = f"{where}/rule {j}"
            try:
                action = ActionName(raw_rule.get("action"))
            except ValueError:
                raise ValidationError(
                    f"{rwhere}: unknown trigger action {raw_rule.get('action')!r}"
                ) from None
            rules.append(
                InteractionRule(
                    trigger_action=action,
                    preconditions=tuple(
                        _parse_predicate(p, rwhere) for p in raw_rule.get("pre", [])
                    ),
                    effects=tuple(
                        _parse_effect(e, rwhere) for e in raw_rule.get("effect", [])
                    ),
                    text=raw_rule.get("text", ""),
                )
            )
        entry = ObjectTypeEntry(
            type_name=type_name,
            affordances=frozenset(tags),
            description=raw.get("description", ""),
            rules=tuple(rules),
        )
        for rule in entry.rules:
            _validate_rule(type_name, entry.affordances, rule)
        entries.append(entry)
    return SDT(entries)


def load_sdt(path: str | Path) -> SDT:
    """Load and validate a knowledge base file (UTF-8 JSON array of entries)."""
    try:
        with open(path, encoding="utf-8") as fh:
            data = json.load(fh)
    except OSError as exc:
        raise ParseError(f"cannot read knowledge base file: {exc}") from exc
    except json.JSONDecodeError as exc:
        raise ParseError(f"malformed knowledge base file: {exc}") from exc
    return parse_sdt_data(data)


def condition_fn(sdt: SDT, object_desc: ObjectDescription, action: ActionName) -> bool:
    """Boolean action-validity condition over one object description.

    True iff the action is affordance-permitted for the object's type and
    compatible with the object's own current state. Global executability
    (reachability, hand occupancy) is deliberately out of scope here; that
    is the simulator's concern.
    """
    entry = sdt.entry(object_desc.type_name)
    if action is ActionName.GOTO:
        return True
    if action in POSE_ACTIONS:
        return False
    if action is ActionName.PICKUP:
        return entry.has(AffordanceTag.PICKUPABLE)
    if action is ActionName.PUT:
        # isOpen is normalized to True for non-openable receptacles at load.
        return entry.has(AffordanceTag.RECEPTACLE) and object_desc.flag("isOpen")
    if action is ActionName.OPEN:
        return entry.has(AffordanceTag.OPENABLE) and not object_desc.flag("isOpen")
    if action is ActionName.CLOSE:
        return entry.has(AffordanceTag.OPENABLE) and object_desc.flag("isOpen")
    if action is ActionName.TOGGLE_ON:
        return entry.has(AffordanceTag.TOGGLEABLE) and not object_desc.flag("isToggled")
    if action is ActionName.TOGGLE_OFF:
        return entry.has(AffordanceTag.TOGGLEABLE) and object_desc.flag("isToggled")
    if action is ActionName.SLICE:
        return entry.has(AffordanceTag.SLICEABLE) and not object_desc.flag("isSliced")
    return False


def filter_actions(
    sdt: SDT,
    objects: Iterable[ObjectDescription],
    actions: Iterable[ActionName],
) -> set[tuple[ActionName, str]]:
    """All (action, object id) pairs the condition function admits.

    Objects of unknown type contribute no pairs and are logged, not raised.
    """
    action_list = list(actions)
    pairs: set[tuple[ActionName, str]] = set()
    for desc in objects:
        if desc.type_name not in sdt:
            log.warning("skipping object of unknown type: %s", desc.object_id)
            continue
        for action in action_list:
            if condition_fn(sdt, desc, action):
                pairs.add((action, desc.object_id))
    return pairs


def render_type_text(entry: ObjectTypeEntry) -> str:
    """Deterministic prompt block for one type: name, affordances, rules, description."""
    lines = [f"Type: {entry.type_name}"]
    lines.append("Affordances: " + ", ".join(sorted(str(a) for a in entry.affordances)))
    if entry.rules:
        lines.append("Rules:")
        for rule in entry.rules:
            lines.append(f"  - {rule.text}")
    if entry.description:
        lines.append(f"Description: {entry.description}")
    return "\n".join(lines)
