"""Deterministic symbolic household simulator.

Scene objects carry structured ids (``Type|±XX.XX|±YY.YY|±ZZ.ZZ``) that
embed the spawn type and position, boolean state flags and containment
links. Transitions are pure: ``step`` returns a fresh state on success and
the untouched input state on error. Interaction rules from the knowledge
base fire after each successful transition (instant consequences, no
timed processes).
"""

from __future__ import annotations

import hashlib
import json
import math
import re
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Optional

from .errors import ParseError, ValidationError
from .sdt import (
    SDT,
    ActionName,
    AffordanceTag,
    FLAG_NAMES,
    ObjectDescription,
    StateEffect,
    StatePredicate,
    TEMPERATURES,
)

# Verbatim simulator error strings; recovery prompts must carry these bit-exact.
MSG_NOT_VISIBLE = "Target object not found within the specified visibility..."
MSG_NO_VALID_POSITION = "No valid positions to place object found."
MSG_HAND_OCCUPIED = "Agent is already holding an object."
MSG_HAND_EMPTY = "Agent is not holding any object."
MSG_NOT_AFFORDED = "Action is not applicable to the target object in its current state."
MSG_CLOSED_RECEPTACLE = "Target receptacle is closed."
MSG_UNKNOWN_OBJECT = "Referenced object does not exist in the scene."

#: Radius within which objects count as co-located for rule firing.
NEARBY_RADIUS = 1.0

#: Standoff the agent keeps from a navigation target.
GOTO_STANDOFF = 0.5

#: Pieces produced by one slice action.
SLICE_CHILD_COUNT = 2

_ID_RE = re.compile(
    r"^(?P<type>[A-Za-z][A-Za-z0-9_]*)"
    r"\|(?P<x>[+-]\d{2}\.\d{2})\|(?P<y>[+-]\d{2}\.\d{2})\|(?P<z>[+-]\d{2}\.\d{2})"
    r"(?P<suffix>\|[A-Za-z][A-Za-z0-9_]*Sliced-\d+)?$"
)


def format_object_id(type_name: str, position: tuple[float, float, float]) -> str:
    for c in position:
        if abs(c) >= 100:
            raise ValidationError(f"coordinate out of id range: {c}")
    x, y, z = (f"{c:+06.2f}" for c in position)
    return f"{type_name}|{x}|{y}|{z}"


def is_valid_object_id(object_id: str) -> bool:
    return _ID_RE.match(object_id) is not None


def type_of_id(object_id: str) -> str:
    """Type encoded in an id; slice-child suffixes carry the derived type."""
    m = _ID_RE.match(object_id)
    if m is None:
        return object_id
    suffix = m.group("suffix")
    if suffix:
        return suffix[1:].rsplit("-", 1)[0]
    return m.group("type")


@dataclass
class ConcreteAction:
    """Fully grounded action: name plus the instance id it operates on.

    PutObject targets the receptacle (the placed object is whatever the
    agent holds); pose actions carry no target.
    """

    name: ActionName
    target: Optional[str] = None

    def render(self) -> str:
        if self.target is None:
            return f"({self.name},)"
        return f"({self.name},{self.target})"


@dataclass
class ActionOutcome:
    status: str  # "Success" | "Error"
    error_code: Optional[str] = None
    message: str = ""

    @property
    def ok(self) -> bool:
        return self.status == "Success"

    @staticmethod
    def success(message: str = "") -> "ActionOutcome":
        return ActionOutcome(status="Success", message=message)

    @staticmethod
    def error(code: str, message: str) -> "ActionOutcome":
        return ActionOutcome(status="Error", error_code=code, message=message)


@dataclass
class ObjectInstance:
    object_id: str
    type_name: str
    position: tuple[float, float, float]
    flags: dict[str, bool]
    temperature: str = "RoomTemp"
    parent_receptacle: Optional[str] = None
    capacity: int = 0
    slice_children: list[str] = field(default_factory=list)

    def clone(self) -> "ObjectInstance":
        return ObjectInstance(
            object_id=self.object_id,
            type_name=self.type_name,
            position=self.position,
            flags=dict(self.flags),
            temperature=self.temperature,
            parent_receptacle=self.parent_receptacle,
            capacity=self.capacity,
            slice_children=list(self.slice_children),
        )

    def flag(self, name: str) -> bool:
        return self.flags.get(name, False)


@dataclass
class WorldState:
    objects: dict[str, ObjectInstance]
    agent_position: tuple[float, float, float]
    agent_crouched: bool = False
    held_object: Optional[str] = None
    visibility_radius: float = 25.0
    view_band_standing: tuple[float, float] = (0.80, 2.20)
    view_band_crouched: tuple[float, float] = (0.00, 1.50)

    @property
    def view_band(self) -> tuple[float, float]:
        return self.view_band_crouched if self.agent_crouched else self.view_band_standing

    def clone(self) -> "WorldState":
        return WorldState(
            objects={k: v.clone() for k, v in self.objects.items()},
            agent_position=self.agent_position,
            agent_crouched=self.agent_crouched,
            held_object=self.held_object,
            visibility_radius=self.visibility_radius,
            view_band_standing=self.view_band_standing,
            view_band_crouched=self.view_band_crouched,
        )

    def distance_to(self, obj: ObjectInstance) -> float:
        return math.dist(self.agent_position, obj.position)

    def contents_of(self, receptacle_id: str) -> list[ObjectInstance]:
        return sorted(
            (o for o in self.objects.values() if o.parent_receptacle == receptacle_id),
            key=lambda o: o.object_id,
        )


def state_hash(state: WorldState) -> str:
    """Stable content hash for determinism and purity checks."""
    payload = {
        "agent": [round(c, 6) for c in state.agent_position],
        "crouched": state.agent_crouched,
        "held": state.held_object,
        "radius": state.visibility_radius,
        "bands": [state.view_band_standing, state.view_band_crouched],
        "objects": [
            {
                "id": o.object_id,
                "type": o.type_name,
                "pos": [round(c, 6) for c in o.position],
                "flags": {k: o.flags.get(k, False) for k in FLAG_NAMES},
                "temp": o.temperature,
                "parent": o.parent_receptacle,
                "cap": o.capacity,
                "children": o.slice_children,
            }
            for o in sorted(state.objects.values(), key=lambda o: o.object_id)
        ],
    }
    blob = json.dumps(payload, sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(blob.encode("utf-8")).hexdigest()


def state_to_json(state: WorldState) -> dict:
    return {
        "agent": {
            "position": list(state.agent_position),
            "crouched": state.agent_crouched,
            "held_object": state.held_object,
            "visibility_radius": state.visibility_radius,
            "view_band_standing": list(state.view_band_standing),
            "view_band_crouched": list(state.view_band_crouched),
        },
        "objects": [
            {
                "id": o.object_id,
                "type": o.type_name,
                "position": list(o.position),
                "flags": {k: o.flags.get(k, False) for k in FLAG_NAMES},
                "temperature": o.temperature,
                "parent_receptacle": o.parent_receptacle,
                "capacity": o.capacity,
                "slice_children": list(o.slice_children),
            }
            for o in sorted(state.objects.values(), key=lambda o: o.object_id)
        ],
    }


def state_from_json(data: dict) -> WorldState:
    agent = data["agent"]
    objects = {}
    for raw in data["objects"]:
        objects[raw["id"]] = ObjectInstance(
            object_id=raw["id"],
            type_name=raw["type"],
            position=tuple(raw["position"]),
            flags=dict(raw["flags"]),
            temperature=raw["temperature"],
            parent_receptacle=raw.get("parent_receptacle"),
            capacity=int(raw.get("capacity", 0)),
            slice_children=list(raw.get("slice_children", [])),
        )
    return WorldState(
        objects=objects,
        agent_position=tuple(agent["position"]),
        agent_crouched=bool(agent["crouched"]),
        held_object=agent.get("held_object"),
        visibility_radius=float(agent["visibility_radius"]),
        view_band_standing=tuple(agent["view_band_standing"]),
        view_band_crouched=tuple(agent["view_band_crouched"]),
    )


# ---------------------------------------------------------------------------
# Scene loading


def _parse_instance(raw: dict, index: int) -> ObjectInstance:
    where = f"object {index}"
    if not isinstance(raw, dict) or "type" not in raw or "position" not in raw:
        raise ParseError(f"{where}: needs 'type' and 'position'")
    position = tuple(float(c) for c in raw["position"])
    if len(position) != 3:
        raise ParseError(f"{where}: position must have 3 components")
    type_name = raw["type"]
    object_id = raw.get("id") or format_object_id(type_name, position)
    m = _ID_RE.match(object_id)
    if m is None:
        raise ValidationError(f"{where}: malformed id {object_id!r}")
    expected = format_object_id(type_name, position) + (m.group("suffix") or "")
    if object_id != expected:
        raise ValidationError(
            f"{where}: id {object_id!r} does not embed its type/position ({expected!r})"
        )
    flags = {k: False for k in FLAG_NAMES}
    for k, v in raw.get("flags", {}).items():
        if k not in FLAG_NAMES:
            raise ValidationError(f"{where}: unknown flag {k!r}")
        flags[k] = bool(v)
    temperature = raw.get("temperature", "RoomTemp")
    if temperature not in TEMPERATURES:
        raise ValidationError(f"{where}: unknown temperature {temperature!r}")
    return ObjectInstance(
        object_id=object_id,
        type_name=type_name,
        position=position,
        flags=flags,
        temperature=temperature,
        parent_receptacle=raw.get("parent_receptacle"),
        capacity=int(raw.get("capacity", 0)),
    )


def validate_state(state: WorldState, sdt: SDT) -> None:
    """Containment, capacity and id invariants; raises ValidationError."""
    for obj in state.objects.values():
        if obj.capacity < 0:
            raise ValidationError(f"{obj.object_id}: negative capacity")
        parent_id = obj.parent_receptacle
        if parent_id is None:
            continue
        parent = state.objects.get(parent_id)
        if parent is None:
            raise ValidationError(f"{obj.object_id}: dangling container {parent_id!r}")
        entry = sdt.get(parent.type_name)
        if entry is None or not entry.has(AffordanceTag.RECEPTACLE):
            raise ValidationError(
                f"{obj.object_id}: container {parent_id!r} is not a receptacle type"
            )
    for obj in state.objects.values():
        entry = sdt.get(obj.type_name)
        if entry is not None and entry.has(AffordanceTag.RECEPTACLE):
            count = len(state.contents_of(obj.object_id))
            if count > obj.capacity:
                raise ValidationError(
                    f"{obj.object_id}: holds {count} objects, capacity {obj.capacity}"
                )
    # containment must be acyclic
    for obj in state.objects.values():
        seen = set()
        cur: Optional[str] = obj.parent_receptacle
        while cur is not None:
            if cur in seen or cur == obj.object_id:
                raise ValidationError(f"{obj.object_id}: containment cycle via {cur!r}")
            seen.add(cur)
            cur = state.objects[cur].parent_receptacle
    if state.held_object is not None:
        held = state.objects.get(state.held_object)
        if held is None:
            raise ValidationError(f"held object {state.held_object!r} does not exist")
        if held.parent_receptacle is not None:
            raise ValidationError("held object cannot sit inside a receptacle")


def load_scene(path: str | Path, sdt: SDT) -> WorldState:
    """Load a scene file and normalize/validate it against the knowledge base.

    Non-openable receptacles get isOpen=True so visibility and the action
    filter can read openness off the instance flag alone.
    """
    try:
        with open(path, encoding="utf-8") as fh:
            data = json.load(fh)
    except OSError as exc:
        raise ParseError(f"cannot read scene file: {exc}") from exc
    except json.JSONDecodeError as exc:
        raise ParseError(f"malformed scene file: {exc}") from exc
    if not isinstance(data, dict) or "agent" not in data or "objects" not in data:
        raise ParseError("scene file must be an object with 'agent' and 'objects'")
    agent = data["agent"]
    objects: dict[str, ObjectInstance] = {}
    for i, raw in enumerate(data["objects"]):
        inst = _parse_instance(raw, i)
        if inst.object_id in objects:
            raise ValidationError(f"duplicate object id {inst.object_id!r}")
        objects[inst.object_id] = inst
    state = WorldState(
        objects=objects,
        agent_position=tuple(float(c) for c in agent.get("position", (0.0, 0.9, 0.0))),
        agent_crouched=bool(agent.get("crouched", False)),
        held_object=agent.get("held_object"),
        visibility_radius=float(agent.get("visibility_radius", 25.0)),
        view_band_standing=tuple(agent.get("view_band_standing", (0.80, 2.20))),
        view_band_crouched=tuple(agent.get("view_band_crouched", (0.00, 1.50))),
    )
    for obj in state.objects.values():
        entry = sdt.get(obj.type_name)
        if (
            entry is not None
            and entry.has(AffordanceTag.RECEPTACLE)
            and not entry.has(AffordanceTag.OPENABLE)
        ):
            obj.flags["isOpen"] = True
    validate_state(state, sdt)
    return state


# ---------------------------------------------------------------------------
# Visibility and descriptions


def _container_chain_open(state: WorldState, obj: ObjectInstance) -> bool:
    cur = obj.parent_receptacle
    while cur is not None:
        parent = state.objects.get(cur)
        if parent is None or not parent.flag("isOpen"):
            return False
        cur = parent.parent_receptacle
    return True


def is_visible(state: WorldState, obj: ObjectInstance) -> bool:
    if state.distance_to(obj) > state.visibility_radius:
        return False
    if not _container_chain_open(state, obj):
        return False
    lo, hi = state.view_band
    return lo <= obj.position[1] <= hi


def visible_objects(state: WorldState) -> list[ObjectInstance]:
    """Scene objects the agent can currently perceive, sorted by id."""
    return sorted(
        (o for o in state.objects.values() if is_visible(state, o)),
        key=lambda o: o.object_id,
    )


def describe(state: WorldState, obj: ObjectInstance) -> ObjectDescription:
    return ObjectDescription(
        object_id=obj.object_id,
        type_name=obj.type_name,
        flags={k: obj.flags.get(k, False) for k in FLAG_NAMES},
        temperature=obj.temperature,
        parent_receptacle=obj.parent_receptacle,
        distance=round(state.distance_to(obj), 4),
    )


def object_descriptions(state: WorldState) -> list[ObjectDescription]:
    """One description per visible object, id-sorted (pure query)."""
    return [describe(state, o) for o in visible_objects(state)]


# ---------------------------------------------------------------------------
# Rule engine


def _predicate_holds(state: WorldState, owner: ObjectInstance, pred: StatePredicate) -> bool:
    def check(obj: ObjectInstance) -> bool:
        if pred.flag is not None and obj.flag(pred.flag) != pred.value:
            return False
        if pred.temperature is not None and obj.temperature != pred.temperature:
            return False
        return True

    if pred.scope == "self":
        return check(owner)
    if pred.scope == "container":
        parent = state.objects.get(owner.parent_receptacle or "")
        if parent is None:
            return False
        if pred.type_name is not None and parent.type_name != pred.type_name:
            return False
        return check(parent)
    # colocated: some nearby object (optionally of a named type) satisfies it
    for other in state.objects.values():
        if other.object_id == owner.object_id:
            continue
        if math.dist(other.position, owner.position) > NEARBY_RADIUS:
            continue
        if pred.type_name is not None and other.type_name != pred.type_name:
            continue
        if check(other):
            return True
    return False


def _effect_targets(state: WorldState, owner: ObjectInstance, effect: StateEffect) -> list[ObjectInstance]:
    if effect.scope == "self":
        return [owner]
    if effect.scope == "contents":
        return state.contents_of(owner.object_id)
    return sorted(
        (
            o
            for o in state.objects.values()
            if o.object_id != owner.object_id
            and math.dist(o.position, owner.position) <= NEARBY_RADIUS
        ),
        key=lambda o: o.object_id,
    )


def _apply_effect(state: WorldState, sdt: SDT, owner: ObjectInstance, effect: StateEffect) -> None:
    gate = sdt.effect_affordance(effect.field_name, effect.to)
    for target in _effect_targets(state, owner, effect):
        entry = sdt.get(target.type_name)
        if entry is None:
            continue
        if gate is not None and not entry.has(gate):
            continue
        if effect.field_name == "temperature":
            target.temperature = str(effect.to)
        elif effect.field_name == "parent_receptacle":
            target.parent_receptacle = effect.to if effect.to is None else str(effect.to)
        else:
            target.flags[effect.field_name] = bool(effect.to)


def _fire_rules(state: WorldState, sdt: SDT, action: ActionName, target: ObjectInstance) -> None:
    """Fire matching rules of the action target, its contents and neighbours.

    Owners are visited in a deterministic order; rule preconditions are
    evaluated against the already-updated state (consequences are instant).
    """
    owners = [target]
    owners.extend(state.contents_of(target.object_id))
    owner_ids = {o.object_id for o in owners}
    for other in sorted(state.objects.values(), key=lambda o: o.object_id):
        if other.object_id in owner_ids:
            continue
        if math.dist(other.position, target.position) <= NEARBY_RADIUS:
            owners.append(other)
            owner_ids.add(other.object_id)
    for owner in owners:
        entry = sdt.get(owner.type_name)
        if entry is None:
            continue
        for rule in entry.rules:
            if rule.trigger_action is not action:
                continue
            if owner.object_id != target.object_id and not rule.reactive:
                continue  # self-triggered rules only fire on the action target
            if all(_predicate_holds(state, owner, p) for p in rule.preconditions):
                for effect in rule.effects:
                    _apply_effect(state, sdt, owner, effect)


# ---------------------------------------------------------------------------
# Transitions


def _afforded(sdt: SDT, obj: ObjectInstance, tag: AffordanceTag) -> bool:
    entry = sdt.get(obj.type_name)
    return entry is not None and entry.has(tag)


def step(state: WorldState, action: ConcreteAction, sdt: SDT) -> tuple[WorldState, ActionOutcome]:
    """Execute one grounded action. Errors leave the input state untouched."""
    name = action.name

    if name is ActionName.CROUCH or name is ActionName.STAND:
        want = name is ActionName.CROUCH
        if state.agent_crouched == want:
            return state, ActionOutcome.success("pose unchanged")
        new = state.clone()
        new.agent_crouched = want
        return new, ActionOutcome.success()

    if action.target is None or action.target not in state.objects:
        return state, ActionOutcome.error("UnknownObject", MSG_UNKNOWN_OBJECT)
    obj = state.objects[action.target]

    if name is ActionName.GOTO:
        new = state.clone()
        new.agent_position = (
            obj.position[0] + GOTO_STANDOFF,
            state.agent_position[1],
            obj.position[2],
        )
        if new.held_object is not None:
            new.objects[new.held_object].position = new.agent_position
        return new, ActionOutcome.success()

    if name is ActionName.PICKUP:
        if not is_visible(state, obj):
            return state, ActionOutcome.error("NotVisible", MSG_NOT_VISIBLE)
        if not _afforded(sdt, obj, AffordanceTag.PICKUPABLE):
            return state, ActionOutcome.error("NotAfforded", MSG_NOT_AFFORDED)
        if state.held_object is not None:
            return state, ActionOutcome.error("HandOccupied", MSG_HAND_OCCUPIED)
        new = state.clone()
        target = new.objects[obj.object_id]
        target.parent_receptacle = None
        target.position = new.agent_position
        new.held_object = target.object_id
        _fire_rules(new, sdt, name, target)
        return new, ActionOutcome.success()

    if name is ActionName.PUT:
        if state.held_object is None:
            return state, ActionOutcome.error("HandEmpty", MSG_HAND_EMPTY)
        if not is_visible(state, obj):
            return state, ActionOutcome.error("NotVisible", MSG_NOT_VISIBLE)
        if not _afforded(sdt, obj, AffordanceTag.RECEPTACLE) or obj.object_id == state.held_object:
            return state, ActionOutcome.error("NotAfforded", MSG_NOT_AFFORDED)
        if _afforded(sdt, obj, AffordanceTag.OPENABLE) and not obj.flag("isOpen"):
            return state, ActionOutcome.error("ClosedReceptacle", MSG_CLOSED_RECEPTACLE)
        if len(state.contents_of(obj.object_id)) >= obj.capacity:
            return state, ActionOutcome.error("NoValidPosition", MSG_NO_VALID_POSITION)
        new = state.clone()
        held = new.objects[new.held_object]
        held.parent_receptacle = obj.object_id
        held.position = obj.position
        new.held_object = None
        _fire_rules(new, sdt, name, new.objects[obj.object_id])
        return new, ActionOutcome.success()

    if name is ActionName.OPEN or name is ActionName.CLOSE:
        if not is_visible(state, obj):
            return state, ActionOutcome.error("NotVisible", MSG_NOT_VISIBLE)
        want_open = name is ActionName.OPEN
        if not _afforded(sdt, obj, AffordanceTag.OPENABLE) or obj.flag("isOpen") == want_open:
            return state, ActionOutcome.error("NotAfforded", MSG_NOT_AFFORDED)
        new = state.clone()
        target = new.objects[obj.object_id]
        target.flags["isOpen"] = want_open
        _fire_rules(new, sdt, name, target)
        return new, ActionOutcome.success()

    if name is ActionName.TOGGLE_ON or name is ActionName.TOGGLE_OFF:
        if not is_visible(state, obj):
            return state, ActionOutcome.error("NotVisible", MSG_NOT_VISIBLE)
        want = name is ActionName.TOGGLE_ON
        if not _afforded(sdt, obj, AffordanceTag.TOGGLEABLE) or obj.flag("isToggled") == want:
            return state, ActionOutcome.error("NotAfforded", MSG_NOT_AFFORDED)
        new = state.clone()
        target = new.objects[obj.object_id]
        target.flags["isToggled"] = want
        _fire_rules(new, sdt, name, target)
        return new, ActionOutcome.success()

    if name is ActionName.SLICE:
        if not is_visible(state, obj):
            return state, ActionOutcome.error("NotVisible", MSG_NOT_VISIBLE)
        if not _afforded(sdt, obj, AffordanceTag.SLICEABLE) or obj.flag("isSliced"):
            return state, ActionOutcome.error("NotAfforded", MSG_NOT_AFFORDED)
        if state.held_object is None:
            return state, ActionOutcome.error("HandEmpty", MSG_HAND_EMPTY)
        held_entry = sdt.get(state.objects[state.held_object].type_name)
        if held_entry is None or not held_entry.is_slicing_tool:
            return state, ActionOutcome.error("NotAfforded", MSG_NOT_AFFORDED)
        new = state.clone()
        target = new.objects[obj.object_id]
        target.flags["isSliced"] = True
        children = _spawn_slices(new, target)
        target.slice_children = [c.object_id for c in children]
        _fire_rules(new, sdt, name, target)
        return new, ActionOutcome.success()

    return state, ActionOutcome.error("NotAfforded", MSG_NOT_AFFORDED)


def _spawn_slices(state: WorldState, parent: ObjectInstance) -> list[ObjectInstance]:
    """Create slice children inheriting the parent's flags and temperature.

    Children stay in the parent's receptacle while capacity allows, else
    they spill out beside it (conservation: exactly +SLICE_CHILD_COUNT).
    """
    sliced_type = f"{parent.type_name}Sliced"
    children = []
    parent_recept = parent.parent_receptacle
    for k in range(SLICE_CHILD_COUNT):
        child_id = f"{parent.object_id}|{sliced_type}-{k}"
        container: Optional[str] = None
        if parent_recept is not None:
            recept = state.objects[parent_recept]
            if len(state.contents_of(parent_recept)) < recept.capacity:
                container = parent_recept
        child = ObjectInstance(
            object_id=child_id,
            type_name=sliced_type,
            position=parent.position,
            flags=dict(parent.flags),
            temperature=parent.temperature,
            parent_receptacle=container,
        )
        state.objects[child_id] = child
        children.append(child)
    return children


# ---------------------------------------------------------------------------
# Failure injection


@dataclass(frozen=True)
class Perturbation:
    """Ground-truth alteration: kind in {dirty, hide, fill, lower}."""

    kind: str
    target: str
    receptacle: Optional[str] = None

    @staticmethod
    def parse(spec: str) -> "Perturbation":
        parts = spec.split(":")
        kind = parts[0]
        if kind == "hide":
            if len(parts) != 3:
                raise ValidationError(f"hide needs target and receptacle: {spec!r}")
            return Perturbation(kind="hide", target=parts[1], receptacle=parts[2])
        if kind in ("dirty", "fill", "lower"):
            if len(parts) != 2:
                raise ValidationError(f"{kind} needs exactly one target: {spec!r}")
            return Perturbation(kind=kind, target=parts[1])
        raise ValidationError(f"unknown perturbation kind: {spec!r}")


def _resolve_target(state: WorldState, ref: str) -> ObjectInstance:
    if ref in state.objects:
        return state.objects[ref]
    matches = sorted(
        (o for o in state.objects.values() if o.type_name == ref),
        key=lambda o: o.object_id,
    )
    if not matches:
        raise ValidationError(f"perturbation target not in scene: {ref!r}")
    return matches[0]


def inject_failure(state: WorldState, perturbation: Perturbation, sdt: SDT) -> WorldState:
    """Apply one scene perturbation, returning a new state."""
    new = state.clone()
    target = new.objects[_resolve_target(new, perturbation.target).object_id]

    if perturbation.kind == "dirty":
        target.flags["isDirty"] = True
        return new

    if perturbation.kind == "hide":
        recept = new.objects[_resolve_target(new, perturbation.receptacle).object_id]
        if not _afforded(sdt, recept, AffordanceTag.RECEPTACLE):
            raise ValidationError(f"{recept.object_id} is not a receptacle")
        if new.held_object == target.object_id:
            new.held_object = None
        # the object keeps its own height; only x/z follow the receptacle
        target.position = (recept.position[0], target.position[1], recept.position[2])
        target.parent_receptacle = recept.object_id
        if _afforded(sdt, recept, AffordanceTag.OPENABLE):
            recept.flags["isOpen"] = False
        return new

    if perturbation.kind == "fill":
        if not _afforded(sdt, target, AffordanceTag.RECEPTACLE):
            raise ValidationError(f"{target.object_id} is not a receptacle")
        occupied = len(new.contents_of(target.object_id))
        for k in range(target.capacity - occupied):
            pos = (
                round(target.position[0] + 0.01 * (k + 1), 2),
                target.position[1],
                target.position[2],
            )
            filler = ObjectInstance(
                object_id=format_object_id("Statue", pos),
                type_name="Statue",
                position=pos,
                flags={name: False for name in FLAG_NAMES},
                parent_receptacle=target.object_id,
            )
            new.objects[filler.object_id] = filler
        return new

    if perturbation.kind == "lower":
        lo_standing = new.view_band_standing[0]
        lo_crouched = new.view_band_crouched[0]
        y = max(lo_standing - 0.30, lo_crouched + 0.01)
        target.position = (target.position[0], y, target.position[2])
        return new

    raise ValidationError(f"unknown perturbation kind: {perturbation.kind!r}")


def apply_perturbations(
    state: WorldState, specs: Iterable[str], sdt: SDT
) -> WorldState:
    for spec in specs:
        state = inject_failure(state, Perturbation.parse(spec), sdt)
    return state
