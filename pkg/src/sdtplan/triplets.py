"""Grammar layer: action triplets, recovery pairs, goal conditions.

Parsers are total over arbitrary text: they either return a value or raise
one of the typed grammar errors, never anything else. Extraction is
tolerant of surrounding prose (live model output is chatty) and pulls the
first well-formed structure out of the reply.
"""

from __future__ import annotations

import re
from dataclasses import dataclass
from typing import Optional

from .errors import BadAction, GoalParseError, MalformedEntry, NoTripletsFound
from .sdt import ActionName, FLAG_NAMES, TEMPERATURES
from .world import WorldState, is_valid_object_id

_ACTION_NAMES = {a.value for a in ActionName}


@dataclass(frozen=True)
class ActionTriplet:
    """Abstract plan step: action, primary ref, optional secondary ref.

    Refs are type names or full instance ids; arg2 is None exactly when
    the source text's third slot was 0.
    """

    action: ActionName
    arg1: str
    arg2: Optional[str] = None

    def render(self) -> str:
        third = "0" if self.arg2 is None else f"'{self.arg2}'"
        return f"['{self.action}', '{self.arg1}', {third}]"


@dataclass(frozen=True)
class RecoveryPair:
    action: ActionName
    target: str

    def render(self) -> str:
        return f"({self.action},{self.target})"


# ---------------------------------------------------------------------------
# Triplet parsing


def _scan_nested_list(text: str, start: int) -> Optional[tuple[list, int]]:
    """Parse a bracketed list of strings/lists starting at ``start``; None if broken."""
    assert text[start] == "["
    items: list = []
    buf: list[str] = []
    has_token = False
    i = start + 1
    n = len(text)

    def flush() -> None:
        nonlocal has_token
        token = "".join(buf).strip()
        buf.clear()
        if token:
            items.append(token)
            has_token = False
        elif has_token:
            items.append("")
            has_token = False

    while i < n:
        ch = text[i]
        if ch == "[":
            inner = _scan_nested_list(text, i)
            if inner is None:
                return None
            items.append(inner[0])
            i = inner[1]
            continue
        if ch == "]":
            flush()
            return items, i + 1
        if ch == ",":
            flush()
            i += 1
            continue
        if ch in "'\"":
            quote = ch
            j = i + 1
            while j < n and text[j] != quote:
                buf.append(text[j])
                j += 1
            if j >= n:
                return None
            has_token = True
            i = j + 1
            continue
        if ch == "(" or ch == ")":
            return None
        buf.append(ch)
        i += 1
    return None


def _first_list_of_lists(text: str) -> Optional[list]:
    empty_seen: Optional[list] = None
    pos = 0
    while True:
        pos = text.find("[", pos)
        if pos < 0:
            return empty_seen
        parsed = _scan_nested_list(text, pos)
        if parsed is not None:
            value = parsed[0]
            if value and all(isinstance(item, list) for item in value):
                return value
            if not value and empty_seen is None:
                empty_seen = value  # keep scanning: a real plan may follow
        pos += 1


def _to_triplet(item: list, position: int) -> ActionTriplet:
    if not (2 <= len(item) <= 3):
        raise MalformedEntry(f"triplet needs 2-3 slots, got {len(item)}", position)
    if any(isinstance(slot, list) for slot in item):
        raise MalformedEntry("nested list inside triplet", position)
    name = str(item[0]).strip()
    if name not in _ACTION_NAMES:
        raise BadAction(name)
    arg1 = str(item[1]).strip()
    if not arg1:
        raise MalformedEntry("empty first argument", position)
    arg2: Optional[str] = None
    if len(item) == 3:
        third = str(item[2]).strip()
        if third not in ("0", "", "None"):
            arg2 = third
    return ActionTriplet(action=ActionName(name), arg1=arg1, arg2=arg2)


def parse_triplets(text: str) -> list[ActionTriplet]:
    """Extract the first well-formed list-of-lists as a triplet plan."""
    value = _first_list_of_lists(text)
    if value is None:
        raise NoTripletsFound("no triplet list found in text")
    return [_to_triplet(item, i) for i, item in enumerate(value)]


def format_triplets(plan: list[ActionTriplet]) -> str:
    """Canonical single-line rendering; parse_triplets inverts it exactly."""
    return "[" + ", ".join(t.render() for t in plan) + "]"


# ---------------------------------------------------------------------------
# Recovery pair parsing

_PAIR_RE = re.compile(r"\(\s*([A-Za-z_][A-Za-z0-9_]*)\s*,\s*([^(),]+?)\s*\)")


def parse_recovery(text: str) -> list[RecoveryPair]:
    """Extract ``(Action,Type|x|y|z)`` pairs from free text."""
    pairs = []
    for i, m in enumerate(_PAIR_RE.finditer(text)):
        name, target = m.group(1), m.group(2).strip().strip("'\"")
        if name not in _ACTION_NAMES:
            raise BadAction(name)
        if not is_valid_object_id(target):
            raise MalformedEntry(f"malformed target id {target!r}", i)
        pairs.append(RecoveryPair(action=ActionName(name), target=target))
    if pairs:
        return pairs
    if re.search(r"\[\s*\]", text):
        return []
    raise NoTripletsFound("no recovery pairs found in text")


def format_recovery(pairs: list[RecoveryPair]) -> str:
    return "[" + ",".join(p.render() for p in pairs) + "]"


# ---------------------------------------------------------------------------
# Goal conditions


@dataclass(frozen=True)
class GoalClause:
    """Existential conjunct: some object of the type satisfies all parts.

    Flags may be prefixed with ``!`` to require False (e.g. a clean knife
    needs ``!isDirty``).
    """

    object_type: str
    required_flags: tuple[str, ...] = ()
    required_temperature: Optional[str] = None
    receptacle_type: Optional[str] = None

    def render(self) -> str:
        flags = ",".join(self.required_flags) if self.required_flags else "-"
        temp = self.required_temperature or "-"
        recept = self.receptacle_type or "-"
        return f"GOAL:{{type={self.object_type}; flags={flags}; temp={temp}; in={recept}}}"


@dataclass(frozen=True)
class GoalCondition:
    clauses: tuple[GoalClause, ...]

    def __post_init__(self) -> None:
        if not self.clauses:
            raise GoalParseError("goal needs at least one clause")
        for clause in self.clauses:
            if not clause.object_type:
                raise GoalParseError("goal clause needs an object type")
            for flag in clause.required_flags:
                if flag.lstrip("!") not in FLAG_NAMES:
                    raise GoalParseError(f"unknown goal flag {flag!r}")
            if (
                clause.required_temperature is not None
                and clause.required_temperature not in TEMPERATURES
            ):
                raise GoalParseError(
                    f"unknown goal temperature {clause.required_temperature!r}"
                )

    def render(self) -> str:
        return "\n".join(c.render() for c in self.clauses)


_GOAL_RE = re.compile(r"GOAL:\{([^{}]*)\}")


def parse_goal(text: str) -> GoalCondition:
    """Parse all GOAL:{type=..; flags=..; temp=..; in=..} lines in the text."""
    clauses = []
    for m in _GOAL_RE.finditer(text):
        fields: dict[str, str] = {}
        for part in m.group(1).split(";"):
            part = part.strip()
            if not part:
                continue
            if "=" not in part:
                raise GoalParseError(f"bad goal field {part!r}")
            key, value = part.split("=", 1)
            fields[key.strip()] = value.strip()
        if "type" not in fields:
            raise GoalParseError("goal clause missing type field")
        flags_field = fields.get("flags", "-")
        flags = tuple(
            f.strip() for f in flags_field.split(",") if f.strip() and f.strip() != "-"
        )
        temp = fields.get("temp", "-")
        recept = fields.get("in", "-")
        clauses.append(
            GoalClause(
                object_type=fields["type"],
                required_flags=flags,
                required_temperature=None if temp in ("-", "") else temp,
                receptacle_type=None if recept in ("-", "") else recept,
            )
        )
    if not clauses:
        raise GoalParseError("no GOAL lines found in text")
    return GoalCondition(clauses=tuple(clauses))


# ---------------------------------------------------------------------------
# Goal checking


def _flag_satisfied(flags: dict[str, bool], token: str) -> bool:
    if token.startswith("!"):
        return not flags.get(token[1:], False)
    return flags.get(token, False)


def _clause_conjuncts(state: WorldState, clause: GoalClause, obj) -> list[tuple[str, bool]]:
    """(need-token, satisfied) per conjunct, in canonical report order."""
    out = []
    for token in clause.required_flags:
        out.append((f"flag:{token}", _flag_satisfied(obj.flags, token)))
    if clause.required_temperature is not None:
        out.append(
            (f"temp:{clause.required_temperature}", obj.temperature == clause.required_temperature)
        )
    if clause.receptacle_type is not None:
        parent = state.objects.get(obj.parent_receptacle or "")
        out.append(
            (f"in:{clause.receptacle_type}", parent is not None and parent.type_name == clause.receptacle_type)
        )
    return out


def clause_witnesses(state: WorldState, clause: GoalClause) -> list[str]:
    """Ids of all objects satisfying the clause."""
    out = []
    for obj in sorted(state.objects.values(), key=lambda o: o.object_id):
        if obj.type_name != clause.object_type:
            continue
        if all(ok for _, ok in _clause_conjuncts(state, clause, obj)):
            out.append(obj.object_id)
    return out


def _closest_miss(state: WorldState, clause: GoalClause) -> str:
    """Unmet description naming the first failing conjunct of the best candidate."""
    candidates = sorted(
        (o for o in state.objects.values() if o.type_name == clause.object_type),
        key=lambda o: o.object_id,
    )
    if not candidates:
        return f"UNMET type={clause.object_type} need=exists"
    best = max(
        candidates,
        key=lambda o: sum(ok for _, ok in _clause_conjuncts(state, clause, o)),
    )
    for need, ok in _clause_conjuncts(state, clause, best):
        if not ok:
            return f"UNMET type={clause.object_type} need={need} near={best.object_id}"
    return f"UNMET type={clause.object_type} need=exists"


def goal_satisfied(state: WorldState, goal: GoalCondition) -> tuple[bool, list[str]]:
    """Check every clause has a witness; list closest-miss lines for the rest.

    Witnesses are per-clause existential; the same object may witness more
    than one clause.
    """
    unmet = []
    for clause in goal.clauses:
        if not clause_witnesses(state, clause):
            unmet.append(_closest_miss(state, clause))
    return (not unmet, unmet)
