"""Action interpretation engine: grounds abstract triplets and executes them.

Grounding is local when unambiguous (exactly one candidate per reference,
zero backend calls) and otherwise asks the backend with a context query.
Every triplet's postcondition is checked before execution, so a step whose
outcome already holds (typically because a recovery sequence produced it)
is skipped rather than re-run.
"""

from __future__ import annotations

import re
from dataclasses import dataclass, field
from typing import Optional, Protocol

from . import prompts
from .backends import LLMBackend
from .errors import NoCandidate
from .sdt import SDT, ActionName
from .triplets import ActionTriplet, RecoveryPair
from .world import (
    ActionOutcome,
    ConcreteAction,
    MSG_NOT_VISIBLE,
    WorldState,
    is_valid_object_id,
    is_visible,
    object_descriptions,
    step,
)

HISTORY_TAIL = 5
_CHOICE_RE = re.compile(r"CHOICE:\{([^{}]*)\}")


@dataclass
class RecoveryAttempt:
    """One resolver iteration: proposal, what actually ran, and its feedback."""

    proposed: list[RecoveryPair]
    executed: list[tuple[ConcreteAction, ActionOutcome]] = field(default_factory=list)
    feedback: str = ""
    resolved: bool = False

    def to_json(self) -> dict:
        return {
            "proposed": [p.render() for p in self.proposed],
            "executed": [
                {"action": c.render(), "status": o.status, "message": o.message}
                for c, o in self.executed
            ],
            "feedback": self.feedback,
            "resolved": self.resolved,
        }


@dataclass
class HistoryEntry:
    triplet: ActionTriplet
    phase: str = "plan"
    concrete: Optional[ConcreteAction] = None
    outcome: Optional[ActionOutcome] = None
    skipped: bool = False
    attempts: list[RecoveryAttempt] = field(default_factory=list)

    def to_json(self) -> dict:
        return {
            "triplet": self.triplet.render(),
            "phase": self.phase,
            "concrete": self.concrete.render() if self.concrete else None,
            "outcome": None
            if self.outcome is None
            else {
                "status": self.outcome.status,
                "error_code": self.outcome.error_code,
                "message": self.outcome.message,
            },
            "skipped": self.skipped,
            "attempts": [a.to_json() for a in self.attempts],
        }


class ExecutionHistory:
    """Append-only record of every grounded step and recovery taken in a run."""

    def __init__(self) -> None:
        self.entries: list[HistoryEntry] = []

    def append(self, entry: HistoryEntry) -> None:
        self.entries.append(entry)

    def tail(self, n: int = HISTORY_TAIL) -> list[HistoryEntry]:
        return self.entries[-n:]

    @property
    def total_actions(self) -> int:
        """Simulator steps taken: plan steps plus all recovery executions."""
        count = 0
        for entry in self.entries:
            if entry.concrete is not None and not entry.skipped:
                count += 1
            for attempt in entry.attempts:
                count += len(attempt.executed)
        return count

    def error_count(self) -> int:
        return sum(
            1
            for e in self.entries
            if e.outcome is not None and not e.outcome.ok and not e.skipped
        )

    def to_json(self) -> list[dict]:
        return [e.to_json() for e in self.entries]


class FailureHandler(Protocol):
    """Interface the execution loop delegates errors to (the failure resolver)."""

    def handle(
        self,
        state: WorldState,
        triplet_index: int,
        triplet: ActionTriplet,
        concrete: Optional[ConcreteAction],
        outcome: ActionOutcome,
        task: str,
        history: ExecutionHistory,
    ) -> tuple[WorldState, str, list[RecoveryAttempt]]: ...


# ---------------------------------------------------------------------------
# Candidates and grounding


def _matches_ref(obj, ref: str, include_sliced: bool) -> bool:
    if obj.object_id == ref:
        return True
    if obj.type_name == ref:
        return True
    return include_sliced and obj.type_name == f"{ref}Sliced"


def candidate_instances(
    state: WorldState, ref: str, action: Optional[ActionName] = None
) -> list[str]:
    """Instance ids a reference may ground to, nearest first.

    A full id is a singleton (when present). A type name matches visible
    instances of the type; outside slicing contexts the sliced-derivative
    type joins in and inert sliced husks drop out.
    """
    if is_valid_object_id(ref) and ref in state.objects:
        return [ref]
    if is_valid_object_id(ref):
        return []
    slicing = action is ActionName.SLICE
    out = []
    for obj in state.objects.values():
        if not is_visible(state, obj):
            continue
        if not _matches_ref(obj, ref, include_sliced=not slicing):
            continue
        if not slicing and obj.type_name == ref and obj.slice_children:
            continue  # inert husk; its slices are the interactable remains
        out.append(obj)
    out.sort(key=lambda o: (state.distance_to(o), o.object_id))
    return [o.object_id for o in out]


def _refs_to_ground(triplet: ActionTriplet) -> list[str]:
    if triplet.action in (ActionName.CROUCH, ActionName.STAND):
        return []
    if triplet.action is ActionName.PUT:
        return [triplet.arg2 if triplet.arg2 is not None else triplet.arg1]
    return [triplet.arg1]


def _build_choice_query(
    triplet: ActionTriplet,
    task: str,
    state: WorldState,
    history: ExecutionHistory,
    candidates: dict[str, list[str]],
) -> str:
    lines = [prompts.CHOICE_HEADER, "", prompts.SEC_TASK, task, "", prompts.SEC_STEP]
    lines.append(f"Grounding: {triplet.render()}")
    lines.append("Resolve: " + ", ".join(candidates))
    lines.append("")
    lines.append(prompts.SEC_HISTORY)
    lines.extend(prompts.render_history_lines(history.tail()))
    lines.append("")
    lines.append(prompts.SEC_STATE)
    for desc in object_descriptions(state):
        lines.append(prompts.render_state_line(desc))
    lines.append("")
    lines.append(prompts.SEC_CANDIDATES)
    for ref, ids in candidates.items():
        lines.append(f"{ref}:")
        for k, object_id in enumerate(ids, start=1):
            dist = state.distance_to(state.objects[object_id])
            lines.append(f"  {k}. {object_id} (dist={dist:.2f})")
    lines.append("")
    lines.append(prompts.SEC_OUTPUT)
    lines.append("Reply with one line: CHOICE:{" + ", ".join(f"{r}-><id>" for r in candidates) + "}")
    return "\n".join(lines)


def _parse_choice(text: str) -> dict[str, str]:
    m = _CHOICE_RE.search(text)
    if m is None:
        return {}
    out = {}
    for part in m.group(1).split(","):
        if "->" not in part:
            continue
        ref, object_id = part.split("->", 1)
        out[ref.strip()] = object_id.strip()
    return out


def resolve(
    triplet: ActionTriplet,
    state: WorldState,
    task: str,
    history: ExecutionHistory,
    backend: LLMBackend,
) -> ConcreteAction:
    """Ground one triplet to a concrete action.

    Raises NoCandidate when a reference has no instance; the caller surfaces
    that to the failure resolver as a visibility failure. A backend choice
    outside the candidate list is retried once, then the nearest candidate
    is used.
    """
    refs = _refs_to_ground(triplet)
    if not refs:
        return ConcreteAction(name=triplet.action, target=None)
    candidates: dict[str, list[str]] = {}
    for ref in refs:
        ids = candidate_instances(state, ref, triplet.action)
        if not ids:
            raise NoCandidate(ref)
        candidates[ref] = ids
    ambiguous = {r: ids for r, ids in candidates.items() if len(ids) > 1}
    chosen: dict[str, str] = {r: ids[0] for r, ids in candidates.items() if len(ids) == 1}
    if ambiguous:
        query = _build_choice_query(triplet, task, state, history, ambiguous)
        reply = backend.complete(query)
        picks = _parse_choice(reply)
        bad = [r for r in ambiguous if picks.get(r) not in ambiguous[r]]
        if bad:
            reply = backend.complete(
                query + "\n\nFORMAT REMINDER: choose ids from the candidate lists only."
            )
            picks = _parse_choice(reply)
        for ref, ids in ambiguous.items():
            pick = picks.get(ref)
            chosen[ref] = pick if pick in ids else ids[0]  # nearest fallback
    return ConcreteAction(name=triplet.action, target=chosen[refs[0]])


# ---------------------------------------------------------------------------
# Postconditions


def _any_instance(state: WorldState, ref: str, include_sliced: bool, predicate) -> bool:
    for obj in state.objects.values():
        if _matches_ref(obj, ref, include_sliced) and predicate(obj):
            return True
    return False


def postcondition_satisfied(state: WorldState, triplet: ActionTriplet) -> bool:
    """True when the world already exhibits the triplet's intended outcome."""
    action = triplet.action
    if action is ActionName.CROUCH:
        return state.agent_crouched
    if action is ActionName.STAND:
        return not state.agent_crouched
    if action is ActionName.GOTO:
        return False  # navigation is always re-run
    ref = triplet.arg1
    if action is ActionName.PICKUP:
        if state.held_object is None:
            return False
        return _matches_ref(state.objects[state.held_object], ref, include_sliced=True)
    if action is ActionName.PUT:
        if triplet.arg2 is None:
            return False  # single-ref put: intent unknown, always execute
        if state.held_object is not None and _matches_ref(
            state.objects[state.held_object], ref, include_sliced=True
        ):
            return False  # the thing is still in hand

        def placed(obj) -> bool:
            parent = state.objects.get(obj.parent_receptacle or "")
            return parent is not None and _matches_ref(parent, triplet.arg2, include_sliced=False)

        return _any_instance(state, ref, True, placed)
    if action is ActionName.OPEN:
        return _any_instance(state, ref, False, lambda o: o.flag("isOpen"))
    if action is ActionName.CLOSE:
        return _any_instance(state, ref, False, lambda o: not o.flag("isOpen"))
    if action is ActionName.TOGGLE_ON:
        return _any_instance(state, ref, False, lambda o: o.flag("isToggled"))
    if action is ActionName.TOGGLE_OFF:
        return _any_instance(state, ref, False, lambda o: not o.flag("isToggled"))
    if action is ActionName.SLICE:
        return _any_instance(state, ref, False, lambda o: o.flag("isSliced")) or _any_instance(
            state, f"{ref}Sliced", False, lambda o: True
        )
    return False


# ---------------------------------------------------------------------------
# Execution loop


def execute_plan(
    plan: list[ActionTriplet],
    state: WorldState,
    task: str,
    sdt: SDT,
    backend: LLMBackend,
    resolver: Optional[FailureHandler],
    history: Optional[ExecutionHistory] = None,
    phase: str = "plan",
) -> tuple[WorldState, ExecutionHistory, str]:
    """Run triplets in order; errors go to the resolver (or abort the run).

    After a successful resolution the same triplet is re-checked against the
    new state: recovery usually completed it, so the step records as skipped.
    """
    if history is None:
        history = ExecutionHistory()
    for index, triplet in enumerate(plan):
        while True:
            if postcondition_satisfied(state, triplet):
                history.append(
                    HistoryEntry(triplet=triplet, phase=phase, skipped=True,
                                 outcome=ActionOutcome.success("already satisfied"))
                )
                break
            concrete: Optional[ConcreteAction] = None
            try:
                concrete = resolve(triplet, state, task, history, backend)
            except NoCandidate:
                outcome = ActionOutcome.error("NotVisible", MSG_NOT_VISIBLE)
            else:
                state_after, outcome = step(state, concrete, sdt)
                if outcome.ok:
                    state = state_after
            entry = HistoryEntry(
                triplet=triplet, phase=phase, concrete=concrete, outcome=outcome
            )
            history.append(entry)
            if outcome.ok:
                break
            if resolver is None:
                return state, history, "Aborted"
            state, status, attempts = resolver.handle(
                state, index, triplet, concrete, outcome, task, history
            )
            entry.attempts.extend(attempts)
            if status != "Resolved":
                return state, history, "Aborted"
            # loop back: postcondition check decides whether to re-run
    return state, history, "Completed"
