"""Context-aware failure resolver: action pairs, failure queries, recovery loop.

On an execution error the resolver builds the action-pair map (the action
filter over the current view, widened by pose and door counterfactuals so
suggestions like "crouch, then pick it up" are expressible), queries the
backend, validates and executes the suggested pair sequence, and records
every attempt in adaptive memory so the same recovery is never tried twice
for one failure point.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Optional

from . import prompts
from .backends import LLMBackend
from .errors import BadAction, MalformedEntry, NoCandidate, NoTripletsFound
from .interpreter import (
    ExecutionHistory,
    HistoryEntry,
    RecoveryAttempt,
    postcondition_satisfied,
    resolve,
)
from .sdt import SDT, ActionName, AffordanceTag, POSE_ACTIONS, filter_actions
from .triplets import ActionTriplet, RecoveryPair, parse_recovery
from .world import (
    ActionOutcome,
    ConcreteAction,
    WorldState,
    format_object_id,
    object_descriptions,
    step,
)

DEFAULT_BUDGET = 5

FailureKey = tuple[int, str]


@dataclass
class FailureContext:
    failed_index: int
    failed_triplet: ActionTriplet
    failed_concrete: Optional[ConcreteAction]
    outcome: ActionOutcome
    task: str
    history_tail: list[HistoryEntry] = field(default_factory=list)

    @property
    def key(self) -> FailureKey:
        return (self.failed_index, self.outcome.error_code or "Unknown")


class AdaptiveMemory:
    """Per-failure-point log of attempted recovery sequences and feedback."""

    def __init__(self) -> None:
        self._attempts: dict[FailureKey, list[tuple[tuple[RecoveryPair, ...], str]]] = {}

    def seen(self, key: FailureKey, sequence: list[RecoveryPair]) -> bool:
        return any(seq == tuple(sequence) for seq, _ in self._attempts.get(key, []))

    def record(self, key: FailureKey, sequence: list[RecoveryPair], feedback: str) -> None:
        if self.seen(key, sequence):
            raise ValueError("duplicate recovery sequence for failure point")
        self._attempts.setdefault(key, []).append((tuple(sequence), feedback))

    def entries(self, key: FailureKey) -> list[tuple[tuple[RecoveryPair, ...], str]]:
        return list(self._attempts.get(key, []))

    def clear(self) -> None:
        self._attempts.clear()

    def dump(self) -> dict:
        return {
            f"{idx}:{code}": [
                {"sequence": "[" + ",".join(p.render() for p in seq) + "]", "feedback": fb}
                for seq, fb in attempts
            ]
            for (idx, code), attempts in sorted(self._attempts.items())
        }


# ---------------------------------------------------------------------------
# Action pair map


def _counterfactual_views(state: WorldState, sdt: SDT) -> list[WorldState]:
    """Current view plus pose-toggled and all-doors-open variants."""
    views = [state]
    toggled = state.clone()
    toggled.agent_crouched = not toggled.agent_crouched
    views.append(toggled)
    opened = state.clone()
    changed = False
    for obj in opened.objects.values():
        entry = sdt.get(obj.type_name)
        if entry is not None and entry.has(AffordanceTag.OPENABLE) and not obj.flag("isOpen"):
            obj.flags["isOpen"] = True
            changed = True
    if changed:
        views.append(opened)
        opened_toggled = opened.clone()
        opened_toggled.agent_crouched = not opened_toggled.agent_crouched
        views.append(opened_toggled)
    return views


def _pose_anchor(state: WorldState, sdt: SDT, focus: Optional[str]) -> str:
    """Receptacle id the pose suggestions are presented against."""
    if focus is not None and focus in state.objects:
        origin = state.objects[focus].position
    else:
        origin = state.agent_position
    receptacles = [
        o
        for o in state.objects.values()
        if (e := sdt.get(o.type_name)) is not None and e.has(AffordanceTag.RECEPTACLE)
    ]
    if not receptacles:
        return format_object_id("Agent", state.agent_position)
    best = min(receptacles, key=lambda o: (math.dist(origin, o.position), o.object_id))
    return best.object_id


def build_action_pairs(
    state: WorldState, sdt: SDT, focus: Optional[str] = None
) -> list[tuple[ActionName, str]]:
    """Deterministically ordered action-pair map for recovery prompts.

    Object pairs come from the action filter over the union of counterfactual
    views (pose toggled, closed doors opened) so one enabling action ahead is
    visible to the model; pose pairs are appended against the focus object's
    nearest receptacle.
    """
    pairs: set[tuple[ActionName, str]] = set()
    full_action_set = [a for a in ActionName if a not in POSE_ACTIONS]
    for view in _counterfactual_views(state, sdt):
        pairs |= filter_actions(sdt, object_descriptions(view), full_action_set)
    ordered = sorted(
        pairs,
        key=lambda p: (
            round(state.distance_to(state.objects[p[1]]), 4) if p[1] in state.objects else 1e9,
            p[1],
            p[0].value,
        ),
    )
    anchor = _pose_anchor(state, sdt, focus)
    ordered.append((ActionName.CROUCH, anchor))
    ordered.append((ActionName.STAND, anchor))
    return ordered


# ---------------------------------------------------------------------------
# Failure query


def build_failure_query(
    ctx: FailureContext,
    pairs: list[tuple[ActionName, str]],
    memory: AdaptiveMemory,
) -> str:
    lines = [prompts.RECOVERY_HEADER, "", prompts.SEC_ERROR]
    lines.append(f'{ctx.outcome.error_code}: "{ctx.outcome.message}"')
    lines.append("")
    lines.append(prompts.SEC_FAILED)
    lines.append(f"Triplet: {ctx.failed_triplet.render()}")
    grounded = ctx.failed_concrete.render() if ctx.failed_concrete is not None else "-"
    lines.append(f"Grounded: {grounded}")
    lines.append("")
    lines.append(prompts.SEC_TASK)
    lines.append(ctx.task)
    lines.append("")
    lines.append(prompts.SEC_HISTORY)
    lines.extend(prompts.render_history_lines(ctx.history_tail))
    lines.append("")
    lines.append(prompts.SEC_PAIRS)
    for action, object_id in pairs:
        lines.append(f"- ({action},{object_id})")
    attempted = memory.entries(ctx.key)
    if attempted:
        lines.append("")
        lines.append(prompts.SEC_NO_REPEAT)
        for seq, feedback in attempted:
            rendered = "[" + ",".join(p.render() for p in seq) + "]"
            lines.append(f"- {rendered} => {feedback}")
    lines.append("")
    lines.append(prompts.SEC_OUTPUT)
    lines.append(
        "Reply with a recovery sequence chosen from the candidate action pairs, "
        "e.g. [(OpenObject,Fridge|+00.00|+00.90|+00.00),(PickupObject,Apple|+00.10|+00.95|+00.20)]. "
        "Reply [] if nothing applies."
    )
    return "\n".join(lines)


# ---------------------------------------------------------------------------
# Recovery loop


def _pair_to_concrete(pair: RecoveryPair) -> ConcreteAction:
    if pair.action in POSE_ACTIONS:
        return ConcreteAction(name=pair.action, target=None)
    return ConcreteAction(name=pair.action, target=pair.target)


def _reexecute_failed(
    ctx: FailureContext,
    state: WorldState,
    sdt: SDT,
    backend: LLMBackend,
    attempt: RecoveryAttempt,
) -> tuple[WorldState, bool, str]:
    """Retry the failed triplet against the recovered state."""
    history = ExecutionHistory()
    history.entries = list(ctx.history_tail)
    try:
        concrete = resolve(ctx.failed_triplet, state, ctx.task, history, backend)
    except NoCandidate:
        return state, False, "target still has no candidate instance"
    new_state, outcome = step(state, concrete, sdt)
    attempt.executed.append((concrete, outcome))
    if outcome.ok:
        return new_state, True, "resolved by re-executing the failed step"
    return state, False, f"step still failing: {outcome.message}"


def resolve_failure(
    ctx: FailureContext,
    state: WorldState,
    sdt: SDT,
    memory: AdaptiveMemory,
    backend: LLMBackend,
    budget: int = DEFAULT_BUDGET,
) -> tuple[WorldState, str, int, list[RecoveryAttempt]]:
    """Iterate query -> validate -> execute -> record until resolved or spent.

    Pair validation is incremental: each pair of a sequence is checked
    against the pair map of the state it actually executes in, so enabling
    actions (open the alternate drawer, crouch) legitimize their successors.
    """
    attempts: list[RecoveryAttempt] = []
    focus = None
    if ctx.failed_concrete is not None and ctx.failed_concrete.target is not None:
        focus = ctx.failed_concrete.target
    iterations = 0
    for _ in range(budget):
        iterations += 1
        pairs = build_action_pairs(state, sdt, focus=focus or _focus_from_ref(state, ctx))
        query = build_failure_query(ctx, pairs, memory)
        reply = backend.complete(query)
        try:
            sequence = parse_recovery(reply)
        except (NoTripletsFound, BadAction, MalformedEntry) as exc:
            attempts.append(RecoveryAttempt(proposed=[], feedback=f"unparseable proposal: {exc}"))
            continue
        attempt = RecoveryAttempt(proposed=sequence)
        attempts.append(attempt)
        if not sequence:
            attempt.feedback = "empty proposal"
            continue
        if memory.seen(ctx.key, sequence):
            attempt.feedback = "repeated sequence; rejected"
            continue
        feedback = ""
        for pair in sequence:
            current = set(build_action_pairs(state, sdt, focus=focus or _focus_from_ref(state, ctx)))
            if (pair.action, pair.target) not in current:
                feedback = f"invalid pair {pair.render()}"
                break
            concrete = _pair_to_concrete(pair)
            state_after, outcome = step(state, concrete, sdt)
            attempt.executed.append((concrete, outcome))
            if not outcome.ok:
                feedback = f"recovery action failed: {outcome.message}"
                break
            state = state_after
        if not feedback:
            feedback = "executed"
        if postcondition_satisfied(state, ctx.failed_triplet):
            feedback += "; resolved"
            attempt.resolved = True
            attempt.feedback = feedback
            memory.record(ctx.key, sequence, feedback)
            return state, "Resolved", iterations, attempts
        if attempt.executed and all(o.ok for _, o in attempt.executed):
            state, ok, note = _reexecute_failed(ctx, state, sdt, backend, attempt)
            feedback = f"{feedback}; {note}"
            if ok:
                attempt.resolved = True
                attempt.feedback = feedback
                memory.record(ctx.key, sequence, feedback)
                return state, "Resolved", iterations, attempts
        attempt.feedback = feedback
        memory.record(ctx.key, sequence, feedback)
    return state, "Exhausted", iterations, attempts


def _focus_from_ref(state: WorldState, ctx: FailureContext) -> Optional[str]:
    """Nearest instance matching the failed primary reference, visible or not."""
    ref = ctx.failed_triplet.arg1
    if ref in state.objects:
        return ref
    matches = [
        o
        for o in state.objects.values()
        if o.type_name == ref or o.type_name == f"{ref}Sliced"
    ]
    if not matches:
        return None
    return min(matches, key=lambda o: (state.distance_to(o), o.object_id)).object_id


class FailureResolver:
    """Stateful per-task wrapper satisfying the execution loop's handler interface."""

    def __init__(self, sdt: SDT, backend: LLMBackend, budget: int = DEFAULT_BUDGET):
        self.sdt = sdt
        self.backend = backend
        self.budget = budget
        self.memory = AdaptiveMemory()
        self.total_iterations = 0

    def handle(
        self,
        state: WorldState,
        triplet_index: int,
        triplet: ActionTriplet,
        concrete: Optional[ConcreteAction],
        outcome: ActionOutcome,
        task: str,
        history: ExecutionHistory,
    ) -> tuple[WorldState, str, list[RecoveryAttempt]]:
        ctx = FailureContext(
            failed_index=triplet_index,
            failed_triplet=triplet,
            failed_concrete=concrete,
            outcome=outcome,
            task=task,
            history_tail=history.tail(),
        )
        state, status, iterations, attempts = resolve_failure(
            ctx, state, self.sdt, self.memory, self.backend, self.budget
        )
        self.total_iterations += iterations
        return state, status, attempts
