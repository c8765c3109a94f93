"""Language-model backends: a live chat-completion client and a scripted oracle.

Both sides of the interface are a single text-to-text ``complete`` call.
The oracle recognizes the four prompt layouts by their header token and
answers with grammar-valid, fully deterministic text, so the whole loop
runs offline. Fault switches corrupt its plans (never its goal lines) to
exercise recovery and replanning.
"""

from __future__ import annotations

import os
import re
import time
from dataclasses import dataclass
from typing import Optional, Protocol, runtime_checkable

import requests

from . import lexicon, prompts
from .errors import BackendError, OracleError
from .sdt import ActionName
from .triplets import ActionTriplet, GoalClause, format_triplets, parse_recovery, parse_triplets
from .world import is_valid_object_id, type_of_id


@runtime_checkable
class LLMBackend(Protocol):
    name: str
    deterministic: bool

    def complete(self, prompt: str) -> str: ...


# ---------------------------------------------------------------------------
# HTTP client


@dataclass
class HttpConfig:
    endpoint: str
    model: str
    timeout: float = 30.0
    max_retries: int = 2
    api_key_env: str = "SDT_AGENT_API_KEY"


class HttpBackend:
    """OpenAI-compatible chat-completion client with exponential backoff.

    Auth comes from the environment only; a missing key simply sends no
    Authorization header (local stubs don't need one).
    """

    name = "http"
    deterministic = False

    _BACKOFF_BASE = 0.25

    def __init__(self, config: HttpConfig):
        self.config = config
        self._session = requests.Session()

    def complete(self, prompt: str) -> str:
        cfg = self.config
        headers = {"Content-Type": "application/json"}
        token = os.environ.get(cfg.api_key_env)
        if token:
            headers["Authorization"] = f"Bearer {token}"
        body = {"model": cfg.model, "messages": [{"role": "user", "content": prompt}]}
        last_error = "no attempt made"
        for attempt in range(cfg.max_retries + 1):
            if attempt:
                time.sleep(self._BACKOFF_BASE * (2 ** (attempt - 1)))
            try:
                response = self._session.post(
                    cfg.endpoint, headers=headers, json=body, timeout=cfg.timeout
                )
            except requests.Timeout:
                last_error = f"timeout after {cfg.timeout}s"
                continue
            except requests.RequestException as exc:
                last_error = f"transport error: {exc}"
                continue
            if response.status_code >= 500:
                last_error = f"HTTP {response.status_code}"
                continue
            if response.status_code >= 400:
                raise BackendError(f"HTTP {response.status_code}: {response.text[:200]}")
            try:
                data = response.json()
                return data["choices"][0]["message"]["content"]
            except (ValueError, KeyError, IndexError, TypeError) as exc:
                raise BackendError(f"malformed completion response: {exc}") from exc
        raise BackendError(f"backend unreachable after {cfg.max_retries + 1} attempts ({last_error})")


# ---------------------------------------------------------------------------
# Scripted oracle


@dataclass
class OracleConfig:
    """Deterministic fault switches for provoking recovery and replanning.

    omit_slice / omit_cool drop that subtask from the plan and stage the
    object on a counter instead of the goal receptacle; wrong_target_first
    makes receptacle grounding naively nearest-first; misorder_heat runs
    the microwave with the door open (which cooks nothing).
    """

    omit_slice: bool = False
    omit_cool: bool = False
    wrong_target_first: bool = False
    misorder_heat: bool = False


_CAND_HEAD_RE = re.compile(r"^(\S+):$")
_CAND_ITEM_RE = re.compile(r"^\d+\. (\S+) \(dist=")
_PAIR_LINE_RE = re.compile(r"^- \((\w+),(\S+)\)$")
_UNMET_RE = re.compile(r"UNMET type=(\S+) need=(\S+)(?: near=(\S+))?")

#: Soft foods are cut with the butter knife, firm produce with the knife.
_BUTTER_KNIFE_FOODS = frozenset({"Potato", "Bread"})

_PARK_PREFERENCE = ("Sink", "CounterTop", "DiningTable")
_STAGE_TYPE = "CounterTop"


def _t(action: ActionName, arg1: str, arg2: Optional[str] = None) -> ActionTriplet:
    return ActionTriplet(action=action, arg1=arg1, arg2=arg2)


class ScriptedOracle:
    """Referentially transparent surrogate model driven by prompt text alone."""

    name = "oracle"
    deterministic = True

    def __init__(self, config: Optional[OracleConfig] = None):
        self.config = config or OracleConfig()

    def complete(self, prompt: str) -> str:
        if prompt.startswith(prompts.PLAN_HEADER):
            return self._plan(prompt)
        if prompt.startswith(prompts.CHOICE_HEADER):
            return self._choose(prompt)
        if prompt.startswith(prompts.RECOVERY_HEADER):
            return self._recover(prompt)
        if prompt.startswith(prompts.REPLAN_HEADER):
            return self._replan(prompt)
        raise OracleError("unrecognized prompt layout")

    # -- plan ---------------------------------------------------------------

    def _plan(self, prompt: str) -> str:
        task = prompts.section(prompt, prompts.SEC_TASK).splitlines()[0].strip()
        instances = prompts.parse_state_lines(prompts.section(prompt, prompts.SEC_OBJECTS))
        present = {d.type_name for d in instances}
        openable = self._openable_types(prompt)

        obj = lexicon.main_object(task)
        if obj is None:
            raise OracleError(f"cannot identify the task object in {task!r}")
        recept = lexicon.receptacle_mention(task)
        cat = lexicon.category(task)
        slicing = lexicon.wants_slice(task)

        plan: list[ActionTriplet] = []
        work = obj
        if slicing and not self.config.omit_slice:
            knife = self._knife_for(obj, present)
            park = next((t for t in _PARK_PREFERENCE if t in present), _PARK_PREFERENCE[0])
            plan += [
                _t(ActionName.PICKUP, knife),
                _t(ActionName.SLICE, obj),
                _t(ActionName.PUT, knife, park),
            ]
            work = f"{obj}Sliced"
            plan.append(_t(ActionName.PICKUP, work))
        else:
            plan.append(_t(ActionName.PICKUP, obj))

        if cat == "clean":
            plan += [
                _t(ActionName.PUT, work, "Sink"),
                _t(ActionName.TOGGLE_ON, "Faucet"),
                _t(ActionName.TOGGLE_OFF, "Faucet"),
                _t(ActionName.PICKUP, work),
            ]
        elif cat == "heat":
            plan += self._heat_block(work)
        elif cat == "cool" and not self.config.omit_cool:
            plan += [
                _t(ActionName.OPEN, "Fridge"),
                _t(ActionName.PUT, work, "Fridge"),
                _t(ActionName.CLOSE, "Fridge"),
                _t(ActionName.OPEN, "Fridge"),
                _t(ActionName.PICKUP, work),
                _t(ActionName.CLOSE, "Fridge"),
            ]

        staged = (slicing and self.config.omit_slice) or (cat == "cool" and self.config.omit_cool)
        target = _STAGE_TYPE if staged else recept
        if target is not None:
            if target in openable:
                plan += [
                    _t(ActionName.OPEN, target),
                    _t(ActionName.PUT, work, target),
                    _t(ActionName.CLOSE, target),
                ]
            else:
                plan.append(_t(ActionName.PUT, work, target))

        goal = self._goal_clause(task, obj, recept, cat, slicing)
        return f"Action-Triplets:{format_triplets(plan)}\n{goal.render()}"

    def _heat_block(self, work: str) -> list[ActionTriplet]:
        if self.config.misorder_heat:
            order = [
                (ActionName.OPEN, None),
                (ActionName.PUT, work),
                (ActionName.TOGGLE_ON, None),
                (ActionName.CLOSE, None),
                (ActionName.TOGGLE_OFF, None),
                (ActionName.OPEN, None),
            ]
        else:
            order = [
                (ActionName.OPEN, None),
                (ActionName.PUT, work),
                (ActionName.CLOSE, None),
                (ActionName.TOGGLE_ON, None),
                (ActionName.TOGGLE_OFF, None),
                (ActionName.OPEN, None),
            ]
        block = [
            _t(action, work if carried else "Microwave", "Microwave" if carried else None)
            for action, carried in order
        ]
        block.append(_t(ActionName.PICKUP, work))
        block.append(_t(ActionName.CLOSE, "Microwave"))
        return block

    @staticmethod
    def _knife_for(obj: str, present: set[str]) -> str:
        preferred = "ButterKnife" if obj in _BUTTER_KNIFE_FOODS else "Knife"
        other = "Knife" if preferred == "ButterKnife" else "ButterKnife"
        if preferred in present:
            return preferred
        if other in present:
            return other
        return preferred  # nothing in view: plan for the expected type anyway

    @staticmethod
    def _goal_clause(
        task: str, obj: str, recept: Optional[str], cat: Optional[str], slicing: bool
    ) -> GoalClause:
        toks = set(lexicon.tokens(task))
        flags: list[str] = []
        temp: Optional[str] = None
        if cat == "clean":
            flags = ["isFilled"] if toks & lexicon.WET_TOKENS else ["!isDirty"]
        elif cat == "heat":
            if toks & lexicon.COOK_FLAG_TOKENS:
                flags.append("isCooked")
            if toks & lexicon.HOT_TEMP_TOKENS:
                temp = "Hot"
            if not flags and temp is None:
                flags = ["isCooked"]
        elif cat == "cool":
            temp = "Cold"
        return GoalClause(
            object_type=f"{obj}Sliced" if slicing else obj,
            required_flags=tuple(flags),
            required_temperature=temp,
            receptacle_type=recept,
        )

    @staticmethod
    def _openable_types(prompt: str) -> set[str]:
        openable = set()
        current: Optional[str] = None
        for line in prompts.section(prompt, prompts.SEC_KNOWLEDGE).splitlines():
            line = line.strip()
            if line.startswith("Type: "):
                current = line[len("Type: "):]
            elif line.startswith("Affordances: ") and current is not None:
                if "Openable" in line:
                    openable.add(current)
        return openable

    # -- grounding choice ----------------------------------------------------

    def _choose(self, prompt: str) -> str:
        step_section = prompts.section(prompt, prompts.SEC_STEP)
        action = self._grounding_action(step_section)
        state = prompts.parse_state_lines(prompts.section(prompt, prompts.SEC_STATE))
        parent_of = {d.object_id: d.parent_receptacle for d in state}
        history = prompts.section(prompt, prompts.SEC_HISTORY)
        recent_targets = re.findall(r"\((?:\w+),(\S+?)\)", history)
        candidates = self._parse_candidates(prompts.section(prompt, prompts.SEC_CANDIDATES))

        receptacle_step = action in (ActionName.PUT, ActionName.OPEN, ActionName.CLOSE)
        picks = {}
        for ref, ids in candidates.items():
            picks[ref] = self._pick(ids, parent_of, recent_targets, receptacle_step)
        body = ", ".join(f"{ref}->{object_id}" for ref, object_id in picks.items())
        return "CHOICE:{" + body + "}"

    def _pick(
        self,
        ids: list[str],
        parent_of: dict[str, Optional[str]],
        recent_targets: list[str],
        receptacle_step: bool,
    ) -> str:
        if receptacle_step and self.config.wrong_target_first:
            return ids[0]  # naively nearest, occupancy ignored
        # continuity: prefer a candidate sitting in the receptacle we just used
        for target in reversed(recent_targets):
            for object_id in ids:
                if parent_of.get(object_id) == target:
                    return object_id
        # otherwise the emptiest candidate (fewest visible contents), nearest first
        counts = {
            object_id: sum(1 for p in parent_of.values() if p == object_id)
            for object_id in ids
        }
        return min(ids, key=lambda i: (counts[i], ids.index(i)))

    @staticmethod
    def _grounding_action(step_section: str) -> Optional[ActionName]:
        for line in step_section.splitlines():
            if line.startswith("Grounding: "):
                payload = line[len("Grounding: "):].strip()
                try:
                    # the line carries one flat triplet; wrap it for the parser
                    triplet = parse_triplets(f"[{payload}]")[0]
                    return triplet.action
                except Exception:
                    return None
        return None

    @staticmethod
    def _parse_candidates(text: str) -> dict[str, list[str]]:
        out: dict[str, list[str]] = {}
        current: Optional[str] = None
        for raw in text.splitlines():
            line = raw.strip()
            head = _CAND_HEAD_RE.match(line)
            if head and not _CAND_ITEM_RE.match(line):
                current = head.group(1)
                out[current] = []
                continue
            item = _CAND_ITEM_RE.match(line)
            if item and current is not None:
                out[current].append(item.group(1))
        return out

    # -- failure recovery ----------------------------------------------------

    def _recover(self, prompt: str) -> str:
        error_line = prompts.section(prompt, prompts.SEC_ERROR).splitlines()[0]
        code = error_line.split(":", 1)[0].strip()
        failed_action, failed_ref, grounded_target = self._parse_failed(
            prompts.section(prompt, prompts.SEC_FAILED)
        )
        pair_list = self._parse_pairs(prompts.section(prompt, prompts.SEC_PAIRS))
        blocked = self._parse_blocked(prompts.section(prompt, prompts.SEC_NO_REPEAT))

        def ok(seq: list[tuple[str, str]]) -> Optional[str]:
            if tuple(seq) in blocked:
                return None
            return "[" + ",".join(f"({a},{t})" for a, t in seq) + "]"

        if code == "NoValidPosition":
            reply = self._recover_placement(pair_list, grounded_target, ok)
            if reply:
                return reply
        elif code == "NotVisible":
            reply = self._recover_visibility(pair_list, failed_action, failed_ref, ok)
            if reply:
                return reply
        elif code == "HandOccupied":
            for action, target in pair_list:
                if action == ActionName.PUT.value:
                    reply = ok([(action, target)])
                    if reply:
                        return reply
        # generic fallback: the first single pair not yet attempted
        for action, target in pair_list:
            reply = ok([(action, target)])
            if reply:
                return reply
        return "[]"

    def _recover_visibility(self, pair_list, failed_action, failed_ref, ok) -> Optional[str]:
        """Escalation: open doors nearest-first, retry directly, change pose."""
        for action, target in pair_list:
            if action == ActionName.OPEN.value:
                reply = ok([(action, target)])
                if reply:
                    return reply
        ref_type = type_of_id(failed_ref) if is_valid_object_id(failed_ref) else failed_ref
        direct = next(
            (
                (a, t)
                for a, t in pair_list
                if a == failed_action and type_of_id(t) in (ref_type, f"{ref_type}Sliced")
            ),
            None,
        )
        if direct:
            reply = ok([direct])
            if reply:
                return reply
        for pose in (ActionName.CROUCH.value, ActionName.STAND.value):
            pose_pair = next(((a, t) for a, t in pair_list if a == pose), None)
            if pose_pair and direct:
                reply = ok([pose_pair, direct])
                if reply:
                    return reply
        return None

    def _recover_placement(self, pair_list, grounded_target, ok) -> Optional[str]:
        """Suggest an alternate receptacle, same type first, opening it if closed."""
        failed_type = type_of_id(grounded_target) if grounded_target else None
        pair_set = {(a, t) for a, t in pair_list}
        puts = [
            (a, t)
            for a, t in pair_list
            if a == ActionName.PUT.value and t != grounded_target
        ]
        puts.sort(key=lambda p: (0 if failed_type and type_of_id(p[1]) == failed_type else 1))
        for _, target in puts:
            seq = []
            if (ActionName.OPEN.value, target) in pair_set:
                seq.append((ActionName.OPEN.value, target))
            seq.append((ActionName.PUT.value, target))
            reply = ok(seq)
            if reply:
                return reply
        return None

    @staticmethod
    def _parse_failed(text: str) -> tuple[str, str, Optional[str]]:
        action, ref, grounded = "", "", None
        for line in text.splitlines():
            line = line.strip()
            if line.startswith("Triplet: "):
                payload = line[len("Triplet: "):].strip()
                try:
                    triplet = parse_triplets(f"[{payload}]")[0]
                    action, ref = triplet.action.value, triplet.arg1
                except Exception:
                    pass
            elif line.startswith("Grounded: ") and line != "Grounded: -":
                m = re.search(r"\(\w+,(\S+?)\)", line)
                if m:
                    grounded = m.group(1)
        return action, ref, grounded

    @staticmethod
    def _parse_pairs(text: str) -> list[tuple[str, str]]:
        out = []
        for line in text.splitlines():
            m = _PAIR_LINE_RE.match(line.strip())
            if m:
                out.append((m.group(1), m.group(2)))
        return out

    @staticmethod
    def _parse_blocked(text: str) -> set[tuple[tuple[str, str], ...]]:
        blocked = set()
        for line in text.splitlines():
            payload = line.split(" => ", 1)[0]
            try:
                seq = parse_recovery(payload)
            except Exception:
                continue
            blocked.add(tuple((p.action.value, p.target) for p in seq))
        return blocked

    # -- replanning ----------------------------------------------------------

    def _replan(self, prompt: str) -> str:
        unmet_text = prompts.section(prompt, prompts.SEC_UNMET)
        m = _UNMET_RE.search(unmet_text)
        if m is None:
            return "Action-Triplets:[]"
        goal_type, need, near = m.group(1), m.group(2), m.group(3)
        state = prompts.parse_state_lines(prompts.section(prompt, prompts.SEC_STATE))

        def first_id(type_name: str) -> Optional[str]:
            for desc in state:
                if desc.type_name == type_name:
                    return desc.object_id
            return None

        subject = near if near else (first_id(goal_type) or goal_type)
        stage = first_id(_STAGE_TYPE) or _STAGE_TYPE

        if need == "exists" and goal_type.endswith("Sliced"):
            base = goal_type[: -len("Sliced")]
            knife_type = "ButterKnife" if base in _BUTTER_KNIFE_FOODS else "Knife"
            knife = first_id(knife_type) or first_id(
                "Knife" if knife_type == "ButterKnife" else "ButterKnife"
            ) or knife_type
            base_id = first_id(base) or base
            park = next(
                (fid for t in _PARK_PREFERENCE if (fid := first_id(t))), _PARK_PREFERENCE[0]
            )
            plan = [
                _t(ActionName.PICKUP, knife),
                _t(ActionName.SLICE, base_id),
                _t(ActionName.PUT, knife, park),
            ]
        elif need == "temp:Cold":
            fridge = first_id("Fridge") or "Fridge"
            plan = [
                _t(ActionName.PICKUP, subject),
                _t(ActionName.OPEN, fridge),
                _t(ActionName.PUT, subject, fridge),
                _t(ActionName.CLOSE, fridge),
                _t(ActionName.OPEN, fridge),
                _t(ActionName.PICKUP, subject),
                _t(ActionName.CLOSE, fridge),
                _t(ActionName.PUT, subject, stage),
            ]
        elif need in ("temp:Hot", "flag:isCooked"):
            micro = first_id("Microwave") or "Microwave"
            plan = [
                _t(ActionName.PICKUP, subject),
                _t(ActionName.OPEN, micro),
                _t(ActionName.PUT, subject, micro),
                _t(ActionName.CLOSE, micro),
                _t(ActionName.TOGGLE_ON, micro),
                _t(ActionName.TOGGLE_OFF, micro),
                _t(ActionName.OPEN, micro),
                _t(ActionName.PICKUP, subject),
                _t(ActionName.CLOSE, micro),
                _t(ActionName.PUT, subject, stage),
            ]
        elif need in ("flag:!isDirty", "flag:isFilled"):
            sink = first_id("Sink") or "Sink"
            faucet = first_id("Faucet") or "Faucet"
            plan = [
                _t(ActionName.PICKUP, subject),
                _t(ActionName.PUT, subject, sink),
                _t(ActionName.TOGGLE_ON, faucet),
                _t(ActionName.TOGGLE_OFF, faucet),
                _t(ActionName.PICKUP, subject),
                _t(ActionName.PUT, subject, stage),
            ]
        elif need.startswith("in:"):
            recept_type = need[len("in:"):]
            recept = first_id(recept_type) or recept_type
            plan = [
                _t(ActionName.PICKUP, subject),
                _t(ActionName.PUT, subject, recept),
            ]
        else:
            plan = []
        return "Action-Triplets:" + format_triplets(plan)
