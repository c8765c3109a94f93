"""Shared prompt layout: headers, section titles, state-line grammar.

Every query type carries a fixed header token so a text-to-text backend can
recognize the layout without a side channel. The scripted oracle parses
these exact formats back out of the prompt.
"""

from __future__ import annotations

import re

from .sdt import ObjectDescription

PLAN_HEADER = "# PLAN REQUEST"
CHOICE_HEADER = "# OBJECT CHOICE REQUEST"
RECOVERY_HEADER = "# FAILURE RECOVERY REQUEST"
REPLAN_HEADER = "# REPLAN REQUEST"

SEC_INSTRUCTIONS = "## Instructions"
SEC_KNOWLEDGE = "## Object Knowledge"
SEC_OBJECTS = "## Objects In View"
SEC_EXAMPLES = "## Worked Examples"
SEC_TASK = "## Task"
SEC_OUTPUT = "## Output Format"
SEC_STEP = "## Step"
SEC_HISTORY = "## Recent Actions"
SEC_STATE = "## Current State"
SEC_CANDIDATES = "## Candidates"
SEC_ERROR = "## Error"
SEC_FAILED = "## Failed Step"
SEC_PAIRS = "## Candidate Action Pairs"
SEC_NO_REPEAT = "## Do Not Repeat"
SEC_UNMET = "## Unmet Goal Conditions"

_STATE_LINE_RE = re.compile(
    r"^- (?P<id>\S+) \(type=(?P<type>[^;]+); flags=(?P<flags>[^;]*); "
    r"temp=(?P<temp>[^;]+); in=(?P<parent>[^;]*); dist=(?P<dist>[^)]+)\)$"
)


def render_state_line(desc: ObjectDescription) -> str:
    true_flags = sorted(k for k, v in desc.flags.items() if v)
    flags = ",".join(true_flags) if true_flags else "-"
    parent = desc.parent_receptacle or "-"
    return (
        f"- {desc.object_id} (type={desc.type_name}; flags={flags}; "
        f"temp={desc.temperature}; in={parent}; dist={desc.distance:.2f})"
    )


def parse_state_lines(text: str) -> list[ObjectDescription]:
    out = []
    for line in text.splitlines():
        m = _STATE_LINE_RE.match(line.strip())
        if m is None:
            continue
        flags_field = m.group("flags").strip()
        flags = {} if flags_field in ("-", "") else {f: True for f in flags_field.split(",")}
        parent = m.group("parent").strip()
        try:
            dist = float(m.group("dist"))
        except ValueError:
            dist = 0.0
        out.append(
            ObjectDescription(
                object_id=m.group("id"),
                type_name=m.group("type").strip(),
                flags=flags,
                temperature=m.group("temp").strip(),
                parent_receptacle=None if parent in ("-", "") else parent,
                distance=dist,
            )
        )
    return out


def section(prompt: str, title: str) -> str:
    """Body of one '## ...' section (empty string when absent)."""
    lines = prompt.splitlines()
    out: list[str] = []
    inside = False
    for line in lines:
        if line.strip() == title:
            inside = True
            continue
        if inside and line.startswith("## "):
            break
        if inside:
            out.append(line)
    return "\n".join(out).strip()


def render_history_lines(entries) -> list[str]:
    """One line per executed step, oldest first (callers pass the tail)."""
    out = []
    for entry in entries:
        if entry.skipped:
            out.append(f"- {entry.triplet.render()} -> Skipped (already satisfied)")
            continue
        shown = entry.concrete.render() if entry.concrete is not None else entry.triplet.render()
        if entry.outcome is None:
            out.append(f"- {shown} -> (not executed)")
        elif entry.outcome.ok:
            out.append(f"- {shown} -> Success")
        else:
            out.append(f'- {shown} -> Error: "{entry.outcome.message}"')
    return out
