"""Semantic-digital-twin grounded task planning, recovery and replanning."""

from .backends import HttpBackend, HttpConfig, LLMBackend, OracleConfig, ScriptedOracle
from .interpreter import (
    ExecutionHistory,
    candidate_instances,
    execute_plan,
    postcondition_satisfied,
    resolve,
)
from .planner import build_plan_prompt, filter_relevant_objects, plan
from .replanner import RunConfig, TaskReport, build_replan_prompt, replan, run_task
from .resolver import (
    AdaptiveMemory,
    FailureContext,
    FailureResolver,
    build_action_pairs,
    build_failure_query,
    resolve_failure,
)
from .sdt import (
    SDT,
    ActionName,
    AffordanceTag,
    ObjectDescription,
    ObjectTypeEntry,
    condition_fn,
    filter_actions,
    load_sdt,
    render_type_text,
)
from .triplets import (
    ActionTriplet,
    GoalClause,
    GoalCondition,
    RecoveryPair,
    format_recovery,
    format_triplets,
    goal_satisfied,
    parse_goal,
    parse_recovery,
    parse_triplets,
)
from .world import (
    ActionOutcome,
    ConcreteAction,
    ObjectInstance,
    Perturbation,
    WorldState,
    apply_perturbations,
    inject_failure,
    load_scene,
    object_descriptions,
    state_hash,
    step,
    visible_objects,
)

__version__ = "0.1.0"
