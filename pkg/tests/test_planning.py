from __future__ import annotations

import random

import pytest

from forgeline.planning import (
    CHECKPOINT_STEPS,
    CheckpointPending,
    CheckpointRecord,
    MissingInput,
    Mode,
    NoArtifactYet,
    NotACheckpoint,
    OutOfOrderStep,
    PlanState,
    PlanStore,
    STEP_ORDER,
    Step,
    UnpersistedArtifact,
    checkpoint_decision,
    next_step,
    plan_status,
    replay,
    start_plan,
    step_index,
    submit_step,
)
from forgeline.workspace import ArtifactKind


def _record(step: Step, decision: str) -> CheckpointRecord:
    return CheckpointRecord(step=step, decision=decision, decided_by="tester", timestamp=1.0)


def _advance_to(state: PlanState, target: Step) -> tuple[PlanState, list[dict]]:
    """Drive a state forward to `target` with always-resolving refs."""
    events: list[dict] = []
    while state.current_step is not target:
        step = state.current_step
        if step in CHECKPOINT_STEPS:
            state, evs = submit_step(state, step, f"ref-{step.value}")
            events += evs
            state, evs = checkpoint_decision(state, step, _record(step, "approved"))
            events += evs
        state, evs = submit_step(state, step, f"ref-{step.value}")
        events += evs
    return state, events


# -- start ---------------------------------------------------------------------


def test_start_full_coding_with_both_refs():
    state, _ = start_plan("r1", Mode.FULL_CODING, design_ref="d", prd_ref="p")
    assert state.current_step is Step.INTAKE
    assert state.terminated is False
    assert state.checkpoints == ()


def test_start_prd_only_with_prd_only():
    state, _ = start_plan("r1", "prd_only", prd_ref="p")
    assert state.current_step is Step.INTAKE


def test_start_full_coding_missing_design():
    with pytest.raises(MissingInput, match="design"):
        start_plan("r1", Mode.FULL_CODING, prd_ref="p")
    with pytest.raises(MissingInput, match="prd"):
        start_plan("r1", Mode.PRD_ONLY)


# -- submit --------------------------------------------------------------------


def test_submit_current_step_advances():
    state, _ = start_plan("r1", Mode.FULL_CODING, "d", "p")
    state, _ = submit_step(state, Step.INTAKE, "ref-intake")
    assert state.current_step is Step.CONTEXT
    state, _ = submit_step(state, Step.CONTEXT, "ref-context")
    assert state.current_step is Step.REQUIREMENT_UNDERSTANDING
    assert state.step_artifacts[Step.CONTEXT] == "ref-context"


def test_submit_out_of_order_step():
    state, _ = start_plan("r1", Mode.FULL_CODING, "d", "p")
    state, _ = submit_step(state, Step.INTAKE, "ref")
    with pytest.raises(OutOfOrderStep):
        submit_step(state, Step.TECH_PLAN, "ref")
    with pytest.raises(OutOfOrderStep):
        submit_step(state, Step.INTAKE, "ref")  # already done


def test_submit_unresolvable_ref():
    state, _ = start_plan("r1", Mode.FULL_CODING, "d", "p")
    with pytest.raises(UnpersistedArtifact):
        submit_step(state, Step.INTAKE, "ghost", resolver=lambda ref: False)


def test_prd_only_jumps_to_done_after_approved_understanding():
    state, _ = start_plan("r1", Mode.PRD_ONLY, prd_ref="p")
    state, _ = _advance_to(state, Step.REQUIREMENT_UNDERSTANDING)
    state, _ = submit_step(state, Step.REQUIREMENT_UNDERSTANDING, "ru-ref")
    state, _ = checkpoint_decision(
        state, Step.REQUIREMENT_UNDERSTANDING, _record(Step.REQUIREMENT_UNDERSTANDING, "approved")
    )
    state, _ = submit_step(state, Step.REQUIREMENT_UNDERSTANDING, "ru-ref")
    assert state.current_step is Step.DONE
    assert state.terminated is True


def test_full_coding_terminates_after_task_emission():
    state, _ = start_plan("r1", Mode.FULL_CODING, "d", "p")
    state, _ = _advance_to(state, Step.TASK_EMISSION)
    state, _ = submit_step(state, Step.TASK_EMISSION, "task-ir-ref")
    assert state.current_step is Step.DONE
    assert state.terminated is True


# -- checkpoints -----------------------------------------------------------------


def test_checkpoint_flow_submit_approve_submit():
    state, _ = start_plan("r1", Mode.FULL_CODING, "d", "p")
    state, _ = _advance_to(state, Step.REQUIREMENT_UNDERSTANDING)
    step = Step.REQUIREMENT_UNDERSTANDING

    state, _ = submit_step(state, step, "ru-v1")
    assert state.current_step is step  # recorded, not advanced
    with pytest.raises(CheckpointPending):
        submit_step(state, step, "ru-v1")
    state, _ = checkpoint_decision(state, step, _record(step, "approved"))
    state, _ = submit_step(state, step, "ru-v1")
    assert state.current_step is Step.TECH_PLAN


def test_rejection_supersedes_artifact_and_keeps_step():
    state, _ = start_plan("r1", Mode.FULL_CODING, "d", "p")
    state, _ = _advance_to(state, Step.REQUIREMENT_UNDERSTANDING)
    step = Step.REQUIREMENT_UNDERSTANDING
    state, _ = submit_step(state, step, "ru-v1")
    state, _ = checkpoint_decision(state, step, _record(step, "rejected"))
    assert state.current_step is step
    assert step not in state.step_artifacts
    assert (step.value, "ru-v1") in state.superseded
    # a revised artifact can be recorded and approved
    state, _ = submit_step(state, step, "ru-v2")
    state, _ = checkpoint_decision(state, step, _record(step, "edited"))
    state, _ = submit_step(state, step, "ru-v2")
    assert state.current_step is Step.TECH_PLAN


def test_decide_on_non_checkpoint_step():
    state, _ = start_plan("r1", Mode.FULL_CODING, "d", "p")
    with pytest.raises(NotACheckpoint):
        checkpoint_decision(state, Step.INTAKE, _record(Step.INTAKE, "approved"))


def test_decide_without_artifact():
    state, _ = start_plan("r1", Mode.FULL_CODING, "d", "p")
    state, _ = _advance_to(state, Step.REQUIREMENT_UNDERSTANDING)
    with pytest.raises(NoArtifactYet):
        checkpoint_decision(
            state,
            Step.REQUIREMENT_UNDERSTANDING,
            _record(Step.REQUIREMENT_UNDERSTANDING, "approved"),
        )


def test_tech_plan_is_checkpoint_in_status():
    state, _ = start_plan("r1", Mode.FULL_CODING, "d", "p")
    state, _ = _advance_to(state, Step.TECH_PLAN)
    status = plan_status(state)
    assert status["descriptor"]["step"] == "TECH_PLAN"
    assert status["descriptor"]["is_checkpoint"] is True
    assert status["terminated"] is False


def test_status_fresh_and_terminated():
    state, _ = start_plan("r1", Mode.PRD_ONLY, prd_ref="p")
    fresh = plan_status(state)
    assert fresh["descriptor"]["step"] == "INTAKE"
    assert fresh["descriptor"]["done"] is False
    state, _ = _advance_to(state, Step.DONE)
    done = plan_status(state)
    assert done["descriptor"]["step"] == "DONE"
    assert done["terminated"] is True


# -- randomized monotonicity (small; the acceptance suite scales this up) --------


def random_walk(seed: int, operations: int = 12) -> None:
    rng = random.Random(seed)
    mode = rng.choice([Mode.PRD_ONLY, Mode.FULL_CODING])
    state, _ = start_plan("r", mode, design_ref="d", prd_ref="p")
    resolved = {"good"}
    max_index = step_index(state.current_step)
    for _ in range(operations):
        op = rng.choice(["submit", "decide", "status", "bad_submit"])
        step = rng.choice(STEP_ORDER)
        before = step_index(state.current_step)
        try:
            if op == "submit":
                ref = rng.choice(["good", "missing"])
                state, _ = submit_step(state, step, ref, resolver=resolved.__contains__)
            elif op == "decide":
                decision = rng.choice(["approved", "rejected", "edited"])
                state, _ = checkpoint_decision(state, step, _record(step, decision))
            elif op == "bad_submit":
                state, _ = submit_step(state, step, "missing", resolver=resolved.__contains__)
            else:
                plan_status(state)
        except Exception:
            pass
        after = step_index(state.current_step)
        assert after >= before, "step index regressed"
        max_index = max(max_index, after)
        if mode is Mode.PRD_ONLY:
            assert state.current_step not in (Step.TECH_PLAN, Step.TASK_EMISSION)
        # every step strictly before the current one has a recorded artifact,
        # unless a checkpoint rejection superseded it after advancing (the
        # FSM can only advance past a checkpoint while its gate is approved)
        for done_step in STEP_ORDER[: step_index(state.current_step)]:
            if mode is Mode.PRD_ONLY and done_step in (Step.TECH_PLAN, Step.TASK_EMISSION):
                continue
            assert done_step in state.step_artifacts
        for checkpoint in CHECKPOINT_STEPS:
            if step_index(state.current_step) > step_index(checkpoint) and not (
                mode is Mode.PRD_ONLY and checkpoint is not Step.REQUIREMENT_UNDERSTANDING
            ):
                approvals = [
                    c
                    for c in state.checkpoints
                    if c.step is checkpoint and c.decision in ("approved", "edited")
                ]
                assert approvals, f"passed {checkpoint} without approval"


def test_randomized_traces_hold_invariants():
    for seed in range(300):
        random_walk(seed)


# -- replay & persistence ----------------------------------------------------------


def test_replay_reconstructs_identical_state():
    state, events = start_plan("r1", Mode.FULL_CODING, "d", "p")
    more, evs = _advance_to(state, Step.TECH_PLAN)
    events += evs
    assert replay(events) == more


def test_plan_store_round_trip(workspace, fixed_clock):
    store = PlanStore(workspace, clock=fixed_clock)
    state = store.start("r1", Mode.FULL_CODING, "d", "p")
    ref = workspace.write_artifact("r1", ArtifactKind.INTAKE_MANIFEST, b"{}")
    state = store.submit("r1", Step.INTAKE, ref.path)
    assert state.current_step is Step.CONTEXT

    loaded = store.load("r1")
    assert loaded == state
    snapshot = workspace.read_json("r1", ArtifactKind.PLAN_STATE)
    assert snapshot == state.to_dict()


def test_plan_store_rejects_unpersisted_ref(workspace, fixed_clock):
    store = PlanStore(workspace, clock=fixed_clock)
    store.start("r1", Mode.FULL_CODING, "d", "p")
    with pytest.raises(UnpersistedArtifact):
        store.submit("r1", Step.INTAKE, "runs/r1/ghost.json")


def test_plan_store_tolerates_truncated_final_event(workspace, fixed_clock):
    store = PlanStore(workspace, clock=fixed_clock)
    store.start("r1", Mode.FULL_CODING, "d", "p")
    log = workspace.artifact_path("r1", ArtifactKind.PLAN_EVENTS)
    with open(log, "a", encoding="utf-8") as fh:
        fh.write('{"event": "artifact_subm')  # torn write
    state = store.load("r1")
    assert state.current_step is Step.INTAKE


def test_next_step_table():
    assert next_step(Mode.FULL_CODING, Step.REQUIREMENT_UNDERSTANDING) is Step.TECH_PLAN
    assert next_step(Mode.PRD_ONLY, Step.REQUIREMENT_UNDERSTANDING) is Step.DONE
    assert next_step(Mode.FULL_CODING, Step.TASK_EMISSION) is Step.DONE
