"""Planning as a finite-step protocol.

Five working steps plus DONE, advanced strictly forward: a step may only be
passed once its artifact is recorded and persisted, and the two checkpoint
steps additionally require an approving human decision. PRD-only runs jump
from REQUIREMENT_UNDERSTANDING straight to DONE; full-coding runs terminate
after TASK_EMISSION.

State changes are event-sourced: every operation emits events, the state is
a pure fold over the event sequence, and the persisted event log is the
authoritative record (the JSON snapshot is derived).
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace
from enum import Enum
from typing import Callable

from .clock import Clock, system_clock
from .workspace import ArtifactKind, Workspace


class PlanningError(Exception):
    pass


class MissingInput(PlanningError):
    pass


class OutOfOrderStep(PlanningError):
    pass


class UnpersistedArtifact(PlanningError):
    pass


class CheckpointPending(PlanningError):
    pass


class NotACheckpoint(PlanningError):
    pass


class NoArtifactYet(PlanningError):
    pass


class Mode(str, Enum):
    PRD_ONLY = "prd_only"
    FULL_CODING = "full_coding"


class Step(str, Enum):
    INTAKE = "INTAKE"
    CONTEXT = "CONTEXT"
    REQUIREMENT_UNDERSTANDING = "REQUIREMENT_UNDERSTANDING"
    TECH_PLAN = "TECH_PLAN"
    TASK_EMISSION = "TASK_EMISSION"
    DONE = "DONE"


STEP_ORDER: tuple[Step, ...] = (
    Step.INTAKE,
    Step.CONTEXT,
    Step.REQUIREMENT_UNDERSTANDING,
    Step.TECH_PLAN,
    Step.TASK_EMISSION,
    Step.DONE,
)

CHECKPOINT_STEPS = frozenset({Step.REQUIREMENT_UNDERSTANDING, Step.TECH_PLAN})


def step_index(step: Step) -> int:
    return STEP_ORDER.index(step)


def next_step(mode: Mode, step: Step) -> Step:
    if step is Step.DONE:
        return Step.DONE
    if mode is Mode.PRD_ONLY and step is Step.REQUIREMENT_UNDERSTANDING:
        return Step.DONE
    return STEP_ORDER[step_index(step) + 1]


@dataclass(frozen=True)
class StepDescriptor:
    step: Step
    objective: str
    required_inputs: tuple[str, ...]
    produces: str
    is_checkpoint: bool
    done: bool = False

    def to_dict(self) -> dict:
        return {
            "step": self.step.value,
            "objective": self.objective,
            "required_inputs": list(self.required_inputs),
            "produces": self.produces,
            "is_checkpoint": self.is_checkpoint,
            "done": self.done,
        }


STEP_TABLE: dict[Step, StepDescriptor] = {
    Step.INTAKE: StepDescriptor(
        Step.INTAKE, "Register and fingerprint the run inputs", (), "intake_manifest", False
    ),
    Step.CONTEXT: StepDescriptor(
        Step.CONTEXT,
        "Canonicalize the design and retrieve engineering context",
        ("intake_manifest",),
        "retrieval_context",
        False,
    ),
    Step.REQUIREMENT_UNDERSTANDING: StepDescriptor(
        Step.REQUIREMENT_UNDERSTANDING,
        "Decompose the PRD into validated, UI-anchored logic units",
        ("retrieval_context",),
        "requirement_understanding",
        True,
    ),
    Step.TECH_PLAN: StepDescriptor(
        Step.TECH_PLAN,
        "Draft the technical plan from the confirmed understanding",
        ("requirement_understanding",),
        "tech_plan",
        True,
    ),
    Step.TASK_EMISSION: StepDescriptor(
        Step.TASK_EMISSION,
        "Emit the hierarchical task IR for orchestration",
        ("tech_plan",),
        "task_ir",
        False,
    ),
    Step.DONE: StepDescriptor(Step.DONE, "Planning complete", (), "", False),
}


@dataclass(frozen=True)
class CheckpointRecord:
    step: Step
    decision: str  # approved | rejected | edited
    decided_by: str
    timestamp: float
    note: str | None = None

    def to_dict(self) -> dict:
        return {
            "step": self.step.value,
            "decision": self.decision,
            "decided_by": self.decided_by,
            "timestamp": self.timestamp,
            "note": self.note,
        }


# Checkpoint gate states: absent (no artifact), awaiting, approved, rejected.
@dataclass(frozen=True)
class PlanState:
    run_id: str
    mode: Mode
    current_step: Step = Step.INTAKE
    step_artifacts: dict = field(default_factory=dict)  # Step -> ref str
    checkpoints: tuple[CheckpointRecord, ...] = ()
    terminated: bool = False
    inputs: dict = field(default_factory=dict)
    gates: dict = field(default_factory=dict)  # Step -> awaiting|approved|rejected
    superseded: tuple = ()  # (step value, ref) pairs

    def to_dict(self) -> dict:
        return {
            "run_id": self.run_id,
            "mode": self.mode.value,
            "current_step": self.current_step.value,
            "step_artifacts": {s.value: ref for s, ref in sorted(self.step_artifacts.items(), key=lambda kv: step_index(kv[0]))},
            "checkpoints": [c.to_dict() for c in self.checkpoints],
            "terminated": self.terminated,
            "inputs": dict(self.inputs),
            "gates": {s.value: g for s, g in sorted(self.gates.items(), key=lambda kv: step_index(kv[0]))},
            "superseded": [list(pair) for pair in self.superseded],
        }

    @staticmethod
    def from_dict(d: dict) -> "PlanState":
        return PlanState(
            run_id=d["run_id"],
            mode=Mode(d["mode"]),
            current_step=Step(d["current_step"]),
            step_artifacts={Step(s): ref for s, ref in d.get("step_artifacts", {}).items()},
            checkpoints=tuple(
                CheckpointRecord(
                    Step(c["step"]), c["decision"], c["decided_by"], float(c["timestamp"]), c.get("note")
                )
                for c in d.get("checkpoints", [])
            ),
            terminated=bool(d.get("terminated", False)),
            inputs=dict(d.get("inputs", {})),
            gates={Step(s): g for s, g in d.get("gates", {}).items()},
            superseded=tuple((s, r) for s, r in d.get("superseded", [])),
        )


RefResolver = Callable[[str], bool]


def _always(ref: str) -> bool:
    return True


# ---------------------------------------------------------------------------
# event fold
# ---------------------------------------------------------------------------


def apply_event(state: PlanState | None, event: dict) -> PlanState:
    """Pure reducer; replaying a persisted event sequence reconstructs a
    field-identical PlanState."""
    kind = event["event"]
    if kind == "plan_started":
        return PlanState(
            run_id=event["run_id"], mode=Mode(event["mode"]), inputs=dict(event.get("inputs", {}))
        )
    assert state is not None, "event log must start with plan_started"
    if kind == "artifact_submitted":
        step = Step(event["step"])
        artifacts = dict(state.step_artifacts)
        artifacts[step] = event["ref"]
        gates = dict(state.gates)
        if step in CHECKPOINT_STEPS and gates.get(step) != "approved":
            gates[step] = "awaiting"
        return replace(state, step_artifacts=artifacts, gates=gates)
    if kind == "step_advanced":
        to = Step(event["to"])
        return replace(state, current_step=to, terminated=to is Step.DONE or state.terminated)
    if kind == "checkpoint_decided":
        step = Step(event["step"])
        record = CheckpointRecord(
            step=step,
            decision=event["decision"],
            decided_by=event["decided_by"],
            timestamp=float(event["timestamp"]),
            note=event.get("note"),
        )
        gates = dict(state.gates)
        artifacts = dict(state.step_artifacts)
        superseded = state.superseded
        if record.decision in ("approved", "edited"):
            gates[step] = "approved"
        else:
            gates[step] = "rejected"
            old = artifacts.pop(step, None)
            if old is not None:
                superseded = superseded + ((step.value, old),)
        return replace(
            state,
            checkpoints=state.checkpoints + (record,),
            gates=gates,
            step_artifacts=artifacts,
            superseded=superseded,
        )
    raise ValueError(f"unknown plan event {kind!r}")


def replay(events: list[dict]) -> PlanState:
    state: PlanState | None = None
    for event in events:
        state = apply_event(state, event)
    if state is None:
        raise PlanningError("empty event log")
    return state


# ---------------------------------------------------------------------------
# operations (pure: state in, (state, events) out)
# ---------------------------------------------------------------------------


def start_plan(
    run_id: str,
    mode: Mode | str,
    design_ref: str | None = None,
    prd_ref: str | None = None,
) -> tuple[PlanState, list[dict]]:
    mode = Mode(mode)
    if prd_ref is None:
        raise MissingInput("prd")
    if mode is Mode.FULL_CODING and design_ref is None:
        raise MissingInput("design")
    inputs = {"prd": prd_ref}
    if design_ref is not None:
        inputs["design"] = design_ref
    events = [{"event": "plan_started", "run_id": run_id, "mode": mode.value, "inputs": inputs}]
    return replay(events), events


def submit_step(
    state: PlanState,
    step: Step | str,
    ref: str,
    resolver: RefResolver = _always,
) -> tuple[PlanState, list[dict]]:
    """Record a step artifact and advance when the step's gate is open.

    Checkpoint steps advance only after an approved/edited decision: the
    first submission records the artifact and waits; once a decision
    approves it, the next submission advances. Re-submitting while the
    decision is still pending raises CheckpointPending; a rejection clears
    the artifact so a revised one can be recorded.
    """
    step = Step(step)
    if state.terminated or step is not state.current_step:
        raise OutOfOrderStep(
            f"cannot submit {step.value}; current step is {state.current_step.value}"
            + (" (terminated)" if state.terminated else "")
        )
    if not resolver(ref):
        raise UnpersistedArtifact(f"artifact ref {ref!r} does not resolve in the workspace")

    events: list[dict] = []
    if step in CHECKPOINT_STEPS:
        gate = state.gates.get(step)
        has_artifact = step in state.step_artifacts
        if has_artifact and gate == "awaiting":
            raise CheckpointPending(f"step {step.value} awaits a checkpoint decision")
        events.append({"event": "artifact_submitted", "step": step.value, "ref": ref})
        if gate == "approved":
            events.append(
                {"event": "step_advanced", "from": step.value, "to": next_step(state.mode, step).value}
            )
    else:
        events.append({"event": "artifact_submitted", "step": step.value, "ref": ref})
        events.append(
            {"event": "step_advanced", "from": step.value, "to": next_step(state.mode, step).value}
        )

    for event in events:
        state = apply_event(state, event)
    return state, events


def checkpoint_decision(
    state: PlanState, step: Step | str, record: CheckpointRecord
) -> tuple[PlanState, list[dict]]:
    """Append a human decision for the current checkpoint step.

    Rejection keeps the step in place and supersedes its artifact; approval
    or an edit unlocks the advancing submission.
    """
    step = Step(step)
    if step not in CHECKPOINT_STEPS:
        raise NotACheckpoint(f"{step.value} is not a checkpoint step")
    if step is not state.current_step:
        raise OutOfOrderStep(
            f"cannot decide {step.value}; current step is {state.current_step.value}"
        )
    if step not in state.step_artifacts:
        raise NoArtifactYet(f"step {step.value} has no persisted artifact to review")
    if record.decision not in ("approved", "rejected", "edited"):
        raise ValueError(f"unknown decision {record.decision!r}")
    event = {
        "event": "checkpoint_decided",
        "step": step.value,
        "decision": record.decision,
        "decided_by": record.decided_by,
        "timestamp": record.timestamp,
        "note": record.note,
    }
    return apply_event(state, event), [event]


def plan_status(state: PlanState) -> dict:
    """Read-only descriptor of the current step plus the termination flag."""
    descriptor = STEP_TABLE[state.current_step]
    descriptor = replace(descriptor, done=state.terminated and state.current_step is Step.DONE)
    gate = state.gates.get(state.current_step)
    return {
        "run_id": state.run_id,
        "mode": state.mode.value,
        "descriptor": descriptor.to_dict(),
        "terminated": state.terminated,
        "checkpoint_pending": descriptor.is_checkpoint
        and state.current_step in state.step_artifacts
        and gate == "awaiting",
    }


# ---------------------------------------------------------------------------
# persistence binding
# ---------------------------------------------------------------------------


class PlanStore:
    """Workspace-backed planning sessions: event log plus snapshot.

    The event log (plan_events) is authoritative; loading replays it. The
    plan_state snapshot is rewritten after every change for human and
    console consumption.
    """

    def __init__(self, workspace: Workspace, clock: Clock = system_clock):
        self.workspace = workspace
        self.clock = clock

    def _resolver(self, run_id: str) -> RefResolver:
        return lambda ref: self.workspace.resolve_ref_path(run_id, ref)

    def _persist(self, run_id: str, state: PlanState, events: list[dict]) -> None:
        for event in events:
            event = dict(event)
            event.setdefault("ts", self.clock())
            self.workspace.append_line(run_id, ArtifactKind.PLAN_EVENTS, event)
        from .workspace import dumps_canonical

        self.workspace.write_artifact(run_id, ArtifactKind.PLAN_STATE, dumps_canonical(state.to_dict()))

    def start(self, run_id: str, mode: Mode | str, design_ref: str | None, prd_ref: str | None) -> PlanState:
        state, events = start_plan(run_id, mode, design_ref, prd_ref)
        self._persist(run_id, state, events)
        return state

    def submit(self, run_id: str, step: Step | str, ref: str) -> PlanState:
        state = self.load(run_id)
        state, events = submit_step(state, step, ref, resolver=self._resolver(run_id))
        self._persist(run_id, state, events)
        return state

    def decide(self, run_id: str, step: Step | str, decision: str, decided_by: str, note: str | None = None) -> PlanState:
        state = self.load(run_id)
        record = CheckpointRecord(
            step=Step(step), decision=decision, decided_by=decided_by, timestamp=self.clock(), note=note
        )
        state, events = checkpoint_decision(state, step, record)
        self._persist(run_id, state, events)
        return state

    def load(self, run_id: str) -> PlanState:
        from .workspace import NotFound

        try:
            raw = self.workspace.read_artifact(run_id, ArtifactKind.PLAN_EVENTS)
        except NotFound as exc:
            raise PlanningError(f"run {run_id!r} has no plan event log") from exc
        import json

        events = []
        for line in raw.decode("utf-8").splitlines():
            line = line.strip()
            if not line:
                continue
            try:
                events.append(json.loads(line))
            except json.JSONDecodeError:
                # A crash can truncate the final append; the log up to that
                # point is still authoritative.
                break
        return replay(events)

    def exists(self, run_id: str) -> bool:
        return self.workspace.has_artifact(run_id, ArtifactKind.PLAN_EVENTS)
