"""End-to-end pipeline driver.

Drives one run through intake, context canonicalization, PRD decomposition,
checkpointed planning, task emission and orchestrated leaf execution, with
every stage persisting its artifact before the protocol advances. A failing
or paused stage leaves all prior artifacts intact; `resume` continues from
the persisted state alone.

The bundled stub agent records each leaf objective to a transcript and
reports completion, so the full pipeline runs without any model or IDE.
"""

from __future__ import annotations

import hashlib
from dataclasses import dataclass
from pathlib import Path
from typing import Callable

from . import prd, tasks
from .clock import Clock, system_clock
from .planning import Mode, Step
from .server import Engine, STEP_KIND
from .taxonomy import DEFAULT_TAXONOMY
from .workspace import ArtifactKind


class PipelineError(Exception):
    pass


class NoSuchRun(PipelineError):
    pass


class RunBlocked(PipelineError):
    """Scheduling froze: a failed leaf blocks the remaining pending ones."""


# Approver: (step, artifact summary) -> approved | rejected | edited | None
# (None pauses the run for a console or a later resume).
Approver = Callable[[Step, dict], str | None]

# Agent: executes one leaf, returns (outcome, note).
Agent = Callable[[tasks.TaskNode], tuple[str, str | None]]


def auto_approver(step: Step, summary: dict) -> str:
    return "approved"


def interactive_approver(step: Step, summary: dict) -> str | None:
    print(f"checkpoint at {step.value}:")
    for key, value in summary.items():
        print(f"  {key}: {value}")
    while True:
        answer = input("approve/reject/pause [a/r/p]? ").strip().lower()
        if answer in ("a", "approve", "approved"):
            return "approved"
        if answer in ("r", "reject", "rejected"):
            return "rejected"
        if answer in ("p", "pause", ""):
            return None


class StubAgent:
    """Scripted stand-in for the client coding agent: records the objective
    and reports success. Real agents attach through the capability server."""

    def __init__(self, engine: Engine, run_id: str):
        self.engine = engine
        self.run_id = run_id

    def __call__(self, node: tasks.TaskNode) -> tuple[str, str | None]:
        self.engine.workspace.append_view_line(
            self.run_id, "agent_transcript.log", f"completed {node.id}: {node.objective}"
        )
        return "completed", None


_TASK_TYPE_BY_CATEGORY = {
    "InputControl": tasks.TaskType.INTERACTION_LOGIC,
    "FunctionalButton": tasks.TaskType.INTERACTION_LOGIC,
    "OverlayPanel": tasks.TaskType.UI_LAYOUT,
    "NavigationFramework": tasks.TaskType.UI_LAYOUT,
    "ContentDisplay": tasks.TaskType.UI_LAYOUT,
    "ListSelection": tasks.TaskType.INTERACTION_LOGIC,
    "AdditionalLogicCondition": tasks.TaskType.DATA_WIRING,
}


def emit_task_ir(understanding: prd.RequirementUnderstanding, run_id: str) -> tasks.TaskIR:
    """Deterministic task emission from a confirmed requirement understanding.

    One grouping node per populated category (taxonomy order), chained so
    each group depends on the previous one, plus a final verification leaf
    gated on every group.
    """
    groups: list[tasks.TaskNode] = []
    previous_group: str | None = None
    for category in DEFAULT_TAXONOMY.categories:
        units = [u for u in understanding.units if u.category == category.key]
        if not units:
            continue
        leaves = [
            tasks.TaskNode(
                id=f"t-{unit.unit_id}",
                objective=f"{unit.entity_name}: {unit.logic_description}",
                context=f"anchor: {unit.anchor}" if unit.anchor else None,
                task_type=_TASK_TYPE_BY_CATEGORY[category.key],
            )
            for unit in units
        ]
        group_id = f"g-{category.key.lower()}"
        groups.append(
            tasks.TaskNode(
                id=group_id,
                objective=f"Implement {category.display_name}",
                task_type=_TASK_TYPE_BY_CATEGORY[category.key],
                depends_on=[previous_group] if previous_group else [],
                children=leaves,
            )
        )
        previous_group = group_id

    children: list[tasks.TaskNode]
    if groups:
        children = groups + [
            tasks.TaskNode(
                id="t-verify",
                objective="Verify the implemented behavior against the requirement understanding",
                task_type=tasks.TaskType.VERIFICATION,
                depends_on=[g.id for g in groups],
            )
        ]
    else:
        children = [
            tasks.TaskNode(
                id="t-noop",
                objective="No logic units extracted; review the PRD",
                task_type=tasks.TaskType.VERIFICATION,
            )
        ]
    root = tasks.TaskNode(
        id=f"run-{understanding.prd_id}", objective=f"Implement PRD {understanding.prd_id}", children=children
    )
    return tasks.TaskIR(run_id=run_id, root=root, revision=0)


def build_tech_plan(understanding: prd.RequirementUnderstanding) -> dict:
    """Deterministic technical plan content derived from the understanding."""
    sections = []
    for category in DEFAULT_TAXONOMY.categories:
        units = [u for u in understanding.units if u.category == category.key]
        if not units:
            continue
        sections.append(
            {
                "heading": category.display_name,
                "body": "Implement "
                + ", ".join(f"{u.entity_name} ({u.unit_id})" for u in units),
            }
        )
    return {
        "title": f"Technical plan for {understanding.prd_id}",
        "sections": sections,
        "unit_count": len(understanding.units),
    }


def derive_run_id(mode: str, prd_bytes: bytes, design_bytes: bytes | None) -> str:
    digest = hashlib.sha256()
    digest.update(mode.encode("utf-8"))
    digest.update(b"\x00")
    digest.update(prd_bytes)
    digest.update(b"\x00")
    if design_bytes is not None:
        digest.update(design_bytes)
    return "run-" + digest.hexdigest()[:12]


@dataclass
class PipelineResult:
    run_id: str
    terminated: bool
    paused_at: str | None = None


class Pipeline:
    """One run of the Figure-1 workflow against a workspace."""

    def __init__(
        self,
        workspace_root: Path | str,
        clock: Clock = system_clock,
        approver: Approver = auto_approver,
        backend: str = "rule",
        agent_factory: Callable[[Engine, str], Agent] | None = None,
        decided_by: str = "auto-approve",
        engine: Engine | None = None,
    ):
        self.engine = engine or Engine(workspace_root, clock=clock)
        self.approver = approver
        self.backend = backend
        self.agent_factory = agent_factory or StubAgent
        self.decided_by = decided_by

    # -- entry points ------------------------------------------------------

    def run(
        self,
        prd_path: Path | str,
        design_path: Path | str | None = None,
        mode: Mode | str | None = None,
        run_id: str | None = None,
    ) -> PipelineResult:
        prd_path = Path(prd_path)
        design_path = Path(design_path) if design_path else None
        if mode is None:
            mode = Mode.FULL_CODING if design_path else Mode.PRD_ONLY
        mode = Mode(mode)
        if mode is Mode.FULL_CODING and design_path is None:
            raise PipelineError("full_coding mode requires a design document")
        prd_bytes = prd_path.read_bytes()
        design_bytes = design_path.read_bytes() if design_path else None
        if run_id is None:
            run_id = derive_run_id(mode.value, prd_bytes, design_bytes)

        if not self.engine.plans.exists(run_id):
            self.engine.plans.start(
                run_id,
                mode,
                str(design_path) if design_path else None,
                str(prd_path),
            )
            manifest = {
                "mode": mode.value,
                "prd": {"path": str(prd_path), "sha256": hashlib.sha256(prd_bytes).hexdigest()},
                "design": {
                    "path": str(design_path),
                    "sha256": hashlib.sha256(design_bytes).hexdigest(),
                }
                if design_bytes is not None
                else None,
            }
            self.engine.write_json_artifact(run_id, ArtifactKind.INTAKE_MANIFEST, manifest)
        return self._drive(run_id)

    def resume(self, run_id: str) -> PipelineResult:
        if not self.engine.plans.exists(run_id):
            raise NoSuchRun(f"no persisted plan for run {run_id!r}")
        return self._drive(run_id)

    # -- stage loop ----------------------------------------------------------

    def _drive(self, run_id: str) -> PipelineResult:
        while True:
            state = self.engine.plans.load(run_id)
            if state.terminated:
                break
            step = state.current_step
            if step is Step.INTAKE:
                self._submit_kind(run_id, Step.INTAKE)
            elif step is Step.CONTEXT:
                self._do_context(run_id, state.mode)
            elif step in (Step.REQUIREMENT_UNDERSTANDING, Step.TECH_PLAN):
                if not self._do_checkpoint_step(run_id, step):
                    return PipelineResult(run_id=run_id, terminated=False, paused_at=step.value)
            elif step is Step.TASK_EMISSION:
                self._do_task_emission(run_id)
            else:  # pragma: no cover - DONE is caught by terminated above
                break

        state = self.engine.plans.load(run_id)
        if state.mode is Mode.FULL_CODING:
            self._execute_tasks(run_id)
        return PipelineResult(run_id=run_id, terminated=True)

    def _submit_kind(self, run_id: str, step: Step) -> None:
        kind = ArtifactKind(STEP_KIND[step])
        path = self.engine.workspace.artifact_path(run_id, kind)
        ref = str(path.relative_to(self.engine.workspace.root))
        self.engine.plans.submit(run_id, step, ref)

    def _do_context(self, run_id: str, mode: Mode) -> None:
        manifest = self.engine.workspace.read_json(run_id, ArtifactKind.INTAKE_MANIFEST)
        if mode is Mode.FULL_CODING:
            self.engine.rpc_canonicalize_design(
                {"run_id": run_id, "document_path": manifest["design"]["path"]}
            )
        prd_body = Path(manifest["prd"]["path"]).read_text(encoding="utf-8")
        self.engine.rpc_retrieve({"run_id": run_id, "query": prd_body, "k": 5})
        self._submit_kind(run_id, Step.CONTEXT)

    def _do_checkpoint_step(self, run_id: str, step: Step) -> bool:
        """Generate and submit the step artifact, then resolve its human
        checkpoint. Returns False when the run pauses for a decision."""
        state = self.engine.plans.load(run_id)
        if step not in state.step_artifacts:
            self._generate_checkpoint_artifact(run_id, step)
            self._submit_kind(run_id, step)
            state = self.engine.plans.load(run_id)

        if state.gates.get(step) == "approved":
            # A decision landed earlier (e.g. before a crash); finish the
            # advance without asking again.
            self.engine.complete_checkpoint(run_id, step, self.decided_by)
            return True

        summary = self._checkpoint_summary(run_id, step)
        decision = self.approver(step, summary)
        if decision is None:
            return False
        self.engine.rpc_plan_checkpoint(
            {
                "run_id": run_id,
                "step": step.value,
                "decision": decision,
                "decided_by": self.decided_by,
            }
        )
        # A rejection keeps the step current with the artifact superseded;
        # the loop regenerates and asks again.
        return True

    def _generate_checkpoint_artifact(self, run_id: str, step: Step) -> None:
        if step is Step.REQUIREMENT_UNDERSTANDING:
            manifest = self.engine.workspace.read_json(run_id, ArtifactKind.INTAKE_MANIFEST)
            prd_path = Path(manifest["prd"]["path"])
            self.engine.rpc_decompose_prd(
                {
                    "run_id": run_id,
                    "prd": {"id": prd_path.stem, "body": prd_path.read_text(encoding="utf-8")},
                    "backend": self.backend,
                }
            )
        elif step is Step.TECH_PLAN:
            understanding = prd.RequirementUnderstanding.from_dict(
                self.engine.workspace.read_json(run_id, ArtifactKind.REQUIREMENT_UNDERSTANDING)
            )
            self.engine.write_json_artifact(
                run_id, ArtifactKind.TECH_PLAN, build_tech_plan(understanding)
            )

    def _checkpoint_summary(self, run_id: str, step: Step) -> dict:
        if step is Step.REQUIREMENT_UNDERSTANDING:
            understanding = self.engine.workspace.read_json(
                run_id, ArtifactKind.REQUIREMENT_UNDERSTANDING
            )
            return {
                "units": len(understanding.get("units", [])),
                "warnings": len(understanding.get("warnings", [])),
            }
        plan = self.engine.workspace.read_json(run_id, ArtifactKind.TECH_PLAN)
        return {"title": plan.get("title", ""), "sections": len(plan.get("sections", []))}

    def _do_task_emission(self, run_id: str) -> None:
        orchestrator = tasks.Orchestrator(self.engine.workspace, run_id, clock=self.engine.clock)
        if not self.engine.workspace.has_artifact(run_id, ArtifactKind.TASK_IR):
            understanding = prd.RequirementUnderstanding.from_dict(
                self.engine.workspace.read_json(run_id, ArtifactKind.REQUIREMENT_UNDERSTANDING)
            )
            orchestrator.create(emit_task_ir(understanding, run_id))
        self._submit_kind(run_id, Step.TASK_EMISSION)

    # -- execution -----------------------------------------------------------

    def _execute_tasks(self, run_id: str) -> None:
        ir, decision = tasks.resume_run(self.engine.workspace, run_id, clock=self.engine.clock)
        agent = self.agent_factory(self.engine, run_id)
        orchestrator = tasks.Orchestrator(self.engine.workspace, run_id, clock=self.engine.clock)
        while True:
            decision = orchestrator.next_task()
            if decision.done:
                break
            if decision.next is None:
                raise RunBlocked(
                    f"run {run_id!r} is blocked; failed dependencies gate: {decision.blocked}"
                )
            node = orchestrator.load().find(decision.next)
            assert node is not None
            orchestrator.mark_in_progress(node.id)
            outcome, note = agent(node)
            self.engine.rpc_tasks_report(
                {"run_id": run_id, "task_id": node.id, "outcome": outcome, "note": note}
            )


def run_pipeline(
    workspace_root: Path | str,
    prd_path: Path | str,
    design_path: Path | str | None = None,
    mode: Mode | str | None = None,
    backend: str = "rule",
    auto_approve: bool = False,
    clock: Clock = system_clock,
    run_id: str | None = None,
    agent_factory: Callable[[Engine, str], Agent] | None = None,
) -> PipelineResult:
    pipeline = Pipeline(
        workspace_root,
        clock=clock,
        approver=auto_approver if auto_approve else interactive_approver,
        backend=backend,
        agent_factory=agent_factory,
        decided_by="auto-approve" if auto_approve else "operator",
    )
    return pipeline.run(prd_path, design_path, mode, run_id)


def resume(
    workspace_root: Path | str,
    run_id: str,
    auto_approve: bool = False,
    backend: str = "rule",
    clock: Clock = system_clock,
    agent_factory: Callable[[Engine, str], Agent] | None = None,
) -> PipelineResult:
    pipeline = Pipeline(
        workspace_root,
        clock=clock,
        approver=auto_approver if auto_approve else interactive_approver,
        backend=backend,
        agent_factory=agent_factory,
        decided_by="auto-approve" if auto_approve else "operator",
    )
    return pipeline.resume(run_id)
