"""Task IR validation, scheduling and resumable write-back.

The Task IR is a hierarchical tree: internal nodes are semantic groupings,
leaves are the atomic units an agent executes. Dependencies are scoped to
sibling groups and must form a DAG; ordering uses Kahn's algorithm with a
declaration-order tie-break so scheduling is deterministic. Status updates
are written back to the persisted artifact before the call returns, which
keeps the orchestrator stateless beyond the stored artifact and makes runs
resumable after interruption.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from enum import Enum

from .clock import Clock, system_clock
from .workspace import ArtifactKind, NotFound, Workspace, dumps_canonical


class TaskError(Exception):
    pass


class CycleDetected(TaskError):
    pass


class NotValidated(TaskError):
    def __init__(self, report: "TaskValidationReport"):
        super().__init__("task IR failed validation: " + "; ".join(e.message for e in report.errors))
        self.report = report


class UnknownTask(TaskError):
    pass


class IllegalTransition(TaskError):
    pass


class NoSuchRun(TaskError):
    pass


class CorruptArtifact(TaskError):
    pass


class TaskType(str, Enum):
    UI_LAYOUT = "ui_layout"
    INTERACTION_LOGIC = "interaction_logic"
    DATA_WIRING = "data_wiring"
    REFACTOR = "refactor"
    VERIFICATION = "verification"


class Status(str, Enum):
    PENDING = "pending"
    IN_PROGRESS = "in_progress"
    COMPLETED = "completed"
    FAILED = "failed"


@dataclass
class TaskNode:
    id: str
    objective: str
    task_type: TaskType = TaskType.INTERACTION_LOGIC
    status: Status = Status.PENDING
    context: str | None = None
    depends_on: list[str] = field(default_factory=list)
    children: list["TaskNode"] = field(default_factory=list)

    @property
    def is_leaf(self) -> bool:
        return not self.children

    def to_dict(self) -> dict:
        return {
            "id": self.id,
            "objective": self.objective,
            "context": self.context,
            "task_type": self.task_type.value,
            "status": self.status.value,
            "depends_on": list(self.depends_on),
            "children": [c.to_dict() for c in self.children],
        }


@dataclass
class TaskIR:
    run_id: str
    root: TaskNode
    revision: int = 0

    def to_dict(self) -> dict:
        return {"run_id": self.run_id, "revision": self.revision, "root": self.root.to_dict()}

    def to_bytes(self) -> bytes:
        return dumps_canonical(self.to_dict())

    def find(self, task_id: str) -> TaskNode | None:
        for node, _ in walk_with_ancestors(self.root):
            if node.id == task_id:
                return node
        return None


def walk_with_ancestors(root: TaskNode):
    """Pre-order traversal yielding (node, ancestors root-first)."""

    def visit(node: TaskNode, ancestors: tuple[TaskNode, ...]):
        yield node, ancestors
        for child in node.children:
            yield from visit(child, ancestors + (node,))

    yield from visit(root, ())


def task_ir_from_dict(data: dict) -> TaskIR:
    """Parse a persisted Task IR, reporting the locus of any schema violation."""

    def build(obj, path: str) -> TaskNode:
        if not isinstance(obj, dict):
            raise CorruptArtifact(f"{path}: node must be an object")
        for required in ("id", "objective"):
            if required not in obj:
                raise CorruptArtifact(f"{path}: missing field {required!r}")
        try:
            task_type = TaskType(obj.get("task_type", TaskType.INTERACTION_LOGIC.value))
        except ValueError:
            raise CorruptArtifact(f"{path}: unknown task_type {obj['task_type']!r}") from None
        try:
            status = Status(obj.get("status", Status.PENDING.value))
        except ValueError:
            raise CorruptArtifact(f"{path}: unknown status {obj['status']!r}") from None
        depends_on = obj.get("depends_on", [])
        if not isinstance(depends_on, list):
            raise CorruptArtifact(f"{path}: depends_on must be a list")
        children = obj.get("children", [])
        if not isinstance(children, list):
            raise CorruptArtifact(f"{path}: children must be a list")
        return TaskNode(
            id=str(obj["id"]),
            objective=str(obj["objective"]),
            context=obj.get("context"),
            task_type=task_type,
            status=status,
            depends_on=[str(d) for d in depends_on],
            children=[build(c, f"{path}.children[{i}]") for i, c in enumerate(children)],
        )

    if not isinstance(data, dict) or "root" not in data or "run_id" not in data:
        raise CorruptArtifact("task IR must be an object with run_id and root")
    return TaskIR(
        run_id=str(data["run_id"]),
        revision=int(data.get("revision", 0)),
        root=build(data["root"], "root"),
    )


# ---------------------------------------------------------------------------
# validation
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class TaskFinding:
    code: str  # duplicate_id | non_sibling_dependency | cycle
    message: str
    node_ids: tuple[str, ...]

    def to_dict(self) -> dict:
        return {"code": self.code, "message": self.message, "node_ids": list(self.node_ids)}


@dataclass
class TaskValidationReport:
    errors: list[TaskFinding] = field(default_factory=list)

    @property
    def ok(self) -> bool:
        return not self.errors

    def to_dict(self) -> dict:
        return {"ok": self.ok, "errors": [e.to_dict() for e in self.errors]}


def validate_task_ir(ir: TaskIR) -> TaskValidationReport:
    """Check id uniqueness, sibling-scoped dependencies, and acyclicity of
    every sibling group; cycles are reported with their member sets so
    deadlocks surface before any execution."""
    report = TaskValidationReport()
    seen: set[str] = set()
    for node, _ in walk_with_ancestors(ir.root):
        if node.id in seen:
            report.errors.append(
                TaskFinding("duplicate_id", f"duplicate task id {node.id!r}", (node.id,))
            )
        seen.add(node.id)

    groups = [[ir.root]]
    for node, _ in walk_with_ancestors(ir.root):
        if node.children:
            groups.append(node.children)
    for group in groups:
        ids = {n.id for n in group}
        for node in group:
            for dep in node.depends_on:
                if dep == node.id:
                    continue  # self-loop surfaces as a cycle below
                if dep not in ids:
                    report.errors.append(
                        TaskFinding(
                            "non_sibling_dependency",
                            f"task {node.id!r} depends on {dep!r}, which is not a sibling",
                            (node.id, dep),
                        )
                    )
        for members in _cycles(group):
            report.errors.append(
                TaskFinding(
                    "cycle",
                    "dependency cycle among siblings: " + ", ".join(members),
                    tuple(members),
                )
            )
    return report


def _cycles(group: list[TaskNode]) -> list[list[str]]:
    """Strongly connected components with more than one member, plus
    self-loops, in declaration order; iterative Tarjan."""
    ids = [n.id for n in group]
    id_set = set(ids)
    edges = {n.id: [d for d in n.depends_on if d in id_set] for n in group}

    index_of: dict[str, int] = {}
    low: dict[str, int] = {}
    on_stack: set[str] = set()
    stack: list[str] = []
    sccs: list[list[str]] = []
    counter = [0]

    for start in ids:
        if start in index_of:
            continue
        work = [(start, iter(edges[start]))]
        index_of[start] = low[start] = counter[0]
        counter[0] += 1
        stack.append(start)
        on_stack.add(start)
        while work:
            node, it = work[-1]
            advanced = False
            for dep in it:
                if dep not in index_of:
                    index_of[dep] = low[dep] = counter[0]
                    counter[0] += 1
                    stack.append(dep)
                    on_stack.add(dep)
                    work.append((dep, iter(edges[dep])))
                    advanced = True
                    break
                if dep in on_stack:
                    low[node] = min(low[node], index_of[dep])
            if advanced:
                continue
            work.pop()
            if work:
                parent = work[-1][0]
                low[parent] = min(low[parent], low[node])
            if low[node] == index_of[node]:
                component = []
                while True:
                    member = stack.pop()
                    on_stack.discard(member)
                    component.append(member)
                    if member == node:
                        break
                if len(component) > 1 or node in edges[node]:
                    sccs.append(sorted(component))
    sccs.sort(key=lambda members: min(ids.index(m) for m in members))
    return sccs


# ---------------------------------------------------------------------------
# ordering and scheduling
# ---------------------------------------------------------------------------


def topo_order(siblings: list[TaskNode]) -> list[str]:
    """Kahn's algorithm; among ready nodes the one earliest in declaration
    order is emitted first, so the order is unique and deterministic."""
    ids = [n.id for n in siblings]
    position = {nid: i for i, nid in enumerate(ids)}
    id_set = set(ids)
    in_degree = {n.id: 0 for n in siblings}
    dependents: dict[str, list[str]] = {n.id: [] for n in siblings}
    for node in siblings:
        for dep in node.depends_on:
            if dep in id_set:
                in_degree[node.id] += 1
                dependents[dep].append(node.id)
    ready = sorted((nid for nid, deg in in_degree.items() if deg == 0), key=position.__getitem__)
    order: list[str] = []
    while ready:
        current = ready.pop(0)
        order.append(current)
        changed = False
        for follower in dependents[current]:
            in_degree[follower] -= 1
            if in_degree[follower] == 0:
                ready.append(follower)
                changed = True
        if changed:
            ready.sort(key=position.__getitem__)
    if len(order) != len(siblings):
        leftover = [nid for nid in ids if nid not in set(order)]
        raise CycleDetected(f"cycle prevents topological order; stuck nodes: {leftover}")
    return order


@dataclass
class ScheduleDecision:
    next: str | None
    blocked: list[str] = field(default_factory=list)
    done: bool = False

    def to_dict(self) -> dict:
        return {"next": self.next, "blocked": list(self.blocked), "done": self.done}


def derived_status(node: TaskNode) -> Status:
    """Internal-node status is derived: failed if any child failed,
    completed iff all children completed, pending otherwise."""
    if node.is_leaf:
        return node.status
    child_statuses = [derived_status(c) for c in node.children]
    if any(s is Status.FAILED for s in child_statuses):
        return Status.FAILED
    if all(s is Status.COMPLETED for s in child_statuses):
        return Status.COMPLETED
    return Status.PENDING


def refresh_derived_statuses(root: TaskNode) -> None:
    for child in root.children:
        refresh_derived_statuses(child)
    if not root.is_leaf:
        root.status = derived_status(root)


def next_task(ir: TaskIR) -> ScheduleDecision:
    """First pending leaf whose own and ancestors' sibling dependencies are
    all completed, walking depth-first in sibling topological order.

    A failed leaf freezes its enclosing subtree (derived failure), so its
    still-pending peers surface in `blocked` rather than being scheduled.
    """
    report = validate_task_ir(ir)
    if not report.ok:
        raise NotValidated(report)

    status_of: dict[str, Status] = {}
    for node, _ in walk_with_ancestors(ir.root):
        status_of[node.id] = derived_status(node)

    next_id: str | None = None
    blocked: list[str] = []
    pending_leaves = 0

    def gate_open(node: TaskNode) -> bool:
        return all(status_of[d] is Status.COMPLETED for d in node.depends_on)

    def gate_failed(node: TaskNode) -> bool:
        return any(status_of[d] is Status.FAILED for d in node.depends_on)

    def visit(node: TaskNode, ancestors_open: bool, ancestors_doomed: bool):
        nonlocal next_id, pending_leaves
        open_here = ancestors_open and gate_open(node)
        doomed_here = (
            ancestors_doomed
            or gate_failed(node)
            or (not node.is_leaf and status_of[node.id] is Status.FAILED)
        )
        if node.is_leaf:
            if node.status in (Status.PENDING, Status.IN_PROGRESS):
                pending_leaves += 1
            if node.status is Status.PENDING:
                if doomed_here:
                    blocked.append(node.id)
                elif open_here and next_id is None:
                    next_id = node.id
            return
        order = topo_order(node.children)
        children_by_id = {c.id: c for c in node.children}
        for child_id in order:
            visit(children_by_id[child_id], open_here, doomed_here)

    root_doomed = (not ir.root.is_leaf and status_of[ir.root.id] is Status.FAILED) or gate_failed(
        ir.root
    )
    if ir.root.is_leaf:
        visit(ir.root, True, root_doomed)
    else:
        order = topo_order(ir.root.children)
        children_by_id = {c.id: c for c in ir.root.children}
        for child_id in order:
            visit(children_by_id[child_id], gate_open(ir.root), root_doomed)

    return ScheduleDecision(next=next_id, blocked=blocked, done=pending_leaves == 0)


# ---------------------------------------------------------------------------
# write-back
# ---------------------------------------------------------------------------

_LEGAL_TRANSITIONS = {
    (Status.PENDING, Status.IN_PROGRESS),
    (Status.PENDING, Status.COMPLETED),
    (Status.PENDING, Status.FAILED),
    (Status.IN_PROGRESS, Status.COMPLETED),
    (Status.IN_PROGRESS, Status.FAILED),
}


def apply_status(ir: TaskIR, task_id: str, status: Status) -> TaskNode:
    """Set a leaf's status in place, enforcing the transition table and
    recomputing derived ancestor statuses."""
    node = ir.find(task_id)
    if node is None:
        raise UnknownTask(f"no task with id {task_id!r}")
    if not node.is_leaf:
        raise IllegalTransition(f"task {task_id!r} is a grouping node; only leaves execute")
    if (node.status, status) not in _LEGAL_TRANSITIONS:
        raise IllegalTransition(f"cannot move task {task_id!r} from {node.status.value} to {status.value}")
    node.status = status
    refresh_derived_statuses(ir.root)
    return node


class Orchestrator:
    """Workspace-backed scheduler for one run.

    Every status change is persisted atomically before the call returns;
    `revision` counts completion write-backs so an interrupted and resumed
    run converges on the same final artifact as an uninterrupted one.
    """

    def __init__(self, workspace: Workspace, run_id: str, clock: Clock = system_clock):
        self.workspace = workspace
        self.run_id = run_id
        self.clock = clock

    def create(self, ir: TaskIR) -> TaskIR:
        report = validate_task_ir(ir)
        if not report.ok:
            raise NotValidated(report)
        refresh_derived_statuses(ir.root)
        self._persist(ir)
        return ir

    def load(self) -> TaskIR:
        try:
            raw = self.workspace.read_artifact(self.run_id, ArtifactKind.TASK_IR)
        except NotFound as exc:
            raise NoSuchRun(f"run {self.run_id!r} has no persisted task IR") from exc
        try:
            data = json.loads(raw.decode("utf-8"))
        except json.JSONDecodeError as exc:
            raise CorruptArtifact(f"task IR is not valid JSON: {exc}") from exc
        return task_ir_from_dict(data)

    def next_task(self) -> ScheduleDecision:
        return next_task(self.load())

    def mark_in_progress(self, task_id: str) -> TaskIR:
        """Record that the agent picked up a leaf. Not a completion
        write-back: the revision is unchanged."""
        ir = self.load()
        apply_status(ir, task_id, Status.IN_PROGRESS)
        self._persist(ir)
        self.workspace.append_audit(self.run_id, "task_started", "task_ir", task_id)
        return ir

    def report_completion(self, task_id: str, outcome: Status | str, note: str | None = None) -> TaskIR:
        outcome = Status(outcome)
        if outcome not in (Status.COMPLETED, Status.FAILED):
            raise IllegalTransition(f"outcome must be completed or failed, got {outcome.value}")
        ir = self.load()
        apply_status(ir, task_id, outcome)
        ir.revision += 1
        self._persist(ir)
        detail = f"{task_id} -> {outcome.value}" + (f" ({note})" if note else "")
        self.workspace.append_audit(self.run_id, "task_reported", "task_ir", detail)
        return ir

    def _persist(self, ir: TaskIR) -> None:
        self.workspace.write_artifact(self.run_id, ArtifactKind.TASK_IR, ir.to_bytes())


def resume_run(workspace: Workspace, run_id: str, clock: Clock = system_clock) -> tuple[TaskIR, ScheduleDecision]:
    """Reload a run from its persisted artifact alone.

    Leaves stuck in in_progress are reset to pending with an audit note;
    the agent's interrupted work is not observable, so re-execution is the
    safe contract.
    """
    orchestrator = Orchestrator(workspace, run_id, clock)
    ir = orchestrator.load()
    reset: list[str] = []
    for node, _ in walk_with_ancestors(ir.root):
        if node.is_leaf and node.status is Status.IN_PROGRESS:
            node.status = Status.PENDING
            reset.append(node.id)
    if reset:
        refresh_derived_statuses(ir.root)
        orchestrator._persist(ir)
        workspace.append_audit(
            run_id, "resume_reset", "task_ir", "reset to pending: " + ", ".join(reset)
        )
    return ir, next_task(ir)
