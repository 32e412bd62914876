"""Capability server: engine tools over stdio frames or HTTP with SSE.

Tools return structured context objects, plan instructions and task
specifications; they never modify code. Request handling is shared by both
transports, so a frame answered over stdio and over HTTP carries the same
payload. Task status changes are fanned out to SSE subscribers per run.
"""

from __future__ import annotations

import json
import queue
import threading
from http.server import BaseHTTPRequestHandler, ThreadingHTTPServer
from pathlib import Path
from typing import Any, TextIO
from urllib.parse import parse_qs, urlparse

from . import design, prd, tasks
from .clock import Clock, system_clock
from .knowledge import EmptyStore, KnowledgeStore
from .planning import CheckpointPending, PlanStore, Step, plan_status
from .rpc import INVALID_PARAMS, FrameError, ToolRegistry
from .workspace import ArtifactKind, ArtifactRef, Workspace, dumps_canonical


def parse_backend_selector(selector: str | None):
    """CLI/RPC backend selector: "rule" (default) or "replay:<file>"."""
    if selector in (None, "", "rule"):
        return prd.rule_based_extract
    if isinstance(selector, str) and selector.startswith("replay:"):
        return prd.ScriptedReplayBackend(selector.split(":", 1)[1])
    raise ValueError(f"unknown backend selector {selector!r}")


def _require(payload: dict, key: str):
    value = payload.get(key)
    if value is None:
        raise FrameError(INVALID_PARAMS, f"missing required parameter {key!r}")
    return value


class EventBus:
    """Per-run fan-out with no buffering for absent subscribers; each
    subscriber sees events in publish order."""

    _SENTINEL = object()

    def __init__(self):
        self._subscribers: dict[str, list[queue.Queue]] = {}
        self._lock = threading.Lock()

    def subscribe(self, run_id: str) -> queue.Queue:
        q: queue.Queue = queue.Queue()
        with self._lock:
            self._subscribers.setdefault(run_id, []).append(q)
        return q

    def unsubscribe(self, run_id: str, q: queue.Queue) -> None:
        with self._lock:
            listeners = self._subscribers.get(run_id, [])
            if q in listeners:
                listeners.remove(q)

    def publish(self, run_id: str, name: str, payload: Any) -> None:
        with self._lock:
            listeners = list(self._subscribers.get(run_id, []))
        for q in listeners:
            q.put((name, payload))

    def subscriber_count(self, run_id: str) -> int:
        with self._lock:
            return len(self._subscribers.get(run_id, []))

    def close(self) -> None:
        with self._lock:
            listeners = [q for qs in self._subscribers.values() for q in qs]
            self._subscribers.clear()
        for q in listeners:
            q.put(self._SENTINEL)


class Engine:
    """Binds the pipeline modules to one workspace and exposes them as
    named tools. The pipeline driver calls the same rpc_* handlers the
    transports dispatch to, so behavior cannot drift between surfaces."""

    def __init__(self, workspace_root: Path | str, clock: Clock = system_clock):
        self.workspace = Workspace(workspace_root, clock=clock)
        self.clock = clock
        self.plans = PlanStore(self.workspace, clock=clock)
        self.bus = EventBus()
        self._knowledge: KnowledgeStore | None = None
        self.registry = ToolRegistry()
        self._register_tools()

    # -- knowledge -------------------------------------------------------

    @property
    def knowledge_dir(self) -> Path:
        return self.workspace.root / "knowledge"

    def knowledge_store(self) -> KnowledgeStore:
        if self._knowledge is None:
            chunks = self.knowledge_dir / "chunks.json"
            if chunks.is_file():
                self._knowledge = KnowledgeStore.load(self.knowledge_dir, clock=self.clock)
            else:
                self._knowledge = KnowledgeStore(clock=self.clock)
        return self._knowledge

    def ingest_knowledge(self, doc_id: str, body: str) -> list[str]:
        store = self.knowledge_store()
        chunk_ids = store.ingest_document(doc_id, body)
        store.save(self.knowledge_dir)
        return chunk_ids

    # -- shared helpers ----------------------------------------------------

    def write_json_artifact(self, run_id: str, kind: ArtifactKind, obj: Any) -> ArtifactRef:
        return self.workspace.write_artifact(run_id, kind, dumps_canonical(obj))

    def publish_event(self, run_id: str, name: str, payload: Any) -> None:
        self.bus.publish(run_id, name, payload)

    def load_component_set(self, run_id: str) -> design.ComponentSet | None:
        if not self.workspace.has_artifact(run_id, ArtifactKind.COMPONENT_SET):
            return None
        return design.ComponentSet.from_dict(
            self.workspace.read_json(run_id, ArtifactKind.COMPONENT_SET)
        )

    def complete_checkpoint(self, run_id: str, step: Step, decided_by: str) -> None:
        """After an approving decision: freeze the artifact where the step
        demands it (requirement understanding gains its confirmation record)
        and perform the advancing submission."""
        ref = self.workspace.artifact_path(run_id, ArtifactKind(STEP_KIND[step]))
        rel = str(ref.relative_to(self.workspace.root))
        if step is Step.REQUIREMENT_UNDERSTANDING:
            understanding = prd.RequirementUnderstanding.from_dict(
                self.workspace.read_json(run_id, ArtifactKind.REQUIREMENT_UNDERSTANDING)
            )
            if understanding.status == "draft":
                confirmed = prd.confirm_understanding(
                    understanding,
                    decided_by=decided_by,
                    components=self.load_component_set(run_id),
                    clock=self.clock,
                )
                self.write_json_artifact(
                    run_id, ArtifactKind.REQUIREMENT_UNDERSTANDING, confirmed.to_dict()
                )
                self.workspace.write_view(
                    run_id, "requirement_understanding.md", prd.render_markdown(confirmed)
                )
        self.plans.submit(run_id, step, rel)

    # -- tool handlers -----------------------------------------------------

    def _register_tools(self) -> None:
        register = self.registry.register
        register("tools/list", lambda payload: {"methods": self.registry.methods()})
        register("context/canonicalize_design", self.rpc_canonicalize_design)
        register("context/decompose_prd", self.rpc_decompose_prd)
        register("knowledge/retrieve", self.rpc_retrieve)
        register("plan/start", self.rpc_plan_start)
        register("plan/submit_step", self.rpc_plan_submit)
        register("plan/checkpoint", self.rpc_plan_checkpoint)
        register("tasks/validate", self.rpc_tasks_validate)
        register("tasks/next", self.rpc_tasks_next)
        register("tasks/report", self.rpc_tasks_report)
        register("run/status", self.rpc_run_status)
        register("run/artifacts", self.rpc_run_artifacts)
        self.registry.freeze()

    def rpc_canonicalize_design(self, payload: dict) -> dict:
        run_id = _require(payload, "run_id")
        if "document" in payload:
            document = payload["document"]
        elif "document_path" in payload:
            document = Path(payload["document_path"]).read_text(encoding="utf-8")
        else:
            raise FrameError(INVALID_PARAMS, "provide document or document_path")
        ir = design.canonicalize(document, node_selector=payload.get("node_id"))
        detections = [
            design.DetectedElement(
                label=d["label"],
                bounding_box=design.Geometry(
                    d["bounding_box"]["x"],
                    d["bounding_box"]["y"],
                    d["bounding_box"]["width"],
                    d["bounding_box"]["height"],
                ),
                confidence=float(d.get("confidence", 1.0)),
            )
            for d in payload.get("detections", [])
        ]
        if detections:
            ir = design.refine_with_detections(ir, detections, float(payload.get("scale", 1.0)))
        components = design.summarize_components(ir)
        ir_ref = self.write_json_artifact(run_id, ArtifactKind.DESIGN_IR, ir.to_dict())
        set_ref = self.write_json_artifact(run_id, ArtifactKind.COMPONENT_SET, components.to_dict())
        return {
            "design_ir": ir.to_dict(),
            "component_set": components.to_dict(),
            "design_ir_ref": ir_ref.to_dict(),
            "component_set_ref": set_ref.to_dict(),
        }

    def rpc_decompose_prd(self, payload: dict) -> dict:
        run_id = _require(payload, "run_id")
        prd_payload = _require(payload, "prd")
        document = prd.PrdDocument(
            id=str(prd_payload.get("id") or run_id),
            body=_require(prd_payload, "body"),
            image_refs=tuple(prd_payload.get("image_refs", [])),
        )
        backend = parse_backend_selector(payload.get("backend"))
        components = None
        if payload.get("use_components", True):
            components = self.load_component_set(run_id)
        understanding = prd.decompose(document, backend=backend, components=components)
        report = prd.validate_understanding(understanding, components=components)
        ref = self.write_json_artifact(
            run_id, ArtifactKind.REQUIREMENT_UNDERSTANDING, understanding.to_dict()
        )
        self.workspace.write_view(
            run_id, "requirement_understanding.md", prd.render_markdown(understanding)
        )
        return {
            "requirement_understanding": understanding.to_dict(),
            "validation": report.to_dict(),
            "ref": ref.to_dict(),
        }

    def rpc_retrieve(self, payload: dict) -> dict:
        query = _require(payload, "query")
        store = self.knowledge_store()
        try:
            context = store.retrieve(
                query=query,
                k=int(payload.get("k", 5)),
                use_cache=bool(payload.get("use_cache", True)),
            )
            result = context.to_dict()
        except EmptyStore:
            result = {"query": query, "hits": [], "from_cache": False, "store_version": 0}
        run_id = payload.get("run_id")
        if run_id:
            ref = self.write_json_artifact(run_id, ArtifactKind.RETRIEVAL_CONTEXT, result)
            result = dict(result, ref=ref.to_dict())
        return result

    def rpc_plan_start(self, payload: dict) -> dict:
        run_id = _require(payload, "run_id")
        state = self.plans.start(
            run_id,
            _require(payload, "mode"),
            payload.get("design_ref"),
            payload.get("prd_ref"),
        )
        return state.to_dict()

    def rpc_plan_submit(self, payload: dict) -> dict:
        run_id = _require(payload, "run_id")
        step = _require(payload, "step")
        if "content" in payload:
            kind = ArtifactKind(_require(payload, "kind"))
            ref = self.write_json_artifact(run_id, kind, payload["content"]).path
        else:
            ref = _require(payload, "artifact_ref")
        state = self.plans.submit(run_id, step, ref)
        return dict(state.to_dict(), recorded_ref=ref)

    def rpc_plan_checkpoint(self, payload: dict) -> dict:
        """Record a human decision. Edited content may ride along; approving
        decisions advance the protocol server-side."""
        run_id = _require(payload, "run_id")
        step = Step(_require(payload, "step"))
        decision = _require(payload, "decision")
        decided_by = _require(payload, "decided_by")
        if decision in ("approved", "edited") and "content" in payload:
            kind = ArtifactKind(STEP_KIND[step])
            self.write_json_artifact(run_id, kind, payload["content"])
            if kind is ArtifactKind.REQUIREMENT_UNDERSTANDING:
                understanding = prd.RequirementUnderstanding.from_dict(payload["content"])
                self.workspace.write_view(
                    run_id, "requirement_understanding.md", prd.render_markdown(understanding)
                )
        state = self.plans.decide(run_id, step, decision, decided_by, payload.get("note"))
        if decision in ("approved", "edited"):
            self.complete_checkpoint(run_id, step, decided_by)
            state = self.plans.load(run_id)
        self.publish_event(
            run_id,
            "checkpoint",
            {"run_id": run_id, "step": step.value, "decision": decision},
        )
        return state.to_dict()

    def _orchestrator(self, run_id: str) -> tasks.Orchestrator:
        return tasks.Orchestrator(self.workspace, run_id, clock=self.clock)

    def rpc_tasks_validate(self, payload: dict) -> dict:
        if "task_ir" in payload:
            ir = tasks.task_ir_from_dict(payload["task_ir"])
        else:
            ir = self._orchestrator(_require(payload, "run_id")).load()
        return tasks.validate_task_ir(ir).to_dict()

    def rpc_tasks_next(self, payload: dict) -> dict:
        run_id = _require(payload, "run_id")
        return self._orchestrator(run_id).next_task().to_dict()

    def rpc_tasks_report(self, payload: dict) -> dict:
        run_id = _require(payload, "run_id")
        task_id = _require(payload, "task_id")
        outcome = _require(payload, "outcome")
        ir = self._orchestrator(run_id).report_completion(task_id, outcome, payload.get("note"))
        decision = tasks.next_task(ir)
        self.publish_event(
            run_id,
            "task_status",
            {
                "run_id": run_id,
                "task_id": task_id,
                "status": outcome,
                "revision": ir.revision,
                "done": decision.done,
            },
        )
        return {"revision": ir.revision, "task_ir": ir.to_dict(), "decision": decision.to_dict()}

    def rpc_run_status(self, payload: dict) -> dict:
        run_id = _require(payload, "run_id")
        if not self.plans.exists(run_id):
            raise FrameError(INVALID_PARAMS, f"no plan for run {run_id!r}")
        state = self.plans.load(run_id)
        status = plan_status(state)
        state_dict = state.to_dict()
        status["step_artifacts"] = state_dict["step_artifacts"]
        status["checkpoints"] = state_dict["checkpoints"]
        status["superseded"] = state_dict["superseded"]
        if self.workspace.has_artifact(run_id, ArtifactKind.TASK_IR):
            ir = self._orchestrator(run_id).load()
            status["task_ir"] = ir.to_dict()
            report = tasks.validate_task_ir(ir)
            status["task_validation"] = report.to_dict()
            if report.ok:
                status["schedule"] = tasks.next_task(ir).to_dict()
        return status

    def rpc_run_artifacts(self, payload: dict) -> dict:
        run_id = _require(payload, "run_id")
        refs = self.workspace.list_run_artifacts(run_id)
        include_content = bool(payload.get("include_content", False))
        artifacts = []
        for ref in refs:
            entry = ref.to_dict()
            if include_content and ref.kind.extension == "json":
                entry["content"] = json.loads(self.workspace.read_artifact(ref).decode("utf-8"))
            artifacts.append(entry)
        return {"run_id": run_id, "artifacts": artifacts}


# Artifact kind each checkpoint-capable step persists.
STEP_KIND = {
    Step.INTAKE: ArtifactKind.INTAKE_MANIFEST.value,
    Step.CONTEXT: ArtifactKind.RETRIEVAL_CONTEXT.value,
    Step.REQUIREMENT_UNDERSTANDING: ArtifactKind.REQUIREMENT_UNDERSTANDING.value,
    Step.TECH_PLAN: ArtifactKind.TECH_PLAN.value,
    Step.TASK_EMISSION: ArtifactKind.TASK_IR.value,
}


# ---------------------------------------------------------------------------
# transports
# ---------------------------------------------------------------------------


def serve_stdio(engine: Engine, stdin: TextIO, stdout: TextIO) -> None:
    """One frame per line, UTF-8, newline-terminated. Bad input produces an
    error frame; the loop never dies on it."""
    for line in stdin:
        line = line.strip()
        if not line:
            continue
        response = engine.registry.dispatch(line)
        stdout.write(response.to_json() + "\n")
        stdout.flush()


class _HttpHandler(BaseHTTPRequestHandler):
    protocol_version = "HTTP/1.1"
    server_version = "forgeline"
    engine: Engine  # injected by CapabilityServer

    def log_message(self, format: str, *args):  # silence default stderr noise
        pass

    def _cors(self) -> None:
        self.send_header("Access-Control-Allow-Origin", "*")
        self.send_header("Access-Control-Allow-Methods", "GET, POST, OPTIONS")
        self.send_header("Access-Control-Allow-Headers", "Content-Type")

    def do_OPTIONS(self):
        self.send_response(204)
        self._cors()
        self.send_header("Content-Length", "0")
        self.end_headers()

    def do_POST(self):
        if urlparse(self.path).path != "/rpc":
            self._plain(404, "not found")
            return
        length = int(self.headers.get("Content-Length", 0))
        body = self.rfile.read(length)
        frame = self.engine.registry.dispatch(body)
        data = (frame.to_json() + "\n").encode("utf-8")
        self.send_response(200)
        self._cors()
        self.send_header("Content-Type", "application/json")
        self.send_header("Content-Length", str(len(data)))
        self.end_headers()
        self.wfile.write(data)

    def do_GET(self):
        parsed = urlparse(self.path)
        if parsed.path != "/events":
            self._plain(404, "not found")
            return
        params = parse_qs(parsed.query)
        run_ids = params.get("run_id")
        if not run_ids:
            self._plain(400, "run_id query parameter required")
            return
        run_id = run_ids[0]
        self.send_response(200)
        self._cors()
        self.send_header("Content-Type", "text/event-stream")
        self.send_header("Cache-Control", "no-cache")
        self.send_header("Connection", "close")
        self.end_headers()
        bus = self.engine.bus
        subscription = bus.subscribe(run_id)
        try:
            self.wfile.write(b": connected\n\n")
            self.wfile.flush()
            while True:
                try:
                    item = subscription.get(timeout=5.0)
                except queue.Empty:
                    self.wfile.write(b": keepalive\n\n")
                    self.wfile.flush()
                    continue
                if item is EventBus._SENTINEL:
                    break
                name, payload = item
                data = json.dumps(payload, sort_keys=True, ensure_ascii=False)
                self.wfile.write(f"event: {name}\ndata: {data}\n\n".encode("utf-8"))
                self.wfile.flush()
        except (OSError, ValueError):
            pass  # subscriber went away
        finally:
            bus.unsubscribe(run_id, subscription)

    def _plain(self, code: int, message: str) -> None:
        data = (message + "\n").encode("utf-8")
        self.send_response(code)
        self._cors()
        self.send_header("Content-Type", "text/plain")
        self.send_header("Content-Length", str(len(data)))
        self.end_headers()
        self.wfile.write(data)


class BindFailure(Exception):
    pass


class _QuietServer(ThreadingHTTPServer):
    def handle_error(self, request, client_address):
        # Disconnecting SSE clients tear down mid-write; not a server fault.
        import sys

        exc = sys.exc_info()[1]
        if isinstance(exc, (OSError, ValueError)):
            return
        super().handle_error(request, client_address)


class CapabilityServer:
    """HTTP/SSE transport wrapper with graceful shutdown."""

    def __init__(self, engine: Engine, host: str = "127.0.0.1", port: int = 8787):
        self.engine = engine
        handler = type("BoundHandler", (_HttpHandler,), {"engine": engine})
        try:
            self.httpd = _QuietServer((host, port), handler)
        except OSError as exc:
            raise BindFailure(f"cannot bind {host}:{port}: {exc}") from exc
        self.httpd.daemon_threads = True
        self._thread: threading.Thread | None = None

    @property
    def address(self) -> tuple[str, int]:
        host, port = self.httpd.server_address[:2]
        return str(host), int(port)

    def start(self) -> "CapabilityServer":
        self._thread = threading.Thread(target=self.httpd.serve_forever, daemon=True)
        self._thread.start()
        return self

    def stop(self) -> None:
        # Release SSE subscribers first so their handler threads can finish;
        # in-flight RPC requests complete before serve_forever returns.
        self.engine.bus.close()
        self.httpd.shutdown()
        self.httpd.server_close()
        if self._thread is not None:
            self._thread.join(timeout=5.0)

    def serve_forever(self) -> None:
        try:
            self.httpd.serve_forever()
        finally:
            self.engine.bus.close()
            self.httpd.server_close()


def parse_bind(addr: str) -> tuple[str, int]:
    host, _, port = addr.rpartition(":")
    if not host:
        host = "127.0.0.1"
    return host, int(port)


# Re-exported for callers that only need the pending-decision error.
__all__ = [
    "BindFailure",
    "CapabilityServer",
    "CheckpointPending",
    "Engine",
    "EventBus",
    "parse_backend_selector",
    "parse_bind",
    "serve_stdio",
    "STEP_KIND",
]
