from __future__ import annotations

import http.client
import io
import json
import queue
import threading
import time

import pytest

from forgeline.rpc import (
    APPLICATION_ERROR,
    INVALID_PARAMS,
    PARSE_ERROR,
    UNKNOWN_METHOD,
    ToolRegistry,
    parse_request,
)
from forgeline.server import CapabilityServer, Engine, EventBus, serve_stdio
from forgeline.tasks import TaskIR, TaskNode
from forgeline.workspace import ArtifactKind, dumps_canonical

from conftest import load_design


def _request(frame_id: int, method: str, payload=None) -> str:
    return json.dumps(
        {"id": frame_id, "kind": "request", "method": method, "payload": payload or {}}
    )


@pytest.fixture
def engine(tmp_path, fixed_clock) -> Engine:
    return Engine(tmp_path / "ws", clock=fixed_clock)


def _seed_run(engine: Engine, run_id: str = "r1") -> None:
    """A run with a validated two-leaf task IR."""
    ir = TaskIR(
        run_id=run_id,
        root=TaskNode(
            id="root",
            objective="root",
            children=[
                TaskNode(id="A", objective="first"),
                TaskNode(id="B", objective="second", depends_on=["A"]),
            ],
        ),
    )
    engine.workspace.write_artifact(run_id, ArtifactKind.TASK_IR, dumps_canonical(ir.to_dict()))


# -- frame layer -----------------------------------------------------------------


def test_parse_request_round_trip():
    frame = parse_request(_request(3, "tools/list"))
    assert frame.id == 3
    assert frame.method == "tools/list"


@pytest.mark.parametrize(
    "raw",
    [
        "not json",
        "[]",
        '{"kind": "request", "method": "x"}',  # missing id
        '{"id": "one", "kind": "request", "method": "x"}',  # non-integer id
        '{"id": 1, "kind": "response", "method": "x"}',  # wrong kind
        '{"id": 1, "kind": "request", "method": ""}',
    ],
)
def test_malformed_frames_get_parse_error(raw):
    registry = ToolRegistry()
    response = registry.dispatch(raw)
    assert response.error is not None
    assert response.error["code"] == PARSE_ERROR


def test_unknown_method_error_code():
    registry = ToolRegistry()
    response = registry.dispatch(_request(3, "nope/nothing"))
    assert response.error["code"] == UNKNOWN_METHOD
    assert response.id == 3


def test_handler_exception_becomes_application_error():
    registry = ToolRegistry()
    registry.register("boom", lambda payload: 1 / 0)
    response = registry.dispatch(_request(1, "boom"))
    assert response.error["code"] == APPLICATION_ERROR
    assert "ZeroDivisionError" in response.error["message"]


def test_response_has_exactly_one_of_payload_or_error():
    registry = ToolRegistry()
    registry.register("ok", lambda payload: {"fine": True})
    ok = registry.dispatch(_request(1, "ok")).to_dict()
    bad = registry.dispatch(_request(2, "missing")).to_dict()
    assert "payload" in ok and "error" not in ok
    assert "error" in bad and "payload" not in bad


# -- engine tools ------------------------------------------------------------------


def test_tools_list_sorted(engine):
    response = engine.registry.dispatch(_request(1, "tools/list"))
    methods = response.payload["methods"]
    assert methods == sorted(methods)
    assert set(methods) == {
        "tools/list",
        "context/canonicalize_design",
        "context/decompose_prd",
        "knowledge/retrieve",
        "plan/start",
        "plan/submit_step",
        "plan/checkpoint",
        "tasks/validate",
        "tasks/next",
        "tasks/report",
        "run/status",
        "run/artifacts",
    }


def test_tasks_next_returns_schedule_decision(engine):
    _seed_run(engine)
    response = engine.registry.dispatch(_request(2, "tasks/next", {"run_id": "r1"}))
    assert response.payload == {"next": "A", "blocked": [], "done": False}


def test_tasks_report_updates_and_returns_decision(engine):
    _seed_run(engine)
    response = engine.registry.dispatch(
        _request(3, "tasks/report", {"run_id": "r1", "task_id": "A", "outcome": "completed"})
    )
    assert response.payload["revision"] == 1
    assert response.payload["decision"]["next"] == "B"


def test_missing_params_are_invalid_params(engine):
    response = engine.registry.dispatch(_request(4, "tasks/next", {}))
    assert response.error["code"] == INVALID_PARAMS


def test_canonicalize_and_decompose_tools_write_artifacts(engine):
    engine.registry.dispatch(
        _request(1, "context/canonicalize_design", {"run_id": "r1", "document": load_design("instances.json")})
    )
    assert engine.workspace.has_artifact("r1", ArtifactKind.DESIGN_IR)
    assert engine.workspace.has_artifact("r1", ArtifactKind.COMPONENT_SET)
    response = engine.registry.dispatch(
        _request(
            2,
            "context/decompose_prd",
            {"run_id": "r1", "prd": {"id": "p", "body": "The search bar filters the list."}},
        )
    )
    units = response.payload["requirement_understanding"]["units"]
    assert [u["category"] for u in units] == ["InputControl"]
    assert engine.workspace.has_artifact("r1", ArtifactKind.REQUIREMENT_UNDERSTANDING)
    assert (engine.workspace.run_dir("r1") / "requirement_understanding.md").is_file()


def test_run_artifacts_with_content(engine):
    _seed_run(engine)
    response = engine.registry.dispatch(
        _request(9, "run/artifacts", {"run_id": "r1", "include_content": True})
    )
    artifacts = response.payload["artifacts"]
    assert [a["kind"] for a in artifacts] == ["task_ir"]
    assert artifacts[0]["content"]["root"]["id"] == "root"


# -- event bus ---------------------------------------------------------------------


def test_publish_without_subscribers_is_noop():
    bus = EventBus()
    bus.publish("r1", "task_status", {"x": 1})  # must not raise
    assert bus.subscriber_count("r1") == 0


def test_two_subscribers_each_receive_once_in_order():
    bus = EventBus()
    first = bus.subscribe("r1")
    second = bus.subscribe("r1")
    bus.publish("r1", "e1", {"n": 1})
    bus.publish("r1", "e2", {"n": 2})
    for sub in (first, second):
        assert sub.get(timeout=1) == ("e1", {"n": 1})
        assert sub.get(timeout=1) == ("e2", {"n": 2})
        assert sub.empty()


def test_events_are_scoped_per_run():
    bus = EventBus()
    other = bus.subscribe("other")
    bus.publish("r1", "e1", {})
    assert other.empty()


# -- stdio transport ------------------------------------------------------------------


def _stdio_roundtrip(engine: Engine, lines: list[str]) -> list[dict]:
    stdout = io.StringIO()
    serve_stdio(engine, io.StringIO("\n".join(lines) + "\n"), stdout)
    return [json.loads(line) for line in stdout.getvalue().splitlines()]


def test_stdio_one_response_per_request_line(engine):
    responses = _stdio_roundtrip(engine, [_request(1, "tools/list"), _request(2, "tools/list")])
    assert [r["id"] for r in responses] == [1, 2]
    assert all(r["kind"] == "response" for r in responses)


def test_stdio_survives_malformed_lines(engine):
    responses = _stdio_roundtrip(engine, ["garbage", _request(7, "tools/list")])
    assert responses[0]["error"]["code"] == PARSE_ERROR
    assert responses[1]["payload"]["methods"]


# -- http transport --------------------------------------------------------------------


@pytest.fixture
def http_server(engine):
    server = CapabilityServer(engine, "127.0.0.1", 0).start()
    yield server
    server.stop()


def _post_rpc(server: CapabilityServer, body: str) -> dict:
    host, port = server.address
    conn = http.client.HTTPConnection(host, port, timeout=5)
    conn.request("POST", "/rpc", body=body.encode("utf-8"), headers={"Content-Type": "application/json"})
    response = conn.getresponse()
    assert response.status == 200
    data = json.loads(response.read().decode("utf-8"))
    conn.close()
    return data


def test_http_post_rpc(http_server):
    data = _post_rpc(http_server, _request(1, "tools/list"))
    assert data["id"] == 1
    assert "tools/list" in data["payload"]["methods"]


def test_http_unknown_path_404(http_server):
    host, port = http_server.address
    conn = http.client.HTTPConnection(host, port, timeout=5)
    conn.request("POST", "/other", body=b"{}")
    assert conn.getresponse().status == 404
    conn.close()


class SseClient:
    """Minimal blocking SSE reader for tests."""

    def __init__(self, host: str, port: int, run_id: str):
        self.conn = http.client.HTTPConnection(host, port, timeout=10)
        self.conn.request("GET", f"/events?run_id={run_id}")
        self.response = self.conn.getresponse()
        assert self.response.status == 200
        assert self.response.headers["Content-Type"].startswith("text/event-stream")
        self.events: queue.Queue = queue.Queue()
        self._thread = threading.Thread(target=self._pump, daemon=True)
        self._thread.start()

    def _pump(self):
        name = None
        data_lines: list[str] = []
        try:
            for raw in self.response:
                line = raw.decode("utf-8").rstrip("\n")
                if line.startswith(":"):
                    continue
                if line.startswith("event: "):
                    name = line[len("event: "):]
                elif line.startswith("data: "):
                    data_lines.append(line[len("data: "):])
                elif line == "" and name is not None:
                    self.events.put((name, json.loads("\n".join(data_lines))))
                    name, data_lines = None, []
        except Exception:
            pass

    def next_event(self, timeout: float = 2.0):
        return self.events.get(timeout=timeout)

    def close(self):
        self.conn.close()


def test_sse_task_status_event_arrives_within_one_second(engine, http_server):
    _seed_run(engine)
    host, port = http_server.address
    client = SseClient(host, port, "r1")
    time.sleep(0.05)  # allow subscription registration
    started = time.monotonic()
    _post_rpc(
        http_server,
        _request(5, "tasks/report", {"run_id": "r1", "task_id": "A", "outcome": "completed"}),
    )
    name, payload = client.next_event(timeout=1.0)
    elapsed = time.monotonic() - started
    assert name == "task_status"
    assert payload["task_id"] == "A"
    assert payload["status"] == "completed"
    assert elapsed < 1.0
    client.close()


def test_sse_subscribers_see_publish_order(engine, http_server):
    _seed_run(engine, "r2")
    host, port = http_server.address
    a = SseClient(host, port, "r2")
    b = SseClient(host, port, "r2")
    time.sleep(0.05)
    engine.publish_event("r2", "e1", {"n": 1})
    engine.publish_event("r2", "e2", {"n": 2})
    for client in (a, b):
        assert client.next_event()[0] == "e1"
        assert client.next_event()[0] == "e2"
        client.close()


# -- transport equivalence (golden payloads; scaled up in the acceptance suite) -----


def test_transport_equivalence_tools_list(tmp_path, fixed_clock):
    stdio_engine = Engine(tmp_path / "ws1", clock=fixed_clock)
    http_engine = Engine(tmp_path / "ws2", clock=fixed_clock)
    server = CapabilityServer(http_engine, "127.0.0.1", 0).start()
    try:
        line = _request(1, "tools/list")
        stdio_out = io.StringIO()
        serve_stdio(stdio_engine, io.StringIO(line + "\n"), stdio_out)
        stdio_payload = json.loads(stdio_out.getvalue())["payload"]
        http_payload = _post_rpc(server, line)["payload"]
        assert stdio_payload == http_payload
    finally:
        server.stop()


def test_run_status_with_cyclic_task_ir_reports_validation(engine):
    engine.registry.dispatch(
        _request(1, "plan/start", {"run_id": "r9", "mode": "full_coding", "design_ref": "d", "prd_ref": "p"})
    )
    cyclic = {
        "run_id": "r9",
        "revision": 0,
        "root": {
            "id": "root",
            "objective": "broken",
            "children": [
                {"id": "A", "objective": "a", "depends_on": ["B"]},
                {"id": "B", "objective": "b", "depends_on": ["A"]},
            ],
        },
    }
    engine.workspace.write_artifact("r9", ArtifactKind.TASK_IR, dumps_canonical(cyclic))
    response = engine.registry.dispatch(_request(2, "run/status", {"run_id": "r9"}))
    payload = response.payload
    assert payload["task_validation"]["ok"] is False
    cycle = payload["task_validation"]["errors"][0]
    assert set(cycle["node_ids"]) == {"A", "B"}
    assert "schedule" not in payload


def test_id_pairing_under_interleaved_requests(engine, http_server):
    import concurrent.futures
    import random as _random

    rng = _random.Random(3)
    ids = rng.sample(range(1, 10_000), 40)

    def fire(frame_id: int) -> tuple[int, dict]:
        method = rng.choice(["tools/list", "nope/missing"])
        return frame_id, _post_rpc(http_server, _request(frame_id, method))

    with concurrent.futures.ThreadPoolExecutor(max_workers=8) as pool:
        for frame_id, response in pool.map(fire, ids):
            assert response["id"] == frame_id

    # stdio: out-of-sequence ids still pair one-to-one, in order
    lines = [_request(i, "tools/list") for i in (7, 2, 42)]
    responses = _stdio_roundtrip(engine, lines)
    assert [r["id"] for r in responses] == [7, 2, 42]
