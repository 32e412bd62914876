"""Frame protocol for the capability server.

One JSON object per frame. Requests carry a per-connection monotonically
increasing integer id; the response echoes the id and carries exactly one
of payload or error. Error codes follow the familiar -326xx convention:
-32600 malformed frame, -32601 unknown method, -32602 invalid params,
-32000 application error.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from typing import Any, Callable

PARSE_ERROR = -32600
UNKNOWN_METHOD = -32601
INVALID_PARAMS = -32602
APPLICATION_ERROR = -32000


@dataclass(frozen=True)
class Frame:
    id: int
    kind: str  # request | response | event
    method: str
    payload: Any = None
    error: dict | None = None

    def to_dict(self) -> dict:
        d: dict[str, Any] = {"id": self.id, "kind": self.kind, "method": self.method}
        if self.error is not None:
            d["error"] = self.error
        else:
            d["payload"] = self.payload
        return d

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True, ensure_ascii=False)


class FrameError(Exception):
    def __init__(self, code: int, message: str):
        super().__init__(message)
        self.code = code
        self.message = message


def parse_request(raw: str | bytes) -> Frame:
    """Parse one request frame; violations raise FrameError(-32600)."""
    if isinstance(raw, bytes):
        try:
            raw = raw.decode("utf-8")
        except UnicodeDecodeError as exc:
            raise FrameError(PARSE_ERROR, f"frame is not valid UTF-8: {exc}") from exc
    try:
        obj = json.loads(raw)
    except json.JSONDecodeError as exc:
        raise FrameError(PARSE_ERROR, f"frame is not valid JSON: {exc.msg}") from exc
    if not isinstance(obj, dict):
        raise FrameError(PARSE_ERROR, "frame must be a JSON object")
    frame_id = obj.get("id")
    if not isinstance(frame_id, int) or isinstance(frame_id, bool):
        raise FrameError(PARSE_ERROR, "frame id must be an integer")
    kind = obj.get("kind", "request")
    if kind != "request":
        raise FrameError(PARSE_ERROR, f"expected a request frame, got kind {kind!r}")
    method = obj.get("method")
    if not isinstance(method, str) or not method:
        raise FrameError(PARSE_ERROR, "frame method must be a non-empty string")
    return Frame(id=frame_id, kind="request", method=method, payload=obj.get("payload"))


def response(request: Frame, payload: Any) -> Frame:
    return Frame(id=request.id, kind="response", method=request.method, payload=payload)


def error_response(frame_id: int, method: str, code: int, message: str) -> Frame:
    return Frame(
        id=frame_id, kind="response", method=method, error={"code": code, "message": message}
    )


def extract_id(raw: str | bytes) -> int:
    """Best-effort id recovery from a malformed frame so the error response
    can still pair with its request; falls back to 0."""
    try:
        obj = json.loads(raw)
        frame_id = obj.get("id") if isinstance(obj, dict) else None
        if isinstance(frame_id, int) and not isinstance(frame_id, bool):
            return frame_id
    except Exception:
        pass
    return 0


Handler = Callable[[dict], Any]


class ToolRegistry:
    """Named tool methods; all registrations happen before serving starts."""

    def __init__(self):
        self._handlers: dict[str, Handler] = {}
        self._frozen = False

    def register(self, method: str, handler: Handler) -> None:
        if self._frozen:
            raise RuntimeError("registry is frozen; register tools before serving")
        if method in self._handlers:
            raise ValueError(f"method {method!r} already registered")
        self._handlers[method] = handler

    def freeze(self) -> None:
        self._frozen = True

    def methods(self) -> list[str]:
        return sorted(self._handlers)

    def dispatch(self, raw: str | bytes) -> Frame:
        """Handle one raw request line/body; never raises."""
        try:
            request = parse_request(raw)
        except FrameError as exc:
            return error_response(extract_id(raw), "", exc.code, exc.message)
        handler = self._handlers.get(request.method)
        if handler is None:
            return error_response(
                request.id, request.method, UNKNOWN_METHOD, f"unknown method {request.method!r}"
            )
        payload = request.payload if isinstance(request.payload, dict) else {}
        try:
            result = handler(payload)
        except FrameError as exc:
            return error_response(request.id, request.method, exc.code, exc.message)
        except Exception as exc:
            return error_response(
                request.id,
                request.method,
                APPLICATION_ERROR,
                f"{type(exc).__name__}: {exc}",
            )
        return response(request, result)
