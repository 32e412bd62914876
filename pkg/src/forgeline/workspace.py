"""Artifact workspace: atomic persistence plus an append-only audit log.

Every intermediate artifact of a run lives under ``<workspace>/runs/<run_id>/``
as ``<kind>.<ext>``. Writes go to a temporary file in the same directory and
are renamed into place, so readers only ever observe complete versions.
Each successful write appends exactly one record to the run's ``audit.log``.
"""

from __future__ import annotations

import fcntl
import hashlib
import json
import os
import threading
from dataclasses import dataclass
from enum import Enum
from pathlib import Path
from typing import Iterator

from .clock import Clock, system_clock


class WorkspaceError(Exception):
    pass


class StorageFailure(WorkspaceError):
    pass


class NotFound(WorkspaceError):
    pass


class NoSuchRun(WorkspaceError):
    pass


class HashMismatch(WorkspaceError):
    """Stored bytes no longer match the ref's content hash."""


class ArtifactKind(str, Enum):
    DESIGN_IR = "design_ir"
    COMPONENT_SET = "component_set"
    REQUIREMENT_UNDERSTANDING = "requirement_understanding"
    PLAN_STATE = "plan_state"
    PLAN_EVENTS = "plan_events"
    TASK_IR = "task_ir"
    RETRIEVAL_CONTEXT = "retrieval_context"
    FIDELITY_REPORT = "fidelity_report"
    METRICS_REPORT = "metrics_report"
    # Steps of the planning protocol that persist artifacts not named by the
    # nine core kinds above.
    INTAKE_MANIFEST = "intake_manifest"
    TECH_PLAN = "tech_plan"

    @property
    def extension(self) -> str:
        return "log" if self is ArtifactKind.PLAN_EVENTS else "json"

    @property
    def filename(self) -> str:
        return f"{self.value}.{self.extension}"


@dataclass(frozen=True)
class ArtifactRef:
    run_id: str
    kind: ArtifactKind
    path: str  # workspace-relative
    content_hash: str  # sha256 hex of the stored bytes
    written_at: float

    def to_dict(self) -> dict:
        return {
            "run_id": self.run_id,
            "kind": self.kind.value,
            "path": self.path,
            "content_hash": self.content_hash,
            "written_at": self.written_at,
        }

    @staticmethod
    def from_dict(d: dict) -> "ArtifactRef":
        return ArtifactRef(
            run_id=d["run_id"],
            kind=ArtifactKind(d["kind"]),
            path=d["path"],
            content_hash=d["content_hash"],
            written_at=float(d["written_at"]),
        )


@dataclass(frozen=True)
class AuditRecord:
    timestamp: float
    actor: str
    action: str
    kind: str
    detail: str

    def to_dict(self) -> dict:
        return {
            "timestamp": self.timestamp,
            "actor": self.actor,
            "action": self.action,
            "kind": self.kind,
            "detail": self.detail,
        }


def dumps_canonical(obj) -> bytes:
    """Canonical JSON byte form used for every structured artifact."""
    return (json.dumps(obj, indent=2, sort_keys=True, ensure_ascii=False) + "\n").encode("utf-8")


def sha256_hex(data: bytes) -> str:
    return hashlib.sha256(data).hexdigest()


class _RunLock:
    """Per-run writer lock: an OS file lock plus an in-process mutex."""

    def __init__(self, lock_path: Path):
        self._lock_path = lock_path
        self._mutex = threading.RLock()

    def __enter__(self):
        self._mutex.acquire()
        self._lock_path.parent.mkdir(parents=True, exist_ok=True)
        self._fd = os.open(self._lock_path, os.O_CREAT | os.O_RDWR, 0o644)
        fcntl.flock(self._fd, fcntl.LOCK_EX)
        return self

    def __exit__(self, *exc):
        fcntl.flock(self._fd, fcntl.LOCK_UN)
        os.close(self._fd)
        self._mutex.release()


class Workspace:
    """Filesystem-backed artifact store for pipeline runs."""

    def __init__(self, root: Path | str, clock: Clock = system_clock, actor: str = "engine"):
        self.root = Path(root).resolve()
        self.clock = clock
        self.actor = actor
        self._locks: dict[str, _RunLock] = {}
        self._locks_guard = threading.Lock()

    # -- layout ---------------------------------------------------------

    def run_dir(self, run_id: str) -> Path:
        if not run_id or "/" in run_id or run_id in (".", ".."):
            raise WorkspaceError(f"invalid run id: {run_id!r}")
        return self.root / "runs" / run_id

    def artifact_path(self, run_id: str, kind: ArtifactKind) -> Path:
        return self.run_dir(run_id) / kind.filename

    def run_exists(self, run_id: str) -> bool:
        return self.run_dir(run_id).is_dir()

    def list_runs(self) -> list[str]:
        runs = self.root / "runs"
        if not runs.is_dir():
            return []
        return sorted(p.name for p in runs.iterdir() if p.is_dir())

    def run_lock(self, run_id: str) -> _RunLock:
        key = str(self.run_dir(run_id))
        with self._locks_guard:
            lock = self._locks.get(key)
            if lock is None:
                lock = _RunLock(self.run_dir(run_id) / ".lock")
                self._locks[key] = lock
            return lock

    # -- writes ---------------------------------------------------------

    def write_artifact(self, run_id: str, kind: ArtifactKind, content: bytes) -> ArtifactRef:
        """Atomically persist one artifact and append its audit record."""
        if isinstance(content, str):
            content = content.encode("utf-8")
        final = self.artifact_path(run_id, kind)
        with self.run_lock(run_id):
            try:
                self._replace_file(final, content)
            except OSError as exc:
                raise StorageFailure(f"cannot write {final}: {exc}") from exc
            now = self.clock()
            ref = ArtifactRef(
                run_id=run_id,
                kind=kind,
                path=str(final.relative_to(self.root)),
                content_hash=sha256_hex(content),
                written_at=now,
            )
            self._append_audit_locked(
                run_id,
                AuditRecord(now, self.actor, "write", kind.value, ref.content_hash),
            )
        return ref

    def write_view(self, run_id: str, filename: str, text: str) -> Path:
        """Persist a derived human-readable view (e.g. markdown) alongside
        the structured artifacts. Views are atomic and audit-logged but are
        not tracked as ArtifactRefs; the structured form stays authoritative.
        """
        if "/" in filename:
            raise WorkspaceError(f"invalid view filename: {filename!r}")
        path = self.run_dir(run_id) / filename
        with self.run_lock(run_id):
            self._replace_file(path, text.encode("utf-8"))
            self._append_audit_locked(
                run_id,
                AuditRecord(self.clock(), self.actor, "write_view", filename, ""),
            )
        return path

    def append_line(self, run_id: str, kind: ArtifactKind, record: dict) -> None:
        """Append one structured record to a line-oriented artifact
        (the planning event log). Appends are flushed and fsynced."""
        path = self.artifact_path(run_id, kind)
        line = json.dumps(record, sort_keys=True, ensure_ascii=False)
        with self.run_lock(run_id):
            path.parent.mkdir(parents=True, exist_ok=True)
            with open(path, "a", encoding="utf-8") as fh:
                fh.write(line + "\n")
                fh.flush()
                os.fsync(fh.fileno())
            self._append_audit_locked(
                run_id,
                AuditRecord(self.clock(), self.actor, "append", kind.value, str(record.get("event", ""))),
            )

    def append_view_line(self, run_id: str, filename: str, line: str) -> None:
        """Append one line to a derived log-style view (agent transcripts)."""
        if "/" in filename:
            raise WorkspaceError(f"invalid view filename: {filename!r}")
        path = self.run_dir(run_id) / filename
        with self.run_lock(run_id):
            path.parent.mkdir(parents=True, exist_ok=True)
            with open(path, "a", encoding="utf-8") as fh:
                fh.write(line.rstrip("\n") + "\n")
                fh.flush()
                os.fsync(fh.fileno())

    def append_audit(self, run_id: str, action: str, kind: str, detail: str = "") -> None:
        with self.run_lock(run_id):
            self._append_audit_locked(
                run_id, AuditRecord(self.clock(), self.actor, action, kind, detail)
            )

    def _append_audit_locked(self, run_id: str, record: AuditRecord) -> None:
        path = self.run_dir(run_id) / "audit.log"
        path.parent.mkdir(parents=True, exist_ok=True)
        with open(path, "a", encoding="utf-8") as fh:
            fh.write(json.dumps(record.to_dict(), sort_keys=True, ensure_ascii=False) + "\n")
            fh.flush()
            os.fsync(fh.fileno())

    def _replace_file(self, final: Path, content: bytes) -> None:
        """write-to-temporary-then-rename; the crash window never exposes a
        partial file to readers."""
        final.parent.mkdir(parents=True, exist_ok=True)
        tmp = final.with_name(final.name + ".tmp")
        self._write_temp(tmp, content)
        self._rename_temp(tmp, final)

    # Split out so fault-injection tests can crash at either boundary.
    def _write_temp(self, tmp: Path, content: bytes) -> None:
        with open(tmp, "wb") as fh:
            fh.write(content)
            fh.flush()
            os.fsync(fh.fileno())

    def _rename_temp(self, tmp: Path, final: Path) -> None:
        os.replace(tmp, final)

    # -- reads ----------------------------------------------------------

    def read_artifact(self, ref_or_run_id: ArtifactRef | str, kind: ArtifactKind | None = None) -> bytes:
        """Read artifact bytes, by explicit ref (hash-verified) or by
        (run_id, kind)."""
        if isinstance(ref_or_run_id, ArtifactRef):
            ref = ref_or_run_id
            path = self.root / ref.path
            if not path.is_file():
                raise NotFound(f"no artifact at {ref.path}")
            data = path.read_bytes()
            if sha256_hex(data) != ref.content_hash:
                raise HashMismatch(f"content hash mismatch for {ref.path}")
            return data
        if kind is None:
            raise TypeError("kind required when reading by run id")
        path = self.artifact_path(ref_or_run_id, kind)
        if not path.is_file():
            raise NotFound(f"run {ref_or_run_id!r} has no {kind.value} artifact")
        return path.read_bytes()

    def read_json(self, run_id: str, kind: ArtifactKind):
        return json.loads(self.read_artifact(run_id, kind).decode("utf-8"))

    def has_artifact(self, run_id: str, kind: ArtifactKind) -> bool:
        return self.artifact_path(run_id, kind).is_file()

    def resolve_ref_path(self, run_id: str, ref_path: str) -> bool:
        """True when a workspace-relative path names an existing file inside
        the run directory (the planning protocol's notion of 'persisted')."""
        try:
            candidate = (self.root / ref_path).resolve()
            candidate.relative_to(self.run_dir(run_id).resolve())
        except (ValueError, OSError):
            return False
        return candidate.is_file()

    def iter_audit(self, run_id: str) -> Iterator[dict]:
        path = self.run_dir(run_id) / "audit.log"
        if not path.is_file():
            return
        with open(path, encoding="utf-8") as fh:
            for line in fh:
                line = line.strip()
                if line:
                    yield json.loads(line)

    def list_run_artifacts(self, run_id: str) -> list[ArtifactRef]:
        """Current refs for a run, sorted by written_at then kind.

        written_at and the authoritative hash come from the last audit write
        record whose hash still matches the bytes on disk; a write that lost
        its audit record to a crash falls back to the file mtime.
        """
        run_dir = self.run_dir(run_id)
        if not run_dir.is_dir():
            raise NoSuchRun(f"no run directory for {run_id!r}")
        last_write: dict[str, dict] = {}
        last_touch: dict[str, dict] = {}
        for record in self.iter_audit(run_id):
            if record.get("action") == "write":
                last_write[record["kind"]] = record
            if record.get("action") in ("write", "append"):
                last_touch[record["kind"]] = record
        refs = []
        for kind in ArtifactKind:
            path = run_dir / kind.filename
            if not path.is_file():
                continue
            data = path.read_bytes()
            digest = sha256_hex(data)
            audit = last_write.get(kind.value)
            touch = last_touch.get(kind.value)
            if audit is not None and audit["detail"] == digest:
                written_at = float(audit["timestamp"])
            elif touch is not None:
                written_at = float(touch["timestamp"])
            else:
                written_at = path.stat().st_mtime
            refs.append(
                ArtifactRef(
                    run_id=run_id,
                    kind=kind,
                    path=str(path.relative_to(self.root)),
                    content_hash=digest,
                    written_at=written_at,
                )
            )
        refs.sort(key=lambda r: (r.written_at, r.kind.value))
        return refs
