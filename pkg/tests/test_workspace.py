from __future__ import annotations

import pytest

from forgeline.workspace import (
    ArtifactKind,
    HashMismatch,
    NoSuchRun,
    NotFound,
    Workspace,
    sha256_hex,
)


def test_write_then_read_round_trips(workspace):
    ref = workspace.write_artifact("r1", ArtifactKind.DESIGN_IR, b'{"a": 1}\n')
    assert workspace.read_artifact(ref) == b'{"a": 1}\n'
    assert ref.content_hash == sha256_hex(b'{"a": 1}\n')
    assert ref.path == "runs/r1/design_ir.json"


def test_read_by_run_and_kind(workspace):
    workspace.write_artifact("r1", ArtifactKind.TASK_IR, b"x")
    assert workspace.read_artifact("r1", ArtifactKind.TASK_IR) == b"x"


def test_missing_artifact_raises_not_found(workspace):
    workspace.write_artifact("r1", ArtifactKind.TASK_IR, b"x")
    with pytest.raises(NotFound):
        workspace.read_artifact("r1", ArtifactKind.DESIGN_IR)


def test_second_write_supersedes_and_both_are_audited(workspace):
    workspace.write_artifact("r1", ArtifactKind.TASK_IR, b"v1")
    workspace.write_artifact("r1", ArtifactKind.TASK_IR, b"v2")
    assert workspace.read_artifact("r1", ArtifactKind.TASK_IR) == b"v2"
    writes = [r for r in workspace.iter_audit("r1") if r["action"] == "write"]
    assert len(writes) == 2
    assert writes[0]["detail"] == sha256_hex(b"v1")
    assert writes[1]["detail"] == sha256_hex(b"v2")


def test_tampering_is_detected_by_hash(workspace):
    ref = workspace.write_artifact("r1", ArtifactKind.TASK_IR, b"payload")
    path = workspace.root / ref.path
    data = bytearray(path.read_bytes())
    data[0] ^= 0xFF
    path.write_bytes(bytes(data))
    with pytest.raises(HashMismatch):
        workspace.read_artifact(ref)


def test_crash_between_temp_and_rename_keeps_prior_version(workspace, monkeypatch):
    workspace.write_artifact("r1", ArtifactKind.TASK_IR, b"v1")

    def crash(tmp, final):
        raise RuntimeError("injected crash before rename")

    monkeypatch.setattr(workspace, "_rename_temp", crash)
    with pytest.raises(Exception):
        workspace.write_artifact("r1", ArtifactKind.TASK_IR, b"v2")
    monkeypatch.undo()
    assert workspace.read_artifact("r1", ArtifactKind.TASK_IR) == b"v1"


def test_every_successful_write_has_exactly_one_audit_record(workspace):
    for i in range(5):
        workspace.write_artifact("r1", ArtifactKind.PLAN_STATE, f"v{i}".encode())
    writes = [r for r in workspace.iter_audit("r1") if r["action"] == "write"]
    assert len(writes) == 5


def test_list_run_artifacts_sorted_and_complete(workspace, fixed_clock):
    workspace.write_artifact("r1", ArtifactKind.DESIGN_IR, b"a")
    fixed_clock.epoch += 1
    workspace.write_artifact("r1", ArtifactKind.COMPONENT_SET, b"b")
    fixed_clock.epoch += 1
    workspace.write_artifact("r1", ArtifactKind.TASK_IR, b"c")
    refs = workspace.list_run_artifacts("r1")
    assert [r.kind for r in refs] == [
        ArtifactKind.DESIGN_IR,
        ArtifactKind.COMPONENT_SET,
        ArtifactKind.TASK_IR,
    ]
    assert [r.written_at for r in refs] == sorted(r.written_at for r in refs)


def test_list_artifacts_fresh_and_unknown_run(workspace):
    (workspace.run_dir("fresh")).mkdir(parents=True)
    assert workspace.list_run_artifacts("fresh") == []
    with pytest.raises(NoSuchRun):
        workspace.list_run_artifacts("nope")


def test_resolve_ref_path_stays_inside_run_dir(workspace):
    ref = workspace.write_artifact("r1", ArtifactKind.TASK_IR, b"x")
    assert workspace.resolve_ref_path("r1", ref.path)
    assert not workspace.resolve_ref_path("r1", "runs/r1/missing.json")
    assert not workspace.resolve_ref_path("r1", "../outside.json")
    workspace.write_artifact("r2", ArtifactKind.TASK_IR, b"y")
    assert not workspace.resolve_ref_path("r1", "runs/r2/task_ir.json")


def test_append_view_line(workspace):
    workspace.append_view_line("r1", "agent_transcript.log", "line one")
    workspace.append_view_line("r1", "agent_transcript.log", "line two")
    text = (workspace.run_dir("r1") / "agent_transcript.log").read_text()
    assert text == "line one\nline two\n"
