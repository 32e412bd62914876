// Run view derivation. The store never invents state: everything shown is
// a pure projection of run/status + run/artifacts responses, so reloading
// the page (a fresh load) reproduces the identical view.

import { RpcClient } from "./api.js";
import type {
  ArtifactEntry,
  CheckpointRecord,
  RequirementUnderstanding,
  RunArtifactsPayload,
  RunStatusPayload,
  ScheduleDecision,
  TaskNode,
  TaskStatusEvent,
  TaskValidation,
} from "./protocol.js";

export interface BoardNode {
  id: string;
  objective: string;
  taskType: string;
  status: string;
  dependsOn: string[];
  isLeaf: boolean;
  children: BoardNode[];
}

export interface ArtifactRow {
  kind: string;
  path: string;
  contentHash: string;
  writtenAt: number;
  superseded: boolean;
}

export interface RunView {
  runId: string;
  mode: string;
  currentStep: string;
  stepObjective: string;
  isCheckpoint: boolean;
  checkpointPending: boolean;
  terminated: boolean;
  checkpoints: CheckpointRecord[];
  artifacts: ArtifactRow[];
  understanding: RequirementUnderstanding | null;
  revision: number | null;
  board: BoardNode | null;
  schedule: ScheduleDecision | null;
  validation: TaskValidation | null;
}

function toBoardNode(node: TaskNode): BoardNode {
  return {
    id: node.id,
    objective: node.objective,
    taskType: node.task_type,
    status: node.status,
    dependsOn: node.depends_on,
    isLeaf: node.children.length === 0,
    children: node.children.map(toBoardNode),
  };
}

export function deriveView(
  status: RunStatusPayload,
  artifacts: ArtifactEntry[],
): RunView {
  const supersededPaths = new Set(status.superseded.map(([, ref]) => ref));
  const understandingEntry = artifacts.find(
    (a) => a.kind === "requirement_understanding" && a.content !== undefined,
  );
  return {
    runId: status.run_id,
    mode: status.mode,
    currentStep: status.descriptor.step,
    stepObjective: status.descriptor.objective,
    isCheckpoint: status.descriptor.is_checkpoint,
    checkpointPending: status.checkpoint_pending,
    terminated: status.terminated,
    checkpoints: status.checkpoints,
    artifacts: artifacts.map((a) => ({
      kind: a.kind,
      path: a.path,
      contentHash: a.content_hash,
      writtenAt: a.written_at,
      superseded: supersededPaths.has(a.path),
    })),
    understanding: understandingEntry
      ? (understandingEntry.content as RequirementUnderstanding)
      : null,
    revision: status.task_ir ? status.task_ir.revision : null,
    board: status.task_ir ? toBoardNode(status.task_ir.root) : null,
    schedule: status.schedule ?? null,
    validation: status.task_validation ?? null,
  };
}

export class RunStore {
  view: RunView | null = null;

  constructor(private client: RpcClient) {}

  /** Fetch the authoritative state and derive the view from it alone. */
  async load(runId: string): Promise<RunView> {
    const status = await this.client.call<RunStatusPayload>("run/status", { run_id: runId });
    const artifacts = await this.client.call<RunArtifactsPayload>("run/artifacts", {
      run_id: runId,
      include_content: true,
    });
    this.view = deriveView(status, artifacts.artifacts);
    return this.view;
  }

  /**
   * Fast-path chip update from a task_status event. Ancestor and schedule
   * state stay server-owned; callers follow up with load() to reconcile.
   */
  applyTaskStatus(event: TaskStatusEvent): boolean {
    if (!this.view || !this.view.board || event.run_id !== this.view.runId) return false;
    const node = findNode(this.view.board, event.task_id);
    if (!node) return false;
    node.status = event.status;
    this.view.revision = event.revision;
    if (this.view.schedule) this.view.schedule.done = event.done;
    return true;
  }
}

export function findNode(root: BoardNode, id: string): BoardNode | null {
  if (root.id === id) return root;
  for (const child of root.children) {
    const found = findNode(child, id);
    if (found) return found;
  }
  return null;
}
