// Wire types for the capability protocol (docs/protocol.md in the engine
// repo). The console speaks only /rpc and /events; it holds no state the
// server does not report.

export interface RequestFrame {
  id: number;
  kind: "request";
  method: string;
  payload: unknown;
}

export interface ResponseFrame {
  id: number;
  kind: "response";
  method: string;
  payload?: unknown;
  error?: { code: number; message: string };
}

export type CheckpointDecision = "approved" | "rejected" | "edited";

export interface StepDescriptor {
  step: string;
  objective: string;
  required_inputs: string[];
  produces: string;
  is_checkpoint: boolean;
  done: boolean;
}

export interface CheckpointRecord {
  step: string;
  decision: CheckpointDecision;
  decided_by: string;
  timestamp: number;
  note: string | null;
}

export interface TaskNode {
  id: string;
  objective: string;
  context: string | null;
  task_type: string;
  status: "pending" | "in_progress" | "completed" | "failed";
  depends_on: string[];
  children: TaskNode[];
}

export interface TaskIr {
  run_id: string;
  revision: number;
  root: TaskNode;
}

export interface ScheduleDecision {
  next: string | null;
  blocked: string[];
  done: boolean;
}

export interface TaskValidation {
  ok: boolean;
  errors: { code: string; message: string; node_ids: string[] }[];
}

export interface RunStatusPayload {
  run_id: string;
  mode: string;
  descriptor: StepDescriptor;
  terminated: boolean;
  checkpoint_pending: boolean;
  step_artifacts: Record<string, string>;
  checkpoints: CheckpointRecord[];
  superseded: [string, string][];
  task_ir?: TaskIr;
  task_validation?: TaskValidation;
  schedule?: ScheduleDecision;
}

export interface ArtifactEntry {
  run_id: string;
  kind: string;
  path: string;
  content_hash: string;
  written_at: number;
  content?: unknown;
}

export interface RunArtifactsPayload {
  run_id: string;
  artifacts: ArtifactEntry[];
}

export interface LogicUnit {
  unit_id: string;
  entity_name: string;
  category: string;
  logic_description: string;
  anchor: string | null;
  relations: { target: string; description: string }[];
  context_notes: string | null;
}

export interface RequirementUnderstanding {
  prd_id: string;
  status: "draft" | "confirmed";
  units: LogicUnit[];
  confirmation: { decided_by: string; timestamp: number; edits_applied: number } | null;
  warnings: string[];
}

export interface TaskStatusEvent {
  run_id: string;
  task_id: string;
  status: string;
  revision: number;
  done: boolean;
}

export const TAXONOMY: { key: string; displayName: string }[] = [
  { key: "InputControl", displayName: "Input Controls" },
  { key: "FunctionalButton", displayName: "Functional Button Controls" },
  { key: "OverlayPanel", displayName: "Overlay Panel Controls" },
  { key: "NavigationFramework", displayName: "Navigation Bar and Page Framework Controls" },
  { key: "ContentDisplay", displayName: "Content Display Controls" },
  { key: "ListSelection", displayName: "List Selection Controls" },
  { key: "AdditionalLogicCondition", displayName: "Additional Logic Control Conditions" },
];
