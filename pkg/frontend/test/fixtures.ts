import type {
  ArtifactEntry,
  RequirementUnderstanding,
  RunStatusPayload,
} from "../src/protocol.js";

export function sampleUnderstanding(): RequirementUnderstanding {
  return {
    prd_id: "prd-1",
    status: "draft",
    units: [
      {
        unit_id: "u-001",
        entity_name: "search bar",
        category: "InputControl",
        logic_description: "filters the emoji grid while typing",
        anchor: "SearchField",
        relations: [{ target: "emoji grid", description: "filters" }],
        context_notes: null,
      },
      {
        unit_id: "u-002",
        entity_name: "send button",
        category: "FunctionalButton",
        logic_description: "submits the selection",
        anchor: null,
        relations: [],
        context_notes: "secondary role: haptic feedback",
      },
    ],
    confirmation: null,
    warnings: [],
  };
}

export function sampleStatus(): RunStatusPayload {
  return {
    run_id: "run-1",
    mode: "full_coding",
    descriptor: {
      step: "REQUIREMENT_UNDERSTANDING",
      objective: "Decompose the PRD into validated, UI-anchored logic units",
      required_inputs: ["retrieval_context"],
      produces: "requirement_understanding",
      is_checkpoint: true,
      done: false,
    },
    terminated: false,
    checkpoint_pending: true,
    step_artifacts: {
      INTAKE: "runs/run-1/intake_manifest.json",
      REQUIREMENT_UNDERSTANDING: "runs/run-1/requirement_understanding.json",
    },
    checkpoints: [],
    superseded: [["REQUIREMENT_UNDERSTANDING", "runs/run-1/old.json"]],
  };
}

export function sampleArtifacts(): ArtifactEntry[] {
  return [
    {
      run_id: "run-1",
      kind: "intake_manifest",
      path: "runs/run-1/intake_manifest.json",
      content_hash: "aa".repeat(32),
      written_at: 1,
    },
    {
      run_id: "run-1",
      kind: "requirement_understanding",
      path: "runs/run-1/requirement_understanding.json",
      content_hash: "bb".repeat(32),
      written_at: 2,
      content: sampleUnderstanding(),
    },
    {
      run_id: "run-1",
      kind: "design_ir",
      path: "runs/run-1/old.json",
      content_hash: "cc".repeat(32),
      written_at: 0,
    },
  ];
}

export function boardStatus(): RunStatusPayload {
  return {
    ...sampleStatus(),
    descriptor: {
      step: "DONE",
      objective: "Planning complete",
      required_inputs: [],
      produces: "",
      is_checkpoint: false,
      done: true,
    },
    terminated: true,
    checkpoint_pending: false,
    superseded: [],
    task_ir: {
      run_id: "run-1",
      revision: 1,
      root: {
        id: "root",
        objective: "implement",
        context: null,
        task_type: "interaction_logic",
        status: "pending",
        depends_on: [],
        children: [
          {
            id: "A",
            objective: "first leaf",
            context: null,
            task_type: "ui_layout",
            status: "completed",
            depends_on: [],
            children: [],
          },
          {
            id: "B",
            objective: "second leaf",
            context: null,
            task_type: "interaction_logic",
            status: "pending",
            depends_on: ["A"],
            children: [],
          },
        ],
      },
    },
    task_validation: { ok: true, errors: [] },
    schedule: { next: "B", blocked: [], done: false },
  };
}
