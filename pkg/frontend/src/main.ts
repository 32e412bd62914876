// Browser entry point: wires the store, the SSE stream and the decision
// actions to the DOM. Every mutation goes through a capability-server
// method; the view re-derives from server responses after each one.

import { EventStream, RpcClient, RpcError } from "./api.js";
import type { RequirementUnderstanding, TaskStatusEvent } from "./protocol.js";
import { RunStore } from "./state.js";
import { renderRun } from "./views.js";

const params = new URLSearchParams(window.location.search);
const serverBase = params.get("server") ?? "http://127.0.0.1:8787";
const client = new RpcClient(serverBase);
const store = new RunStore(client);

let stream: EventStream | null = null;
let editing = false;

const app = document.getElementById("app") as HTMLElement;
const runInput = document.getElementById("run-id") as HTMLInputElement;
const loadButton = document.getElementById("load") as HTMLButtonElement;
const operatorInput = document.getElementById("operator") as HTMLInputElement;

function render(): void {
  if (!store.view) return;
  app.innerHTML = renderRun(store.view, editing);
}

function setStreamState(state: string): void {
  const el = document.getElementById("stream-state");
  if (el) {
    el.textContent = state === "open" ? "live" : state;
    el.className = `stream-state ${state}`;
  }
}

async function loadRun(runId: string): Promise<void> {
  editing = false;
  await store.load(runId);
  render();
  stream?.stop();
  stream = new EventStream(serverBase, runId, {
    onEvent: (name, payload) => {
      if (name === "task_status") {
        if (store.applyTaskStatus(payload as TaskStatusEvent)) render();
        void store.load(runId).then(render); // reconcile derived state
      } else if (name === "checkpoint") {
        void store.load(runId).then(render);
      }
    },
    onState: setStreamState,
  });
  stream.start();
}

async function decide(decision: "approved" | "rejected", note: string): Promise<void> {
  const view = store.view;
  if (!view) return;
  await client.call("plan/checkpoint", {
    run_id: view.runId,
    step: view.currentStep,
    decision,
    decided_by: operatorInput.value || "operator",
    note: note || null,
  });
  await store.load(view.runId);
  render();
}

function collectEdits(): RequirementUnderstanding | null {
  const view = store.view;
  if (!view?.understanding) return null;
  const edited: RequirementUnderstanding = JSON.parse(JSON.stringify(view.understanding));
  for (const row of app.querySelectorAll<HTMLElement>(".unit.editable")) {
    const unitId = row.dataset["unitId"];
    const unit = edited.units.find((u) => u.unit_id === unitId);
    if (!unit) continue;
    unit.entity_name = (row.querySelector(".edit-entity") as HTMLInputElement).value;
    unit.category = (row.querySelector(".edit-category") as HTMLSelectElement).value;
    unit.logic_description = (row.querySelector(".edit-logic") as HTMLInputElement).value;
  }
  return edited;
}

async function applyEdits(note: string): Promise<void> {
  const view = store.view;
  const edited = collectEdits();
  if (!view || !edited) return;
  await client.call("plan/checkpoint", {
    run_id: view.runId,
    step: view.currentStep,
    decision: "edited",
    decided_by: operatorInput.value || "operator",
    note: note || null,
    content: edited,
  });
  editing = false;
  await store.load(view.runId);
  render();
}

app.addEventListener("click", (event) => {
  const target = event.target as HTMLElement;
  const action = target.dataset["action"];
  if (!action) return;
  const note = (document.getElementById("note") as HTMLInputElement | null)?.value ?? "";
  const fail = (err: unknown) => {
    const box = document.getElementById("checkpoint-error");
    if (box) box.textContent = err instanceof RpcError ? `server error: ${err.message}` : String(err);
  };
  if (action === "approve") void decide("approved", note).catch(fail);
  else if (action === "reject") {
    if (!note) return fail(new Error("rejection requires a note"));
    void decide("rejected", note).catch(fail);
  } else if (action === "edit") {
    editing = true;
    render();
  } else if (action === "cancel-edit") {
    editing = false;
    render();
  } else if (action === "apply-edits") void applyEdits(note).catch(fail);
});

loadButton.addEventListener("click", () => {
  const runId = runInput.value.trim();
  if (runId) {
    void loadRun(runId).catch((err) => {
      app.innerHTML = `<p class="error">${err instanceof Error ? err.message : String(err)}</p>`;
    });
  }
});

const initialRun = params.get("run");
if (initialRun) {
  runInput.value = initialRun;
  void loadRun(initialRun);
}
