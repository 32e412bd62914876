// HTML renderers: pure functions from the derived RunView to markup.
// Interaction wiring (data-action attributes) lives in main.ts.

import type { LogicUnit, RequirementUnderstanding } from "./protocol.js";
import { TAXONOMY } from "./protocol.js";
import type { BoardNode, RunView } from "./state.js";

export function escapeHtml(text: string): string {
  return text
    .replace(/&/g, "&amp;")
    .replace(/</g, "&lt;")
    .replace(/>/g, "&gt;")
    .replace(/"/g, "&quot;")
    .replace(/'/g, "&#39;");
}

export function renderHeader(view: RunView): string {
  const badge = view.terminated
    ? `<span class="badge done">terminated</span>`
    : view.checkpointPending
      ? `<span class="badge pending">checkpoint pending</span>`
      : `<span class="badge">in progress</span>`;
  return `
    <div class="run-header">
      <h2>${escapeHtml(view.runId)}</h2>
      <div class="meta">
        mode <code>${escapeHtml(view.mode)}</code>
        &middot; step <code>${escapeHtml(view.currentStep)}</code>
        ${badge}
      </div>
      <p class="objective">${escapeHtml(view.stepObjective)}</p>
    </div>`;
}

function renderUnit(unit: LogicUnit, editable: boolean): string {
  const anchor = unit.anchor
    ? ` <span class="anchor" title="anchored component">@ ${escapeHtml(unit.anchor)}</span>`
    : "";
  const relations = unit.relations
    .map(
      (r) =>
        `<li class="relation">&rarr; ${escapeHtml(r.target)}: ${escapeHtml(r.description)}</li>`,
    )
    .join("");
  const notes = unit.context_notes
    ? `<div class="notes">${escapeHtml(unit.context_notes)}</div>`
    : "";
  if (!editable) {
    return `
      <li class="unit" data-unit-id="${escapeHtml(unit.unit_id)}">
        <strong>${escapeHtml(unit.entity_name)}</strong>${anchor}
        <span class="logic">${escapeHtml(unit.logic_description)}</span>
        ${relations ? `<ul>${relations}</ul>` : ""}${notes}
      </li>`;
  }
  const options = TAXONOMY.map(
    (c) =>
      `<option value="${c.key}"${c.key === unit.category ? " selected" : ""}>${escapeHtml(
        c.displayName,
      )}</option>`,
  ).join("");
  return `
    <li class="unit editable" data-unit-id="${escapeHtml(unit.unit_id)}">
      <input class="edit-entity" value="${escapeHtml(unit.entity_name)}" aria-label="entity name">
      <select class="edit-category" aria-label="category">${options}</select>
      <input class="edit-logic" value="${escapeHtml(unit.logic_description)}" aria-label="logic">
    </li>`;
}

export function renderCheckpointPanel(view: RunView, editing: boolean): string {
  if (!view.checkpointPending) return "";
  const understanding = view.understanding;
  let body = "";
  if (view.currentStep === "REQUIREMENT_UNDERSTANDING" && understanding) {
    body = renderUnitsByCategory(understanding, editing);
  } else {
    body = `<p>Artifact for <code>${escapeHtml(view.currentStep)}</code> awaits review.</p>`;
  }
  const editControls = editing
    ? `<button data-action="apply-edits" class="primary">apply edits &amp; approve</button>
       <button data-action="cancel-edit">cancel</button>`
    : `<button data-action="approve" class="primary">approve</button>
       <button data-action="reject">reject</button>
       <button data-action="edit">edit</button>`;
  return `
    <section class="checkpoint" data-step="${escapeHtml(view.currentStep)}">
      <h3>Checkpoint: ${escapeHtml(view.currentStep)}</h3>
      ${body}
      <div class="decision-bar">
        <input id="note" placeholder="note (required for reject)" aria-label="decision note">
        ${editControls}
      </div>
      <div class="error" id="checkpoint-error"></div>
    </section>`;
}

function renderUnitsByCategory(
  understanding: RequirementUnderstanding,
  editing: boolean,
): string {
  const groups = TAXONOMY.map(({ key, displayName }) => {
    const units = understanding.units.filter((u) => u.category === key);
    if (units.length === 0) return "";
    return `
      <div class="category">
        <h4>${escapeHtml(displayName)} <span class="count">${units.length}</span></h4>
        <ul>${units.map((u) => renderUnit(u, editing)).join("")}</ul>
      </div>`;
  }).join("");
  const warnings = understanding.warnings.length
    ? `<div class="warnings">${understanding.warnings.map((w) => escapeHtml(w)).join("<br>")}</div>`
    : "";
  return `<div class="understanding" data-status="${understanding.status}">${groups}${warnings}</div>`;
}

export function renderArtifacts(view: RunView): string {
  if (view.artifacts.length === 0) return `<section class="artifacts"><h3>Artifacts</h3><p>none yet</p></section>`;
  const rows = view.artifacts
    .map(
      (a) => `
      <tr class="${a.superseded ? "superseded" : ""}">
        <td><code>${escapeHtml(a.kind)}</code>${a.superseded ? ' <span class="badge warn">superseded</span>' : ""}</td>
        <td class="path">${escapeHtml(a.path)}</td>
        <td class="hash" title="${escapeHtml(a.contentHash)}">${escapeHtml(a.contentHash.slice(0, 12))}</td>
      </tr>`,
    )
    .join("");
  return `
    <section class="artifacts">
      <h3>Artifacts</h3>
      <table><thead><tr><th>kind</th><th>path</th><th>hash</th></tr></thead><tbody>${rows}</tbody></table>
    </section>`;
}

function renderBoardNode(node: BoardNode): string {
  const after = node.dependsOn.length
    ? `<span class="deps">after ${node.dependsOn.map(escapeHtml).join(", ")}</span>`
    : "";
  const chip = `<span class="chip ${node.status}" data-task-id="${escapeHtml(node.id)}">${escapeHtml(
    node.status,
  )}</span>`;
  const children = node.children.length
    ? `<ul>${node.children.map((c) => `<li>${renderBoardNode(c)}</li>`).join("")}</ul>`
    : "";
  return `
    <div class="task ${node.isLeaf ? "leaf" : "group"}">
      ${chip}
      <span class="task-id">${escapeHtml(node.id)}</span>
      <span class="objective">${escapeHtml(node.objective)}</span>
      ${after}
    </div>${children}`;
}

export function renderBoard(view: RunView): string {
  if (view.validation && !view.validation.ok) {
    const errors = view.validation.errors
      .map(
        (e) =>
          `<li class="validation-error" data-code="${escapeHtml(e.code)}">
            ${escapeHtml(e.message)}
            <code>${e.node_ids.map(escapeHtml).join(", ")}</code>
          </li>`,
      )
      .join("");
    return `
      <section class="board invalid">
        <h3>Task board</h3>
        <p class="error">Task IR failed validation; scheduling is disabled.</p>
        <ul>${errors}</ul>
      </section>`;
  }
  if (!view.board) {
    return `<section class="board"><h3>Task board</h3><p>no task IR yet</p></section>`;
  }
  const banner = view.schedule?.done
    ? `<div class="banner done" id="board-banner">done</div>`
    : view.schedule && view.schedule.next === null && view.schedule.blocked.length
      ? `<div class="banner blocked" id="board-banner">blocked: ${view.schedule.blocked
          .map(escapeHtml)
          .join(", ")}</div>`
      : "";
  return `
    <section class="board">
      <h3>Task board <span class="revision">rev ${view.revision}</span>
        <span id="stream-state" class="stream-state"></span></h3>
      ${banner}
      ${renderBoardNode(view.board)}
    </section>`;
}

export function renderRun(view: RunView, editing: boolean): string {
  return [
    renderHeader(view),
    renderCheckpointPanel(view, editing),
    renderBoard(view),
    renderArtifacts(view),
  ].join("\n");
}
