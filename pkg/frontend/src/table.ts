// DOM rendering for the results table and the unmatched/rejected tabs.

import type { RecordRow } from "./format.js";
import type { RejectedEntry, UnmatchedEntry } from "./types.js";

export interface RowHandlers {
  onTrace?: (row: RecordRow) => void;
  onEdit?: (row: RecordRow, cell: HTMLTableCellElement) => void;
}

const COLUMNS: [string, (row: RecordRow) => string][] = [
  ["doc", (r) => r.docId],
  ["coref", (r) => r.corefId],
  ["smiles", (r) => r.smiles],
  ["attribute", (r) => r.attribute],
  ["value", (r) => `${r.qualifier}${r.value}`],
  ["unit", (r) => r.unit],
  ["tier", (r) => r.matchTier],
  ["similarity", (r) => r.matchSimilarity.toFixed(3)],
  ["pages", (r) => (r.moleculePage === r.tablePage ? `p${r.moleculePage + 1}` : `p${r.moleculePage + 1}→p${r.tablePage + 1}`)],
];

export function renderRecordsTable(container: HTMLElement, rows: RecordRow[], handlers: RowHandlers = {}): void {
  const table = document.createElement("table");
  table.className = "records";
  const head = document.createElement("tr");
  for (const [name] of COLUMNS) {
    const th = document.createElement("th");
    th.textContent = name;
    head.appendChild(th);
  }
  head.appendChild(document.createElement("th")); // status / actions column
  table.appendChild(head);
  for (const row of rows) {
    const tr = document.createElement("tr");
    tr.dataset.recordIndex = String(row.recordIndex);
    tr.dataset.activityIndex = String(row.activityIndex);
    for (const [name, cell] of COLUMNS) {
      const td = document.createElement("td");
      td.dataset.column = name;
      td.textContent = cell(row);
      if ((name === "smiles" || name === "coref" || name === "value" || name === "unit") && handlers.onEdit) {
        td.classList.add("editable");
        td.addEventListener("click", () => handlers.onEdit?.(row, td));
      }
      tr.appendChild(td);
    }
    const status = document.createElement("td");
    if (row.edited) {
      const badge = document.createElement("span");
      badge.className = "badge badge-edited";
      badge.textContent = "edited";
      status.appendChild(badge);
    }
    if (row.matchTier === "Fuzzy") {
      const badge = document.createElement("span");
      badge.className = "badge badge-fuzzy";
      badge.textContent = `fuzzy ${row.matchSimilarity.toFixed(2)}`;
      status.appendChild(badge);
    }
    for (const flag of row.qcFlags) {
      const badge = document.createElement("span");
      badge.className = "badge badge-flag";
      badge.textContent = flag.split(":")[0] ?? flag;
      badge.title = flag;
      status.appendChild(badge);
    }
    if (handlers.onTrace) {
      const traceButton = document.createElement("button");
      traceButton.className = "trace-button";
      traceButton.textContent = "trace";
      traceButton.addEventListener("click", () => handlers.onTrace?.(row));
      status.appendChild(traceButton);
    }
    tr.appendChild(status);
    table.appendChild(tr);
  }
  container.replaceChildren(table);
}

export function renderUnmatched(container: HTMLElement, entries: UnmatchedEntry[]): void {
  const list = document.createElement("table");
  list.className = "unmatched";
  const head = document.createElement("tr");
  for (const name of ["doc", "region", "coref", "reason"]) {
    const th = document.createElement("th");
    th.textContent = name;
    head.appendChild(th);
  }
  list.appendChild(head);
  for (const entry of entries) {
    const tr = document.createElement("tr");
    for (const value of [entry.doc_id, entry.region_id, entry.coref_id ?? "—", entry.reason]) {
      const td = document.createElement("td");
      td.textContent = value;
      tr.appendChild(td);
    }
    list.appendChild(tr);
  }
  container.replaceChildren(list);
}

export function renderRejected(container: HTMLElement, entries: RejectedEntry[]): void {
  const list = document.createElement("table");
  list.className = "rejected";
  const head = document.createElement("tr");
  for (const name of ["doc", "coref", "smiles", "reason"]) {
    const th = document.createElement("th");
    th.textContent = name;
    head.appendChild(th);
  }
  list.appendChild(head);
  for (const entry of entries) {
    const tr = document.createElement("tr");
    for (const value of [entry.doc_id, entry.record.coref_id, entry.record.smiles, entry.reason]) {
      const td = document.createElement("td");
      td.textContent = value;
      tr.appendChild(td);
    }
    list.appendChild(tr);
  }
  container.replaceChildren(list);
}
