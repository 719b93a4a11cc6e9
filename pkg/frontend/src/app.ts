// Application entry point: wires the API client, results table, tabs,
// trace view, inline editing, and CSV download into the static page.

import { ApiClient, ApiRequestError } from "./api.js";
import { downloadCsv } from "./csv.js";
import { submitEdit } from "./edit.js";
import { flattenRecords, paginate, sortRows, summarize, type RecordRow, type SortKey } from "./format.js";
import { panesForTrace, renderTraceView } from "./trace.js";
import { renderRecordsTable, renderRejected, renderUnmatched } from "./table.js";
import type { ResultsPayload } from "./types.js";

const PAGE_SIZE = 25;
// The demo corpus renders pages at this size; real deployments read the size
// from the loaded image element once it arrives.
const DEFAULT_PAGE = { width: 360, height: 240 };

interface AppState {
  jobId: string | null;
  results: ResultsPayload | null;
  sortKey: SortKey;
  descending: boolean;
  page: number;
  tab: "records" | "unmatched" | "rejected";
}

export function startApp(
  root: HTMLElement,
  client: ApiClient,
  initialJobId?: string | null,
): { refresh: () => Promise<void> } {
  const state: AppState = {
    jobId: initialJobId ?? new URLSearchParams(window.location.search).get("job"),
    results: null,
    sortKey: "doc",
    descending: false,
    page: 0,
    tab: "records",
  };

  root.innerHTML = `
    <header>
      <h1>SAR extraction review</h1>
      <form id="submit-form">
        <input id="corpus-dir" placeholder="corpus directory on the server" size="40" />
        <input id="oracle-path" placeholder="fixture oracle (optional)" size="30" />
        <button type="submit">run extraction</button>
      </form>
      <form id="job-form">
        <input id="job-id" placeholder="job id" size="20" />
        <button type="submit">open</button>
      </form>
    </header>
    <div id="banner" class="banner" hidden></div>
    <div id="summary"></div>
    <nav id="tabs">
      <button data-tab="records" class="active">records</button>
      <button data-tab="unmatched">unmatched</button>
      <button data-tab="rejected">rejected</button>
      <button id="download">download CSV</button>
    </nav>
    <div id="pager"></div>
    <main id="content"></main>
    <section id="trace" class="trace"></section>
  `;

  const banner = root.querySelector("#banner") as HTMLElement;
  const summary = root.querySelector("#summary") as HTMLElement;
  const content = root.querySelector("#content") as HTMLElement;
  const traceEl = root.querySelector("#trace") as HTMLElement;
  const pager = root.querySelector("#pager") as HTMLElement;

  function showError(message: string): void {
    banner.hidden = false;
    banner.textContent = message;
  }

  function clearError(): void {
    banner.hidden = true;
    banner.textContent = "";
  }

  async function openTrace(row: RecordRow): Promise<void> {
    if (!state.jobId) return;
    const trace = await client.getTrace(state.jobId, row.recordIndex);
    const panes = panesForTrace(trace, DEFAULT_PAGE.width, DEFAULT_PAGE.height);
    renderTraceView(traceEl, panes, (u) => client.pageImageUrl({ image_url: u }));
  }

  async function editCell(row: RecordRow, cell: HTMLTableCellElement): Promise<void> {
    const column = cell.dataset.column ?? "";
    const current = column === "value" ? String(row.value) : cell.textContent ?? "";
    const raw = window.prompt(`new value for ${column}`, current);
    if (raw === null || !state.jobId) return;
    const outcome = await submitEdit(client, state.jobId, row, column, raw);
    if (!outcome.ok) {
      showError(outcome.message ?? "correction rejected");
      cell.classList.add("invalid");
      return;
    }
    clearError();
    await refresh();
  }

  function renderPager(pageCount: number, total: number): void {
    pager.innerHTML = "";
    if (pageCount <= 1) return;
    for (let i = 0; i < pageCount; i++) {
      const button = document.createElement("button");
      button.textContent = String(i + 1);
      if (i === state.page) button.classList.add("active");
      button.addEventListener("click", () => {
        state.page = i;
        renderAll();
      });
      pager.appendChild(button);
    }
    const label = document.createElement("span");
    label.textContent = ` ${total} rows`;
    pager.appendChild(label);
  }

  function renderAll(): void {
    if (!state.results) return;
    summary.textContent = summarize(state.results);
    if (state.tab === "unmatched") {
      renderUnmatched(content, state.results.unmatched);
      pager.innerHTML = "";
      return;
    }
    if (state.tab === "rejected") {
      renderRejected(content, state.results.rejected);
      pager.innerHTML = "";
      return;
    }
    const rows = sortRows(flattenRecords(state.results.records), state.sortKey, state.descending);
    const page = paginate(rows, state.page, PAGE_SIZE);
    renderRecordsTable(content, page.items, { onTrace: openTrace, onEdit: editCell });
    renderPager(page.pageCount, page.total);
  }

  async function refresh(): Promise<void> {
    if (!state.jobId) return;
    try {
      state.results = await client.getResults(state.jobId);
      clearError();
    } catch (error) {
      // server error codes are surfaced verbatim
      showError(error instanceof ApiRequestError ? `${error.code}: ${error.message}` : String(error));
      return;
    }
    renderAll();
    if (state.results.state === "Queued" || state.results.state === "Running") {
      window.setTimeout(() => void refresh(), 1500);
    }
  }

  (root.querySelector("#tabs") as HTMLElement).addEventListener("click", (event) => {
    const target = event.target as HTMLElement;
    const tab = target.dataset.tab as AppState["tab"] | undefined;
    if (tab) {
      state.tab = tab;
      root.querySelectorAll("#tabs button[data-tab]").forEach((b) => b.classList.remove("active"));
      target.classList.add("active");
      renderAll();
    }
  });

  (root.querySelector("#download") as HTMLElement).addEventListener("click", () => {
    if (!state.jobId || state.results?.state !== "Done") {
      showError("CSV export is available once the job is Done");
      return;
    }
    void downloadCsv(client, state.jobId).catch((error) => showError(String(error)));
  });

  (root.querySelector("#job-form") as HTMLFormElement).addEventListener("submit", (event) => {
    event.preventDefault();
    const input = root.querySelector("#job-id") as HTMLInputElement;
    if (input.value.trim()) {
      state.jobId = input.value.trim();
      state.page = 0;
      void refresh();
    }
  });

  (root.querySelector("#submit-form") as HTMLFormElement).addEventListener("submit", (event) => {
    event.preventDefault();
    const corpus = (root.querySelector("#corpus-dir") as HTMLInputElement).value.trim();
    const oracle = (root.querySelector("#oracle-path") as HTMLInputElement).value.trim();
    if (!corpus) return;
    const body: Record<string, unknown> = { corpus_dir: corpus };
    if (oracle) {
      body.config = { backend_config: { fixture_path: oracle } };
    }
    client
      .submitJob(body)
      .then((job) => {
        state.jobId = job.job_id;
        state.page = 0;
        return refresh();
      })
      .catch((error) => showError(String(error)));
  });

  if (state.jobId) {
    void refresh();
  }
  return { refresh };
}

declare global {
  interface Window {
    __SARLINE_TEST__?: boolean;
  }
}

if (typeof window !== "undefined" && !window.__SARLINE_TEST__) {
  const root = document.getElementById("app");
  if (root) {
    startApp(root, new ApiClient(window.location.origin));
  }
}
