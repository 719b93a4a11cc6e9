// Geometry for the traceability view: page panes with highlight overlays.
// Overlay rectangles are expressed as percentages of the rendered page image
// so they survive any display scaling.

import type { TraceAnchor, TracePayload } from "./types.js";

export interface OverlayRect {
  leftPct: number;
  topPct: number;
  widthPct: number;
  heightPct: number;
  kind: "molecule" | "table";
  rowIndex?: number;
}

export interface Pane {
  pageIndex: number;
  imageUrl: string;
  overlays: OverlayRect[];
}

export function overlayRect(
  anchor: TraceAnchor,
  pageWidth: number,
  pageHeight: number,
  kind: OverlayRect["kind"],
): OverlayRect {
  const rect: OverlayRect = {
    leftPct: (anchor.bbox.x / pageWidth) * 100,
    topPct: (anchor.bbox.y / pageHeight) * 100,
    widthPct: (anchor.bbox.w / pageWidth) * 100,
    heightPct: (anchor.bbox.h / pageHeight) * 100,
    kind,
  };
  if (anchor.row_index !== undefined) {
    rect.rowIndex = anchor.row_index;
  }
  return rect;
}

/** One pane for same-page records, two side-by-side panes across pages. */
export function panesForTrace(trace: TracePayload, pageWidth: number, pageHeight: number): Pane[] {
  const molecule = overlayRect(trace.molecule, pageWidth, pageHeight, "molecule");
  const table = overlayRect(trace.table, pageWidth, pageHeight, "table");
  if (trace.molecule.page_index === trace.table.page_index) {
    return [
      {
        pageIndex: trace.molecule.page_index,
        imageUrl: trace.molecule.image_url,
        overlays: [molecule, table],
      },
    ];
  }
  return [
    { pageIndex: trace.molecule.page_index, imageUrl: trace.molecule.image_url, overlays: [molecule] },
    { pageIndex: trace.table.page_index, imageUrl: trace.table.image_url, overlays: [table] },
  ];
}

export function renderTraceView(container: HTMLElement, panes: Pane[], resolveUrl: (u: string) => string): void {
  container.textContent = "";
  container.classList.toggle("trace-split", panes.length > 1);
  for (const pane of panes) {
    const paneEl = document.createElement("div");
    paneEl.className = "trace-pane";
    paneEl.dataset.pageIndex = String(pane.pageIndex);
    const title = document.createElement("div");
    title.className = "trace-pane-title";
    title.textContent = `page ${pane.pageIndex + 1}`;
    paneEl.appendChild(title);
    const frame = document.createElement("div");
    frame.className = "trace-frame";
    const img = document.createElement("img");
    img.src = resolveUrl(pane.imageUrl);
    img.alt = `page ${pane.pageIndex + 1}`;
    img.addEventListener("error", () => {
      const placeholder = document.createElement("div");
      placeholder.className = "trace-placeholder";
      placeholder.textContent = `image unavailable: ${pane.imageUrl}`;
      frame.replaceChildren(placeholder);
    });
    frame.appendChild(img);
    for (const overlay of pane.overlays) {
      const box = document.createElement("div");
      box.className = `trace-overlay trace-overlay-${overlay.kind}`;
      box.style.left = `${overlay.leftPct}%`;
      box.style.top = `${overlay.topPct}%`;
      box.style.width = `${overlay.widthPct}%`;
      box.style.height = `${overlay.heightPct}%`;
      if (overlay.rowIndex !== undefined) {
        box.title = `table row ${overlay.rowIndex}`;
      }
      frame.appendChild(box);
    }
    paneEl.appendChild(frame);
    container.appendChild(paneEl);
  }
}
