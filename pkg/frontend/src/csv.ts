// CSV download: fetch the export endpoint and hand the bytes to the browser
// as a file save. Fetching (rather than a bare link) lets tests compare the
// saved bytes with the endpoint bytes and keeps error handling uniform.

import type { ApiClient } from "./api.js";

export function csvFilename(jobId: string): string {
  return `sarline-${jobId}.csv`;
}

export async function downloadCsv(
  client: ApiClient,
  jobId: string,
  save: (bytes: Uint8Array, filename: string) => void = saveViaAnchor,
): Promise<Uint8Array> {
  const bytes = await client.fetchExportCsv(jobId);
  save(bytes, csvFilename(jobId));
  return bytes;
}

function saveViaAnchor(bytes: Uint8Array, filename: string): void {
  const buffer = bytes.buffer.slice(bytes.byteOffset, bytes.byteOffset + bytes.byteLength) as ArrayBuffer;
  const blob = new Blob([buffer], { type: "text/csv;charset=utf-8" });
  const url = URL.createObjectURL(blob);
  const anchor = document.createElement("a");
  anchor.href = url;
  anchor.download = filename;
  document.body.appendChild(anchor);
  anchor.click();
  anchor.remove();
  URL.revokeObjectURL(url);
}
