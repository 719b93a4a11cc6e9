// Thin client over the documented service endpoints. Nothing here invents
// routes: every path below exists in the server's API.

import type {
  CorrectionBody,
  JobPayload,
  ResultsPayload,
  SarRecord,
  TracePayload,
} from "./types.js";

export class ApiRequestError extends Error {
  constructor(
    public readonly status: number,
    public readonly code: string,
    message: string,
  ) {
    super(message);
  }
}

async function asJson<T>(response: Response): Promise<T> {
  if (!response.ok) {
    let code = `HTTP${response.status}`;
    let message = response.statusText;
    try {
      const body = (await response.json()) as { code?: string; message?: string };
      code = body.code ?? code;
      message = body.message ?? message;
    } catch {
      // non-JSON error body: keep the status text
    }
    throw new ApiRequestError(response.status, code, message);
  }
  return (await response.json()) as T;
}

export class ApiClient {
  constructor(private readonly base: string, private readonly fetchFn: typeof fetch = fetch) {}

  private url(path: string): string {
    return this.base.replace(/\/$/, "") + path;
  }

  async submitJob(body: Record<string, unknown>): Promise<{ job_id: string; state: string }> {
    const response = await this.fetchFn(this.url("/jobs"), {
      method: "POST",
      headers: { "content-type": "application/json" },
      body: JSON.stringify(body),
    });
    return asJson(response);
  }

  async getJob(jobId: string): Promise<JobPayload> {
    return asJson(await this.fetchFn(this.url(`/jobs/${jobId}`)));
  }

  async getResults(jobId: string): Promise<ResultsPayload> {
    return asJson(await this.fetchFn(this.url(`/jobs/${jobId}/results`)));
  }

  async getTrace(jobId: string, recordIndex: number): Promise<TracePayload> {
    return asJson(await this.fetchFn(this.url(`/jobs/${jobId}/records/${recordIndex}/trace`)));
  }

  async postCorrection(jobId: string, recordIndex: number, body: CorrectionBody): Promise<SarRecord> {
    const response = await this.fetchFn(this.url(`/jobs/${jobId}/records/${recordIndex}/corrections`), {
      method: "POST",
      headers: { "content-type": "application/json" },
      body: JSON.stringify(body),
    });
    return asJson(response);
  }

  exportUrl(jobId: string): string {
    return this.url(`/jobs/${jobId}/export.csv`);
  }

  async fetchExportCsv(jobId: string): Promise<Uint8Array> {
    const response = await this.fetchFn(this.exportUrl(jobId));
    if (!response.ok) {
      throw new ApiRequestError(response.status, `HTTP${response.status}`, response.statusText);
    }
    return new Uint8Array(await response.arrayBuffer());
  }

  pageImageUrl(anchor: { image_url: string }): string {
    return this.url(anchor.image_url);
  }
}
