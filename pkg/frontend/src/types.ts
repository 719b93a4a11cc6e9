// Shapes of the review service's JSON payloads, as served by the HTTP API.

export interface Activity {
  attribute: string;
  qualifier: string;
  value: number;
  unit: string;
  raw_text: string;
}

export interface SarRecord {
  record_index: number;
  doc_id: string;
  smiles: string;
  coref_id: string;
  activities: Activity[];
  molecule_region: string;
  table_region: string;
  match_tier: "Exact" | "CaseInsensitive" | "Normalized" | "Fuzzy";
  match_similarity: number;
  molecule_page: number;
  table_page: number;
  table_row_index: number;
  edited: boolean;
  qc_flags?: string[];
}

export interface UnmatchedEntry {
  doc_id: string;
  region_id: string;
  coref_id: string | null;
  reason: string;
}

export interface RejectedEntry {
  doc_id: string;
  reason: string;
  record: Omit<SarRecord, "record_index">;
}

export interface ResultsPayload {
  job_id: string;
  state: "Queued" | "Running" | "Done" | "Failed";
  records: SarRecord[];
  unmatched: UnmatchedEntry[];
  rejected: RejectedEntry[];
  eval?: { overall: number };
}

export interface JobPayload {
  job_id: string;
  state: ResultsPayload["state"];
  submitted_at: number;
  finished_at: number | null;
  doc_ids: string[];
  error: string | null;
}

export interface TraceAnchor {
  page_index: number;
  bbox: { x: number; y: number; w: number; h: number };
  image_url: string;
  row_index?: number;
}

export interface TracePayload {
  record_index: number;
  doc_id: string;
  molecule: TraceAnchor;
  table: TraceAnchor;
}

export type CorrectionField = "Smiles" | "CorefId" | "ActivityValue" | "Unit" | "Qualifier";

export interface CorrectionBody {
  field: CorrectionField;
  new_value: string | number;
  author: string;
  activity_index?: number;
}

export interface ApiError {
  code: string;
  message: string;
}
