// Inline correction flow: pre-validate locally, POST, re-render from the
// server's answer. The server stays the source of truth; on rejection the
// reason is surfaced and the curator's input is preserved.

import type { ApiClient } from "./api.js";
import { ApiRequestError } from "./api.js";
import type { RecordRow } from "./format.js";
import type { CorrectionBody, CorrectionField, SarRecord } from "./types.js";
import { parseNumeric, validateCorrection } from "./validate.js";

export interface EditOutcome {
  ok: boolean;
  message?: string;
  record?: SarRecord;
  /** preserved input when the server or pre-validation rejected it */
  keepValue?: string;
}

export function correctionFor(row: RecordRow, column: string, raw: string): CorrectionBody | null {
  let field: CorrectionField;
  let value: string | number = raw;
  switch (column) {
    case "smiles":
      field = "Smiles";
      break;
    case "coref":
      field = "CorefId";
      break;
    case "value":
      field = "ActivityValue";
      value = parseNumeric(raw) ?? raw;
      break;
    case "unit":
      field = "Unit";
      break;
    case "qualifier":
      field = "Qualifier";
      break;
    default:
      return null;
  }
  const body: CorrectionBody = { field, new_value: value, author: "reviewer" };
  if (field === "ActivityValue" || field === "Unit" || field === "Qualifier") {
    body.activity_index = row.activityIndex;
  }
  return body;
}

export async function submitEdit(
  client: ApiClient,
  jobId: string,
  row: RecordRow,
  column: string,
  raw: string,
): Promise<EditOutcome> {
  const fieldName = correctionFor(row, column, raw);
  if (fieldName === null) {
    return { ok: false, message: `column ${column} is not editable`, keepValue: raw };
  }
  const verdict = validateCorrection(fieldName.field, raw);
  if (!verdict.ok) {
    return { ok: false, message: verdict.message ?? "invalid value", keepValue: raw };
  }
  try {
    const record = await client.postCorrection(jobId, row.recordIndex, fieldName);
    return { ok: true, record };
  } catch (error) {
    if (error instanceof ApiRequestError) {
      return { ok: false, message: `${error.code}: ${error.message}`, keepValue: raw };
    }
    throw error;
  }
}
