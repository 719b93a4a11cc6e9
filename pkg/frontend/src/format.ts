// View-model helpers: flatten records per activity, sort, and paginate.

import type { ResultsPayload, SarRecord } from "./types.js";

export interface RecordRow {
  recordIndex: number;
  activityIndex: number;
  docId: string;
  corefId: string;
  smiles: string;
  attribute: string;
  qualifier: string;
  value: number;
  unit: string;
  matchTier: SarRecord["match_tier"];
  matchSimilarity: number;
  moleculePage: number;
  tablePage: number;
  edited: boolean;
  qcFlags: string[];
}

export function flattenRecords(records: SarRecord[]): RecordRow[] {
  const rows: RecordRow[] = [];
  for (const record of records) {
    record.activities.forEach((activity, activityIndex) => {
      rows.push({
        recordIndex: record.record_index,
        activityIndex,
        docId: record.doc_id,
        corefId: record.coref_id,
        smiles: record.smiles,
        attribute: activity.attribute,
        qualifier: activity.qualifier,
        value: activity.value,
        unit: activity.unit,
        matchTier: record.match_tier,
        matchSimilarity: record.match_similarity,
        moleculePage: record.molecule_page,
        tablePage: record.table_page,
        edited: record.edited,
        qcFlags: record.qc_flags ?? [],
      });
    });
  }
  return rows;
}

const TIER_RANK: Record<SarRecord["match_tier"], number> = {
  Exact: 0,
  CaseInsensitive: 1,
  Normalized: 2,
  Fuzzy: 3,
};

export type SortKey = "doc" | "coref" | "attribute" | "value" | "tier" | "similarity";

export function sortRows(rows: RecordRow[], key: SortKey, descending = false): RecordRow[] {
  const sorted = [...rows];
  const factor = descending ? -1 : 1;
  sorted.sort((a, b) => {
    let cmp: number;
    switch (key) {
      case "doc":
        cmp = a.docId.localeCompare(b.docId);
        break;
      case "coref":
        cmp = a.corefId.localeCompare(b.corefId);
        break;
      case "attribute":
        cmp = a.attribute.localeCompare(b.attribute);
        break;
      case "value":
        cmp = a.value - b.value;
        break;
      case "tier":
        // weakest tier first so curators triage Fuzzy matches first
        cmp = TIER_RANK[b.matchTier] - TIER_RANK[a.matchTier];
        break;
      case "similarity":
        cmp = a.matchSimilarity - b.matchSimilarity;
        break;
    }
    if (cmp === 0) {
      cmp = a.recordIndex - b.recordIndex || a.activityIndex - b.activityIndex;
    }
    return cmp * factor;
  });
  return sorted;
}

export interface Page<T> {
  items: T[];
  page: number;
  pageCount: number;
  total: number;
}

export function paginate<T>(items: T[], page: number, pageSize: number): Page<T> {
  const pageCount = Math.max(1, Math.ceil(items.length / pageSize));
  const clamped = Math.min(Math.max(page, 0), pageCount - 1);
  return {
    items: items.slice(clamped * pageSize, (clamped + 1) * pageSize),
    page: clamped,
    pageCount,
    total: items.length,
  };
}

export function summarize(results: ResultsPayload): string {
  const rows = flattenRecords(results.records).length;
  return `${results.records.length} records (${rows} activity rows), ` +
    `${results.unmatched.length} unmatched, ${results.rejected.length} rejected — ${results.state}`;
}
