"""Embedded job store: sqlite in WAL mode, one writer path, append-only audit log.

The automated pipeline output is immutable once written; human corrections
live in a separate log and are replayed over the base records to produce the
current view, so the original extraction stays reproducible.
"""

from __future__ import annotations

import json
import sqlite3
import threading
import time
from dataclasses import dataclass
from enum import Enum
from pathlib import Path
from typing import Any


class JobState(str, Enum):
    QUEUED = "Queued"
    RUNNING = "Running"
    DONE = "Done"
    FAILED = "Failed"


class UnknownJob(KeyError):
    pass


class UnknownRecord(KeyError):
    pass


class StorageFull(RuntimeError):
    pass


class StoreLocked(RuntimeError):
    pass


CORRECTION_FIELDS = ("Smiles", "CorefId", "ActivityValue", "Unit", "Qualifier")

_SCHEMA = """
CREATE TABLE IF NOT EXISTS jobs (
    job_id TEXT PRIMARY KEY,
    state TEXT NOT NULL,
    submitted_at REAL NOT NULL,
    finished_at REAL,
    content_hash TEXT UNIQUE NOT NULL,
    corpus_dir TEXT NOT NULL,
    config TEXT NOT NULL,
    truth_csv TEXT,
    doc_ids TEXT NOT NULL,
    error TEXT
);
CREATE TABLE IF NOT EXISTS doc_results (
    job_id TEXT NOT NULL,
    doc_id TEXT NOT NULL,
    payload TEXT NOT NULL,
    PRIMARY KEY (job_id, doc_id)
);
CREATE TABLE IF NOT EXISTS corrections (
    seq INTEGER PRIMARY KEY AUTOINCREMENT,
    job_id TEXT NOT NULL,
    doc_id TEXT NOT NULL,
    record_index INTEGER NOT NULL,
    field TEXT NOT NULL,
    activity_index INTEGER NOT NULL DEFAULT 0,
    old_value TEXT,
    new_value TEXT NOT NULL,
    author TEXT NOT NULL,
    at REAL NOT NULL
);
CREATE TABLE IF NOT EXISTS doc_paths (
    doc_id TEXT PRIMARY KEY,
    path TEXT NOT NULL
);
"""


@dataclass(frozen=True)
class JobRow:
    job_id: str
    state: JobState
    submitted_at: float
    finished_at: float | None
    content_hash: str
    corpus_dir: str
    config: dict
    truth_csv: str | None
    doc_ids: list[str]
    error: str | None

    def to_dict(self) -> dict:
        return {
            "job_id": self.job_id,
            "state": self.state.value,
            "submitted_at": self.submitted_at,
            "finished_at": self.finished_at,
            "doc_ids": self.doc_ids,
            "error": self.error,
        }


class JobStore:
    def __init__(self, path: str | Path):
        self.path = Path(path)
        self.path.parent.mkdir(parents=True, exist_ok=True)
        self._write_lock = threading.Lock()
        with self._connect() as conn:
            conn.executescript(_SCHEMA)

    def _connect(self) -> sqlite3.Connection:
        conn = sqlite3.connect(self.path, timeout=30)
        conn.execute("PRAGMA journal_mode=WAL")
        conn.execute("PRAGMA synchronous=FULL")
        return conn

    def _write(self, sql: str, params: tuple = ()) -> None:
        with self._write_lock:
            try:
                with self._connect() as conn:
                    conn.execute(sql, params)
            except sqlite3.OperationalError as exc:
                if "disk" in str(exc).lower() or "full" in str(exc).lower():
                    raise StorageFull(str(exc)) from exc
                raise

    # --- jobs -----------------------------------------------------------

    def create_job(
        self,
        job_id: str,
        content_hash: str,
        corpus_dir: str,
        config: dict,
        doc_ids: list[str],
        truth_csv: str | None,
    ) -> None:
        self._write(
            "INSERT INTO jobs (job_id, state, submitted_at, content_hash, corpus_dir, config, truth_csv, doc_ids)"
            " VALUES (?, ?, ?, ?, ?, ?, ?, ?)",
            (
                job_id,
                JobState.QUEUED.value,
                time.time(),
                content_hash,
                corpus_dir,
                json.dumps(config),
                truth_csv,
                json.dumps(doc_ids),
            ),
        )

    def find_by_hash(self, content_hash: str) -> JobRow | None:
        with self._connect() as conn:
            row = conn.execute("SELECT * FROM jobs WHERE content_hash = ?", (content_hash,)).fetchone()
        return self._job_row(None, row) if row else None

    def get_job(self, job_id: str) -> JobRow:
        with self._connect() as conn:
            row = conn.execute("SELECT * FROM jobs WHERE job_id = ?", (job_id,)).fetchone()
        if row is None:
            raise UnknownJob(job_id)
        return self._job_row(None, row)

    @staticmethod
    def _job_row(_conn, row) -> JobRow:
        return JobRow(
            job_id=row[0],
            state=JobState(row[1]),
            submitted_at=row[2],
            finished_at=row[3],
            content_hash=row[4],
            corpus_dir=row[5],
            config=json.loads(row[6]),
            truth_csv=row[7],
            doc_ids=json.loads(row[8]),
            error=row[9],
        )

    def set_state(self, job_id: str, state: JobState, error: str | None = None) -> None:
        finished = time.time() if state in (JobState.DONE, JobState.FAILED) else None
        self._write(
            "UPDATE jobs SET state = ?, finished_at = COALESCE(?, finished_at), error = ? WHERE job_id = ?",
            (state.value, finished, error, job_id),
        )

    def pending_jobs(self) -> list[JobRow]:
        with self._connect() as conn:
            rows = conn.execute(
                "SELECT * FROM jobs WHERE state IN (?, ?) ORDER BY submitted_at",
                (JobState.QUEUED.value, JobState.RUNNING.value),
            ).fetchall()
        return [self._job_row(None, r) for r in rows]

    # --- per-document results --------------------------------------------

    def save_doc_result(self, job_id: str, doc_id: str, payload: dict) -> None:
        self._write(
            "INSERT OR REPLACE INTO doc_results (job_id, doc_id, payload) VALUES (?, ?, ?)",
            (job_id, doc_id, json.dumps(payload, ensure_ascii=False, sort_keys=True)),
        )

    def completed_doc_ids(self, job_id: str) -> set[str]:
        with self._connect() as conn:
            rows = conn.execute("SELECT doc_id FROM doc_results WHERE job_id = ?", (job_id,)).fetchall()
        return {r[0] for r in rows}

    def doc_results(self, job_id: str) -> list[dict]:
        with self._connect() as conn:
            rows = conn.execute(
                "SELECT doc_id, payload FROM doc_results WHERE job_id = ? ORDER BY doc_id", (job_id,)
            ).fetchall()
        return [json.loads(payload) for _, payload in rows]

    # --- corrections -------------------------------------------------------

    def append_correction(
        self,
        job_id: str,
        doc_id: str,
        record_index: int,
        field: str,
        activity_index: int,
        old_value: Any,
        new_value: Any,
        author: str,
    ) -> dict:
        at = time.time()
        with self._write_lock:
            with self._connect() as conn:
                cursor = conn.execute(
                    "INSERT INTO corrections (job_id, doc_id, record_index, field, activity_index,"
                    " old_value, new_value, author, at) VALUES (?, ?, ?, ?, ?, ?, ?, ?, ?)",
                    (job_id, doc_id, record_index, field, activity_index, json.dumps(old_value), json.dumps(new_value), author, at),
                )
                seq = cursor.lastrowid
        return {
            "seq": seq,
            "job_id": job_id,
            "doc_id": doc_id,
            "record_index": record_index,
            "field": field,
            "activity_index": activity_index,
            "old_value": old_value,
            "new_value": new_value,
            "author": author,
            "at": at,
        }

    def corrections(self, job_id: str) -> list[dict]:
        with self._connect() as conn:
            rows = conn.execute(
                "SELECT seq, doc_id, record_index, field, activity_index, old_value, new_value, author, at"
                " FROM corrections WHERE job_id = ? ORDER BY seq",
                (job_id,),
            ).fetchall()
        return [
            {
                "seq": seq,
                "doc_id": doc_id,
                "record_index": record_index,
                "field": field,
                "activity_index": activity_index,
                "old_value": json.loads(old) if old is not None else None,
                "new_value": json.loads(new),
                "author": author,
                "at": at,
            }
            for seq, doc_id, record_index, field, activity_index, old, new, author, at in rows
        ]

    # --- page resolution ----------------------------------------------------

    def register_doc_paths(self, mapping: dict[str, str]) -> None:
        with self._write_lock:
            with self._connect() as conn:
                conn.executemany(
                    "INSERT OR REPLACE INTO doc_paths (doc_id, path) VALUES (?, ?)", list(mapping.items())
                )

    def doc_path(self, doc_id: str) -> str | None:
        with self._connect() as conn:
            row = conn.execute("SELECT path FROM doc_paths WHERE doc_id = ?", (doc_id,)).fetchone()
        return row[0] if row else None


def apply_corrections(doc_payloads: list[dict], corrections: list[dict]) -> list[dict]:
    """Replay the audit log over base per-document payloads; returns flat records.

    The produced view is exactly base + log: replaying twice is idempotent and
    the latest correction per field wins.
    """
    flat: list[dict] = []
    index_of: dict[tuple[str, int], int] = {}
    for payload in sorted(doc_payloads, key=lambda p: p["doc_id"]):
        for i, record in enumerate(payload.get("records", [])):
            clone = json.loads(json.dumps(record))
            clone["record_index"] = len(flat)
            index_of[(payload["doc_id"], i)] = len(flat)
            flat.append(clone)
    for correction in corrections:
        key = (correction["doc_id"], correction["record_index"])
        if key not in index_of:
            continue
        record = flat[index_of[key]]
        field = correction["field"]
        value = correction["new_value"]
        ai = correction.get("activity_index", 0)
        if field == "Smiles":
            record["smiles"] = value
        elif field == "CorefId":
            record["coref_id"] = value
        elif field == "ActivityValue" and 0 <= ai < len(record["activities"]):
            record["activities"][ai]["value"] = float(value)
        elif field == "Unit" and 0 <= ai < len(record["activities"]):
            record["activities"][ai]["unit"] = value
        elif field == "Qualifier" and 0 <= ai < len(record["activities"]):
            record["activities"][ai]["qualifier"] = value
        else:
            continue
        record["edited"] = True
    return flat
