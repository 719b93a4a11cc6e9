"""Job-oriented HTTP service: submit corpora, review results, correct, export.

Jobs run on a background worker; per-document results are committed as they
finish so partial results are visible while a job is Running and interrupted
jobs resume after a restart. Corrections are validated, appended to the audit
log, and replayed over the immutable pipeline output on every read.
"""

from __future__ import annotations

import csv
import hashlib
import io
import json
import math
import queue
import threading
from pathlib import Path
from typing import Any

from fastapi import FastAPI, Request
from fastapi.responses import FileResponse, JSONResponse, Response

from . import metrics, smiles as smiles_mod
from .align import normalize_id
from .domain import (
    BundleError,
    Qualifier,
    Unit,
    load_bundle,
    load_corpus,
    load_ground_truth,
)
from .pipeline import PipelineConfig, run_document
from .backends import make_backend
from .store import (
    CORRECTION_FIELDS,
    JobState,
    JobStore,
    StorageFull,
    UnknownJob,
    apply_corrections,
)

EXPORT_HEADER = [
    "doc_id",
    "coref_id",
    "smiles",
    "attribute",
    "qualifier",
    "value",
    "unit",
    "molecule_page",
    "table_page",
    "match_tier",
    "match_similarity",
    "edited",
]


class ApiError(Exception):
    def __init__(self, status: int, code: str, message: str):
        self.status = status
        self.code = code
        self.message = message
        super().__init__(message)


class InvalidNewValue(ApiError):
    def __init__(self, field: str, reason: str):
        super().__init__(422, "InvalidNewValue", f"{field}: {reason}")


def _validate_new_value(field: str, value: Any) -> Any:
    if field == "Smiles":
        try:
            smiles_mod.parse_smiles(str(value))
        except smiles_mod.SmilesError as exc:
            raise InvalidNewValue(field, type(exc).__name__)
        return str(value)
    if field == "CorefId":
        text = str(value).strip()
        if not text:
            raise InvalidNewValue(field, "must be nonempty")
        return text
    if field == "ActivityValue":
        try:
            number = float(value)
        except (TypeError, ValueError):
            raise InvalidNewValue(field, "must be numeric")
        if not math.isfinite(number):
            raise InvalidNewValue(field, "must be finite")
        return number
    if field == "Unit":
        try:
            Unit(str(value))
        except ValueError:
            raise InvalidNewValue(field, f"unknown unit {value!r}")
        return str(value)
    if field == "Qualifier":
        try:
            Qualifier(str(value))
        except ValueError:
            raise InvalidNewValue(field, f"unknown qualifier {value!r}")
        return str(value)
    raise InvalidNewValue(field, f"unknown field; expected one of {CORRECTION_FIELDS}")


class JobRunner:
    """Single background worker draining a job queue; per-doc commits."""

    def __init__(self, store: JobStore):
        self.store = store
        self.queue: queue.Queue[str] = queue.Queue()
        self.thread = threading.Thread(target=self._loop, daemon=True)
        self.thread.start()

    def enqueue(self, job_id: str) -> None:
        self.queue.put(job_id)

    def _loop(self) -> None:
        while True:
            job_id = self.queue.get()
            try:
                self._run_job(job_id)
            except Exception as exc:
                self.store.set_state(job_id, JobState.FAILED, error=f"{type(exc).__name__}: {exc}")
            finally:
                self.queue.task_done()

    def _run_job(self, job_id: str) -> None:
        job = self.store.get_job(job_id)
        self.store.set_state(job_id, JobState.RUNNING)
        cfg = PipelineConfig.from_dict(job.config)
        backend = make_backend(cfg.backend_config)
        done = self.store.completed_doc_ids(job_id)
        bundles = load_corpus(job.corpus_dir)
        any_failed = False
        for bundle in bundles:
            if bundle.doc_id in done:
                continue
            result = run_document(bundle, cfg, backend=backend)
            any_failed = any_failed or result.failed
            payload = result.to_dict(include_timings=False)
            payload["doc_type"] = bundle.doc_type.value
            self.store.save_doc_result(job_id, bundle.doc_id, payload)
        self.store.set_state(job_id, JobState.FAILED if any_failed else JobState.DONE)


def _content_hash(corpus_dir: Path, config: dict, truth_csv: str | None) -> str:
    digest = hashlib.sha256()
    for manifest in sorted(corpus_dir.glob("*/manifest.json")):
        digest.update(manifest.read_bytes())
    digest.update(json.dumps(config, sort_keys=True).encode("utf-8"))
    if truth_csv and Path(truth_csv).is_file():
        digest.update(b"\x00truth\x00" + Path(truth_csv).read_bytes())
    return digest.hexdigest()


def _current_view(store: JobStore, job_id: str) -> tuple[list[dict], list[dict]]:
    payloads = store.doc_results(job_id)
    corrections = store.corrections(job_id)
    return apply_corrections(payloads, corrections), payloads


def _eval_report(records: list[dict], truth_csv: str) -> dict | None:
    from .domain import DocType, SarRecord

    try:
        truth = load_ground_truth(truth_csv)
    except Exception:
        return None
    by_doc: dict[str, list] = {}
    for row in truth:
        by_doc.setdefault(row.doc_id, []).append(row)
    doc_types: dict[str, str] = {}
    parsed_records: dict[str, list[SarRecord]] = {}
    for entry in records:
        record_dict = {k: v for k, v in entry.items() if k != "record_index"}
        try:
            record = SarRecord.from_dict(record_dict)
        except Exception:
            continue
        parsed_records.setdefault(record.doc_id, []).append(record)
    evals = []
    for doc_id, rows in sorted(by_doc.items()):
        hit, total, _ = metrics.table_recall(parsed_records.get(doc_id, []), rows)
        evals.append(
            metrics.PerDocEval(
                doc_id=doc_id,
                doc_type=DocType.PATENT,
                rows_hit=hit,
                rows_total=total,
            )
        )
    if not evals:
        return None
    report = metrics.aggregate(evals).to_dict()
    report.pop("by_doc_type", None)  # doc types unknown from the CSV alone
    return report


def create_app(store_path: str | Path, ui_dir: str | Path | None = None) -> FastAPI:
    store = JobStore(store_path)
    runner = JobRunner(store)
    for job in store.pending_jobs():
        runner.enqueue(job.job_id)

    app = FastAPI(title="sarline", docs_url=None, redoc_url=None)
    app.state.store = store
    app.state.runner = runner

    @app.exception_handler(ApiError)
    async def _api_error(_req: Request, exc: ApiError) -> JSONResponse:
        return JSONResponse(status_code=exc.status, content={"code": exc.code, "message": exc.message})

    @app.exception_handler(UnknownJob)
    async def _unknown_job(_req: Request, exc: UnknownJob) -> JSONResponse:
        return JSONResponse(status_code=404, content={"code": "UnknownJob", "message": str(exc)})

    @app.get("/health")
    def health() -> dict:
        return {"status": "ok"}

    @app.post("/jobs")
    def submit(body: dict) -> dict:
        corpus_dir = body.get("corpus_dir")
        if not corpus_dir or not Path(corpus_dir).is_dir():
            raise ApiError(400, "MalformedBundle", f"corpus_dir {corpus_dir!r} is not a directory")
        config = body.get("config", {})
        try:
            cfg = PipelineConfig.from_dict(config)
            bundles = load_corpus(corpus_dir)
        except (BundleError, ValueError) as exc:
            raise ApiError(400, "MalformedBundle", str(exc))
        if not bundles:
            raise ApiError(400, "MalformedBundle", "corpus contains no bundles")
        content_hash = _content_hash(Path(corpus_dir), cfg.to_dict(), body.get("truth_csv"))
        existing = store.find_by_hash(content_hash)
        if existing is not None:
            return {"job_id": existing.job_id, "state": existing.state.value, "existing": True}
        job_id = content_hash[:16]
        try:
            store.create_job(
                job_id,
                content_hash,
                str(corpus_dir),
                cfg.to_dict(),
                [b.doc_id for b in bundles],
                body.get("truth_csv"),
            )
        except StorageFull as exc:
            raise ApiError(507, "StorageFull", str(exc))
        store.register_doc_paths({b.doc_id: str(b.root) for b in bundles if b.root})
        runner.enqueue(job_id)
        return {"job_id": job_id, "state": JobState.QUEUED.value, "existing": False}

    @app.get("/jobs/{job_id}")
    def get_job(job_id: str) -> dict:
        return store.get_job(job_id).to_dict()

    @app.get("/jobs/{job_id}/results")
    def get_results(job_id: str) -> dict:
        job = store.get_job(job_id)
        records, payloads = _current_view(store, job_id)
        unmatched = [
            {**item, "doc_id": payload["doc_id"]}
            for payload in payloads
            for item in payload.get("unmatched", [])
        ]
        rejected = [
            {"record": rec, "reason": reason, "doc_id": payload["doc_id"]}
            for payload in payloads
            for rec, reason in payload.get("rejected", [])
        ]
        out: dict[str, Any] = {
            "job_id": job_id,
            "state": job.state.value,
            "records": records,
            "unmatched": unmatched,
            "rejected": rejected,
        }
        if job.truth_csv and job.state is JobState.DONE:
            report = _eval_report(records, job.truth_csv)
            if report is not None:
                out["eval"] = report
        return out

    def _record_at(job_id: str, ix: int) -> dict:
        records, _ = _current_view(store, job_id)
        if ix < 0 or ix >= len(records):
            raise ApiError(404, "UnknownRecord", f"record {ix} not in job {job_id}")
        return records[ix]

    @app.get("/jobs/{job_id}/records/{ix}/trace")
    def trace(job_id: str, ix: int) -> dict:
        store.get_job(job_id)
        record = _record_at(job_id, ix)
        doc_id = record["doc_id"]
        path = store.doc_path(doc_id)
        if path is None:
            raise ApiError(404, "UnknownRecord", f"no bundle registered for {doc_id}")
        bundle = load_bundle(path)
        try:
            mol_region = bundle.region_by_id(record["molecule_region"])
            table_region = bundle.region_by_id(record["table_region"])
        except KeyError as exc:
            raise ApiError(404, "UnknownRecord", f"region {exc} not in bundle")
        return {
            "record_index": ix,
            "doc_id": doc_id,
            "molecule": {
                "page_index": mol_region.page_index,
                "bbox": mol_region.bbox.to_dict(),
                "image_url": f"/pages/{doc_id}/{mol_region.page_index}.png",
            },
            "table": {
                "page_index": table_region.page_index,
                "bbox": table_region.bbox.to_dict(),
                "row_index": record["table_row_index"],
                "image_url": f"/pages/{doc_id}/{table_region.page_index}.png",
            },
        }

    @app.post("/jobs/{job_id}/records/{ix}/corrections")
    def correct(job_id: str, ix: int, body: dict) -> dict:
        store.get_job(job_id)
        record = _record_at(job_id, ix)
        field = body.get("field")
        if field not in CORRECTION_FIELDS:
            raise InvalidNewValue(str(field), f"unknown field; expected one of {CORRECTION_FIELDS}")
        activity_index = int(body.get("activity_index", 0))
        if field in ("ActivityValue", "Unit", "Qualifier") and not (
            0 <= activity_index < len(record["activities"])
        ):
            raise ApiError(404, "UnknownRecord", f"activity {activity_index} not in record {ix}")
        new_value = _validate_new_value(field, body.get("new_value"))
        if field == "Smiles":
            old_value: Any = record["smiles"]
        elif field == "CorefId":
            old_value = record["coref_id"]
        elif field == "ActivityValue":
            old_value = record["activities"][activity_index]["value"]
        elif field == "Unit":
            old_value = record["activities"][activity_index]["unit"]
        else:
            old_value = record["activities"][activity_index]["qualifier"]
        doc_records, _ = _current_view(store, job_id)
        doc_id = record["doc_id"]
        within_doc = sum(1 for r in doc_records[:ix] if r["doc_id"] == doc_id)
        store.append_correction(
            job_id, doc_id, within_doc, field, activity_index, old_value, new_value, body.get("author", "anonymous")
        )
        return _record_at(job_id, ix)

    @app.get("/jobs/{job_id}/export.csv")
    def export_csv(job_id: str) -> Response:
        job = store.get_job(job_id)
        if job.state is not JobState.DONE:
            raise ApiError(409, "JobNotDone", f"job {job_id} is {job.state.value}")
        records, _ = _current_view(store, job_id)
        buffer = io.StringIO()
        writer = csv.writer(buffer, lineterminator="\r\n")
        writer.writerow(EXPORT_HEADER)
        for record in records:
            for activity in record["activities"]:
                writer.writerow(
                    [
                        record["doc_id"],
                        record["coref_id"],
                        record["smiles"],
                        activity["attribute"],
                        activity["qualifier"],
                        activity["value"],
                        activity["unit"],
                        record["molecule_page"],
                        record["table_page"],
                        record["match_tier"],
                        record["match_similarity"],
                        str(record.get("edited", False)).lower(),
                    ]
                )
        return Response(
            content=buffer.getvalue().encode("utf-8"),
            media_type="text/csv; charset=utf-8",
            headers={"Content-Disposition": f'attachment; filename="{job_id}.csv"'},
        )

    @app.get("/pages/{doc_id}/{page_index}.png")
    def page_image(doc_id: str, page_index: int) -> FileResponse:
        path = store.doc_path(doc_id)
        if path is None:
            raise ApiError(404, "UnknownDocument", f"no bundle registered for {doc_id}")
        file_path = Path(path) / f"page_{page_index}.png"
        if not file_path.is_file():
            raise ApiError(404, "UnknownPage", f"page {page_index} of {doc_id} not found")
        return FileResponse(file_path, media_type="image/png")

    if ui_dir is not None and Path(ui_dir).is_dir():
        from fastapi.staticfiles import StaticFiles

        app.mount("/ui", StaticFiles(directory=str(ui_dir), html=True), name="ui")

    return app
