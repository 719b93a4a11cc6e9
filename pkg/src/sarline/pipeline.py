"""Three-stage orchestration over a corpus: detect, extract in parallel, align.

Results are deterministic for fixed inputs and seed regardless of the worker
count: region work is collected by id and post-processing runs in manifest
order. An optional content-addressed cache reuses backend responses across
runs without changing outputs.
"""

from __future__ import annotations

import hashlib
import json
import os
import threading
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from enum import Enum
from pathlib import Path
from typing import Any, Callable, Mapping, Sequence

from . import smiles as smiles_mod
from .align import MatchConfig, assemble
from .backends import Backend, BackendConfig, make_backend
from .domain import DocumentBundle, MoleculeCandidate, Region, RegionKind, crop
from .tableparse import (
    NoActivityColumn,
    NoIdentifierColumn,
    NotActivityTable,
    ParsedActivityTable,
    expand_grid,
    extract_activity_rows,
    parse_table_html,
    screen_keywords,
)


class FailPolicy(str, Enum):
    SKIP_REGION = "SkipRegion"
    SKIP_DOCUMENT = "SkipDocument"
    ABORT = "Abort"


class DocumentFailed(Exception):
    def __init__(self, doc_id: str, cause: Exception):
        self.doc_id = doc_id
        self.cause = cause
        super().__init__(f"document {doc_id} failed: {cause}")


@dataclass(frozen=True)
class PipelineConfig:
    parallelism: int = field(default_factory=lambda: os.cpu_count() or 1)
    cache_dir: str | None = None
    fail_policy: FailPolicy = FailPolicy.SKIP_REGION
    match_config: MatchConfig = field(default_factory=MatchConfig)
    backend_config: BackendConfig = field(default_factory=BackendConfig)

    def __post_init__(self) -> None:
        if self.parallelism < 1:
            raise ValueError("parallelism must be >= 1")

    def to_dict(self) -> dict:
        return {
            "parallelism": self.parallelism,
            "cache_dir": self.cache_dir,
            "fail_policy": self.fail_policy.value,
            "match_config": self.match_config.to_dict(),
            "backend_config": self.backend_config.to_dict(),
        }

    @classmethod
    def from_dict(cls, d: Mapping) -> "PipelineConfig":
        return cls(
            parallelism=int(d.get("parallelism", os.cpu_count() or 1)),
            cache_dir=d.get("cache_dir"),
            fail_policy=FailPolicy(d.get("fail_policy", "SkipRegion")),
            match_config=MatchConfig.from_dict(d.get("match_config", {})),
            backend_config=BackendConfig.from_dict(d.get("backend_config", {})),
        )


@dataclass
class RunResult:
    doc_id: str
    records: list = field(default_factory=list)
    unmatched: list[dict] = field(default_factory=list)
    rejected: list = field(default_factory=list)
    stage_timings: dict[str, float] = field(default_factory=dict)
    region_errors: list[tuple[str, str]] = field(default_factory=list)
    subtasks: dict[str, dict] = field(default_factory=lambda: {"coref": {}, "table_html": {}})
    failed: bool = False

    def to_dict(self, include_timings: bool = False) -> dict:
        out: dict[str, Any] = {
            "doc_id": self.doc_id,
            "records": [r.to_dict() for r in self.records],
            "unmatched": self.unmatched,
            "rejected": [[r.to_dict(), reason] for r, reason in self.rejected],
            "region_errors": [[rid, err] for rid, err in self.region_errors],
            "subtasks": {name: dict(sorted(v.items())) for name, v in sorted(self.subtasks.items())},
            "failed": self.failed,
        }
        if include_timings:
            out["stage_timings"] = self.stage_timings
        return out


ProgressFn = Callable[[dict], None]


def _emit(progress: ProgressFn | None, **event: Any) -> None:
    if progress is not None:
        progress(event)


def cache_key(image_bytes: bytes, task: str, prompt: str, endpoint: str | None) -> str:
    """Content hash identifying one backend call."""
    digest = hashlib.sha256()
    digest.update(image_bytes)
    digest.update(b"\x00" + task.encode("utf-8"))
    digest.update(b"\x00" + prompt.encode("utf-8"))
    digest.update(b"\x00" + (endpoint or "").encode("utf-8"))
    return digest.hexdigest()


class ResponseCache:
    """Tiny JSON-per-key disk cache with serialized writes."""

    def __init__(self, directory: str | Path):
        self.directory = Path(directory)
        self.directory.mkdir(parents=True, exist_ok=True)
        self._lock = threading.Lock()

    def get(self, key: str) -> Any | None:
        path = self.directory / f"{key}.json"
        if not path.is_file():
            return None
        return json.loads(path.read_text(encoding="utf-8"))["value"]

    def put(self, key: str, value: Any) -> None:
        path = self.directory / f"{key}.json"
        with self._lock:
            tmp = path.with_suffix(".tmp")
            tmp.write_text(json.dumps({"value": value}), encoding="utf-8")
            tmp.replace(path)


def _molecule_in_table(region: Region, tables: Sequence[Region]) -> bool:
    cx = region.bbox.x + region.bbox.w / 2
    cy = region.bbox.y + region.bbox.h / 2
    return any(
        t.page_index == region.page_index and t.bbox.contains_point(cx, cy) for t in tables
    )


def _image_bytes(image) -> bytes:
    return image.tobytes()


class _DocumentWorker:
    def __init__(
        self,
        bundle: DocumentBundle,
        cfg: PipelineConfig,
        backend: Backend,
        cache: ResponseCache | None,
        progress: ProgressFn | None,
    ):
        self.bundle = bundle
        self.cfg = cfg
        self.backend = backend
        self.cache = cache
        self.progress = progress
        self.page_images: dict[int, Any] = {}
        self.page_lock = threading.Lock()

    def page_image(self, index: int):
        with self.page_lock:
            if index not in self.page_images:
                self.page_images[index] = self.bundle.load_page_image(index)
            return self.page_images[index]

    def cached_call(self, task: str, image, call: Callable[[], Any]) -> Any:
        if self.cache is None:
            return call()
        prompt = self.cfg.backend_config.prompts.get(task, "")
        key = cache_key(_image_bytes(image), task, prompt, self.cfg.backend_config.endpoint)
        hit = self.cache.get(key)
        if hit is not None:
            return hit["payload"]
        value = call()
        self.cache.put(key, {"payload": value})
        return value

    def process_molecule(self, region: Region, in_table: bool) -> tuple[MoleculeCandidate, str | None]:
        page = self.page_image(region.page_index)
        crop1 = crop(page, region.bbox, 1.0)
        crop15 = crop(page, region.bbox, 1.5)
        task_name = "coref_in_table" if in_table else "coref_out_of_table"
        with ThreadPoolExecutor(max_workers=2) as pair:
            smiles_future = pair.submit(
                self.cached_call,
                "ocsr",
                crop1,
                lambda: self.backend.ocsr(crop1, self.bundle.doc_id, region.id),
            )
            coref_future = pair.submit(
                self.cached_call,
                task_name,
                crop15,
                lambda: self.backend.coref(crop15, self.bundle.doc_id, region.id, in_table),
            )
            raw_smiles = smiles_future.result()
            coref = coref_future.result()
        valid = smiles_mod.is_valid_smiles(raw_smiles) if raw_smiles else False
        atom_count = (
            smiles_mod.heavy_atom_count(smiles_mod.parse_smiles(raw_smiles)) if valid else None
        )
        candidate = MoleculeCandidate(
            region_id=region.id,
            smiles=raw_smiles or None,
            coref_id=coref,
            smiles_valid=valid,
            atom_count=atom_count,
        )
        return candidate, coref

    def process_table(self, region: Region) -> tuple[ParsedActivityTable | None, str | None]:
        if region.text is not None and not screen_keywords(region.text):
            _emit(self.progress, doc_id=self.bundle.doc_id, stage="screen", region_id=region.id, status="irrelevant")
            return None, None
        page = self.page_image(region.page_index)
        crop1 = crop(page, region.bbox, 1.0)
        html = self.cached_call(
            "table_html", crop1, lambda: self.backend.table_html(crop1, self.bundle.doc_id, region.id)
        )
        try:
            tree = parse_table_html(html)
        except NotActivityTable:
            _emit(self.progress, doc_id=self.bundle.doc_id, stage="table", region_id=region.id, status="sentinel")
            return None, html
        if not screen_keywords(html):
            _emit(self.progress, doc_id=self.bundle.doc_id, stage="screen", region_id=region.id, status="irrelevant")
            return None, html
        grid = expand_grid(tree)
        try:
            return extract_activity_rows(grid, table_region=region.id), html
        except (NoActivityColumn, NoIdentifierColumn) as exc:
            _emit(
                self.progress,
                doc_id=self.bundle.doc_id,
                stage="table",
                region_id=region.id,
                status=f"not_activity:{type(exc).__name__}",
            )
            return None, html


def run_document(
    bundle: DocumentBundle,
    cfg: PipelineConfig,
    backend: Backend | None = None,
    progress: ProgressFn | None = None,
) -> RunResult:
    """Run detect -> parallel extraction -> alignment for one document."""
    backend = backend or make_backend(cfg.backend_config)
    cache = ResponseCache(cfg.cache_dir) if cfg.cache_dir else None
    result = RunResult(doc_id=bundle.doc_id)
    t0 = time.perf_counter()
    regions = backend.detect(bundle)
    result.stage_timings["detect"] = (time.perf_counter() - t0) * 1000
    _emit(progress, doc_id=bundle.doc_id, stage="detect", status="done", ms=result.stage_timings["detect"])

    molecules = [r for r in regions if r.kind is RegionKind.MOLECULE]
    tables = [r for r in regions if r.kind is RegionKind.TABLE]
    worker = _DocumentWorker(bundle, cfg, backend, cache, progress)

    t1 = time.perf_counter()
    mol_results: dict[str, MoleculeCandidate] = {}
    table_results: dict[str, ParsedActivityTable | None] = {}
    errors: dict[str, str] = {}

    def run_molecule(region: Region) -> None:
        try:
            candidate, coref = worker.process_molecule(region, _molecule_in_table(region, tables))
            mol_results[region.id] = candidate
            result.subtasks["coref"][region.id] = coref
            _emit(progress, doc_id=bundle.doc_id, stage="extract", region_id=region.id, status="ok")
        except Exception as exc:
            errors[region.id] = f"{type(exc).__name__}: {exc}"
            _emit(progress, doc_id=bundle.doc_id, stage="extract", region_id=region.id, status="error")

    def run_table(region: Region) -> None:
        try:
            parsed, html = worker.process_table(region)
            table_results[region.id] = parsed
            if html is not None:
                result.subtasks["table_html"][region.id] = html
            _emit(progress, doc_id=bundle.doc_id, stage="extract", region_id=region.id, status="ok")
        except Exception as exc:
            errors[region.id] = f"{type(exc).__name__}: {exc}"
            _emit(progress, doc_id=bundle.doc_id, stage="extract", region_id=region.id, status="error")

    with ThreadPoolExecutor(max_workers=cfg.parallelism) as pool:
        futures = [pool.submit(run_molecule, r) for r in molecules]
        futures += [pool.submit(run_table, r) for r in tables]
        for future in futures:
            future.result()
    result.stage_timings["extract"] = (time.perf_counter() - t1) * 1000

    if errors and cfg.fail_policy is not FailPolicy.SKIP_REGION:
        first = next(iter(sorted(errors.items())))
        failure = DocumentFailed(bundle.doc_id, RuntimeError(f"region {first[0]}: {first[1]}"))
        if cfg.fail_policy is FailPolicy.ABORT:
            raise failure
        result.failed = True
        result.region_errors = sorted(errors.items())
        result.stage_timings["assemble"] = 0.0
        return result

    t2 = time.perf_counter()
    region_map = {r.id: r for r in regions}
    ordered_mols = [mol_results[r.id] for r in molecules if r.id in mol_results]
    ordered_tables = [
        table_results[r.id] for r in tables if r.id in table_results and table_results[r.id] is not None
    ]
    outcome = assemble(ordered_mols, ordered_tables, cfg.match_config, region_map, bundle.doc_id)
    result.records = outcome.records
    result.unmatched = outcome.unmatched
    result.rejected = outcome.rejected
    result.region_errors = sorted(errors.items())
    result.stage_timings["assemble"] = (time.perf_counter() - t2) * 1000
    _emit(progress, doc_id=bundle.doc_id, stage="assemble", status="done", ms=result.stage_timings["assemble"])
    return result


def run_corpus(
    bundles: Sequence[DocumentBundle],
    cfg: PipelineConfig,
    backend: Backend | None = None,
    progress: ProgressFn | None = None,
) -> list[RunResult]:
    """Process documents with bounded parallelism; output order follows input order."""
    if not bundles:
        raise ValueError("corpus must contain at least one bundle")
    backend = backend or make_backend(cfg.backend_config)

    def run_one(bundle: DocumentBundle) -> RunResult:
        try:
            return run_document(bundle, cfg, backend=backend, progress=progress)
        except DocumentFailed:
            raise
        except Exception as exc:
            if cfg.fail_policy is FailPolicy.ABORT:
                raise DocumentFailed(bundle.doc_id, exc) from exc
            failed = RunResult(doc_id=bundle.doc_id, failed=True)
            failed.region_errors = [("<document>", f"{type(exc).__name__}: {exc}")]
            return failed

    workers = min(cfg.parallelism, len(bundles))
    with ThreadPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(run_one, bundles))


def results_to_json(results: Sequence[RunResult], doc_types: Mapping[str, str] | None = None) -> dict:
    """Canonical serialization of corpus results (timings excluded by design)."""
    docs = []
    for result in results:
        entry = result.to_dict(include_timings=False)
        if doc_types and result.doc_id in doc_types:
            entry["doc_type"] = doc_types[result.doc_id]
        docs.append(entry)
    return {"schema": "sarline.records/1", "docs": docs}
