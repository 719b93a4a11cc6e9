"""Command-line front door: extract, evaluate, corpus statistics, serve, demo."""

from __future__ import annotations

import errno
import fcntl
import json
import sys
from pathlib import Path

import click
import numpy as np

from . import metrics, smiles as smiles_mod
from .align import normalize_id
from .backends import BackendConfig
from .domain import DocType, MalformedTruthCsv, SarRecord, load_corpus, load_ground_truth
from .metrics import CorefTruth, Difficulty, PerDocEval
from .pipeline import PipelineConfig, results_to_json, run_corpus
from .service import EXPORT_HEADER, create_app


class EmptyCorpus(Exception):
    pass


def _echo_json(path: Path, payload: dict) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps(payload, ensure_ascii=False, indent=1, sort_keys=True), encoding="utf-8")


def _load_config(config_path: str | None, parallelism: int | None, fixture: str | None) -> PipelineConfig:
    raw: dict = {}
    if config_path is not None:
        path = Path(config_path)
        if not path.is_file():
            raise FileNotFoundError(config_path)
        raw = json.loads(path.read_text(encoding="utf-8"))
    cfg = PipelineConfig.from_dict(raw)
    backend = cfg.backend_config
    if fixture is not None:
        backend = BackendConfig(
            endpoint=None,
            timeout_ms=backend.timeout_ms,
            max_retries=backend.max_retries,
            fixture_path=fixture,
        )
    overrides: dict = {"backend_config": backend.to_dict()}
    merged = {**cfg.to_dict(), **overrides}
    if parallelism is not None:
        merged["parallelism"] = parallelism
    return PipelineConfig.from_dict(merged)


@click.group(context_settings={"auto_envvar_prefix": "SARLINE"})
def main() -> None:
    """SAR extraction from document bundles (flags mirror SARLINE_* env vars)."""


@main.command("extract")
@click.option("--corpus", required=True, type=click.Path(exists=True, file_okay=False))
@click.option("--config", "config_path", default=None, type=str)
@click.option("--out", required=True, type=click.Path(file_okay=False))
@click.option("--parallelism", default=None, type=int)
@click.option("--fixture", default=None, type=str, help="fixture oracle JSON (enables fixture mode)")
def cmd_extract(corpus: str, config_path: str | None, out: str, parallelism: int | None, fixture: str | None) -> None:
    """Run the pipeline over a corpus; writes records JSON + CSV + unmatched report."""
    try:
        cfg = _load_config(config_path, parallelism, fixture)
    except (FileNotFoundError, ValueError, json.JSONDecodeError) as exc:
        click.echo(f"config error: {exc}", err=True)
        sys.exit(2)
    bundles = load_corpus(corpus)
    if not bundles:
        click.echo("corpus contains no bundles", err=True)
        sys.exit(2)

    def progress(event: dict) -> None:
        click.echo(json.dumps(event, ensure_ascii=False), err=True)

    results = run_corpus(bundles, cfg, progress=progress)
    doc_types = {b.doc_id: b.doc_type.value for b in bundles}
    out_dir = Path(out)
    _echo_json(out_dir / "records.json", results_to_json(results, doc_types))
    _echo_json(
        out_dir / "unmatched.json",
        {
            "schema": "sarline.unmatched/1",
            "docs": [
                {
                    "doc_id": r.doc_id,
                    "unmatched": r.unmatched,
                    "rejected": [[rec.to_dict(), reason] for rec, reason in r.rejected],
                    "region_errors": [list(e) for e in r.region_errors],
                    "failed": r.failed,
                }
                for r in results
            ],
        },
    )
    import csv as csv_mod

    with open(out_dir / "records.csv", "w", newline="", encoding="utf-8") as fh:
        writer = csv_mod.writer(fh)
        writer.writerow(EXPORT_HEADER)
        for result in results:
            for record in result.records:
                for activity in record.activities:
                    writer.writerow(
                        [
                            record.doc_id,
                            record.coref_id,
                            record.smiles,
                            activity.attribute.value,
                            activity.qualifier.value,
                            activity.value,
                            activity.unit.value,
                            record.molecule_page,
                            record.table_page,
                            record.match_tier.value,
                            record.match_similarity,
                            str(record.edited).lower(),
                        ]
                    )
    sys.exit(1 if any(r.failed for r in results) else 0)


@main.command("eval")
@click.option("--pred", required=True, type=click.Path(exists=True, dir_okay=False))
@click.option("--truth", required=True, type=click.Path(exists=True, dir_okay=False))
@click.option("--out", default=None, type=str)
@click.option("--coref-pred", default=None, type=str)
@click.option("--coref-truth", default=None, type=str)
@click.option("--teds-pred", default=None, type=str)
@click.option("--teds-truth", default=None, type=str)
def cmd_eval(
    pred: str,
    truth: str,
    out: str | None,
    coref_pred: str | None,
    coref_truth: str | None,
    teds_pred: str | None,
    teds_truth: str | None,
) -> None:
    """Score predictions against ground truth and print the report."""
    payload = json.loads(Path(pred).read_text(encoding="utf-8"))
    try:
        truth_rows = load_ground_truth(truth)
    except MalformedTruthCsv as exc:
        click.echo(str(exc), err=True)
        sys.exit(2)
    by_doc: dict[str, list] = {}
    for row in truth_rows:
        by_doc.setdefault(row.doc_id, []).append(row)
    records_by_doc: dict[str, list[SarRecord]] = {}
    doc_types: dict[str, str] = {}
    for doc in payload.get("docs", []):
        doc_types[doc["doc_id"]] = doc.get("doc_type", "Patent")
        records_by_doc[doc["doc_id"]] = [SarRecord.from_dict(r) for r in doc.get("records", [])]

    from_run_coref: dict = {}
    from_run_tables: dict = {}
    for doc in payload.get("docs", []):
        from_run_coref.update(doc.get("subtasks", {}).get("coref", {}))
        from_run_tables.update(doc.get("subtasks", {}).get("table_html", {}))

    coref_pred_map = (
        json.loads(Path(coref_pred).read_text(encoding="utf-8")) if coref_pred else from_run_coref
    )
    coref_truth_map = (
        {
            rid: CorefTruth(id=entry["id"], difficulty=Difficulty(entry["difficulty"]))
            for rid, entry in json.loads(Path(coref_truth).read_text(encoding="utf-8")).items()
        }
        if coref_truth
        else None
    )
    teds_pred_map = json.loads(Path(teds_pred).read_text(encoding="utf-8")) if teds_pred else from_run_tables
    teds_truth_map = json.loads(Path(teds_truth).read_text(encoding="utf-8")) if teds_truth else None

    evals: list[PerDocEval] = []
    for doc_id, rows in sorted(by_doc.items()):
        hit, total, _ = metrics.table_recall(records_by_doc.get(doc_id, []), rows)
        evals.append(
            PerDocEval(
                doc_id=doc_id,
                doc_type=DocType(doc_types.get(doc_id, "Patent")),
                rows_hit=hit,
                rows_total=total,
            )
        )
    if coref_truth_map:
        holder = evals[0]
        for rid, entry in coref_truth_map.items():
            holder.coref_totals[entry.difficulty] = holder.coref_totals.get(entry.difficulty, 0) + 1
            predicted = (coref_pred_map or {}).get(rid)
            if predicted is not None and normalize_id(predicted) == normalize_id(entry.id):
                holder.coref_hits[entry.difficulty] = holder.coref_hits.get(entry.difficulty, 0) + 1
    if teds_truth_map:
        holder = evals[0]
        for rid, truth_html in teds_truth_map.items():
            predicted_html = (teds_pred_map or {}).get(rid, "<table>None</table>")
            difficulty = metrics.classify_table(truth_html)
            holder.teds_scores.setdefault(difficulty, []).append(metrics.teds(predicted_html, truth_html))
    report = metrics.aggregate(evals)
    click.echo(f"{'doc':<24} {'hit':>4} {'total':>6} {'recall':>8}")
    for doc_id, entry in sorted(report.per_doc.items()):
        click.echo(f"{doc_id:<24} {entry['rows_hit']:>4} {entry['rows_total']:>6} {entry['table_recall']:>8.4f}")
    click.echo(f"{'OVERALL':<24} {'':>4} {'':>6} {report.overall:>8.4f}")
    for doc_type, rate in sorted(report.by_doc_type.items()):
        click.echo(f"  {doc_type}: {rate:.4f}")
    if report.coref_recall:
        click.echo(f"  coref recall: {report.coref_recall}")
    if report.teds:
        click.echo(f"  teds: {report.teds}")
    out_path = Path(out) if out else Path(pred).parent / "eval.json"
    _echo_json(out_path, {"schema": "sarline.eval/1", **report.to_dict()})
    sys.exit(0)


def silverman_bandwidth(counts: np.ndarray) -> float:
    """0.9 * min(sigma, IQR/1.34) * n^(-1/5), with a flat-sample fallback."""
    n = len(counts)
    sigma = float(np.std(counts, ddof=1)) if n > 1 else 0.0
    q75, q25 = np.percentile(counts, [75, 25])
    iqr = float(q75 - q25)
    h = 0.9 * min(sigma, iqr / 1.34) * n ** (-1 / 5)
    if h <= 0:
        h = 0.9 * sigma * n ** (-1 / 5) if sigma > 0 else 1.0
    return h


def gaussian_kde_curve(counts: list[int], points: int = 200) -> dict:
    data = np.asarray(counts, dtype=float)
    h = silverman_bandwidth(data)
    xs = np.linspace(data.min() - 3 * h, data.max() + 3 * h, points)
    density = np.zeros_like(xs)
    for value in data:
        density += np.exp(-0.5 * ((xs - value) / h) ** 2)
    density /= len(data) * h * np.sqrt(2 * np.pi)
    return {"bandwidth": h, "x": xs.tolist(), "density": density.tolist()}


def compute_stats(truth_path: str, bundles_path: str, bin_width: int = 5) -> dict:
    truth_rows = load_ground_truth(truth_path)
    bundles = load_corpus(bundles_path)
    if not bundles and not truth_rows:
        raise EmptyCorpus("no bundles and no truth rows")
    patents = sum(1 for b in bundles if b.doc_type is DocType.PATENT)
    literature = sum(1 for b in bundles if b.doc_type is DocType.LITERATURE)
    by_language: dict[str, int] = {}
    for bundle in bundles:
        for tag in bundle.language_tags:
            by_language[tag] = by_language.get(tag, 0) + 1
    table_regions = [r for b in bundles for r in b.regions if r.kind.value == "Table"]
    relevant = sum(1 for r in table_regions if r.relevant)
    total_tables = len(table_regions)
    irrelevant_fraction = (total_tables - relevant) / total_tables if total_tables else 0.0

    counts = sorted(
        smiles_mod.heavy_atom_count(smiles_mod.parse_smiles(row.smiles)) for row in truth_rows
    )
    summary: dict = {}
    if counts:
        arr = np.asarray(counts, dtype=float)
        mean = float(arr.mean())
        median = float(np.median(arr))
        lo = int(min(counts))
        hi = int(max(counts))
        start = (lo // bin_width) * bin_width
        bins = []
        edge = start
        while edge <= hi:
            in_bin = sum(1 for c in counts if edge <= c < edge + bin_width)
            bins.append({"lo": edge, "hi": edge + bin_width, "count": in_bin})
            edge += bin_width
        summary = {
            "mean": mean,
            "median": median,
            "min": lo,
            "max": hi,
            "n": len(counts),
            "histogram": {"bin_width": bin_width, "bins": bins},
            "kde": gaussian_kde_curve(counts),
            "right_skew": mean > median,
        }
    return {
        "schema": "sarline.stats/1",
        "doc_counts": {"patents": patents, "literature": literature, "by_language": by_language},
        "table_counts": {
            "total": total_tables,
            "relevant": relevant,
            "irrelevant_fraction": irrelevant_fraction,
        },
        "atom_count_summary": summary,
    }


@main.command("stats")
@click.option("--truth", required=True, type=click.Path(exists=True, dir_okay=False))
@click.option("--bundles", required=True, type=click.Path(exists=True, file_okay=False))
@click.option("--bin-width", default=5, type=int)
@click.option("--out", default=None, type=str)
def cmd_stats(truth: str, bundles: str, bin_width: int, out: str | None) -> None:
    """Benchmark composition and molecular-size statistics."""
    try:
        report = compute_stats(truth, bundles, bin_width)
    except EmptyCorpus as exc:
        click.echo(str(exc), err=True)
        sys.exit(2)
    docs = report["doc_counts"]
    tables = report["table_counts"]
    click.echo(f"documents: {docs['patents']} patents, {docs['literature']} literature")
    click.echo(
        f"tables: {tables['total']} total, {tables['relevant']} relevant"
        f" (irrelevant fraction {tables['irrelevant_fraction']:.4f})"
    )
    summary = report["atom_count_summary"]
    if summary:
        skew = " (right-skewed)" if summary["right_skew"] else ""
        click.echo(
            f"atom counts: mean {summary['mean']:.2f}, median {summary['median']:.2f},"
            f" range [{summary['min']}, {summary['max']}]{skew}"
        )
    if out:
        _echo_json(Path(out), report)
    else:
        click.echo(json.dumps(report, ensure_ascii=False, sort_keys=True))
    sys.exit(0)


@main.command("serve")
@click.option("--config", "config_path", default=None, type=str)
@click.option("--listen", default="127.0.0.1:8400", type=str)
@click.option("--store", "store_path", default="sarline.db", type=str)
@click.option("--ui-dir", default=None, type=str)
def cmd_serve(config_path: str | None, listen: str, store_path: str, ui_dir: str | None) -> None:
    """Serve the review API (and UI when static assets are available)."""
    import uvicorn

    if config_path is not None and not Path(config_path).is_file():
        click.echo(f"config error: {config_path} not found", err=True)
        sys.exit(2)
    lock_path = Path(store_path).with_suffix(".lock")
    lock_path.parent.mkdir(parents=True, exist_ok=True)
    lock_file = open(lock_path, "w")
    try:
        fcntl.flock(lock_file, fcntl.LOCK_EX | fcntl.LOCK_NB)
    except OSError:
        click.echo(f"StoreLocked: another instance holds {lock_path}", err=True)
        sys.exit(3)
    host, _, port = listen.partition(":")
    app = create_app(store_path, ui_dir=ui_dir)
    try:
        uvicorn.run(app, host=host or "127.0.0.1", port=int(port or 8400), log_level="warning")
    except OSError as exc:
        if exc.errno == errno.EADDRINUSE:
            click.echo(f"AddressInUse: {listen}", err=True)
            sys.exit(4)
        raise


@main.command("demo")
@click.option("--out", required=True, type=click.Path(file_okay=False))
def cmd_demo(out: str) -> None:
    """Materialize the bundled synthetic demo corpus."""
    from .fixtures import build_demo_corpus

    demo = build_demo_corpus(out)
    click.echo(json.dumps({
        "corpus_dir": str(demo.corpus_dir),
        "oracle": str(demo.oracle_path),
        "truth": str(demo.truth_path),
        "coref_truth": str(demo.coref_truth_path),
        "teds_truth": str(demo.teds_truth_path),
    }))


if __name__ == "__main__":
    main()
