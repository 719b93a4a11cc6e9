"""Deterministic demo corpus: ten synthetic documents with oracle backends.

Covers the interesting layouts end to end: same-page molecule+table linking,
a 36-page cross-page link, full-width multilingual identifiers, merged-cell
tables, qualifier cells, in-table [mol] structures, multi-table ranking,
duplicate molecules, an invalid recognizer output, and a natural fuzzy match.
Built programmatically so tests and the demo CLI share one source of truth.
"""

from __future__ import annotations

import csv
import json
from dataclasses import dataclass
from pathlib import Path

from PIL import Image, ImageDraw

from .domain import TRUTH_CSV_HEADER

PAGE_W, PAGE_H = 360, 240


@dataclass(frozen=True)
class DemoCorpus:
    root: Path
    corpus_dir: Path
    oracle_path: Path
    truth_path: Path
    coref_truth_path: Path
    teds_truth_path: Path


def _region(rid: str, page: int, kind: str, box: tuple[int, int, int, int], conf: float, **extra) -> dict:
    x, y, w, h = box
    region = {
        "id": rid,
        "page_index": page,
        "kind": kind,
        "bbox": {"x": x, "y": y, "w": w, "h": h},
        "confidence": conf,
    }
    region.update(extra)
    return region


def _doc(doc_id: str, doc_type: str, langs: list[str], n_pages: int, regions: list[dict]) -> dict:
    return {
        "doc_id": doc_id,
        "doc_type": doc_type,
        "language_tags": langs,
        "dpi": 200,
        "pages": [{"width": PAGE_W, "height": PAGE_H} for _ in range(n_pages)],
        "regions": regions,
    }


def _demo_documents() -> tuple[list[dict], dict, list[list], dict, dict]:
    docs: list[dict] = []
    oracle: dict = {"detections": {}, "ocsr": {}, "coref": {}, "tables": {}, "noise": {"seed": 0, "coref_edits": 0}}
    truth_rows: list[list] = []
    coref_truth: dict = {}
    teds_truth: dict = {}

    def table_html(headers: list[str], rows: list[list[str]], header_attrs: list[str] | None = None) -> str:
        parts = ["<table>", "<tr>"]
        for i, h in enumerate(headers):
            attr = f" {header_attrs[i]}" if header_attrs and header_attrs[i] else ""
            parts.append(f"<th{attr}>{h}</th>")
        parts.append("</tr>")
        for row in rows:
            parts.append("<tr>" + "".join(f"<td>{c}</td>" for c in row) + "</tr>")
        parts.append("</table>")
        return "".join(parts)

    # doc01: molecule and activity table co-located on one page.
    docs.append(
        _doc(
            "doc01_intra",
            "Literature",
            ["en"],
            1,
            [
                _region("d01m1", 0, "Molecule", (30, 30, 90, 60), 0.97),
                _region("d01t1", 0, "Table", (30, 120, 300, 100), 0.95, relevant=True),
            ],
        )
    )
    oracle["ocsr"]["d01m1"] = "CC(=O)Oc1ccccc1C(=O)O"
    oracle["coref"]["d01m1"] = {"left": "7"}
    oracle["tables"]["d01t1"] = table_html(["ID", "IC50 (nM)"], [["7", "2.3"], ["8", "15"]])
    truth_rows.append(["doc01_intra", "7", "CC(=O)Oc1ccccc1C(=O)O", "IC50", "", "2.3", "nM", 0, 0])
    coref_truth["d01m1"] = {"id": "7", "difficulty": "Hard"}
    teds_truth["d01t1"] = oracle["tables"]["d01t1"]

    # doc02: molecules on page 34, activity table 36 pages later (page 70).
    docs.append(
        _doc(
            "doc02_crosspage",
            "Patent",
            ["zh", "en"],
            70,
            [
                _region("d02m1", 33, "Molecule", (30, 30, 90, 60), 0.93),
                _region("d02m2", 33, "Molecule", (30, 120, 90, 60), 0.91),
                _region("d02t1", 69, "Table", (30, 40, 300, 140), 0.96, relevant=True),
            ],
        )
    )
    oracle["ocsr"]["d02m1"] = "Clc1ccccc1"
    oracle["ocsr"]["d02m2"] = "N#Cc1ccccc1"
    oracle["coref"]["d02m1"] = {"left": "A35"}
    oracle["coref"]["d02m2"] = {"right": "A36"}
    oracle["tables"]["d02t1"] = table_html(["No.", "Ki (uM)"], [["A35", "12"], ["A36", "30"]])
    truth_rows.append(["doc02_crosspage", "A35", "Clc1ccccc1", "Ki", "", "12", "uM", 33, 69])
    truth_rows.append(["doc02_crosspage", "A36", "N#Cc1ccccc1", "Ki", "", "30", "uM", 33, 69])
    coref_truth["d02m1"] = {"id": "A35", "difficulty": "Hard"}
    coref_truth["d02m2"] = {"id": "A36", "difficulty": "Hard"}
    teds_truth["d02t1"] = oracle["tables"]["d02t1"]

    # doc03: full-width Japanese identifier resolved via normalization.
    docs.append(
        _doc(
            "doc03_multilingual",
            "Patent",
            ["ja", "zh"],
            2,
            [
                _region("d03m1", 0, "Molecule", (40, 50, 100, 70), 0.9),
                _region("d03t1", 1, "Table", (20, 30, 320, 160), 0.94, relevant=True),
            ],
        )
    )
    oracle["ocsr"]["d03m1"] = "CCN(CC)CC"
    oracle["coref"]["d03m1"] = "化合物１２"
    oracle["tables"]["d03t1"] = table_html(["化合物", "EC50 (uM)"], [["化合物12", "5"], ["化合物13", "9"]])
    truth_rows.append(["doc03_multilingual", "化合物12", "CCN(CC)CC", "EC50", "", "5", "uM", 0, 1])
    coref_truth["d03m1"] = {"id": "化合物12", "difficulty": "Hard"}
    teds_truth["d03t1"] = oracle["tables"]["d03t1"]

    # doc04: merged cells and a two-level header; one molecule, two IC50 readouts.
    docs.append(
        _doc(
            "doc04_spans",
            "Literature",
            ["en"],
            1,
            [
                _region("d04m1", 0, "Molecule", (30, 20, 80, 60), 0.92),
                _region("d04t1", 0, "Table", (20, 100, 320, 120), 0.97, relevant=True),
            ],
        )
    )
    oracle["ocsr"]["d04m1"] = "C1CCCCC1"
    oracle["coref"]["d04m1"] = {"left": "4a"}
    oracle["tables"]["d04t1"] = (
        '<table><tr><th rowspan="2">Compound</th><th colspan="2">IC50 (nM)</th></tr>'
        "<tr><th>WT</th><th>Mutant</th></tr>"
        "<tr><td>4a</td><td>12</td><td>45</td></tr></table>"
    )
    truth_rows.append(["doc04_spans", "4a", "C1CCCCC1", "IC50", "", "12", "nM", 0, 0])
    truth_rows.append(["doc04_spans", "4a", "C1CCCCC1", "IC50", "", "45", "nM", 0, 0])
    coref_truth["d04m1"] = {"id": "4a", "difficulty": "Hard"}
    teds_truth["d04t1"] = oracle["tables"]["d04t1"]

    # doc05: qualifier cells; coreference found right of the structure.
    docs.append(
        _doc(
            "doc05_qualifiers",
            "Patent",
            ["en"],
            2,
            [
                _region("d05m1", 0, "Molecule", (40, 60, 90, 60), 0.9),
                _region("d05t1", 1, "Table", (20, 40, 320, 140), 0.95, relevant=True),
            ],
        )
    )
    oracle["ocsr"]["d05m1"] = "OC(=O)c1ccccc1"
    oracle["coref"]["d05m1"] = {"right": "5b"}
    oracle["tables"]["d05t1"] = table_html(
        ["No.", "Ki (uM)", "TC50 (uM)"], [["5a", "2.4", "0.8"], ["5b", ">10", "~2.5"]]
    )
    truth_rows.append(["doc05_qualifiers", "5b", "OC(=O)c1ccccc1", "Ki", ">", "10", "uM", 0, 1])
    truth_rows.append(["doc05_qualifiers", "5b", "OC(=O)c1ccccc1", "TC50", "~", "2.5", "uM", 0, 1])
    coref_truth["d05m1"] = {"id": "5b", "difficulty": "Hard"}
    teds_truth["d05t1"] = oracle["tables"]["d05t1"]

    # doc06: nothing to link - absent coreference, unmatched id, irrelevant table.
    docs.append(
        _doc(
            "doc06_unmatched",
            "Literature",
            ["en"],
            1,
            [
                _region("d06m1", 0, "Molecule", (20, 20, 80, 60), 0.88),
                _region("d06m2", 0, "Molecule", (120, 20, 80, 60), 0.86),
                _region("d06t1", 0, "Table", (20, 100, 150, 120), 0.9, relevant=True),
                _region(
                    "d06t2",
                    0,
                    "Table",
                    (190, 100, 150, 120),
                    0.85,
                    relevant=False,
                    text="Synthesis yields by step (%)",
                ),
            ],
        )
    )
    oracle["ocsr"]["d06m1"] = "CCO"
    oracle["coref"]["d06m1"] = "[None]"
    oracle["ocsr"]["d06m2"] = "CCOCC"
    oracle["coref"]["d06m2"] = "9z"
    oracle["tables"]["d06t1"] = table_html(["ID", "EC50 (nM)"], [["6a", "40"], ["6b", "55"]])
    coref_truth["d06m2"] = {"id": "9x", "difficulty": "Hard"}
    teds_truth["d06t1"] = oracle["tables"]["d06t1"]

    # doc07: structures drawn inside the table; identity from the same cell.
    docs.append(
        _doc(
            "doc07_moltoken",
            "Patent",
            ["zh", "en"],
            1,
            [
                _region("d07t1", 0, "Table", (10, 10, 340, 210), 0.96, relevant=True),
                _region("d07m1", 0, "Molecule", (20, 40, 60, 40), 0.9),
                _region("d07m2", 0, "Molecule", (20, 110, 60, 40), 0.9),
            ],
        )
    )
    oracle["ocsr"]["d07m1"] = "CC(N)C(=O)O"
    oracle["coref"]["d07m1"] = {"cell": "A35"}
    oracle["ocsr"]["d07m2"] = "CCOC(=O)C"
    oracle["coref"]["d07m2"] = {"cell": "A36"}
    oracle["tables"]["d07t1"] = table_html(
        ["Structure", "ID", "IC50 (uM)", "Ti (%)"],
        [["[mol]", "A35", "0.5", "90"], ["[mol]", "A36", "1.5", "75"]],
    )
    truth_rows.append(["doc07_moltoken", "A35", "CC(N)C(=O)O", "IC50", "", "0.5", "uM", 0, 0])
    truth_rows.append(["doc07_moltoken", "A35", "CC(N)C(=O)O", "Ti", "", "90", "%", 0, 0])
    truth_rows.append(["doc07_moltoken", "A36", "CCOC(=O)C", "IC50", "", "1.5", "uM", 0, 0])
    truth_rows.append(["doc07_moltoken", "A36", "CCOC(=O)C", "Ti", "", "75", "%", 0, 0])
    coref_truth["d07m1"] = {"id": "A35", "difficulty": "Simple"}
    coref_truth["d07m2"] = {"id": "A36", "difficulty": "Simple"}
    teds_truth["d07t1"] = oracle["tables"]["d07t1"]

    # doc08: the same identifier appears in two tables; proximity decides.
    docs.append(
        _doc(
            "doc08_ranking",
            "Literature",
            ["en"],
            3,
            [
                _region("d08m1", 0, "Molecule", (30, 30, 80, 60), 0.94),
                _region("d08t1", 0, "Table", (20, 110, 320, 110), 0.95, relevant=True),
                _region("d08t2", 2, "Table", (20, 110, 320, 110), 0.95, relevant=True),
            ],
        )
    )
    oracle["ocsr"]["d08m1"] = "c1ccncc1"
    oracle["coref"]["d08m1"] = {"left": "12"}
    oracle["tables"]["d08t1"] = table_html(["Entry", "IC50 (nM)"], [["12", "100"], ["13", "210"]])
    oracle["tables"]["d08t2"] = table_html(["Entry", "IC50 (kcal/mol)"], [["12", "60"]])
    truth_rows.append(["doc08_ranking", "12", "c1ccncc1", "IC50", "", "100", "nM", 0, 0])
    coref_truth["d08m1"] = {"id": "12", "difficulty": "Hard"}
    teds_truth["d08t1"] = oracle["tables"]["d08t1"]
    teds_truth["d08t2"] = oracle["tables"]["d08t2"]

    # doc09: duplicate structures collapse; an invalid recognizer output is rejected.
    docs.append(
        _doc(
            "doc09_dedupe",
            "Patent",
            ["en"],
            1,
            [
                _region("d09m1", 0, "Molecule", (20, 20, 70, 50), 0.95),
                _region("d09m2", 0, "Molecule", (110, 20, 70, 50), 0.94),
                _region("d09m3", 0, "Molecule", (200, 20, 70, 50), 0.82),
                _region("d09t1", 0, "Table", (20, 100, 320, 120), 0.96, relevant=True),
            ],
        )
    )
    oracle["ocsr"]["d09m1"] = "CC(C)Cc1ccc(cc1)C(C)C(=O)O"
    oracle["ocsr"]["d09m2"] = "OC(=O)C(C)c1ccc(CC(C)C)cc1"  # same molecule, different traversal
    oracle["ocsr"]["d09m3"] = "C1CC"  # unclosed ring: rejected downstream, never here
    oracle["coref"]["d09m1"] = "9"
    oracle["coref"]["d09m2"] = "9"
    oracle["coref"]["d09m3"] = "10"
    oracle["tables"]["d09t1"] = table_html(["No.", "Kd (nM)"], [["9", "3.4"], ["10", "8"]])
    truth_rows.append(["doc09_dedupe", "9", "CC(C)Cc1ccc(cc1)C(C)C(=O)O", "Kd", "", "3.4", "nM", 0, 0])
    coref_truth["d09m1"] = {"id": "9", "difficulty": "Hard"}
    coref_truth["d09m3"] = {"id": "10", "difficulty": "Hard"}
    teds_truth["d09t1"] = oracle["tables"]["d09t1"]

    # doc10: a one-character recognizer slip lands in the fuzzy tier (sim 5/6).
    docs.append(
        _doc(
            "doc10_fuzzy",
            "Literature",
            ["en", "de"],
            2,
            [
                _region("d10m1", 0, "Molecule", (40, 40, 90, 60), 0.9),
                _region("d10t1", 1, "Table", (20, 40, 320, 130), 0.93, relevant=True),
            ],
        )
    )
    oracle["ocsr"]["d10m1"] = "CCCCCC(C)C"
    oracle["coref"]["d10m1"] = "XR9576"
    oracle["tables"]["d10t1"] = table_html(["Compound", "EC50 (uM)"], [["XR9578", "0.25"]])
    truth_rows.append(["doc10_fuzzy", "XR9578", "CCCCCC(C)C", "EC50", "", "0.25", "uM", 0, 1])
    coref_truth["d10m1"] = {"id": "XR9578", "difficulty": "Hard"}
    teds_truth["d10t1"] = oracle["tables"]["d10t1"]

    return docs, oracle, truth_rows, coref_truth, teds_truth


def _render_page(doc: dict, page_index: int, path: Path) -> None:
    image = Image.new("RGB", (doc["pages"][page_index]["width"], doc["pages"][page_index]["height"]), "white")
    draw = ImageDraw.Draw(image)
    for region in doc["regions"]:
        if region["page_index"] != page_index:
            continue
        b = region["bbox"]
        color = (70, 110, 180) if region["kind"] == "Molecule" else (120, 120, 120)
        draw.rectangle([b["x"], b["y"], b["x"] + b["w"], b["y"] + b["h"]], outline=color, width=2)
        draw.text((b["x"] + 4, b["y"] + 4), region["id"], fill=color)
    image.save(path, format="PNG")


def build_demo_corpus(root: str | Path) -> DemoCorpus:
    """Materialize the demo corpus under `root` and return its paths."""
    root = Path(root)
    corpus_dir = root / "corpus"
    corpus_dir.mkdir(parents=True, exist_ok=True)
    docs, oracle, truth_rows, coref_truth, teds_truth = _demo_documents()
    for doc in docs:
        doc_dir = corpus_dir / doc["doc_id"]
        doc_dir.mkdir(parents=True, exist_ok=True)
        (doc_dir / "manifest.json").write_text(
            json.dumps(doc, ensure_ascii=False, indent=1), encoding="utf-8"
        )
        pages_with_content = {r["page_index"] for r in doc["regions"]}
        blank_bytes: bytes | None = None
        for i in range(len(doc["pages"])):
            path = doc_dir / f"page_{i}.png"
            if i in pages_with_content:
                _render_page(doc, i, path)
            else:
                if blank_bytes is None:
                    Image.new("RGB", (PAGE_W, PAGE_H), "white").save(path, format="PNG")
                    blank_bytes = path.read_bytes()
                else:
                    path.write_bytes(blank_bytes)
    oracle_path = root / "oracle.json"
    oracle_path.write_text(json.dumps(oracle, ensure_ascii=False, indent=1), encoding="utf-8")
    truth_path = root / "truth.csv"
    with open(truth_path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(TRUTH_CSV_HEADER)
        writer.writerows(truth_rows)
    coref_truth_path = root / "coref_truth.json"
    coref_truth_path.write_text(json.dumps(coref_truth, ensure_ascii=False, indent=1), encoding="utf-8")
    teds_truth_path = root / "teds_truth.json"
    teds_truth_path.write_text(json.dumps(teds_truth, ensure_ascii=False, indent=1), encoding="utf-8")
    return DemoCorpus(
        root=root,
        corpus_dir=corpus_dir,
        oracle_path=oracle_path,
        truth_path=truth_path,
        coref_truth_path=coref_truth_path,
        teds_truth_path=teds_truth_path,
    )
