"""Evaluation measures: Table Recall, coreference recall, TEDS, aggregation."""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from enum import Enum
from fractions import Fraction
from typing import Mapping, Sequence

from . import smiles as smiles_mod
from .align import levenshtein, normalize_id
from .domain import DocType, GroundTruthRow, SarRecord
from .tableparse import NotActivityTable, TableTree, parse_table_html


class EmptyTruth(ValueError):
    pass


class Difficulty(str, Enum):
    SIMPLE = "Simple"
    HARD = "Hard"


# --- Table Recall -------------------------------------------------------------


def _activity_matches(pred, truth, rel_tol: float = 1e-6) -> bool:
    return (
        pred.attribute == truth.attribute
        and pred.qualifier == truth.qualifier
        and pred.unit == truth.unit
        and math.isclose(pred.value, truth.value, rel_tol=rel_tol, abs_tol=0.0)
    )


def _covers(pred_activities: Sequence, truth_activities: Sequence) -> bool:
    """Multiset cover with tolerance: every truth activity consumes a distinct prediction."""
    if len(truth_activities) > len(pred_activities):
        return False
    used = [False] * len(pred_activities)

    def assign(i: int) -> bool:
        if i == len(truth_activities):
            return True
        for j, pred in enumerate(pred_activities):
            if not used[j] and _activity_matches(pred, truth_activities[i]):
                used[j] = True
                if assign(i + 1):
                    return True
                used[j] = False
        return False

    return assign(0)


def table_recall(
    predicted: Sequence[SarRecord], truth: Sequence[GroundTruthRow]
) -> tuple[int, int, float]:
    """A truth row is hit when one record matches its SMILES (canonically)
    and covers its complete activity set. Returns (hit, total, rate)."""
    if not truth:
        raise EmptyTruth("no ground truth rows")
    pred_by_key: dict[str, list[SarRecord]] = {}
    for record in predicted:
        try:
            key = smiles_mod.canonical_key_of(record.smiles)
        except smiles_mod.SmilesError:
            continue
        pred_by_key.setdefault(key, []).append(record)
    hit = 0
    for row in truth:
        key = smiles_mod.canonical_key_of(row.smiles)
        if any(_covers(rec.activities, row.activities) for rec in pred_by_key.get(key, [])):
            hit += 1
    total = len(truth)
    return hit, total, hit / total


# --- coreference recall ---------------------------------------------------------


@dataclass(frozen=True)
class CorefTruth:
    id: str
    difficulty: Difficulty


def coref_recall(
    predicted: Mapping[str, str | None],
    truth: Mapping[str, CorefTruth],
) -> dict[str, float | None]:
    """Recall of normalized-equal coreference predictions, split by difficulty."""
    if not truth:
        raise EmptyTruth("no coreference truth")
    hits = {Difficulty.SIMPLE: 0, Difficulty.HARD: 0}
    totals = {Difficulty.SIMPLE: 0, Difficulty.HARD: 0}
    for region_id, entry in truth.items():
        totals[entry.difficulty] += 1
        pred = predicted.get(region_id)
        if pred is not None and normalize_id(pred) == normalize_id(entry.id):
            hits[entry.difficulty] += 1
    overall_total = sum(totals.values())
    overall_hits = sum(hits.values())

    def rate(difficulty: Difficulty) -> float | None:
        if totals[difficulty] == 0:
            return None
        return hits[difficulty] / totals[difficulty]

    return {
        "overall": overall_hits / overall_total,
        "simple": rate(Difficulty.SIMPLE),
        "hard": rate(Difficulty.HARD),
    }


# --- TEDS ----------------------------------------------------------------------
#
# Tree edit distance via the classic postorder/keyroots dynamic program with
# unit insert/delete cost. Substitution cost is 0 for equal labels, 1 when the
# tags differ, and otherwise the normalized Levenshtein distance between cell
# texts. Costs are exact rationals so evaluation order cannot perturb results.


@dataclass
class _TedNode:
    label: tuple[str, int, int, str]
    children: list["_TedNode"] = field(default_factory=list)


def _tree_from_table(tree: TableTree) -> _TedNode:
    root = _TedNode(("table", 1, 1, ""))
    for row in tree.rows:
        row_node = _TedNode(("tr", 1, 1, ""))
        for cell in row.cells:
            row_node.children.append(_TedNode((cell.tag, cell.rowspan, cell.colspan, cell.text)))
        root.children.append(row_node)
    return root


def _sub_cost(a: tuple, b: tuple) -> Fraction:
    if a == b:
        return Fraction(0)
    if a[0] != b[0]:
        return Fraction(1)
    text_a, text_b = a[3], b[3]
    if text_a == text_b:
        return Fraction(0)
    return Fraction(levenshtein(text_a, text_b), max(len(text_a), len(text_b)))


def _postorder(root: _TedNode) -> tuple[list[tuple], list[int], list[int]]:
    """Postorder labels, leftmost-leaf-descendant indices, and keyroots."""
    labels: list[tuple] = []
    lmds: list[int] = []

    def walk(node: _TedNode) -> int:
        if not node.children:
            labels.append(node.label)
            lmds.append(len(labels) - 1)
            return len(labels) - 1
        first_lmd: int | None = None
        for child in node.children:
            idx = walk(child)
            if first_lmd is None:
                first_lmd = lmds[idx]
        labels.append(node.label)
        assert first_lmd is not None
        lmds.append(first_lmd)
        return len(labels) - 1

    walk(root)
    keyroots_map: dict[int, int] = {}
    for i, lmd in enumerate(lmds):
        keyroots_map[lmd] = i
    keyroots = sorted(keyroots_map.values())
    return labels, lmds, keyroots


def tree_edit_distance(a: _TedNode, b: _TedNode) -> Fraction:
    la, lmda, kra = _postorder(a)
    lb, lmdb, krb = _postorder(b)
    n, m = len(la), len(lb)
    treedist = [[Fraction(0)] * m for _ in range(n)]

    def compute(i: int, j: int) -> None:
        ioff = lmda[i] - 1
        joff = lmdb[j] - 1
        rows = i - lmda[i] + 2
        cols = j - lmdb[j] + 2
        fd = [[Fraction(0)] * cols for _ in range(rows)]
        for x in range(1, rows):
            fd[x][0] = fd[x - 1][0] + 1
        for y in range(1, cols):
            fd[0][y] = fd[0][y - 1] + 1
        for x in range(1, rows):
            for y in range(1, cols):
                if lmda[i] == lmda[x + ioff] and lmdb[j] == lmdb[y + joff]:
                    fd[x][y] = min(
                        fd[x - 1][y] + 1,
                        fd[x][y - 1] + 1,
                        fd[x - 1][y - 1] + _sub_cost(la[x + ioff], lb[y + joff]),
                    )
                    treedist[x + ioff][y + joff] = fd[x][y]
                else:
                    p = lmda[x + ioff] - 1 - ioff
                    q = lmdb[y + joff] - 1 - joff
                    fd[x][y] = min(
                        fd[x - 1][y] + 1,
                        fd[x][y - 1] + 1,
                        fd[p][q] + treedist[x + ioff][y + joff],
                    )

    for i in kra:
        for j in krb:
            compute(i, j)
    return treedist[n - 1][m - 1]


def _node_count(node: _TedNode) -> int:
    return 1 + sum(_node_count(c) for c in node.children)


def teds(pred_html: str, truth_html: str) -> float:
    """Tree-edit-distance similarity in [0,1]; the sentinel counts as an empty tree."""

    def load(html: str) -> _TedNode | None:
        try:
            return _tree_from_table(parse_table_html(html))
        except NotActivityTable:
            return None

    tp = load(pred_html)
    tt = load(truth_html)
    if tp is None and tt is None:
        return 1.0
    np_ = _node_count(tp) if tp is not None else 0
    nt = _node_count(tt) if tt is not None else 0
    if tp is None or tt is None:
        return 0.0
    distance = tree_edit_distance(tp, tt)
    return float(1 - distance / max(np_, nt))


def classify_table(html: str) -> Difficulty:
    """Hard tables have merged cells or multi-level headers; the rest are simple."""
    try:
        tree = parse_table_html(html)
    except NotActivityTable:
        return Difficulty.SIMPLE
    header_rows = 0
    for row in tree.rows:
        if row.cells and all(c.tag == "th" for c in row.cells):
            header_rows += 1
        else:
            break
    for row in tree.rows:
        for cell in row.cells:
            if cell.rowspan > 1 or cell.colspan > 1:
                return Difficulty.HARD
    return Difficulty.HARD if header_rows > 1 else Difficulty.SIMPLE


# --- aggregation -----------------------------------------------------------------


@dataclass
class PerDocEval:
    doc_id: str
    doc_type: DocType
    rows_hit: int
    rows_total: int
    coref_hits: dict[Difficulty, int] = field(default_factory=dict)
    coref_totals: dict[Difficulty, int] = field(default_factory=dict)
    teds_scores: dict[Difficulty, list[float]] = field(default_factory=dict)

    @property
    def table_recall(self) -> float:
        return self.rows_hit / self.rows_total if self.rows_total else 0.0


@dataclass
class EvalReport:
    per_doc: dict[str, dict]
    overall: float
    by_doc_type: dict[str, float]
    coref_recall: dict[str, float | None] | None = None
    teds: dict[str, float | None] | None = None

    def to_dict(self) -> dict:
        out = {
            "per_doc": self.per_doc,
            "overall": self.overall,
            "by_doc_type": self.by_doc_type,
        }
        if self.coref_recall is not None:
            out["coref_recall"] = self.coref_recall
        if self.teds is not None:
            out["teds"] = self.teds
        return out


def aggregate(results: Sequence[PerDocEval]) -> EvalReport:
    """Micro-averaged overall recall plus per-document-type splits.

    Sub-task sections appear only when some document carried that truth.
    """
    if not results:
        raise EmptyTruth("no documents evaluated")
    per_doc = {
        r.doc_id: {"table_recall": r.table_recall, "rows_total": r.rows_total, "rows_hit": r.rows_hit}
        for r in results
    }
    total = sum(r.rows_total for r in results)
    hit = sum(r.rows_hit for r in results)
    overall = hit / total if total else 0.0
    by_type: dict[str, float] = {}
    for doc_type in DocType:
        docs = [r for r in results if r.doc_type == doc_type]
        type_total = sum(r.rows_total for r in docs)
        if type_total:
            by_type[doc_type.value] = sum(r.rows_hit for r in docs) / type_total

    coref_section: dict[str, float | None] | None = None
    if any(r.coref_totals for r in results):
        hits = {d: sum(r.coref_hits.get(d, 0) for r in results) for d in Difficulty}
        totals = {d: sum(r.coref_totals.get(d, 0) for r in results) for d in Difficulty}
        grand = sum(totals.values())
        coref_section = {
            "overall": sum(hits.values()) / grand if grand else None,
            "simple": hits[Difficulty.SIMPLE] / totals[Difficulty.SIMPLE] if totals[Difficulty.SIMPLE] else None,
            "hard": hits[Difficulty.HARD] / totals[Difficulty.HARD] if totals[Difficulty.HARD] else None,
        }

    teds_section: dict[str, float | None] | None = None
    if any(r.teds_scores for r in results):
        pools: dict[Difficulty, list[float]] = {d: [] for d in Difficulty}
        for r in results:
            for d, scores in r.teds_scores.items():
                pools[d].extend(scores)
        everything = pools[Difficulty.SIMPLE] + pools[Difficulty.HARD]
        teds_section = {
            "overall": sum(everything) / len(everything) if everything else None,
            "simple": (
                sum(pools[Difficulty.SIMPLE]) / len(pools[Difficulty.SIMPLE])
                if pools[Difficulty.SIMPLE]
                else None
            ),
            "hard": (
                sum(pools[Difficulty.HARD]) / len(pools[Difficulty.HARD]) if pools[Difficulty.HARD] else None
            ),
        }
    return EvalReport(
        per_doc=per_doc,
        overall=overall,
        by_doc_type=by_type,
        coref_recall=coref_section,
        teds=teds_section,
    )
