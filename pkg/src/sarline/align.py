"""Post-processing core: fuzzy identifier matching and SAR record assembly.

Molecule coreference IDs are linked to table-row identifiers through a
four-tier cascade (exact, case-insensitive, normalized, fuzzy) with a
similarity threshold, then ranked by a composite of similarity, page
proximity, and naming consistency. Quality control validates SMILES,
checks activity ranges, and removes duplicates.
"""

from __future__ import annotations

import logging
import re
import unicodedata
from dataclasses import dataclass, field, replace
from enum import Enum
from fractions import Fraction
from typing import Mapping, Sequence

from . import smiles as smiles_mod
from .domain import (
    ActivityValue,
    Attribute,
    MatchTier,
    MoleculeCandidate,
    Region,
    SarRecord,
    TIER_ORDER,
    Unit,
)
from .tableparse import MOL_TOKEN, ParsedActivityTable

logger = logging.getLogger(__name__)


class BothEmpty(ValueError):
    """similarity() is undefined when both strings are empty (0/0)."""


class EmptyCandidates(ValueError):
    pass


class OnRangeViolation(str, Enum):
    FLAG = "Flag"
    DROP = "Drop"


#: Plausibility bounds per attribute; concentrations positive, percent 0-100.
DEFAULT_ACTIVITY_RANGES: dict[Attribute, tuple[float, float]] = {
    Attribute.EC50: (0.0, 1e9),
    Attribute.IC50: (0.0, 1e9),
    Attribute.KI: (0.0, 1e9),
    Attribute.KD: (0.0, 1e9),
    Attribute.PKD: (-100.0, 100.0),
    Attribute.TD50: (0.0, 1e9),
    Attribute.TI: (0.0, 1e9),
    Attribute.TC50: (0.0, 1e9),
}


@dataclass(frozen=True)
class MatchConfig:
    delta: float = 0.8
    w_sim: float = 0.6
    w_prox: float = 0.2
    w_name: float = 0.2
    proximity_half_life_pages: float = 10.0
    activity_ranges: Mapping[Attribute, tuple[float, float]] = field(
        default_factory=lambda: dict(DEFAULT_ACTIVITY_RANGES)
    )
    on_range_violation: OnRangeViolation = OnRangeViolation.FLAG

    def __post_init__(self) -> None:
        if not (0 < self.delta <= 1):
            raise ValueError(f"delta must be in (0,1], got {self.delta}")
        total = self.w_sim + self.w_prox + self.w_name
        if abs(total - 1.0) > 1e-9:
            raise ValueError(f"weights must sum to 1, got {total}")
        if min(self.w_sim, self.w_prox, self.w_name) < 0:
            raise ValueError("weights must be nonnegative")
        if self.proximity_half_life_pages <= 0:
            raise ValueError("proximity half life must be positive")

    def to_dict(self) -> dict:
        return {
            "delta": self.delta,
            "w_sim": self.w_sim,
            "w_prox": self.w_prox,
            "w_name": self.w_name,
            "proximity_half_life_pages": self.proximity_half_life_pages,
            "activity_ranges": {a.value: list(r) for a, r in self.activity_ranges.items()},
            "on_range_violation": self.on_range_violation.value,
        }

    @classmethod
    def from_dict(cls, d: Mapping) -> "MatchConfig":
        ranges = {Attribute(k): (float(v[0]), float(v[1])) for k, v in d.get("activity_ranges", {}).items()}
        return cls(
            delta=float(d.get("delta", 0.8)),
            w_sim=float(d.get("w_sim", 0.6)),
            w_prox=float(d.get("w_prox", 0.2)),
            w_name=float(d.get("w_name", 0.2)),
            proximity_half_life_pages=float(d.get("proximity_half_life_pages", 10.0)),
            activity_ranges=ranges or dict(DEFAULT_ACTIVITY_RANGES),
            on_range_violation=OnRangeViolation(d.get("on_range_violation", "Flag")),
        )


def levenshtein(a: str, b: str) -> int:
    """Unit-cost edit distance over Unicode scalar values."""
    if a == b:
        return 0
    if not a:
        return len(b)
    if not b:
        return len(a)
    prev = list(range(len(b) + 1))
    for i, ca in enumerate(a, start=1):
        cur = [i] + [0] * len(b)
        for j, cb in enumerate(b, start=1):
            cur[j] = min(prev[j] + 1, cur[j - 1] + 1, prev[j - 1] + (ca != cb))
        prev = cur
    return prev[-1]


def similarity(a: str, b: str) -> float:
    """Normalized Levenshtein similarity: 1 - distance / max length.

    Computed in exact rational arithmetic before the final float conversion,
    so the result is the closest double to the true value.
    """
    if not a and not b:
        raise BothEmpty("similarity undefined for two empty strings")
    return float(1 - Fraction(levenshtein(a, b), max(len(a), len(b))))


_ID_PREFIXES = ("compound", "example", "cpd", "no", "化合物", "実施例")
_DELIMITERS = set("-_.,()[]")


def compact_id(s: str) -> str:
    """Light comparison form: NFKC width folding, casefold, delimiters removed.

    This is the form the fuzzy tier measures distances on; prefix words like
    "compound" stay, so a one-character slip stays a one-character slip.
    """
    s = unicodedata.normalize("NFKC", s).casefold()
    return "".join(ch for ch in s if not (ch in _DELIMITERS or ch.isspace()))


def normalize_id(s: str) -> str:
    """Canonical identity form: compact form with leading id words stripped too."""
    s = unicodedata.normalize("NFKC", s).casefold()
    changed = True
    while changed:
        changed = False
        s = s.lstrip()
        while s and (s[0] in _DELIMITERS or s[0].isspace()):
            s = s[1:]
        for prefix in _ID_PREFIXES:
            if s.startswith(prefix):
                rest = s[len(prefix) :]
                # Latin prefixes only strip at a word boundary ("no 5", not "nothing").
                if prefix.isascii() and rest[:1].isalpha():
                    continue
                s = rest
                changed = True
                break
    return "".join(ch for ch in s if not (ch in _DELIMITERS or ch.isspace()))


def cascade_match(mol_id: str, row_ids: Sequence[str], cfg: MatchConfig) -> list[tuple[int, MatchTier, float]]:
    """First tier with a hit wins; all hits of that tier are returned.

    Fuzzy similarity is measured on compact forms (delimiters and case folded
    away, prefix words kept) and must reach cfg.delta. An empty result means
    no match (not an error).
    """
    if not mol_id:
        raise ValueError("mol_id must be nonempty")
    exact = [(i, MatchTier.EXACT, 1.0) for i, rid in enumerate(row_ids) if rid == mol_id]
    if exact:
        return exact
    folded = mol_id.casefold()
    ci = [(i, MatchTier.CASE_INSENSITIVE, 1.0) for i, rid in enumerate(row_ids) if rid.casefold() == folded]
    if ci:
        return ci
    norm = normalize_id(mol_id)
    normalized = [
        (i, MatchTier.NORMALIZED, 1.0) for i, rid in enumerate(row_ids) if normalize_id(rid) == norm
    ]
    if normalized:
        return normalized
    compact = compact_id(mol_id)
    fuzzy = []
    for i, rid in enumerate(row_ids):
        rid_compact = compact_id(rid)
        if not compact and not rid_compact:
            continue  # both reduce to nothing: 0/0 guard, nothing to measure
        sim = similarity(compact, rid_compact)
        if sim >= cfg.delta:
            fuzzy.append((i, MatchTier.FUZZY, sim))
    return fuzzy


_CLASS_DIGITS = re.compile(r"\d+$")
_CLASS_DIGITS_SUFFIX = re.compile(r"\d+[a-z]+$")
_CLASS_LETTER_DIGITS = re.compile(r"[a-z]{1,2}\d+$")
_CLASS_WORD_NUMBER = re.compile(r"[a-z]+[\s\-_.]*\d+[a-z]*$")


def format_class(s: str) -> str | None:
    """Style class of an identifier: digits-only, digits+letter, letter+digits, word+number."""
    s = unicodedata.normalize("NFKC", s).casefold().strip()
    if _CLASS_DIGITS.fullmatch(s):
        return "digits"
    if _CLASS_DIGITS_SUFFIX.fullmatch(s):
        return "digits-suffix"
    if _CLASS_LETTER_DIGITS.fullmatch(s):
        return "letter-digits"
    if _CLASS_WORD_NUMBER.fullmatch(s):
        return "word-number"
    return None


@dataclass(frozen=True)
class MatchOutcome:
    molecule: MoleculeCandidate
    table_region: str
    row_index: int
    row_coref: str
    tier: MatchTier
    similarity: float
    delta_pages: int
    composite_score: float = 0.0


def composite_score(outcome: MatchOutcome, cfg: MatchConfig) -> float:
    proximity = 2.0 ** (-outcome.delta_pages / cfg.proximity_half_life_pages)
    mol_class = format_class(outcome.molecule.coref_id or "")
    row_class = format_class(outcome.row_coref)
    consistency = 1.0 if mol_class is not None and mol_class == row_class else 0.0
    return cfg.w_sim * outcome.similarity + cfg.w_prox * proximity + cfg.w_name * consistency


def rank_candidates(outcomes: Sequence[MatchOutcome], cfg: MatchConfig) -> MatchOutcome:
    """Highest composite score wins; ties prefer stronger tier, nearer page, smaller coref."""
    if not outcomes:
        raise EmptyCandidates("no match outcomes to rank")
    scored = [replace(o, composite_score=composite_score(o, cfg)) for o in outcomes]
    return min(
        scored,
        key=lambda o: (-o.composite_score, TIER_ORDER.index(o.tier), o.delta_pages, o.row_coref),
    )


def _in_range(value: float, bounds: tuple[float, float]) -> bool:
    low, high = bounds
    return low < value <= high if low == 0.0 else low <= value <= high


def _violates_range(activity: ActivityValue, cfg: MatchConfig) -> bool:
    """Unit class decides the default plausibility window; the attribute map
    applies when the unit gives no guidance (Unknown)."""
    value = activity.value
    if activity.unit in (Unit.UM, Unit.NM):
        return not (0.0 < value <= 1e9)
    if activity.unit is Unit.PERCENT:
        return not (0.0 <= value <= 100.0)
    if activity.unit is Unit.KCAL_PER_MOL:
        return not (abs(value) <= 1e4)
    bounds = cfg.activity_ranges.get(activity.attribute)
    return bounds is not None and not _in_range(value, bounds)


def _dedupe_key(record: SarRecord) -> tuple:
    key = smiles_mod.canonical_key_of(record.smiles)
    return (key, tuple(sorted(a.key() for a in record.activities)))


def quality_control(
    records: Sequence[SarRecord],
    cfg: MatchConfig,
    scores: Mapping[int, float] | None = None,
) -> tuple[list[SarRecord], list[tuple[SarRecord, str]]]:
    """SMILES validation, activity range checks, duplicate removal.

    `scores` maps input indices to composite scores for duplicate resolution;
    unscored records default to their match_similarity.
    """
    rejected: list[tuple[SarRecord, str]] = []
    survivors: list[tuple[int, SarRecord]] = []
    for idx, record in enumerate(records):
        try:
            smiles_mod.parse_smiles(record.smiles)
        except smiles_mod.SmilesError as exc:
            rejected.append((record, f"InvalidSmiles: {exc}"))
            continue
        out_of_range = [a for a in record.activities if _violates_range(a, cfg)]
        if out_of_range:
            labels = ", ".join(f"{a.attribute.value}={a.value}" for a in out_of_range)
            if cfg.on_range_violation is OnRangeViolation.DROP:
                rejected.append((record, f"RangeViolation: {labels}"))
                continue
            flag = f"RangeViolation: {labels}"
            if flag not in record.qc_flags:
                record.qc_flags.append(flag)
        survivors.append((idx, record))

    def score(idx: int, record: SarRecord) -> float:
        if scores is not None and idx in scores:
            return scores[idx]
        return record.match_similarity

    best: dict[tuple, tuple[float, int]] = {}
    for idx, record in survivors:
        key = _dedupe_key(record)
        current = best.get(key)
        if current is None or score(idx, record) > current[0]:
            best[key] = (score(idx, record), idx)
    kept: list[SarRecord] = []
    winners = {idx for _, idx in best.values()}
    for idx, record in survivors:
        if idx in winners:
            kept.append(record)
        else:
            rejected.append((record, "Duplicate"))
    return kept, rejected


@dataclass
class AssembleResult:
    records: list[SarRecord]
    unmatched: list[dict]
    rejected: list[tuple[SarRecord, str]]


def match_molecules(
    mols: Sequence[MoleculeCandidate],
    tables: Sequence[ParsedActivityTable],
    cfg: MatchConfig,
    regions: Mapping[str, Region],
) -> dict[str, list[MatchOutcome]]:
    """Per-table cascades pooled across tables, keyed by molecule region id."""
    outcomes: dict[str, list[MatchOutcome]] = {}
    for mol in mols:
        if not mol.coref_id:
            continue
        mol_page = regions[mol.region_id].page_index
        pool: list[MatchOutcome] = []
        for table in tables:
            row_ids = [row.coref_id or "" for row in table.rows]
            matchable = [rid if rid != MOL_TOKEN else "" for rid in row_ids]
            hits = cascade_match(mol.coref_id, matchable, cfg) if any(matchable) else []
            table_page = regions[table.table_region].page_index
            for row_pos, tier, sim in hits:
                if not matchable[row_pos]:
                    continue
                row = table.rows[row_pos]
                if not row.activities:
                    continue
                pool.append(
                    MatchOutcome(
                        molecule=mol,
                        table_region=table.table_region,
                        row_index=row.grid_row,
                        row_coref=row.coref_id or "",
                        tier=tier,
                        similarity=sim,
                        delta_pages=abs(mol_page - table_page),
                    )
                )
        if pool:
            outcomes[mol.region_id] = pool
    return outcomes


def assemble(
    mols: Sequence[MoleculeCandidate],
    tables: Sequence[ParsedActivityTable],
    cfg: MatchConfig,
    regions: Mapping[str, Region],
    doc_id: str,
) -> AssembleResult:
    """Link each molecule to its best table row and run quality control.

    Molecules without a usable coreference or with no qualifying row are
    reported in the unmatched list instead of producing records.
    """
    rows_by_table = {t.table_region: {r.grid_row: r for r in t.rows} for t in tables}
    outcome_pool = match_molecules(mols, tables, cfg, regions)
    records: list[SarRecord] = []
    scores: dict[int, float] = {}
    unmatched: list[dict] = []
    produced: dict[str, int] = {}
    for mol in mols:
        if not mol.coref_id:
            unmatched.append({"region_id": mol.region_id, "coref_id": mol.coref_id, "reason": "NoCoreference"})
            continue
        pool = outcome_pool.get(mol.region_id, [])
        if not pool:
            unmatched.append({"region_id": mol.region_id, "coref_id": mol.coref_id, "reason": "NoMatch"})
            continue
        winner = rank_candidates(pool, cfg)
        if not mol.smiles:
            unmatched.append({"region_id": mol.region_id, "coref_id": mol.coref_id, "reason": "NoSmiles"})
            continue
        row = rows_by_table[winner.table_region][winner.row_index]
        record = SarRecord(
            doc_id=doc_id,
            smiles=mol.smiles,
            coref_id=mol.coref_id,
            activities=list(row.activities),
            molecule_region=mol.region_id,
            table_region=winner.table_region,
            match_tier=winner.tier,
            match_similarity=winner.similarity if winner.tier is MatchTier.FUZZY else 1.0,
            molecule_page=regions[mol.region_id].page_index,
            table_page=regions[winner.table_region].page_index,
            table_row_index=winner.row_index,
        )
        scores[len(records)] = winner.composite_score
        produced[mol.region_id] = len(records)
        records.append(record)
    kept, rejected = quality_control(records, cfg, scores)
    kept_regions = {r.molecule_region for r in kept}
    for region_id, _ in produced.items():
        if region_id not in kept_regions:
            reason = next((why for rec, why in rejected if rec.molecule_region == region_id), "Rejected")
            unmatched.append({"region_id": region_id, "coref_id": None, "reason": reason.split(":")[0]})
    return AssembleResult(records=kept, unmatched=unmatched, rejected=rejected)
