"""Core document and extraction data model shared by every stage."""

from __future__ import annotations

import csv
import json
import math
from dataclasses import dataclass, field
from enum import Enum
from pathlib import Path
from typing import Any


class BundleError(Exception):
    """Base class for document-bundle loading failures."""


class MissingManifest(BundleError):
    pass


class MalformedManifest(BundleError):
    def __init__(self, field_name: str, detail: str = ""):
        self.field = field_name
        super().__init__(f"malformed manifest field {field_name!r}" + (f": {detail}" if detail else ""))


class DanglingPageReference(BundleError):
    def __init__(self, region_id: str, page_index: int, page_count: int):
        self.region_id = region_id
        self.page_index = page_index
        super().__init__(f"region {region_id!r} references page {page_index} of a {page_count}-page document")


class InvalidBBox(BundleError):
    pass


class BBoxOutsidePage(Exception):
    pass


class MalformedTruthCsv(Exception):
    def __init__(self, line: int, detail: str):
        self.line = line
        super().__init__(f"truth CSV line {line}: {detail}")


class RegionKind(str, Enum):
    MOLECULE = "Molecule"
    TABLE = "Table"


class DocType(str, Enum):
    PATENT = "Patent"
    LITERATURE = "Literature"


class Attribute(str, Enum):
    EC50 = "EC50"
    IC50 = "IC50"
    KI = "Ki"
    KD = "Kd"
    PKD = "pKd"
    TD50 = "TD50"
    TI = "Ti"
    TC50 = "TC50"


class Qualifier(str, Enum):
    NONE = ""
    GT = ">"
    LT = "<"
    GE = ">="
    LE = "<="
    APPROX = "~"


class Unit(str, Enum):
    UM = "uM"
    NM = "nM"
    PERCENT = "%"
    KCAL_PER_MOL = "kcal/mol"
    UNKNOWN = "Unknown"


class MatchTier(str, Enum):
    EXACT = "Exact"
    CASE_INSENSITIVE = "CaseInsensitive"
    NORMALIZED = "Normalized"
    FUZZY = "Fuzzy"


#: Tier precedence, strongest first; used for cascade order and tie-breaking.
TIER_ORDER = (MatchTier.EXACT, MatchTier.CASE_INSENSITIVE, MatchTier.NORMALIZED, MatchTier.FUZZY)


@dataclass(frozen=True)
class BBox:
    """Axis-aligned box in page-image pixel space (x left, y top)."""

    x: float
    y: float
    w: float
    h: float

    def __post_init__(self) -> None:
        if not (self.w > 0 and self.h > 0):
            raise InvalidBBox(f"bbox must have positive extent, got w={self.w}, h={self.h}")

    def to_dict(self) -> dict[str, float]:
        return {"x": self.x, "y": self.y, "w": self.w, "h": self.h}

    @classmethod
    def from_dict(cls, d: dict[str, Any]) -> "BBox":
        return cls(x=float(d["x"]), y=float(d["y"]), w=float(d["w"]), h=float(d["h"]))

    def contains_point(self, px: float, py: float) -> bool:
        return self.x <= px <= self.x + self.w and self.y <= py <= self.y + self.h


def context_window(bbox: BBox, scale: float, page_w: float, page_h: float) -> BBox:
    """Window scaled about the bbox center by `scale` per axis, clamped to the page.

    At scale=1 this is the bbox itself.
    """
    if scale < 1:
        raise ValueError(f"scale must be >= 1, got {scale}")
    if bbox.x < 0 or bbox.y < 0 or bbox.x + bbox.w > page_w or bbox.y + bbox.h > page_h:
        raise BBoxOutsidePage(f"bbox {bbox} outside page {page_w}x{page_h}")
    x = bbox.x - bbox.w * (scale - 1) / 2
    y = bbox.y - bbox.h * (scale - 1) / 2
    w = bbox.w * scale
    h = bbox.h * scale
    x0 = max(0.0, x)
    y0 = max(0.0, y)
    x1 = min(page_w, x + w)
    y1 = min(page_h, y + h)
    return BBox(x=x0, y=y0, w=x1 - x0, h=y1 - y0)


def crop(page_image, bbox: BBox, scale: float = 1.0):
    """Crop the context window of `bbox` out of a PIL page image."""
    win = context_window(bbox, scale, page_image.width, page_image.height)
    left = int(math.floor(win.x))
    top = int(math.floor(win.y))
    right = int(math.ceil(win.x + win.w))
    bottom = int(math.ceil(win.y + win.h))
    return page_image.crop((left, top, right, bottom))


@dataclass(frozen=True)
class Region:
    """One detected layout element: a drawn molecule or a table."""

    id: str
    page_index: int
    kind: RegionKind
    bbox: BBox
    confidence: float
    #: Annotation-only marker used by benchmark statistics; None when unannotated.
    relevant: bool | None = None
    #: Optional OCR text of the region, used for cheap keyword pre-screening.
    text: str | None = None

    def __post_init__(self) -> None:
        if not (0.0 <= self.confidence <= 1.0):
            raise ValueError(f"confidence must be in [0,1], got {self.confidence}")
        if self.page_index < 0:
            raise ValueError(f"page_index must be >= 0, got {self.page_index}")

    def to_dict(self) -> dict[str, Any]:
        d: dict[str, Any] = {
            "id": self.id,
            "page_index": self.page_index,
            "kind": self.kind.value,
            "bbox": self.bbox.to_dict(),
            "confidence": self.confidence,
        }
        if self.relevant is not None:
            d["relevant"] = self.relevant
        if self.text is not None:
            d["text"] = self.text
        return d

    @classmethod
    def from_dict(cls, d: dict[str, Any]) -> "Region":
        return cls(
            id=str(d["id"]),
            page_index=int(d["page_index"]),
            kind=RegionKind(d["kind"]),
            bbox=BBox.from_dict(d["bbox"]),
            confidence=float(d["confidence"]),
            relevant=d.get("relevant"),
            text=d.get("text"),
        )


@dataclass(frozen=True)
class PageInfo:
    width: int
    height: int

    def to_dict(self) -> dict[str, int]:
        return {"width": self.width, "height": self.height}

    @classmethod
    def from_dict(cls, d: dict[str, Any]) -> "PageInfo":
        return cls(width=int(d["width"]), height=int(d["height"]))


@dataclass(frozen=True)
class DocumentBundle:
    """One document: page images plus detected or annotated regions."""

    doc_id: str
    doc_type: DocType
    language_tags: tuple[str, ...]
    dpi: int
    pages: tuple[PageInfo, ...]
    regions: tuple[Region, ...]
    root: Path | None = None

    def __post_init__(self) -> None:
        if not self.doc_id:
            raise MalformedManifest("doc_id", "must be nonempty")
        for region in self.regions:
            if region.page_index >= len(self.pages):
                raise DanglingPageReference(region.id, region.page_index, len(self.pages))

    def page_image_path(self, page_index: int) -> Path:
        if self.root is None:
            raise ValueError("bundle has no on-disk root")
        return self.root / f"page_{page_index}.png"

    def load_page_image(self, page_index: int):
        from PIL import Image

        return Image.open(self.page_image_path(page_index)).convert("RGB")

    def region_by_id(self, region_id: str) -> Region:
        for region in self.regions:
            if region.id == region_id:
                return region
        raise KeyError(region_id)

    def to_dict(self) -> dict[str, Any]:
        return {
            "doc_id": self.doc_id,
            "doc_type": self.doc_type.value,
            "language_tags": list(self.language_tags),
            "dpi": self.dpi,
            "pages": [p.to_dict() for p in self.pages],
            "regions": [r.to_dict() for r in self.regions],
        }

    @classmethod
    def from_dict(cls, d: dict[str, Any], root: Path | None = None) -> "DocumentBundle":
        for key in ("doc_id", "doc_type", "pages", "regions"):
            if key not in d:
                raise MalformedManifest(key, "missing")
        try:
            doc_type = DocType(d["doc_type"])
        except ValueError as exc:
            raise MalformedManifest("doc_type", str(exc)) from exc
        try:
            pages = tuple(PageInfo.from_dict(p) for p in d["pages"])
        except (KeyError, TypeError, ValueError) as exc:
            raise MalformedManifest("pages", str(exc)) from exc
        try:
            regions = tuple(Region.from_dict(r) for r in d["regions"])
        except InvalidBBox:
            raise
        except (KeyError, TypeError, ValueError) as exc:
            raise MalformedManifest("regions", str(exc)) from exc
        return cls(
            doc_id=str(d["doc_id"]),
            doc_type=doc_type,
            language_tags=tuple(d.get("language_tags", [])),
            dpi=int(d.get("dpi", 200)),
            pages=pages,
            regions=regions,
            root=root,
        )


def load_bundle(path: str | Path) -> DocumentBundle:
    """Load and validate a bundle directory (manifest.json + page_<i>.png files).

    Page image files are resolved lazily; only the manifest is read here.
    """
    root = Path(path)
    manifest = root / "manifest.json"
    if not manifest.is_file():
        raise MissingManifest(str(manifest))
    try:
        raw = json.loads(manifest.read_text(encoding="utf-8"))
    except json.JSONDecodeError as exc:
        raise MalformedManifest("<root>", f"not valid JSON: {exc}") from exc
    if not isinstance(raw, dict):
        raise MalformedManifest("<root>", "manifest must be a JSON object")
    return DocumentBundle.from_dict(raw, root=root)


def load_corpus(path: str | Path) -> list[DocumentBundle]:
    """Load every bundle directory under `path`, sorted by doc_id."""
    root = Path(path)
    bundles = [load_bundle(p.parent) for p in sorted(root.glob("*/manifest.json"))]
    bundles.sort(key=lambda b: b.doc_id)
    return bundles


@dataclass(frozen=True)
class ActivityValue:
    """One measured activity: attribute, optional qualifier, numeric value, unit."""

    attribute: Attribute
    qualifier: Qualifier
    value: float
    unit: Unit
    raw_text: str

    def __post_init__(self) -> None:
        if not math.isfinite(self.value):
            raise ValueError(f"activity value must be finite, got {self.value}")

    def key(self) -> tuple[str, str, float, str]:
        return (self.attribute.value, self.qualifier.value, self.value, self.unit.value)

    def to_dict(self) -> dict[str, Any]:
        return {
            "attribute": self.attribute.value,
            "qualifier": self.qualifier.value,
            "value": self.value,
            "unit": self.unit.value,
            "raw_text": self.raw_text,
        }

    @classmethod
    def from_dict(cls, d: dict[str, Any]) -> "ActivityValue":
        return cls(
            attribute=Attribute(d["attribute"]),
            qualifier=Qualifier(d.get("qualifier", "")),
            value=float(d["value"]),
            unit=Unit(d.get("unit", "Unknown")),
            raw_text=str(d.get("raw_text", "")),
        )


@dataclass(frozen=True)
class MoleculeCandidate:
    """One detected molecule with its recognized SMILES and coreference ID."""

    region_id: str
    smiles: str | None
    coref_id: str | None
    smiles_valid: bool
    atom_count: int | None

    def __post_init__(self) -> None:
        if self.smiles_valid and self.smiles is None:
            raise ValueError("smiles_valid requires a smiles string")
        if (self.atom_count is not None) != self.smiles_valid:
            raise ValueError("atom_count must be present iff smiles_valid")

    def to_dict(self) -> dict[str, Any]:
        return {
            "region_id": self.region_id,
            "smiles": self.smiles,
            "coref_id": self.coref_id,
            "smiles_valid": self.smiles_valid,
            "atom_count": self.atom_count,
        }

    @classmethod
    def from_dict(cls, d: dict[str, Any]) -> "MoleculeCandidate":
        return cls(
            region_id=str(d["region_id"]),
            smiles=d.get("smiles"),
            coref_id=d.get("coref_id"),
            smiles_valid=bool(d["smiles_valid"]),
            atom_count=d.get("atom_count"),
        )


@dataclass
class SarRecord:
    """One linked (molecule, activity-row) pair, with provenance anchors."""

    doc_id: str
    smiles: str
    coref_id: str
    activities: list[ActivityValue]
    molecule_region: str
    table_region: str
    match_tier: MatchTier
    match_similarity: float
    molecule_page: int
    table_page: int
    table_row_index: int
    edited: bool = False
    qc_flags: list[str] = field(default_factory=list)

    def __post_init__(self) -> None:
        if not self.activities:
            raise ValueError("records must carry at least one activity")
        if self.match_tier is not MatchTier.FUZZY and self.match_similarity != 1.0:
            raise ValueError(f"non-fuzzy tier requires similarity 1.0, got {self.match_similarity}")
        if not (0.0 <= self.match_similarity <= 1.0):
            raise ValueError(f"similarity must be in [0,1], got {self.match_similarity}")

    def to_dict(self) -> dict[str, Any]:
        return {
            "doc_id": self.doc_id,
            "smiles": self.smiles,
            "coref_id": self.coref_id,
            "activities": [a.to_dict() for a in self.activities],
            "molecule_region": self.molecule_region,
            "table_region": self.table_region,
            "match_tier": self.match_tier.value,
            "match_similarity": self.match_similarity,
            "molecule_page": self.molecule_page,
            "table_page": self.table_page,
            "table_row_index": self.table_row_index,
            "edited": self.edited,
            "qc_flags": list(self.qc_flags),
        }

    @classmethod
    def from_dict(cls, d: dict[str, Any]) -> "SarRecord":
        return cls(
            doc_id=str(d["doc_id"]),
            smiles=str(d["smiles"]),
            coref_id=str(d["coref_id"]),
            activities=[ActivityValue.from_dict(a) for a in d["activities"]],
            molecule_region=str(d["molecule_region"]),
            table_region=str(d["table_region"]),
            match_tier=MatchTier(d["match_tier"]),
            match_similarity=float(d["match_similarity"]),
            molecule_page=int(d["molecule_page"]),
            table_page=int(d["table_page"]),
            table_row_index=int(d["table_row_index"]),
            edited=bool(d.get("edited", False)),
            qc_flags=list(d.get("qc_flags", [])),
        )


@dataclass(frozen=True)
class GroundTruthRow:
    """One annotated molecule with its complete activity set."""

    doc_id: str
    coref_id: str
    smiles: str
    activities: tuple[ActivityValue, ...]
    molecule_page: int
    molecule_bbox: BBox | None = None
    table_page: int | None = None

    def __post_init__(self) -> None:
        if not self.activities:
            raise ValueError("ground truth rows must carry at least one activity")


TRUTH_CSV_HEADER = [
    "doc_id",
    "coref_id",
    "smiles",
    "attribute",
    "qualifier",
    "value",
    "unit",
    "molecule_page",
    "table_page",
]

_QUALIFIER_ALIASES = {q.value: q for q in Qualifier} | {q.name: q for q in Qualifier} | {"None": Qualifier.NONE}
_UNIT_ALIASES = {u.value: u for u in Unit} | {"": Unit.UNKNOWN, "percent": Unit.PERCENT, "kcal_per_mol": Unit.KCAL_PER_MOL}


def load_ground_truth(path: str | Path) -> list[GroundTruthRow]:
    """Load the ground-truth CSV, grouping activity rows per molecule.

    Raises MalformedTruthCsv on schema violations or invalid SMILES.
    """
    from . import smiles as smiles_mod

    grouped: dict[tuple[str, str, str, int], dict[str, Any]] = {}
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.DictReader(fh)
        if reader.fieldnames is None or list(reader.fieldnames) != TRUTH_CSV_HEADER:
            raise MalformedTruthCsv(1, f"expected header {','.join(TRUTH_CSV_HEADER)}")
        for lineno, row in enumerate(reader, start=2):
            try:
                smiles = row["smiles"].strip()
                smiles_mod.parse_smiles(smiles)
            except smiles_mod.SmilesError as exc:
                raise MalformedTruthCsv(lineno, f"invalid SMILES {row.get('smiles')!r}: {exc}") from exc
            try:
                qualifier = _QUALIFIER_ALIASES[row["qualifier"].strip()]
                unit = _UNIT_ALIASES[row["unit"].strip()]
                activity = ActivityValue(
                    attribute=Attribute(row["attribute"].strip()),
                    qualifier=qualifier,
                    value=float(row["value"]),
                    unit=unit,
                    raw_text=row["value"],
                )
                molecule_page = int(row["molecule_page"])
                table_page = int(row["table_page"]) if row["table_page"].strip() else None
            except (KeyError, TypeError, ValueError) as exc:
                raise MalformedTruthCsv(lineno, str(exc)) from exc
            key = (row["doc_id"], row["coref_id"], smiles, molecule_page)
            slot = grouped.setdefault(key, {"activities": [], "table_page": table_page})
            slot["activities"].append(activity)
            if slot["table_page"] is None:
                slot["table_page"] = table_page
    return [
        GroundTruthRow(
            doc_id=doc_id,
            coref_id=coref_id,
            smiles=smi,
            activities=tuple(slot["activities"]),
            molecule_page=mol_page,
            table_page=slot["table_page"],
        )
        for (doc_id, coref_id, smi, mol_page), slot in grouped.items()
    ]
