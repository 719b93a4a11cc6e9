"""Deterministic table handling: keyword screening, HTML parsing, grid expansion.

The accepted HTML dialect is exactly the one the table backend is instructed
to emit: table/tr/th/td tags, rowspan/colspan attributes, the "[mol]" token
for in-cell structures, and the literal string "<table>None</table>" for
tables that carry no activity data.
"""

from __future__ import annotations

import html as html_lib
import logging
import re
import unicodedata
from dataclasses import dataclass, field
from html.parser import HTMLParser
from typing import Sequence

from .domain import ActivityValue, Attribute, Qualifier, Unit

logger = logging.getLogger(__name__)

MOL_TOKEN = "[mol]"
NOT_ACTIVITY_SENTINEL = "<table>None</table>"

#: Attribute keywords in match order (longest first so pKd wins over Kd).
ATTRIBUTE_KEYWORDS: tuple[tuple[str, Attribute], ...] = (
    ("TD50", Attribute.TD50),
    ("TC50", Attribute.TC50),
    ("EC50", Attribute.EC50),
    ("IC50", Attribute.IC50),
    ("pKd", Attribute.PKD),
    ("Ki", Attribute.KI),
    ("Kd", Attribute.KD),
    ("Ti", Attribute.TI),
)

UNIT_KEYWORDS: tuple[tuple[str, Unit], ...] = (
    ("kcal/mol", Unit.KCAL_PER_MOL),
    ("uM", Unit.UM),
    ("µM", Unit.UM),
    ("μM", Unit.UM),
    ("nM", Unit.NM),
    ("%", Unit.PERCENT),
)

_SUBSCRIPT_DIGITS = str.maketrans("₀₁₂₃₄₅₆₇₈₉", "0123456789")


class NotActivityTable(Exception):
    """The backend emitted the not-an-activity-table sentinel."""


class MalformedHtml(Exception):
    def __init__(self, position: tuple[int, int], detail: str):
        self.position = position
        super().__init__(f"malformed table HTML at line {position[0]}, col {position[1]}: {detail}")


class DisallowedTag(Exception):
    def __init__(self, name: str):
        self.name = name
        super().__init__(f"tag <{name}> is outside the accepted dialect")


class OverlappingSpans(Exception):
    def __init__(self, row: int, col: int):
        self.row = row
        self.col = col
        super().__init__(f"two cells claim grid position ({row}, {col})")


class NoIdentifierColumn(Exception):
    pass


class NoActivityColumn(Exception):
    pass


def _canon_text(text: str) -> str:
    return text.translate(_SUBSCRIPT_DIGITS).casefold()


def _loose_pattern(keyword: str) -> re.Pattern[str]:
    return re.compile(r"\s*".join(re.escape(ch) for ch in keyword.casefold()))


_SCREEN_PATTERNS = [_loose_pattern(k) for k, _ in ATTRIBUTE_KEYWORDS]


def screen_keywords(text: str) -> bool:
    """True iff any activity attribute keyword occurs in the text.

    Matching is case-insensitive and tolerates subscript digits and
    whitespace inside the keyword ("IC 50", "IC₅₀"). Plain substring
    semantics keep the check monotone under concatenation; unit names
    alone never qualify.
    """
    canon = _canon_text(text)
    return any(p.search(canon) for p in _SCREEN_PATTERNS)


@dataclass
class CellNode:
    tag: str  # "th" or "td"
    text: str
    rowspan: int = 1
    colspan: int = 1

    @property
    def is_mol_token(self) -> bool:
        return self.text == MOL_TOKEN

    def __post_init__(self) -> None:
        if self.tag not in ("th", "td"):
            raise ValueError(f"cell tag must be th or td, got {self.tag!r}")
        if self.rowspan < 1 or self.colspan < 1:
            raise ValueError("spans must be >= 1")


@dataclass
class RowNode:
    cells: list[CellNode] = field(default_factory=list)


@dataclass
class TableTree:
    rows: list[RowNode] = field(default_factory=list)

    def node_count(self) -> int:
        return 1 + len(self.rows) + sum(len(r.cells) for r in self.rows)

    def leaf_texts(self) -> list[str]:
        return [c.text for r in self.rows for c in r.cells]


class _TableHtmlParser(HTMLParser):
    def __init__(self) -> None:
        super().__init__(convert_charrefs=True)
        self.tree = TableTree()
        self.table_open = False
        self.table_seen = False
        self.row: RowNode | None = None
        self.cell: CellNode | None = None
        self.cell_text: list[str] = []

    def fail(self, detail: str) -> None:
        raise MalformedHtml(self.getpos(), detail)

    def handle_starttag(self, tag: str, attrs) -> None:
        tag = tag.lower()
        if tag == "table":
            if self.table_seen:
                self.fail("more than one <table>")
            self.table_open = True
            self.table_seen = True
        elif tag == "tr":
            if not self.table_open:
                self.fail("<tr> outside <table>")
            if self.row is not None:
                self.fail("nested <tr>")
            self.row = RowNode()
        elif tag in ("th", "td"):
            if self.row is None:
                self.fail(f"<{tag}> outside <tr>")
            if self.cell is not None:
                self.fail("nested cell")
            spans = {}
            for name, value in attrs:
                if name in ("rowspan", "colspan"):
                    try:
                        spans[name] = int(str(value))
                    except (TypeError, ValueError):
                        self.fail(f"non-integer {name}={value!r}")
                    if spans[name] < 1:
                        self.fail(f"{name} must be >= 1")
            self.cell = CellNode(tag=tag, text="", rowspan=spans.get("rowspan", 1), colspan=spans.get("colspan", 1))
            self.cell_text = []
        else:
            raise DisallowedTag(tag)

    def handle_endtag(self, tag: str) -> None:
        tag = tag.lower()
        if tag == "table":
            if not self.table_open:
                self.fail("</table> without <table>")
            if self.row is not None or self.cell is not None:
                self.fail("</table> inside an open row or cell")
            self.table_open = False
        elif tag == "tr":
            if self.row is None:
                self.fail("</tr> without <tr>")
            if self.cell is not None:
                self.fail("</tr> inside an open cell")
            self.tree.rows.append(self.row)
            self.row = None
        elif tag in ("th", "td"):
            if self.cell is None or self.cell.tag != tag:
                self.fail(f"</{tag}> without matching open cell")
            self.cell.text = "".join(self.cell_text).strip()
            assert self.row is not None
            self.row.cells.append(self.cell)
            self.cell = None
        else:
            raise DisallowedTag(tag)

    def handle_data(self, data: str) -> None:
        if self.cell is not None:
            self.cell_text.append(data)
        elif data.strip():
            self.fail(f"text outside cells: {data.strip()[:30]!r}")

    def handle_startendtag(self, tag: str, attrs) -> None:
        self.fail(f"self-closing <{tag}/> not in dialect")


def parse_table_html(html: str) -> TableTree:
    """Parse backend table HTML into a TableTree.

    Raises NotActivityTable for the sentinel string, MalformedHtml or
    DisallowedTag otherwise when the input leaves the dialect.
    """
    stripped = html.strip()
    if stripped == NOT_ACTIVITY_SENTINEL:
        raise NotActivityTable()
    parser = _TableHtmlParser()
    parser.feed(stripped)
    parser.close()
    if not parser.table_seen:
        parser.fail("no <table> element")
    if parser.table_open or parser.row is not None or parser.cell is not None:
        parser.fail("unclosed element at end of input")
    return parser.tree


def render_tree(tree: TableTree) -> str:
    """Write a TableTree back to dialect HTML (inverse of parse_table_html)."""
    parts = ["<table>"]
    for row in tree.rows:
        parts.append("<tr>")
        for cell in row.cells:
            attrs = ""
            if cell.rowspan > 1:
                attrs += f' rowspan="{cell.rowspan}"'
            if cell.colspan > 1:
                attrs += f' colspan="{cell.colspan}"'
            parts.append(f"<{cell.tag}{attrs}>{html_lib.escape(cell.text)}</{cell.tag}>")
        parts.append("</tr>")
    parts.append("</table>")
    return "".join(parts)


@dataclass(frozen=True)
class GridCell:
    text: str
    origin: tuple[int, int]
    header: bool


@dataclass
class Grid:
    rows: int
    cols: int
    cells: list[list[GridCell]]

    def at(self, r: int, c: int) -> GridCell:
        return self.cells[r][c]

    def origin_texts(self) -> list[str]:
        return [cell.text for r, row in enumerate(self.cells) for c, cell in enumerate(row) if cell.origin == (r, c)]


def expand_grid(tree: TableTree) -> Grid:
    """Expand row/col spans into a dense rectangular grid.

    Spanned text is replicated into every covered position with a shared
    origin; ragged rows are right-padded with empty cells. A position
    claimed twice raises OverlappingSpans.
    """
    occupied: dict[tuple[int, int], GridCell] = {}
    for r, row in enumerate(tree.rows):
        cursor = 0
        for cell in row.cells:
            while (r, cursor) in occupied:
                cursor += 1
            for dr in range(cell.rowspan):
                for dc in range(cell.colspan):
                    pos = (r + dr, cursor + dc)
                    if pos in occupied:
                        raise OverlappingSpans(*pos)
                    occupied[pos] = GridCell(text=cell.text, origin=(r, cursor), header=cell.tag == "th")
            cursor += cell.colspan
    if not occupied:
        return Grid(rows=0, cols=0, cells=[])
    n_rows = max(r for r, _ in occupied) + 1
    n_cols = max(c for _, c in occupied) + 1
    cells = [
        [occupied.get((r, c)) or GridCell(text="", origin=(r, c), header=False) for c in range(n_cols)]
        for r in range(n_rows)
    ]
    return Grid(rows=n_rows, cols=n_cols, cells=cells)


_ID_HEADER_WORDS = ("compound", "cpd", "no.", "id", "example", "entry", "化合物", "実施例")

_QUALIFIER_PREFIXES: tuple[tuple[str, Qualifier], ...] = (
    (">=", Qualifier.GE),
    ("<=", Qualifier.LE),
    ("≥", Qualifier.GE),
    ("≤", Qualifier.LE),
    (">", Qualifier.GT),
    ("<", Qualifier.LT),
    ("~", Qualifier.APPROX),
    ("≈", Qualifier.APPROX),
    ("±", Qualifier.APPROX),
)


def _attribute_pattern(keyword: str) -> re.Pattern[str]:
    inner = r"\s*".join(re.escape(ch) for ch in keyword.casefold())
    return re.compile(rf"(?<![a-z0-9])(?:{inner})(?![a-z0-9])")


_HEADER_ATTRIBUTE_PATTERNS = [(_attribute_pattern(k), attr) for k, attr in ATTRIBUTE_KEYWORDS]
_UNIT_PATTERNS = [
    (re.compile(rf"(?<![a-z]){re.escape(k.casefold())}(?![a-z])") if k != "%" else re.compile(r"%"), u)
    for k, u in UNIT_KEYWORDS
]


def header_attribute(text: str) -> Attribute | None:
    canon = _canon_text(text)
    for pattern, attr in _HEADER_ATTRIBUTE_PATTERNS:
        if pattern.search(canon):
            return attr
    return None


def detect_unit(text: str) -> Unit | None:
    canon = _canon_text(text)
    for pattern, unit in _UNIT_PATTERNS:
        if pattern.search(canon):
            return unit
    return None


def _normalize_number(token: str) -> float | None:
    token = token.strip()
    if not token:
        return None
    if "," in token and "." in token:
        # Rightmost separator is decimal; the other kind is a thousands mark.
        if token.rfind(",") > token.rfind("."):
            token = token.replace(".", "").replace(",", ".")
        else:
            token = token.replace(",", "")
    elif "," in token:
        parts = token.split(",")
        if len(parts) == 2 and len(parts[1]) != 3:
            token = token.replace(",", ".")  # decimal comma
        else:
            token = token.replace(",", "")  # thousands separators
    try:
        value = float(token)
    except ValueError:
        return None
    return value


def parse_activity_cell(
    text: str,
    attribute: Attribute,
    default_unit: Unit | None = None,
) -> ActivityValue | None:
    """Parse one data cell into an ActivityValue, or None when not numeric.

    Supports qualifier prefixes (>, <, >=, <=, ~, ±), decimal comma or point,
    thousands separators, an optional trailing unit, and an optional
    "± error" tail which is ignored.
    """
    raw = text
    work = unicodedata.normalize("NFKC", text).strip()
    if not work:
        return None
    qualifier = Qualifier.NONE
    for prefix, q in _QUALIFIER_PREFIXES:
        if work.startswith(prefix):
            qualifier = q
            work = work[len(prefix) :].strip()
            break
    unit = detect_unit(work) or default_unit or Unit.UNKNOWN
    # Numbers may use comma separators; grab the longest numeric-ish prefix.
    numeric_match = re.match(r"[+-]?[\d.,]+(?:[eE][+-]?\d+)?", work)
    if not numeric_match:
        return None
    value = _normalize_number(numeric_match.group(0))
    if value is None:
        return None
    tail = work[numeric_match.end() :].strip()
    tail_wo_unit = tail
    for kw, _ in UNIT_KEYWORDS:
        tail_wo_unit = tail_wo_unit.replace(kw, "")
    tail_wo_unit = tail_wo_unit.strip()
    if tail_wo_unit and not re.fullmatch(r"[±~≈]?\s*[\d.,]*\s*", tail_wo_unit):
        return None  # unparseable suffix, e.g. free text
    return ActivityValue(attribute=attribute, qualifier=qualifier, value=value, unit=unit, raw_text=raw)


@dataclass(frozen=True)
class ActivityColumn:
    index: int
    attribute: Attribute
    unit: Unit | None


@dataclass
class TableRow:
    grid_row: int
    coref_id: str | None
    activities: list[ActivityValue]


@dataclass
class ParsedActivityTable:
    table_region: str
    grid: Grid
    id_column: int | None
    activity_columns: list[ActivityColumn]
    rows: list[TableRow]

    def to_dict(self) -> dict:
        return {
            "table_region": self.table_region,
            "rows": [
                {
                    "grid_row": r.grid_row,
                    "coref_id": r.coref_id,
                    "activities": [a.to_dict() for a in r.activities],
                }
                for r in self.rows
            ],
            "id_column": self.id_column,
            "activity_columns": [
                {"index": c.index, "attribute": c.attribute.value, "unit": c.unit.value if c.unit else None}
                for c in self.activity_columns
            ],
        }


def _header_row_count(grid: Grid) -> int:
    count = 0
    for r in range(grid.rows):
        if all(grid.at(r, c).header for c in range(grid.cols)):
            count += 1
        else:
            break
    if count == 0 and grid.rows > 0:
        first = " ".join(grid.at(0, c).text for c in range(grid.cols))
        if screen_keywords(first):
            count = 1
    return count


def _column_header(grid: Grid, col: int, header_rows: int) -> str:
    seen: list[str] = []
    for r in range(header_rows):
        text = grid.at(r, col).text
        if text and (not seen or seen[-1] != text):
            seen.append(text)
    return " ".join(seen)


def _is_numeric_cell(text: str) -> bool:
    stripped = text.strip()
    return bool(stripped) and _normalize_number(stripped) is not None


def extract_activity_rows(grid: Grid, table_region: str = "") -> ParsedActivityTable:
    """Lift a screened grid into identifier + activity rows.

    Raises NoActivityColumn when no header maps to an attribute, and
    NoIdentifierColumn when no column can serve as the compound identifier.
    """
    if grid.rows == 0 or grid.cols == 0:
        raise NoActivityColumn("empty grid")
    header_rows = _header_row_count(grid)
    if header_rows == 0:
        raise NoActivityColumn("no header row found")
    headers = [_column_header(grid, c, header_rows) for c in range(grid.cols)]
    activity_columns: list[ActivityColumn] = []
    for c, text in enumerate(headers):
        attr = header_attribute(text)
        if attr is not None:
            activity_columns.append(ActivityColumn(index=c, attribute=attr, unit=detect_unit(text)))
    if not activity_columns:
        raise NoActivityColumn("headers contain no attribute keyword")
    activity_indices = {c.index for c in activity_columns}

    id_column: int | None = None
    for c, text in enumerate(headers):
        if c in activity_indices:
            continue
        canon = _canon_text(text)
        if any(
            re.search(rf"(?<![a-z]){re.escape(word)}(?![a-z])", canon) if word.isascii() else word in canon
            for word in _ID_HEADER_WORDS
        ):
            id_column = c
            break
    data_range = range(header_rows, grid.rows)
    if id_column is None:
        for c in range(grid.cols):
            if c in activity_indices:
                continue
            values = [grid.at(r, c).text for r in data_range if grid.at(r, c).text.strip()]
            if values and not all(_is_numeric_cell(v) for v in values):
                if all(v == MOL_TOKEN for v in values):
                    continue
                id_column = c
                break
    if id_column is None:
        for c in range(grid.cols):
            if c in activity_indices:
                continue
            values = [grid.at(r, c).text for r in data_range if grid.at(r, c).text.strip()]
            if values and all(v == MOL_TOKEN for v in values):
                id_column = c
                break
    if id_column is None:
        raise NoIdentifierColumn("no usable identifier column")

    rows: list[TableRow] = []
    for r in data_range:
        ident = grid.at(r, id_column).text.strip()
        activities: list[ActivityValue] = []
        for col in activity_columns:
            cell_text = grid.at(r, col.index).text
            if not cell_text.strip():
                continue
            parsed = parse_activity_cell(cell_text, col.attribute, col.unit)
            if parsed is None:
                logger.debug("unparseable activity cell %r at row %d col %d", cell_text, r, col.index)
                continue
            activities.append(parsed)
        rows.append(TableRow(grid_row=r, coref_id=ident or None, activities=activities))
    return ParsedActivityTable(
        table_region=table_region,
        grid=grid,
        id_column=id_column,
        activity_columns=activity_columns,
        rows=rows,
    )


def parse_activity_table(html: str, table_region: str = "") -> ParsedActivityTable:
    """Full deterministic path: HTML -> tree -> grid -> activity rows."""
    tree = parse_table_html(html)
    grid = expand_grid(tree)
    return extract_activity_rows(grid, table_region=table_region)
