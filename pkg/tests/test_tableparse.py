from __future__ import annotations

import pytest
from hypothesis import given, settings, strategies as st

from sarline.domain import Attribute, Qualifier, Unit
from sarline.tableparse import (
    CellNode,
    DisallowedTag,
    MalformedHtml,
    NoActivityColumn,
    NoIdentifierColumn,
    NotActivityTable,
    OverlappingSpans,
    RowNode,
    TableTree,
    expand_grid,
    header_attribute,
    parse_activity_cell,
    parse_activity_table,
    parse_table_html,
    render_tree,
    screen_keywords,
)

SUBSCRIPT = str.maketrans("0123456789", "₀₁₂₃₄₅₆₇₈₉")


class TestScreen:
    def test_attribute_in_sentence(self):
        assert screen_keywords("IC50 (nM) of compounds") is True

    def test_units_alone_never_qualify(self):
        assert screen_keywords("Yield (%) by step") is False

    def test_empty(self):
        assert screen_keywords("") is False

    def test_subscripts_and_spaces(self):
        assert screen_keywords("IC₅₀ values") is True
        assert screen_keywords("IC 50 values") is True
        assert screen_keywords("EC 5 0") is True

    def test_case_insensitive(self):
        assert screen_keywords("ic50") is True
        assert screen_keywords("pKD") is True

    @given(st.text(max_size=30), st.text(max_size=30))
    @settings(max_examples=200)
    def test_monotone_under_concatenation(self, a, b):
        if screen_keywords(a):
            assert screen_keywords(a + b)
            assert screen_keywords(b + a)


class TestParseHtml:
    def test_sentinel(self):
        with pytest.raises(NotActivityTable):
            parse_table_html("<table>None</table>")

    def test_minimal_table(self):
        tree = parse_table_html(
            "<table><tr><th>ID</th><th>IC50</th></tr><tr><td>1a</td><td>2.3</td></tr></table>"
        )
        assert len(tree.rows) == 2
        assert [c.tag for c in tree.rows[0].cells] == ["th", "th"]
        assert tree.rows[1].cells[0].text == "1a"

    def test_rowspan_preserved(self):
        tree = parse_table_html(
            '<table><tr><td rowspan="2">A</td><td>x</td></tr><tr><td>y</td></tr></table>'
        )
        assert tree.rows[0].cells[0].rowspan == 2

    def test_unquoted_span(self):
        tree = parse_table_html("<table><tr><td colspan=3>A</td></tr></table>")
        assert tree.rows[0].cells[0].colspan == 3

    def test_disallowed_tag(self):
        with pytest.raises(DisallowedTag) as exc:
            parse_table_html("<table><tr><td><b>x</b></td></tr></table>")
        assert exc.value.name == "b"

    def test_malformed(self):
        with pytest.raises(MalformedHtml):
            parse_table_html("<table><td>x</td></table>")
        with pytest.raises(MalformedHtml):
            parse_table_html("<table><tr><td>x</td></tr>")
        with pytest.raises(MalformedHtml):
            parse_table_html("no table here")

    def test_mol_token_flag(self):
        tree = parse_table_html("<table><tr><td>[mol]</td><td>A1</td></tr></table>")
        assert tree.rows[0].cells[0].is_mol_token
        assert not tree.rows[0].cells[1].is_mol_token

    def test_entities_unescaped(self):
        tree = parse_table_html("<table><tr><td>&lt;5 &amp; more</td></tr></table>")
        assert tree.rows[0].cells[0].text == "<5 & more"


def _tree_strategy() -> st.SearchStrategy[TableTree]:
    cell = st.builds(
        CellNode,
        tag=st.sampled_from(["th", "td"]),
        text=st.text(alphabet="abc <&>123", max_size=6).map(str.strip),
        rowspan=st.integers(1, 2),
        colspan=st.integers(1, 2),
    )
    row = st.builds(RowNode, cells=st.lists(cell, min_size=1, max_size=3))
    return st.builds(TableTree, rows=st.lists(row, min_size=1, max_size=3))


class TestRenderRoundTrip:
    @given(_tree_strategy())
    @settings(max_examples=150)
    def test_parse_render_identity(self, tree):
        assert parse_table_html(render_tree(tree)) == tree


class TestExpandGrid:
    def test_rowspan_shares_origin(self):
        tree = parse_table_html(
            '<table><tr><td rowspan="2">A</td><td>x</td></tr><tr><td>y</td></tr></table>'
        )
        grid = expand_grid(tree)
        assert grid.at(0, 0).text == grid.at(1, 0).text == "A"
        assert grid.at(0, 0).origin == grid.at(1, 0).origin == (0, 0)
        assert grid.at(1, 1).text == "y"

    def test_identity_without_spans(self):
        tree = parse_table_html("<table><tr><td>a</td><td>b</td></tr><tr><td>c</td><td>d</td></tr></table>")
        grid = expand_grid(tree)
        assert [[grid.at(r, c).text for c in range(2)] for r in range(2)] == [["a", "b"], ["c", "d"]]

    def test_overlapping_spans(self):
        tree = TableTree(rows=[
            RowNode(cells=[CellNode("td", "p"), CellNode("td", "A", rowspan=2)]),
            RowNode(cells=[CellNode("td", "q", colspan=2)]),
        ])
        with pytest.raises(OverlappingSpans) as exc:
            expand_grid(tree)
        assert (exc.value.row, exc.value.col) == (1, 1)

    def test_ragged_rows_padded(self):
        tree = parse_table_html("<table><tr><td>a</td><td>b</td></tr><tr><td>c</td></tr></table>")
        grid = expand_grid(tree)
        assert grid.cols == 2
        assert grid.at(1, 1).text == ""

    @given(_tree_strategy())
    @settings(max_examples=150)
    def test_text_conservation(self, tree):
        try:
            grid = expand_grid(tree)
        except OverlappingSpans:
            return
        origin_texts = sorted(t for t in grid.origin_texts() if t)
        leaf_texts = sorted(t for t in tree.leaf_texts() if t)
        assert origin_texts == leaf_texts


class TestCellParsing:
    def test_plain_number_with_header_unit(self):
        value = parse_activity_cell("2.3", Attribute.IC50, Unit.NM)
        assert value is not None
        assert value.value == 2.3 and value.unit is Unit.NM and value.qualifier is Qualifier.NONE

    @pytest.mark.parametrize(
        "text,qualifier,number",
        [
            (">10", Qualifier.GT, 10.0),
            ("<0.5", Qualifier.LT, 0.5),
            (">=3", Qualifier.GE, 3.0),
            ("<=7", Qualifier.LE, 7.0),
            ("≥3", Qualifier.GE, 3.0),
            ("≤7", Qualifier.LE, 7.0),
            ("~2.5", Qualifier.APPROX, 2.5),
            ("≈2.5", Qualifier.APPROX, 2.5),
            ("±0.4", Qualifier.APPROX, 0.4),
        ],
    )
    def test_qualifier_grid(self, text, qualifier, number):
        value = parse_activity_cell(text, Attribute.KI, Unit.UM)
        assert value is not None
        assert value.qualifier is qualifier
        assert value.value == number
        assert value.raw_text == text

    def test_cell_unit_beats_header_unit(self):
        value = parse_activity_cell("4 nM", Attribute.IC50, Unit.UM)
        assert value.unit is Unit.NM

    def test_unknown_unit(self):
        value = parse_activity_cell("4", Attribute.IC50, None)
        assert value.unit is Unit.UNKNOWN

    def test_decimal_comma(self):
        assert parse_activity_cell("2,3", Attribute.KI, None).value == 2.3

    def test_thousands_separators(self):
        assert parse_activity_cell("1,234", Attribute.KI, None).value == 1234
        assert parse_activity_cell("1,234.5", Attribute.KI, None).value == 1234.5
        assert parse_activity_cell("1.234,5", Attribute.KI, None).value == 1234.5

    def test_error_margin_tail_tolerated(self):
        value = parse_activity_cell("2.3 ± 0.4", Attribute.IC50, Unit.NM)
        assert value.value == 2.3 and value.qualifier is Qualifier.NONE

    def test_unparseable_is_none(self):
        assert parse_activity_cell("n.d.", Attribute.IC50, None) is None
        assert parse_activity_cell("-", Attribute.IC50, None) is None
        assert parse_activity_cell("", Attribute.IC50, None) is None

    def test_raw_text_reparse_round_trip(self):
        for text in (">10", "2.3", "~0.5 nM", "1,234", "≤7 uM"):
            first = parse_activity_cell(text, Attribute.KD, Unit.UM)
            again = parse_activity_cell(first.raw_text, Attribute.KD, Unit.UM)
            assert (first.value, first.qualifier, first.unit) == (again.value, again.qualifier, again.unit)


class TestHeaderMapping:
    def test_longest_match_wins(self):
        assert header_attribute("pKd values") is Attribute.PKD
        assert header_attribute("Kd (nM)") is Attribute.KD

    def test_boundaries(self):
        assert header_attribute("Time (h)") is None
        assert header_attribute("Kinetics") is None
        assert header_attribute("Ti (%)") is Attribute.TI

    def test_subscript_header(self):
        assert header_attribute("IC" + "50".translate(SUBSCRIPT)) is Attribute.IC50


class TestExtractRows:
    def test_minimal_example(self):
        table = parse_activity_table(
            "<table><tr><th>ID</th><th>IC50 (nM)</th></tr><tr><td>1a</td><td>2.3</td></tr></table>"
        )
        assert table.id_column == 0
        row = table.rows[0]
        assert row.coref_id == "1a"
        activity = row.activities[0]
        assert (activity.attribute, activity.qualifier, activity.value, activity.unit) == (
            Attribute.IC50, Qualifier.NONE, 2.3, Unit.NM)

    def test_qualifier_cell(self):
        table = parse_activity_table(
            "<table><tr><th>No.</th><th>Ki (uM)</th></tr><tr><td>5b</td><td>&gt;10</td></tr></table>"
        )
        activity = table.rows[0].activities[0]
        assert (activity.attribute, activity.qualifier, activity.value, activity.unit) == (
            Attribute.KI, Qualifier.GT, 10.0, Unit.UM)

    def test_no_activity_column(self):
        with pytest.raises(NoActivityColumn):
            parse_activity_table(
                "<table><tr><th>ID</th><th>Yield</th></tr><tr><td>1</td><td>90</td></tr></table>"
            )

    def test_no_identifier_column(self):
        with pytest.raises(NoIdentifierColumn):
            parse_activity_table(
                "<table><tr><th>IC50 (nM)</th></tr><tr><td>2.3</td></tr></table>"
            )

    def test_multilevel_header_with_spans(self):
        table = parse_activity_table(
            '<table><tr><th rowspan="2">Compound</th><th colspan="2">IC50 (nM)</th></tr>'
            "<tr><th>WT</th><th>Mutant</th></tr>"
            "<tr><td>4a</td><td>12</td><td>45</td></tr></table>"
        )
        row = table.rows[0]
        assert row.coref_id == "4a"
        assert sorted(a.value for a in row.activities) == [12.0, 45.0]
        assert all(a.attribute is Attribute.IC50 and a.unit is Unit.NM for a in row.activities)

    def test_td_only_table_with_keyword_first_row(self):
        table = parse_activity_table(
            "<table><tr><td>ID</td><td>Kd (nM)</td></tr><tr><td>x1</td><td>3.1</td></tr></table>"
        )
        assert table.rows[0].coref_id == "x1"

    def test_mol_token_column_fallback(self):
        table = parse_activity_table(
            "<table><tr><th>Structure</th><th>EC50 (uM)</th></tr>"
            "<tr><td>[mol]</td><td>1.2</td></tr></table>"
        )
        assert table.id_column == 0
        assert table.rows[0].coref_id == "[mol]"

    def test_leftmost_non_numeric_fallback(self):
        table = parse_activity_table(
            "<table><tr><th>Stuff</th><th>Label</th><th>TD50 (uM)</th></tr>"
            "<tr><td>9.9</td><td>abc</td><td>2</td></tr></table>"
        )
        assert table.id_column == 1
