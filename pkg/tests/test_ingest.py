import pytest

from fmeagraph.errors import EmptyMandatoryCell, EncodingError, MissingColumn
from fmeagraph.ingest import (
    build_process_flow,
    format_worksheet,
    parse_worksheet,
    parse_worksheet_text,
)

HEADER = "function,failure,cause,effect,recommendation\n"


def test_single_row():
    text = HEADER + ("Component placement,Misalignment,Incorrect robot teaching,Assembly failure,"
                     "Review robot teaching procedure\n")
    ws = parse_worksheet_text(text, "line1")
    assert len(ws.records) == 1
    rec = ws.records[0]
    assert rec.order_index == 0
    assert rec.function_text == "Component placement"
    assert rec.cause_text == "Incorrect robot teaching"
    assert rec.recommendation_text == "Review robot teaching procedure"


def test_header_only():
    assert parse_worksheet_text(HEADER, "x").records == ()


def test_empty_failure_cell():
    with pytest.raises(EmptyMandatoryCell) as info:
        parse_worksheet_text(HEADER + "Pick,,Wear of jig,,\n", "x")
    assert info.value.row == 2 and info.value.column == "failure"


def test_missing_column():
    with pytest.raises(MissingColumn, match="cause"):
        parse_worksheet_text("function,failure,effect,recommendation\n", "x")


def test_bad_encoding(tmp_path):
    path = tmp_path / "bad.csv"
    path.write_bytes(HEADER.encode() + b"Pick,Slip,\xff\xfe,,\n")
    with pytest.raises(EncodingError):
        parse_worksheet(path)


def test_line_id_defaults_to_file_stem(tmp_path):
    path = tmp_path / "assembly.csv"
    path.write_text(HEADER + "Pick,Slip,Wear,,\n", encoding="utf-8")
    assert parse_worksheet(path).line_id == "assembly"


def test_multi_cause_cells_split():
    ws = parse_worksheet_text(HEADER + 'Pick,Slip,"Wear of pad; Low vacuum",Drop,\n', "x")
    assert [r.cause_text for r in ws.records] == ["Wear of pad", "Low vacuum"]


def test_whitespace_collapsed():
    ws = parse_worksheet_text(HEADER + "  Pick   up ,Slip,Wear,,\n", "x")
    assert ws.records[0].function_text == "Pick up"


def test_process_flow_chain():
    text = HEADER + "pick,a,c1,,\nplace,b,c2,,\nfasten,c,c3,,\n"
    flow = build_process_flow(parse_worksheet_text(text, "x"))
    assert flow.functions == ("pick", "place", "fasten")
    assert flow.precedes_pairs == {("pick", "place"), ("place", "fasten")}


def test_single_function_has_no_pairs():
    flow = build_process_flow(parse_worksheet_text(HEADER + "pick,a,c1,,\npick,b,c2,,\n", "x"))
    assert flow.precedes_pairs == frozenset()


def test_first_occurrence_ordering():
    text = HEADER + "A,f1,c1,,\nA,f2,c2,,\nB,f3,c3,,\nA,f4,c4,,\n"
    ws = parse_worksheet_text(text, "x")
    flow = build_process_flow(ws)
    assert flow.functions == ("A", "B")
    assert flow.precedes_pairs == {("A", "B")}
    assert [r.order_index for r in ws.records] == [0, 0, 1, 0]


def test_explicit_order_column():
    text = "order,function,failure,cause,effect,recommendation\n2,late,a,c,,\n1,early,b,d,,\n"
    flow = build_process_flow(parse_worksheet_text(text, "x"))
    assert flow.functions == ("early", "late")


def test_deterministic_and_round_trip():
    text = HEADER + "pick,a,c1,e1,r1\nplace,b,c2,,\n"
    first = parse_worksheet_text(text, "x")
    assert parse_worksheet_text(text, "x") == first
    assert parse_worksheet_text(format_worksheet(first), "x") == first
