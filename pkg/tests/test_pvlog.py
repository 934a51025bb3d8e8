import json

import pytest
from hypothesis import given

from clickvid.errors import MalformedLine
from clickvid.pvlog import (
    extract_click_summary,
    parse_pvlog,
    read_pvlog,
    record_from_dict,
    record_to_dict,
    serialize_record,
    write_pvlog,
)
from conftest import ch, entry, record
from strategies import records


def _line(**over):
    obj = {
        "pv_id": "p1",
        "user_id": "u1",
        "query_id": "q1",
        "query_features": [[0.5, 1.0]],
        "ts": 10,
        "pred_cat": "bags",
        "sel_cat": None,
        "results": [
            {"item_id": "a", "leaf": "bags.x", "top": "bags", "pos": 1, "clicked": True, "click_ts": 12, "features": [[1.0, 2.0]]},
            {"item_id": "b", "leaf": "bags.x", "top": "bags", "pos": 2, "clicked": False, "click_ts": None, "features": [[0.0, 2.0]]},
            {"item_id": "c", "leaf": "bags.y", "top": "bags", "pos": 3, "clicked": False, "click_ts": None, "features": [[3.0, 2.0]]},
        ],
    }
    obj.update(over)
    return json.dumps(obj)


def test_parse_one_valid_line():
    recs = list(parse_pvlog([_line()]))
    assert len(recs) == 1
    assert len(recs[0].results) == 3
    assert [r.item_id for r in recs[0].clicked()] == ["a"]


def test_blank_lines_are_skipped():
    assert len(list(parse_pvlog(["", _line(), "   \n"]))) == 1


@pytest.mark.parametrize(
    "bad",
    [
        "{not json",
        "[]",
        _line(ts="10"),
        _line(sel_cat="bags"),  # selected equals predicted
        json.dumps({"pv_id": "p"}),
    ],
)
def test_malformed_lines_raise_in_strict_mode(bad):
    with pytest.raises(MalformedLine) as info:
        list(parse_pvlog([_line(), bad]))
    assert info.value.line_no == 2


def _results_with(**changes):
    obj = json.loads(_line())
    for idx, key, value in changes["edits"]:
        obj["results"][idx][key] = value
    return json.dumps(obj)


@pytest.mark.parametrize(
    "edits",
    [
        [(1, "pos", 1)],  # duplicate position
        [(2, "pos", 5)],  # gap
        [(0, "click_ts", None)],  # clicked without time
        [(1, "click_ts", 20)],  # unclicked with time
        [(0, "click_ts", 3)],  # click before the page view
        [(2, "features", [[1.0]])],  # channel shape mismatch
        [(0, "clicked", 1)],
    ],
)
def test_invariant_violations_are_malformed(edits):
    with pytest.raises(MalformedLine):
        list(parse_pvlog([_results_with(edits=edits)]))


def test_lenient_mode_collects_errors():
    errors = []
    recs = list(parse_pvlog([_line(), "garbage", _line(pv_id="p2")], strict=False, errors=errors))
    assert [r.pv_id for r in recs] == ["p1", "p2"]
    assert [e.line_no for e in errors] == [2]


@given(records())
def test_record_dict_roundtrip(rec):
    assert record_from_dict(record_to_dict(rec)) == rec
    assert serialize_record(record_from_dict(json.loads(serialize_record(rec)))) == serialize_record(rec)


def test_file_roundtrip(tmp_path):
    recs = list(parse_pvlog([_line(), _line(pv_id="p2")]))
    path = tmp_path / "log.jsonl"
    assert write_pvlog(recs, path) == 2
    assert read_pvlog(path) == recs


def test_switch_pair_from_tab_change_and_click():
    rec = record(
        [entry("a", top="shoes", clicked=True), entry("b", top="shoes")],
        pred="bags",
        sel="shoes",
    )
    s = extract_click_summary(rec)
    assert s.switch == ("bags", "shoes")
    assert s.first_click == ("a", "shoes")


def test_first_click_without_switch():
    rec = record([entry("a", top="bags"), entry("b", top="shoes", clicked=True)])
    s = extract_click_summary(rec)
    assert s.first_click == ("b", "shoes")
    assert s.switch is None


def test_no_clicks():
    rec = record([entry("a"), entry("b")], pred="bags", sel="shoes")
    s = extract_click_summary(rec)
    assert s.first_click is None and s.switch is None
    assert s.nonclicked_items == ["a", "b"] and s.clicked_items == []


def test_first_click_is_earliest_then_lowest_position():
    rec = record(
        [
            entry("a", clicked=True, click_time=150),
            entry("b", top="bags", clicked=True, click_time=120),
            entry("c", top="dress", clicked=True, click_time=120),
        ]
    )
    assert extract_click_summary(rec).first_click == ("b", "bags")


@given(records())
def test_click_partition_is_exact(rec):
    s = extract_click_summary(rec)
    assert not set(s.clicked_items) & set(s.nonclicked_items)
    assert len(s.clicked_items) + len(s.nonclicked_items) == len(rec.results)
    assert (s.first_click is None) == (not s.clicked_items)
    assert (s.switch is not None) == (rec.selected_top_category is not None and bool(s.clicked_items))


def test_channels_are_read_only():
    rec = record([entry("a", features=ch([1, 2]))])
    with pytest.raises(ValueError):
        rec.results[0].item_features[0][0] = 5.0
