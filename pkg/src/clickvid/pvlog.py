"""Page-view click logs: record types, JSON-lines I/O and click semantics.

A PVLOG line describes one query image, the ordered list of results that was
shown for it and which of those results were clicked. Feature vectors are
carried inline as a list of channels per image.
"""

from __future__ import annotations

import json
import logging
from dataclasses import dataclass, field
from typing import Iterable, Iterator, Optional, Sequence

import numpy as np

from .errors import MalformedLine

logger = logging.getLogger(__name__)

Channels = tuple  # tuple of 1-D float64 arrays, one per feature channel


def as_channels(raw: Sequence[Sequence[float]]) -> Channels:
    """Convert nested float lists into an immutable tuple of float64 arrays."""
    out = []
    for ch in raw:
        arr = np.array(ch, dtype=np.float64)
        if arr.ndim != 1:
            raise ValueError("feature channel must be a flat vector")
        arr.setflags(write=False)
        out.append(arr)
    return tuple(out)


def channel_shape(channels: Channels) -> tuple[int, ...]:
    return tuple(len(c) for c in channels)


def channels_equal(a: Channels, b: Channels) -> bool:
    return len(a) == len(b) and all(np.array_equal(x, y) for x, y in zip(a, b))


def flatten(channels: Channels) -> np.ndarray:
    """Concatenate feature channels into a single input vector."""
    return np.concatenate(channels) if channels else np.zeros(0)


@dataclass(eq=False)
class ResultEntry:
    item_id: str
    leaf_category: str
    top_category: str
    position: int
    clicked: bool
    click_time: Optional[int]
    item_features: Channels

    def __eq__(self, other: object) -> bool:
        if not isinstance(other, ResultEntry):
            return NotImplemented
        return (
            self.item_id == other.item_id
            and self.leaf_category == other.leaf_category
            and self.top_category == other.top_category
            and self.position == other.position
            and self.clicked == other.clicked
            and self.click_time == other.click_time
            and channels_equal(self.item_features, other.item_features)
        )


@dataclass(eq=False)
class PVRecord:
    pv_id: str
    user_id: str
    query_id: str
    query_features: Channels
    timestamp: int
    predicted_top_category: str
    selected_top_category: Optional[str]
    results: list[ResultEntry] = field(default_factory=list)

    def __eq__(self, other: object) -> bool:
        if not isinstance(other, PVRecord):
            return NotImplemented
        return (
            self.pv_id == other.pv_id
            and self.user_id == other.user_id
            and self.query_id == other.query_id
            and self.timestamp == other.timestamp
            and self.predicted_top_category == other.predicted_top_category
            and self.selected_top_category == other.selected_top_category
            and channels_equal(self.query_features, other.query_features)
            and self.results == other.results
        )

    def clicked(self) -> list[ResultEntry]:
        return [r for r in self.results if r.clicked]


@dataclass(frozen=True)
class ClickSummary:
    first_click: Optional[tuple[str, str]]
    switch: Optional[tuple[str, str]]
    clicked_items: list[str]
    nonclicked_items: list[str]


def validate_record(rec: PVRecord) -> None:
    """Raise ``ValueError`` describing the first violated record invariant."""
    positions = [r.position for r in rec.results]
    if positions != list(range(1, len(positions) + 1)):
        if len(set(positions)) != len(positions):
            raise ValueError(f"duplicate result positions {positions}")
        raise ValueError(f"positions must be 1..N in order, got {positions}")
    if rec.selected_top_category is not None and (
        rec.selected_top_category == rec.predicted_top_category
    ):
        raise ValueError("selected category equals predicted category")
    shape = channel_shape(rec.query_features)
    for r in rec.results:
        if r.clicked:
            if r.click_time is None:
                raise ValueError(f"clicked item {r.item_id} has no click time")
            if r.click_time < rec.timestamp:
                raise ValueError(f"click on {r.item_id} precedes the page view")
        elif r.click_time is not None:
            raise ValueError(f"unclicked item {r.item_id} has a click time")
        if channel_shape(r.item_features) != shape:
            raise ValueError(
                f"item {r.item_id} channels {channel_shape(r.item_features)} "
                f"do not match query channels {shape}"
            )


def record_to_dict(rec: PVRecord) -> dict:
    return {
        "pv_id": rec.pv_id,
        "user_id": rec.user_id,
        "query_id": rec.query_id,
        "query_features": [c.tolist() for c in rec.query_features],
        "ts": rec.timestamp,
        "pred_cat": rec.predicted_top_category,
        "sel_cat": rec.selected_top_category,
        "results": [
            {
                "item_id": r.item_id,
                "leaf": r.leaf_category,
                "top": r.top_category,
                "pos": r.position,
                "clicked": r.clicked,
                "click_ts": r.click_time,
                "features": [c.tolist() for c in r.item_features],
            }
            for r in rec.results
        ],
    }


def _int(value, name: str) -> int:
    if isinstance(value, bool) or not isinstance(value, int):
        raise ValueError(f"{name} must be an integer")
    return value


def _str(value, name: str) -> str:
    if not isinstance(value, str):
        raise ValueError(f"{name} must be a string")
    return value


def record_from_dict(obj: dict) -> PVRecord:
    """Build and validate a record from its decoded JSON object."""
    if not isinstance(obj, dict):
        raise ValueError("record must be a JSON object")
    try:
        results = []
        for r in obj["results"]:
            clicked = r["clicked"]
            if not isinstance(clicked, bool):
                raise ValueError("clicked must be a boolean")
            click_ts = r["click_ts"]
            results.append(
                ResultEntry(
                    item_id=_str(r["item_id"], "item_id"),
                    leaf_category=_str(r["leaf"], "leaf"),
                    top_category=_str(r["top"], "top"),
                    position=_int(r["pos"], "pos"),
                    clicked=clicked,
                    click_time=None if click_ts is None else _int(click_ts, "click_ts"),
                    item_features=as_channels(r["features"]),
                )
            )
        sel = obj["sel_cat"]
        rec = PVRecord(
            pv_id=_str(obj["pv_id"], "pv_id"),
            user_id=_str(obj["user_id"], "user_id"),
            query_id=_str(obj["query_id"], "query_id"),
            query_features=as_channels(obj["query_features"]),
            timestamp=_int(obj["ts"], "ts"),
            predicted_top_category=_str(obj["pred_cat"], "pred_cat"),
            selected_top_category=None if sel is None else _str(sel, "sel_cat"),
            results=results,
        )
    except KeyError as exc:
        raise ValueError(f"missing field {exc.args[0]!r}") from None
    except TypeError as exc:
        raise ValueError(f"bad field type: {exc}") from None
    validate_record(rec)
    return rec


def serialize_record(rec: PVRecord) -> str:
    return json.dumps(record_to_dict(rec), separators=(",", ":"))


def parse_pvlog(
    lines: Iterable[str],
    strict: bool = True,
    errors: Optional[list[MalformedLine]] = None,
) -> Iterator[PVRecord]:
    """Yield validated records from a JSON-lines stream.

    Blank lines are ignored. With ``strict`` a bad line raises
    :class:`MalformedLine`; otherwise it is logged, appended to ``errors`` when
    given, and skipped.
    """
    for line_no, line in enumerate(lines, start=1):
        if not line.strip():
            continue
        try:
            rec = record_from_dict(json.loads(line))
        except (ValueError, json.JSONDecodeError) as exc:
            err = MalformedLine(line_no, str(exc))
            if strict:
                raise err from None
            logger.warning("skipping %s", err)
            if errors is not None:
                errors.append(err)
            continue
        yield rec


def write_pvlog(records: Iterable[PVRecord], path) -> int:
    n = 0
    with open(path, "w", encoding="utf-8") as fh:
        for rec in records:
            fh.write(serialize_record(rec))
            fh.write("\n")
            n += 1
    return n


def read_pvlog(path, strict: bool = True, errors=None) -> list[PVRecord]:
    with open(path, encoding="utf-8") as fh:
        return list(parse_pvlog(fh, strict=strict, errors=errors))


def extract_click_summary(record: PVRecord) -> ClickSummary:
    """Derive first-click and switch-click semantics for one page view.

    The earliest click wins the first-click slot, ties going to the better
    position. A switch pair ``(abandoned prediction, chosen tab)`` is only
    emitted when the user both changed the tab and clicked afterwards; the
    logged result list is the one shown after the switch, so any click in
    the record counts.
    """
    clicked = [r for r in record.results if r.clicked]
    first = None
    if clicked:
        best = min(clicked, key=lambda r: (r.click_time, r.position))
        first = (best.item_id, best.top_category)
    switch = None
    if record.selected_top_category is not None and clicked:
        switch = (record.predicted_top_category, record.selected_top_category)
    return ClickSummary(
        first_click=first,
        switch=switch,
        clicked_items=[r.item_id for r in clicked],
        nonclicked_items=[r.item_id for r in record.results if not r.clicked],
    )
