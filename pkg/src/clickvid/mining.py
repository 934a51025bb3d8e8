"""Training samples mined from click logs.

Four families come out of a page view:

* classification samples labelled with a virtual ID (clicked item's cluster)
  or with a top category (first click = simple, post-switch click = hard);
* pair samples ``(abandoned category, chosen category)`` from tab switches;
* triplets ``(query, clicked, not clicked)`` filtered by a fusion distance so
  that unclicked near-duplicates of the query or of a clicked item are not
  used as negatives;
* list samples ranking the top-N results by the same fusion distance, which
  acts as the teacher.
"""

from __future__ import annotations

import enum
import json
import math
from dataclasses import dataclass
from typing import Iterable, Optional, Sequence

import numpy as np

from .errors import ChannelMismatch, UnknownCategory
from .graph import node_key
from .pvlog import Channels, PVRecord, as_channels, extract_click_summary
from .vid import VirtualIdAssignment

DEFAULT_MAX_TRIPLETS = 16


class SampleKind(str, enum.Enum):
    VIRTUAL = "virtual"
    SIMPLE = "simple"
    HARD = "hard"


@dataclass(eq=False)
class ClassSample:
    features: Channels
    label: int
    kind: SampleKind
    source: str = ""


@dataclass(eq=False)
class PairSample:
    features: Channels
    y_neg: int
    y_hard: int
    source: str = ""


@dataclass(eq=False)
class Triplet:
    q: Channels
    q_pos: Channels
    q_neg: Channels
    ids: tuple[str, str, str]


@dataclass(eq=False)
class ListSample:
    q: Channels
    candidates: list
    teacher_pi: tuple[int, ...]
    weights: np.ndarray
    ids: tuple[str, ...] = ()


def fusion_distance(a: Channels, b: Channels, channel_weights: Sequence[float]) -> float:
    """Weighted mean of per-channel Euclidean distances."""
    if len(a) != len(b) or len(a) != len(channel_weights):
        raise ChannelMismatch(f"channel counts differ: {len(a)}, {len(b)}, {len(channel_weights)} weights")
    total = 0.0
    wsum = 0.0
    for x, y, w in zip(a, b, channel_weights):
        if x.shape != y.shape:
            raise ChannelMismatch(f"channel dims differ: {x.shape} vs {y.shape}")
        if w < 0:
            raise ValueError("channel weights must be non-negative")
        if w:
            total += w * float(np.linalg.norm(x - y))
        wsum += w
    if wsum <= 0:
        raise ValueError("channel weights must not all be zero")
    return total / wsum


def position_weights(n: int) -> np.ndarray:
    """DCG-style importance 1/log2(i+1) for positions i = 1..n."""
    return np.array([1.0 / math.log2(i + 1) for i in range(1, n + 1)])


def category_index(tops: Iterable[str]) -> dict[str, int]:
    return {t: i for i, t in enumerate(sorted(set(tops)))}


def _label(vocab: dict[str, int], cat: str) -> int:
    try:
        return vocab[cat]
    except KeyError:
        raise UnknownCategory(f"category {cat!r} is not in the vocabulary") from None


def mine_category_samples(record: PVRecord, vocab: dict[str, int]) -> tuple[list[ClassSample], list[PairSample]]:
    """Simple sample from a first click, or hard + pair samples from a switch."""
    summary = extract_click_summary(record)
    q = record.query_features
    if summary.switch is not None:
        y_neg, y_hard = (_label(vocab, c) for c in summary.switch)
        return (
            [ClassSample(q, y_hard, SampleKind.HARD, record.pv_id)],
            [PairSample(q, y_neg, y_hard, record.pv_id)],
        )
    if summary.first_click is not None:
        return [ClassSample(q, _label(vocab, summary.first_click[1]), SampleKind.SIMPLE, record.pv_id)], []
    return [], []


def mine_virtual_samples(
    records: Iterable[PVRecord], assignment: VirtualIdAssignment, feature_source: str = "item"
) -> tuple[list[ClassSample], int]:
    """One virtual-ID sample per assigned click; returns (samples, skipped).

    ``feature_source`` picks the image the label is attached to: the clicked
    item (``"item"``), the query (``"query"``) or both (``"both"``, two
    samples per click).
    """
    if feature_source not in ("item", "query", "both"):
        raise ValueError(f"unknown feature source {feature_source!r}")
    samples, skipped = [], 0
    for rec in records:
        for r in rec.results:
            if not r.clicked:
                continue
            vid = assignment.get(node_key(r, assignment.level))
            if vid is None:
                skipped += 1
                continue
            if feature_source in ("item", "both"):
                samples.append(ClassSample(r.item_features, vid, SampleKind.VIRTUAL, r.item_id))
            if feature_source in ("query", "both"):
                samples.append(ClassSample(rec.query_features, vid, SampleKind.VIRTUAL, rec.query_id))
    return samples, skipped


def mine_triplets(
    record: PVRecord,
    gamma: float,
    eps: float,
    channel_weights: Sequence[float],
    max_triplets: int = DEFAULT_MAX_TRIPLETS,
) -> list[Triplet]:
    """Cross clicked positives with filtered unclicked negatives.

    A clicked result is a positive when its distance to the query is at most
    ``eps``. An unclicked result is a negative when it is at least ``gamma``
    away from the query and from every clicked result. Triplets are ordered
    hardest negative first (closest to the query) and truncated to
    ``max_triplets``.
    """
    if gamma <= 0 or eps <= 0:
        raise ValueError("gamma and eps must be positive")
    q = record.query_features
    clicked = [r for r in record.results if r.clicked]
    if not clicked:
        return []
    dq = {r.position: fusion_distance(r.item_features, q, channel_weights) for r in record.results}
    positives = [r for r in clicked if dq[r.position] <= eps]
    if not positives:
        return []
    negatives = []
    for r in record.results:
        if r.clicked:
            continue
        to_clicked = min(fusion_distance(r.item_features, c.item_features, channel_weights) for c in clicked)
        if min(dq[r.position], to_clicked) >= gamma:
            negatives.append(r)
    negatives.sort(key=lambda r: (dq[r.position], r.position))
    out = []
    for n in negatives:
        for p in positives:
            if len(out) >= max_triplets:
                return out
            out.append(Triplet(q, p.item_features, n.item_features, (record.query_id, p.item_id, n.item_id)))
    return out


def mine_list_sample(
    record: PVRecord,
    n: int,
    channel_weights: Sequence[float],
    weights: Optional[Sequence[float]] = None,
) -> Optional[ListSample]:
    """Teacher ranking of the first ``n`` results, closest to the query first.

    ``teacher_pi[i]`` is the (0-based) candidate index placed at rank ``i``;
    equal distances keep result order.
    """
    if n < 2:
        raise ValueError("list size must be >= 2")
    if len(record.results) < n:
        return None
    cands = record.results[:n]
    d = [fusion_distance(c.item_features, record.query_features, channel_weights) for c in cands]
    pi = tuple(sorted(range(n), key=lambda i: (d[i], i)))
    w = position_weights(n) if weights is None else np.asarray(weights, dtype=np.float64)
    if len(w) != n or np.any(w <= 0):
        raise ValueError("need n strictly positive position weights")
    return ListSample(record.query_features, [c.item_features for c in cands], pi, w, tuple(c.item_id for c in cands))


def suggest_thresholds(
    records: Iterable[PVRecord], channel_weights: Sequence[float], gamma_pct: float = 60.0, eps_pct: float = 40.0
) -> tuple[float, float]:
    """Percentile-based (gamma, eps): of unclicked and clicked query distances."""
    d_click, d_non = [], []
    for rec in records:
        for r in rec.results:
            d = fusion_distance(r.item_features, rec.query_features, channel_weights)
            (d_click if r.clicked else d_non).append(d)
    if not d_click or not d_non:
        raise ValueError("need both clicked and unclicked results to pick thresholds")
    return float(np.percentile(d_non, gamma_pct)), float(np.percentile(d_click, eps_pct))


def _ch(c: Channels) -> list:
    return [x.tolist() for x in c]


def _dump(rows: Iterable[dict], path) -> int:
    n = 0
    with open(path, "w", encoding="utf-8") as fh:
        for row in rows:
            fh.write(json.dumps(row, separators=(",", ":")) + "\n")
            n += 1
    return n


def _load(path) -> list[dict]:
    with open(path, encoding="utf-8") as fh:
        return [json.loads(line) for line in fh if line.strip()]


def write_class_samples(samples: Iterable[ClassSample], path) -> int:
    return _dump(({"features": _ch(s.features), "label": s.label, "kind": s.kind.value, "source": s.source} for s in samples), path)


def read_class_samples(path) -> list[ClassSample]:
    return [ClassSample(as_channels(r["features"]), r["label"], SampleKind(r["kind"]), r.get("source", "")) for r in _load(path)]


def write_pairs(pairs: Iterable[PairSample], path) -> int:
    return _dump(({"features": _ch(p.features), "y_neg": p.y_neg, "y_hard": p.y_hard, "source": p.source} for p in pairs), path)


def read_pairs(path) -> list[PairSample]:
    return [PairSample(as_channels(r["features"]), r["y_neg"], r["y_hard"], r.get("source", "")) for r in _load(path)]


def write_triplets(triplets: Iterable[Triplet], path) -> int:
    return _dump(
        ({"q": _ch(t.q), "pos": _ch(t.q_pos), "neg": _ch(t.q_neg), "ids": list(t.ids)} for t in triplets), path
    )


def read_triplets(path) -> list[Triplet]:
    return [Triplet(as_channels(r["q"]), as_channels(r["pos"]), as_channels(r["neg"]), tuple(r["ids"])) for r in _load(path)]


def write_lists(lists: Iterable[ListSample], path) -> int:
    return _dump(
        (
            {
                "q": _ch(s.q),
                "candidates": [_ch(c) for c in s.candidates],
                "teacher_pi": list(s.teacher_pi),
                "weights": s.weights.tolist(),
                "ids": list(s.ids),
            }
            for s in lists
        ),
        path,
    )


def read_lists(path) -> list[ListSample]:
    return [
        ListSample(
            as_channels(r["q"]),
            [as_channels(c) for c in r["candidates"]],
            tuple(r["teacher_pi"]),
            np.array(r["weights"], dtype=np.float64),
            tuple(r.get("ids", ())),
        )
        for r in _load(path)
    ]
