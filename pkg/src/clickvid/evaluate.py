"""Retrieval and classification metrics.

Recall@K is reported two ways: set recall (fraction of the identical set found
in the top K, the headline number) and hit rate (1 if any identical item is
in the top K). Per-category averages are query-weighted; macro averages over
categories are reported alongside.
"""

from __future__ import annotations

import json
import logging
from collections import defaultdict
from dataclasses import dataclass, field
from typing import Iterable, Mapping, Optional, Sequence

import numpy as np

from .errors import DimensionMismatch, EmptyIndex

logger = logging.getLogger(__name__)

DEFAULT_KS = (1, 4, 20)


class RetrievalIndex:
    """Exact Euclidean index; items are kept sorted by id so ties are canonical."""

    def __init__(self, embeddings: Mapping[str, np.ndarray], categories: Optional[Mapping[str, str]] = None) -> None:
        self.ids = sorted(embeddings)
        vecs = [np.asarray(embeddings[i], dtype=np.float64) for i in self.ids]
        dims = {v.shape for v in vecs}
        if len(dims) > 1:
            raise DimensionMismatch(f"inconsistent embedding shapes {sorted(dims)}")
        self.matrix = np.stack(vecs) if vecs else np.zeros((0, 0))
        self.categories = [None if categories is None else categories.get(i) for i in self.ids]

    def __len__(self) -> int:
        return len(self.ids)

    def _mask(self, category_filter: Optional[str]) -> np.ndarray:
        if category_filter is None:
            return np.ones(len(self.ids), dtype=bool)
        return np.array([c == category_filter for c in self.categories], dtype=bool)


def retrieve(query_embedding: np.ndarray, index: RetrievalIndex, k: int, category_filter: Optional[str] = None) -> list[str]:
    """Top-``k`` item ids by ascending Euclidean distance, ties by item id."""
    if k < 1:
        raise ValueError("k must be >= 1")
    if not len(index):
        raise EmptyIndex("retrieval index is empty")
    q = np.asarray(query_embedding, dtype=np.float64)
    if q.shape != index.matrix.shape[1:]:
        raise DimensionMismatch(f"query shape {q.shape} vs index {index.matrix.shape[1:]}")
    mask = index._mask(category_filter)
    cand = np.flatnonzero(mask)
    if cand.size == 0:
        return []
    d = np.linalg.norm(index.matrix[cand] - q, axis=1)
    order = np.argsort(d, kind="stable")[:k]
    return [index.ids[cand[i]] for i in order]


def retrieve_many(
    queries: Mapping[str, np.ndarray], index: RetrievalIndex, k: int, filters: Optional[Mapping[str, str]] = None
) -> dict[str, list[str]]:
    return {qid: retrieve(vec, index, k, None if filters is None else filters.get(qid)) for qid, vec in queries.items()}


@dataclass
class RankingMetric:
    per_query: dict[str, float]
    mean: float
    hit_per_query: dict[str, float] = field(default_factory=dict)
    hit_rate: float = 0.0
    missing: int = 0


def _evaluable(rankings, truth) -> tuple[list[str], int]:
    keep, missing = [], 0
    for q in rankings:
        if truth.get(q):
            keep.append(q)
        else:
            missing += 1
    if missing:
        logger.warning("%d queries have no ground truth and were excluded", missing)
    return keep, missing


def recall_at_k(rankings: Mapping[str, Sequence[str]], truth: Mapping[str, Iterable[str]], k: int) -> RankingMetric:
    """Set recall |top-k & identical| / |identical|, plus the hit-rate variant."""
    qs, missing = _evaluable(rankings, truth)
    per, hits = {}, {}
    for q in qs:
        ident = set(truth[q])
        found = len(set(rankings[q][:k]) & ident)
        per[q] = found / len(ident)
        hits[q] = 1.0 if found else 0.0
    mean = float(np.mean(list(per.values()))) if per else 0.0
    hit = float(np.mean(list(hits.values()))) if hits else 0.0
    return RankingMetric(per, mean, hits, hit, missing)


def average_precision(ranking: Sequence[str], identical: set, k: int) -> float:
    hits, total = 0, 0.0
    for i, item in enumerate(ranking[:k], start=1):
        if item in identical:
            hits += 1
            total += hits / i
    return total / min(len(identical), k)


def map_at_k(rankings: Mapping[str, Sequence[str]], truth: Mapping[str, Iterable[str]], k: int) -> RankingMetric:
    qs, missing = _evaluable(rankings, truth)
    per = {q: average_precision(rankings[q], set(truth[q]), k) for q in qs}
    mean = float(np.mean(list(per.values()))) if per else 0.0
    return RankingMetric(per, mean, missing=missing)


@dataclass
class PrecisionReport:
    per_category: dict[str, float]
    counts: dict[str, int]
    average: float
    macro: float


def precision_at_1(predictions: Mapping[str, str], truth: Mapping[str, str]) -> PrecisionReport:
    """Per true category accuracy of top-1 predictions over the shared queries."""
    correct: dict[str, int] = defaultdict(int)
    counts: dict[str, int] = defaultdict(int)
    for q, cat in truth.items():
        if q not in predictions:
            continue
        counts[cat] += 1
        correct[cat] += predictions[q] == cat
    per = {c: correct[c] / counts[c] for c in sorted(counts)}
    total = sum(counts.values())
    avg = sum(correct.values()) / total if total else 0.0
    macro = float(np.mean(list(per.values()))) if per else 0.0
    return PrecisionReport(per, dict(sorted(counts.items())), avg, macro)


def adjusted_rand_index(labels_true: Sequence, labels_pred: Sequence) -> float:
    """Chance-corrected pair agreement between two partitions."""
    if len(labels_true) != len(labels_pred):
        raise ValueError("label sequences differ in length")
    n = len(labels_true)
    if n < 2:
        return 1.0
    _, ti = np.unique(np.asarray(labels_true), return_inverse=True)
    _, pi = np.unique(np.asarray(labels_pred), return_inverse=True)
    table = np.zeros((ti.max() + 1, pi.max() + 1), dtype=np.int64)
    np.add.at(table, (ti, pi), 1)

    def pairs(x):
        x = np.asarray(x, dtype=np.float64)
        return float(np.sum(x * (x - 1) / 2.0))

    index = pairs(table)
    a = pairs(table.sum(1))
    b = pairs(table.sum(0))
    total = n * (n - 1) / 2.0
    expected = a * b / total
    max_index = (a + b) / 2.0
    if max_index == expected:
        return 1.0
    return (index - expected) / (max_index - expected)


@dataclass
class MetricsReport:
    categories: list[str]
    counts: dict[str, int]
    values: dict[str, dict[str, float]]  # metric -> {category | "average" | "macro": value}

    def to_dict(self) -> dict:
        return {"categories": self.categories, "counts": self.counts, "metrics": self.values}

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True)

    def table(self, metrics: Optional[Sequence[str]] = None) -> str:
        """Aligned text table: one row per category, one column per metric."""
        metrics = list(metrics or self.values)
        rows = [["category", "queries", *metrics]]
        for c in self.categories:
            rows.append([c, str(self.counts.get(c, 0)), *(f"{self.values[m].get(c, float('nan')):.4f}" for m in metrics)])
        total = sum(self.counts.values())
        rows.append(["average", str(total), *(f"{self.values[m]['average']:.4f}" for m in metrics)])
        rows.append(["macro", str(total), *(f"{self.values[m]['macro']:.4f}" for m in metrics)])
        widths = [max(len(r[i]) for r in rows) for i in range(len(rows[0]))]
        lines = ["  ".join(cell.ljust(w) if i == 0 else cell.rjust(w) for i, (cell, w) in enumerate(zip(r, widths))) for r in rows]
        return "\n".join(lines) + "\n"


def _by_category(per_query: Mapping[str, float], query_cat: Mapping[str, str], cats: Sequence[str]) -> dict[str, float]:
    groups: dict[str, list[float]] = defaultdict(list)
    for q, v in per_query.items():
        groups[query_cat[q]].append(v)
    out = {c: float(np.mean(groups[c])) for c in cats if groups[c]}
    out["average"] = float(np.mean(list(per_query.values()))) if per_query else 0.0
    cat_means = [out[c] for c in cats if c in out]
    out["macro"] = float(np.mean(cat_means)) if cat_means else 0.0
    return out


def build_report(
    query_category: Mapping[str, str],
    rankings: Optional[Mapping[str, Sequence[str]]] = None,
    truth: Optional[Mapping[str, Iterable[str]]] = None,
    predictions: Optional[Mapping[str, str]] = None,
    ks: Sequence[int] = DEFAULT_KS,
    map_ks: Sequence[int] = tuple(range(1, 21)),
) -> MetricsReport:
    """Assemble per-category Precision@1, Recall@K, hit@K and mAP@K."""
    cats = sorted(set(query_category.values()))
    counts = {c: 0 for c in cats}
    for c in query_category.values():
        counts[c] += 1
    values: dict[str, dict[str, float]] = {}
    if predictions is not None:
        per = {q: float(predictions.get(q) == c) for q, c in query_category.items() if q in predictions}
        values["precision@1"] = _by_category(per, query_category, cats)
    if rankings is not None and truth is not None:
        for k in ks:
            r = recall_at_k(rankings, truth, k)
            values[f"recall@{k}"] = _by_category(r.per_query, query_category, cats)
            values[f"hit@{k}"] = _by_category(r.hit_per_query, query_category, cats)
        for k in map_ks:
            values[f"map@{k}"] = _by_category(map_at_k(rankings, truth, k).per_query, query_category, cats)
    return MetricsReport(cats, counts, values)
