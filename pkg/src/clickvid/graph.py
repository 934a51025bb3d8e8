"""Co-click graphs projected from page-view logs.

Two clicked results of the same page view are linked; repeated co-clicks
accumulate into an integer edge weight. At leaf-category level both results
are replaced by their leaf category, and pairs from the same leaf are dropped.
"""

from __future__ import annotations

import enum
import json
from collections import Counter
from dataclasses import dataclass, field
from itertools import combinations
from typing import Iterable

from .errors import MalformedFile
from .pvlog import PVRecord


class Level(str, enum.Enum):
    ITEM = "item"
    LEAF = "leaf"


def edge_key(a: str, b: str) -> tuple[str, str]:
    return (a, b) if a < b else (b, a)


@dataclass
class CoClickGraph:
    nodes: list[str]
    edges: dict[tuple[str, str], int]
    level: Level = Level.ITEM
    _adj: dict = field(default=None, repr=False, compare=False)

    def __post_init__(self) -> None:
        self.nodes = sorted(set(self.nodes))
        known = set(self.nodes)
        for (a, b), w in self.edges.items():
            if a == b:
                raise ValueError(f"self-loop on {a!r}")
            if a > b:
                raise ValueError(f"edge key ({a!r}, {b!r}) is not normalized")
            if w < 1:
                raise ValueError(f"edge ({a!r}, {b!r}) has weight {w}")
            if a not in known or b not in known:
                raise ValueError(f"edge ({a!r}, {b!r}) references an unknown node")
        self.edges = dict(sorted(self.edges.items()))

    def neighbors(self, node: str) -> dict[str, int]:
        if self._adj is None:
            adj: dict[str, dict[str, int]] = {n: {} for n in self.nodes}
            for (a, b), w in self.edges.items():
                adj[a][b] = w
                adj[b][a] = w
            self._adj = adj
        return self._adj[node]

    def degree(self, node: str) -> int:
        return len(self.neighbors(node))

    def total_weight(self) -> int:
        return sum(self.edges.values())


def node_key(entry, level: Level) -> str:
    return entry.item_id if level == Level.ITEM else entry.leaf_category


def coclick_counts(records: Iterable[PVRecord], level: Level) -> tuple[set[str], Counter]:
    """Fold records into (node set, edge counter); shards merge by union and addition."""
    level = Level(level)
    nodes: set[str] = set()
    counts: Counter = Counter()
    for rec in records:
        keys = [node_key(r, level) for r in rec.results if r.clicked]
        nodes.update(keys)
        for a, b in combinations(keys, 2):
            if a != b:
                counts[edge_key(a, b)] += 1
    return nodes, counts


def project_coclick(records: Iterable[PVRecord], level: Level = Level.ITEM) -> CoClickGraph:
    nodes, counts = coclick_counts(records, level)
    return CoClickGraph(sorted(nodes), dict(counts), Level(level))


def prune(graph: CoClickGraph, min_edge_weight: int = 1, min_degree: int = 0) -> CoClickGraph:
    """Drop light edges and low-degree nodes until nothing changes."""
    if min_edge_weight < 1 or min_degree < 0:
        raise ValueError("min_edge_weight must be >= 1 and min_degree >= 0")
    nodes = set(graph.nodes)
    edges = {k: w for k, w in graph.edges.items() if w >= min_edge_weight}
    while True:
        deg = Counter()
        for a, b in edges:
            deg[a] += 1
            deg[b] += 1
        keep = {n for n in nodes if deg[n] >= min_degree}
        kept_edges = {k: w for k, w in edges.items() if k[0] in keep and k[1] in keep}
        if keep == nodes and len(kept_edges) == len(edges):
            break
        nodes, edges = keep, kept_edges
    return CoClickGraph(sorted(nodes), edges, graph.level)


def flatten_weights(graph: CoClickGraph) -> CoClickGraph:
    """Copy of ``graph`` with every edge weight set to 1 (uniform walks)."""
    return CoClickGraph(list(graph.nodes), {k: 1 for k in graph.edges}, graph.level)


def save_graph(graph: CoClickGraph, path) -> None:
    payload = {
        "level": graph.level.value,
        "nodes": graph.nodes,
        "edges": [[a, b, w] for (a, b), w in graph.edges.items()],
    }
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(payload, fh, separators=(",", ":"))
        fh.write("\n")


def load_graph(path) -> CoClickGraph:
    try:
        with open(path, encoding="utf-8") as fh:
            payload = json.load(fh)
        edges = {}
        nodes = set(payload.get("nodes", []))
        for a, b, w in payload["edges"]:
            if a == b:
                raise MalformedFile(f"{path}: self-loop on {a!r}")
            if a > b:
                raise MalformedFile(f"{path}: edge ({a!r}, {b!r}) is not in normalized order")
            edges[(a, b)] = int(w)
            nodes.update((a, b))
        return CoClickGraph(sorted(nodes), edges, Level(payload["level"]))
    except (KeyError, ValueError, TypeError) as exc:
        raise MalformedFile(f"{path}: {exc}") from None
