"""Virtual IDs: k-means over co-click embeddings, and their category mapping."""

from __future__ import annotations

import json
import logging
from collections import Counter
from dataclasses import dataclass, field
from typing import Iterable, Optional

import numpy as np

from .embed import EmbeddingTable
from .errors import InvalidK
from .graph import Level, node_key
from .pvlog import PVRecord

logger = logging.getLogger(__name__)


@dataclass
class VirtualIdAssignment:
    labels: dict[str, int]
    centroids: np.ndarray
    k: int
    level: Level = Level.ITEM
    inertia_history: list[float] = field(default_factory=list)

    def get(self, node: str) -> Optional[int]:
        return self.labels.get(node)


@dataclass
class VidCategoryMap:
    vid_to_top: dict[int, str]
    votes: dict[int, dict[str, int]]
    unmappable: list[int]


def default_item_k(node_count: int) -> int:
    return max(16, node_count // 20)


def _sq_dists(x: np.ndarray, c: np.ndarray) -> np.ndarray:
    d = (x * x).sum(1)[:, None] - 2.0 * x @ c.T + (c * c).sum(1)[None, :]
    return np.maximum(d, 0.0)


def kmeans_pp(x: np.ndarray, k: int, rng: np.random.Generator) -> np.ndarray:
    """k-means++ seeding (D^2 sampling)."""
    n = x.shape[0]
    centers = [x[int(rng.integers(n))]]
    closest = _sq_dists(x, np.array(centers))[:, 0]
    for _ in range(1, k):
        total = closest.sum()
        if total <= 0:
            idx = int(rng.integers(n))
        else:
            idx = int(np.searchsorted(np.cumsum(closest), rng.random() * total, side="right"))
            idx = min(idx, n - 1)
        centers.append(x[idx])
        closest = np.minimum(closest, _sq_dists(x, x[idx : idx + 1])[:, 0])
    return np.array(centers)


def lloyd(x: np.ndarray, centers: np.ndarray, max_iters: int) -> tuple[np.ndarray, np.ndarray, list[float]]:
    """Lloyd iterations from ``centers``; returns (labels, centers, inertias).

    ``argmin`` picks the first minimum, so distance ties go to the lowest
    cluster index. An emptied cluster takes over the point farthest from its
    current centroid.
    """
    k = centers.shape[0]
    centers = centers.copy()
    labels = _sq_dists(x, centers).argmin(1)
    history = []
    for _ in range(max_iters):
        for j in range(k):
            members = labels == j
            if members.any():
                centers[j] = x[members].mean(0)
        d = _sq_dists(x, centers)
        new = d.argmin(1)
        for j in range(k):
            if not (new == j).any():
                far = int(d[np.arange(len(x)), new].argmax())
                new[far] = j
                centers[j] = x[far]
                d = _sq_dists(x, centers)
        history.append(float(d[np.arange(len(x)), new].sum()))
        if np.array_equal(new, labels):
            labels = new
            break
        labels = new
    for j in range(k):
        members = labels == j
        if members.any():
            centers[j] = x[members].mean(0)
    return labels, centers, history


def inertia(x: np.ndarray, labels: np.ndarray, centers: np.ndarray) -> float:
    return float(((x - centers[labels]) ** 2).sum())


def normalize_rows(v: np.ndarray) -> np.ndarray:
    norms = np.linalg.norm(v, axis=1, keepdims=True)
    return v / np.where(norms > 0, norms, 1.0)


def cluster_embeddings(
    table: EmbeddingTable, k: int, seed: int = 0, max_iters: int = 100, level: Level = Level.ITEM, n_init: int = 10
) -> VirtualIdAssignment:
    """Assign every node of ``table`` to one of ``k`` virtual IDs.

    Runs ``n_init`` seeded k-means++ starts and keeps the lowest final
    inertia (earliest start on ties); a single start often merges two
    well-separated communities and splits a third.
    """
    if k < 1:
        raise InvalidK(f"K must be >= 1, got {k}")
    if n_init < 1:
        raise ValueError("n_init must be >= 1")
    if not table.keys:
        raise ValueError("embedding table is empty")
    x = normalize_rows(table.vectors)
    k_eff = min(k, x.shape[0])
    if k_eff < k:
        logger.warning("K=%d exceeds node count %d; using K=%d", k, x.shape[0], k_eff)
    rng = np.random.default_rng(seed)
    best, best_inertia = None, np.inf
    for _ in range(n_init):
        run = lloyd(x, kmeans_pp(x, k_eff, rng), max_iters)
        value = inertia(x, run[0], run[1])
        if value < best_inertia:
            best, best_inertia = run, value
    labels, centers, hist = best
    return VirtualIdAssignment(
        {key: int(l) for key, l in zip(table.keys, labels)}, centers, k_eff, Level(level), hist
    )


def map_vid_to_top_category(assignment: VirtualIdAssignment, records: Iterable[PVRecord]) -> VidCategoryMap:
    """Majority vote of clicked top categories per virtual ID.

    Every clicked result whose node key is assigned casts one vote for its
    top category. Ties go to the lexicographically smallest category.
    """
    votes: dict[int, Counter] = {j: Counter() for j in range(assignment.k)}
    for rec in records:
        for r in rec.results:
            if not r.clicked:
                continue
            vid = assignment.get(node_key(r, assignment.level))
            if vid is not None:
                votes[vid][r.top_category] += 1
    mapping, unmappable = {}, []
    for j in range(assignment.k):
        if votes[j]:
            mapping[j] = min(votes[j].items(), key=lambda kv: (-kv[1], kv[0]))[0]
        else:
            unmappable.append(j)
    if unmappable:
        logger.warning("virtual IDs without category evidence: %s", unmappable)
    return VidCategoryMap(mapping, {j: dict(sorted(c.items())) for j, c in votes.items()}, unmappable)


def save_assignment(assignment: VirtualIdAssignment, path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for node in sorted(assignment.labels):
            fh.write(json.dumps({"node": node, "vid": assignment.labels[node]}, separators=(",", ":")) + "\n")


def load_assignment(path, level: Level = Level.ITEM) -> VirtualIdAssignment:
    labels = {}
    with open(path, encoding="utf-8") as fh:
        for line in fh:
            if line.strip():
                row = json.loads(line)
                labels[row["node"]] = int(row["vid"])
    k = max(labels.values()) + 1 if labels else 0
    return VirtualIdAssignment(labels, np.zeros((k, 0)), k, Level(level))


def save_category_map(cmap: VidCategoryMap, path) -> None:
    payload = {
        "vid_to_top": {str(k): v for k, v in sorted(cmap.vid_to_top.items())},
        "unmappable": cmap.unmappable,
    }
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(payload, fh, separators=(",", ":"))
        fh.write("\n")


def load_category_map(path) -> VidCategoryMap:
    with open(path, encoding="utf-8") as fh:
        payload = json.load(fh)
    return VidCategoryMap({int(k): v for k, v in payload["vid_to_top"].items()}, {}, list(payload.get("unmappable", [])))
