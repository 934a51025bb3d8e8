"""In-memory pipeline stages shared by the CLI and the experiment harness.

Each function takes plain objects and returns plain objects; file I/O is
left to :mod:`clickvid.cli`.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass
from typing import Optional, Sequence

from .embed import EmbeddingTable, generate_walks, train_skipgram
from .evaluate import MetricsReport, RetrievalIndex, build_report, retrieve_many
from .graph import CoClickGraph, Level, flatten_weights, project_coclick, prune
from .mining import (
    ClassSample,
    ListSample,
    PairSample,
    Triplet,
    category_index,
    mine_category_samples,
    mine_list_sample,
    mine_triplets,
    mine_virtual_samples,
    suggest_thresholds,
)
from .pvlog import Channels, PVRecord
from .synth import EvalQuery
from .train import CategorySamples, FeatureSamples, embed, predict_categories
from .vid import VidCategoryMap, VirtualIdAssignment, cluster_embeddings, default_item_k

logger = logging.getLogger(__name__)


@dataclass
class EmbedSettings:
    walks_per_node: int = 10
    walk_length: int = 40
    window: int = 5
    dim: int = 64
    epochs: int = 5
    lr0: float = 0.025
    mode: str = "hs"
    negative: int = 5
    uniform_walks: bool = False
    shuffle: bool = False
    min_edge_weight: int = 1
    min_degree: int = 0


@dataclass
class MiningSettings:
    gamma: Optional[float] = None
    eps: Optional[float] = None
    gamma_pct: float = 60.0
    eps_pct: float = 40.0
    channel_weights: Sequence[float] = (1.0, 1.0, 1.0)
    max_triplets: int = 16
    list_size: int = 5
    feature_source: str = "item"
    category_source: str = "query"


def build_graph(records: Sequence[PVRecord], level: Level, s: EmbedSettings) -> CoClickGraph:
    g = prune(project_coclick(records, level), s.min_edge_weight, s.min_degree)
    return flatten_weights(g) if s.uniform_walks else g


def embed_nodes(graph: CoClickGraph, s: EmbedSettings, seed: int, threads: int = 1) -> EmbeddingTable:
    corpus = generate_walks(graph, s.walks_per_node, s.walk_length, seed, threads=threads)
    return train_skipgram(
        corpus, d=s.dim, w=s.window, epochs=s.epochs, lr0=s.lr0, mode=s.mode, negative=s.negative, seed=seed, shuffle=s.shuffle
    )


def discover_vids(
    records: Sequence[PVRecord], level: Level, k: Optional[int], s: EmbedSettings, seed: int, threads: int = 1
) -> tuple[CoClickGraph, EmbeddingTable, VirtualIdAssignment]:
    graph = build_graph(records, level, s)
    table = embed_nodes(graph, s, seed, threads)
    k = default_item_k(len(graph.nodes)) if k is None else k
    return graph, table, cluster_embeddings(table, k, seed=seed, level=level)


@dataclass
class FeatureMining:
    samples: FeatureSamples
    gamma: float
    eps: float
    skipped: int


def mine_feature_samples(
    records: Sequence[PVRecord], assignment: VirtualIdAssignment, m: MiningSettings
) -> FeatureMining:
    gamma, eps = m.gamma, m.eps
    if gamma is None or eps is None:
        g, e = suggest_thresholds(records, m.channel_weights, m.gamma_pct, m.eps_pct)
        gamma = g if gamma is None else gamma
        eps = e if eps is None else eps
    virtual, skipped = mine_virtual_samples(records, assignment, m.feature_source)
    triplets: list[Triplet] = []
    lists: list[ListSample] = []
    for rec in records:
        triplets.extend(mine_triplets(rec, gamma, eps, m.channel_weights, m.max_triplets))
        ls = mine_list_sample(rec, m.list_size, m.channel_weights)
        if ls is not None:
            lists.append(ls)
    logger.info("feature mining: %d virtual (%d skipped), %d triplets, %d lists", len(virtual), skipped, len(triplets), len(lists))
    return FeatureMining(FeatureSamples(virtual, triplets, lists, assignment.k), gamma, eps, skipped)


def mine_category(
    records: Sequence[PVRecord], assignment: VirtualIdAssignment, tops: Sequence[str], m: MiningSettings
) -> CategorySamples:
    vocab = category_index(tops)
    virtual, _ = mine_virtual_samples(records, assignment, m.category_source)
    clicks: list[ClassSample] = []
    pairs: list[PairSample] = []
    for rec in records:
        c, p = mine_category_samples(rec, vocab)
        clicks.extend(c)
        pairs.extend(p)
    return CategorySamples(virtual, clicks, pairs, assignment.k, len(vocab))


def retrieval_report(
    params,
    inventory: dict[str, tuple[str, Channels]],
    queries: Sequence[EvalQuery],
    k: int = 20,
    fixed_category: bool = True,
    predicted: Optional[dict[str, str]] = None,
) -> tuple[MetricsReport, dict[str, list[str]]]:
    """Embed inventory and queries, search within a category, score identical recall.

    With ``fixed_category`` the search is restricted to the query's true top
    category; otherwise to ``predicted`` categories when given, else unrestricted.
    """
    ids = sorted(inventory)
    emb = embed(params, [inventory[i][1] for i in ids])
    index = RetrievalIndex(dict(zip(ids, emb)), {i: inventory[i][0] for i in ids})
    qemb = embed(params, [q.features for q in queries])
    qvec = {q.query_id: v for q, v in zip(queries, qemb)}
    if fixed_category:
        filters = {q.query_id: q.top for q in queries}
    else:
        filters = predicted
    rankings = retrieve_many(qvec, index, k, filters)
    truth = {q.query_id: set(q.identical) for q in queries}
    report = build_report({q.query_id: q.top for q in queries}, rankings, truth)
    return report, rankings


def category_report(params, cmap: VidCategoryMap, tops: Sequence[str], queries: Sequence[EvalQuery], ensemble_weight: float) -> MetricsReport:
    names = sorted(tops)
    preds = predict_categories([q.features for q in queries], params, cmap.vid_to_top, names, ensemble_weight)
    return build_report({q.query_id: q.top for q in queries}, predictions=dict(zip((q.query_id for q in queries), preds)))
