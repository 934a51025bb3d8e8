"""DeepWalk node embeddings: weighted truncated random walks + skip-gram.

Walk transitions are proportional to co-click weight. Every walk draws its
randomness from a Philox stream keyed by ``(seed, node index, walk index)``
with one draw per step, so any subset of walks can be regenerated
independently and in parallel.

Skip-gram is trained with plain SGD over every (center, context) pair of a
fixed window, using hierarchical softmax over a Huffman tree (default) or
negative sampling. The inner loop is compiled with numba; it is single
threaded and bit-reproducible.
"""

from __future__ import annotations

import bisect
import heapq
import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np
from numba import njit

from .errors import EmptyCorpus, EmptyVocabulary, MalformedFile
from .graph import CoClickGraph

logger = logging.getLogger(__name__)

HIER_SOFTMAX = "hs"
NEG_SAMPLING = "neg"


@dataclass
class WalkCorpus:
    walks: list[list[str]]
    walks_per_node: int
    walk_length: int
    seed: int

    def frequencies(self) -> dict[str, int]:
        freq: dict[str, int] = {}
        for walk in self.walks:
            for node in walk:
                freq[node] = freq.get(node, 0) + 1
        return freq


def _walk_rng(seed: int, node_index: int, walk_index: int) -> np.random.Generator:
    key = ((seed & 0xFFFFFFFFFFFFFFFF) << 64) | ((node_index & 0xFFFFFFFF) << 32) | (walk_index & 0xFFFFFFFF)
    return np.random.Generator(np.random.Philox(key=key))


class _Transitions:
    def __init__(self, graph: CoClickGraph) -> None:
        self.nodes = list(graph.nodes)
        self.index = {n: i for i, n in enumerate(self.nodes)}
        self.nbrs: list[list[int]] = []
        self.cum: list[list[float]] = []
        for n in self.nodes:
            items = sorted(graph.neighbors(n).items())
            self.nbrs.append([self.index[k] for k, _ in items])
            acc, cum = 0.0, []
            for _, w in items:
                acc += w
                cum.append(acc)
            self.cum.append(cum)

    def walk(self, start: int, length: int, rng: np.random.Generator) -> list[str]:
        draws = rng.random(max(length - 1, 0))
        path = [start]
        cur = start
        for u in draws:
            cum = self.cum[cur]
            if not cum:
                break
            k = bisect.bisect_right(cum, u * cum[-1])
            cur = self.nbrs[cur][min(k, len(cum) - 1)]
            path.append(cur)
        return [self.nodes[i] for i in path]


def generate_walks(graph: CoClickGraph, r: int, t: int, seed: int, threads: int = 1) -> WalkCorpus:
    """Run ``r`` weighted walks of at most ``t`` nodes from every node.

    The corpus is ordered pass by pass (all nodes for walk 0, then walk 1, ...)
    regardless of ``threads``.
    """
    if r < 1 or t < 1:
        raise ValueError("walks_per_node and walk_length must be >= 1")
    trans = _Transitions(graph)
    jobs = [(j, i) for j in range(r) for i in range(len(trans.nodes))]

    def run(job):
        j, i = job
        return trans.walk(i, t, _walk_rng(seed, i, j))

    if threads > 1 and len(jobs) > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            walks = list(pool.map(run, jobs, chunksize=256))
    else:
        walks = [run(job) for job in jobs]
    return WalkCorpus(walks, r, t, seed)


def context_pairs(walk: Sequence, w: int) -> list[tuple]:
    """All (center, context) pairs within ``w`` steps of each other."""
    if w < 1:
        raise ValueError("window must be >= 1")
    pairs = []
    n = len(walk)
    for i in range(n):
        for j in range(max(0, i - w), min(n, i + w + 1)):
            if j != i:
                pairs.append((walk[i], walk[j]))
    return pairs


@dataclass
class CodeTree:
    """Huffman tree with vocabulary items as leaves.

    ``codes[i]`` lists the branch bits from the root down to leaf ``i`` and
    ``points[i]`` the inner-node indices visited on the way (same length).
    Bit 0 at inner node ``n`` has probability ``sigmoid(h . u_n)``.
    """

    keys: list[str]
    codes: list[np.ndarray]
    points: list[np.ndarray]

    @property
    def n_inner(self) -> int:
        return max(len(self.keys) - 1, 0)

    def depth(self, key: str) -> int:
        return len(self.codes[self.keys.index(key)])

    def padded(self) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
        n = len(self.keys)
        depth = max((len(c) for c in self.codes), default=0)
        codes = np.zeros((n, max(depth, 1)), dtype=np.int8)
        points = np.zeros((n, max(depth, 1)), dtype=np.int64)
        lengths = np.zeros(n, dtype=np.int64)
        for i in range(n):
            k = len(self.codes[i])
            codes[i, :k] = self.codes[i]
            points[i, :k] = self.points[i]
            lengths[i] = k
        return codes, points, lengths


def build_code_tree(frequencies: dict[str, int]) -> CodeTree:
    """Huffman-code the vocabulary; keys are stored in lexicographic order.

    Equal counts are resolved leaves-first, leaves by key and inner nodes by
    creation order, which makes the tree a deterministic function of the
    counts.
    """
    if not frequencies:
        raise EmptyVocabulary("cannot build a code tree without nodes")
    keys = sorted(frequencies)
    if any(frequencies[k] < 1 for k in keys):
        raise ValueError("node frequencies must be >= 1")
    n = len(keys)
    heap = [(frequencies[k], 0, k, i) for i, k in enumerate(keys)]
    heapq.heapify(heap)
    # node ids: leaves 0..n-1, inner nodes n..2n-2
    parent = [0] * (2 * n - 1)
    bit = [0] * (2 * n - 1)
    next_id = n
    while len(heap) > 1:
        c0, _, _, a = heapq.heappop(heap)
        c1, _, _, b = heapq.heappop(heap)
        parent[a], bit[a] = next_id, 0
        parent[b], bit[b] = next_id, 1
        heapq.heappush(heap, (c0 + c1, 1, f"{next_id:012d}", next_id))
        next_id += 1
    root = 2 * n - 2
    codes, points = [], []
    for i in range(n):
        c, p = [], []
        node = i
        while node != root:
            c.append(bit[node])
            # inner nodes indexed from the root down: root -> 0
            p.append(root - parent[node])
            node = parent[node]
        codes.append(np.array(c[::-1], dtype=np.int8))
        points.append(np.array(p[::-1], dtype=np.int64))
    return CodeTree(keys, codes, points)


def _sigmoid(x):
    return 0.5 * (1.0 + np.tanh(0.5 * x))


def leaf_probability(tree: CodeTree, leaf: int, h: np.ndarray, inner: np.ndarray) -> float:
    """Pr(leaf | h) as the product of branch decisions along its path."""
    p = 1.0
    for c, n in zip(tree.codes[leaf], tree.points[leaf]):
        s = _sigmoid(float(h @ inner[n]))
        p *= s if c == 0 else 1.0 - s
    return p


def hs_pair_loss(h: np.ndarray, path_vectors: np.ndarray, codes: np.ndarray):
    """-log Pr(context | center) under hierarchical softmax, with gradients.

    Returns ``(loss, d loss / d h, d loss / d path_vectors)``.
    """
    signs = 1.0 - 2.0 * codes.astype(np.float64)
    z = signs * (path_vectors @ h)
    loss = float(np.sum(np.logaddexp(0.0, -z)))
    g = -signs * _sigmoid(-z)  # d loss / d (u . h)
    return loss, g @ path_vectors, np.outer(g, h)


def ns_pair_loss(h: np.ndarray, pos: np.ndarray, negs: np.ndarray):
    """-log sigmoid(h.pos) - sum log sigmoid(-h.neg), with gradients.

    Returns ``(loss, d/dh, d/dpos, d/dnegs)``.
    """
    zp = float(h @ pos)
    zn = negs @ h
    loss = float(np.logaddexp(0.0, -zp) + np.sum(np.logaddexp(0.0, zn)))
    gp = -_sigmoid(-zp)
    gn = _sigmoid(zn)
    return loss, gp * pos + gn @ negs, gp * h, np.outer(gn, h)


@njit(cache=True)
def _log1p_exp(x):
    if x > 0:
        return x + np.log1p(np.exp(-x))
    return np.log1p(np.exp(x))


@njit(cache=True)
def _sig(x):
    if x >= 0:
        return 1.0 / (1.0 + np.exp(-x))
    e = np.exp(x)
    return e / (1.0 + e)


@njit(cache=True)
def _train_hs(tokens, offsets, order, syn0, syn1, codes, points, lengths, window, lr0, epochs, total_pairs, losses):
    d = syn0.shape[1]
    neu1e = np.zeros(d)
    done = 0
    for ep in range(epochs):
        ep_loss = 0.0
        ep_pairs = 0
        for wi in range(order.shape[1]):
            k = order[ep, wi]
            start = offsets[k]
            end = offsets[k + 1]
            for i in range(start, end):
                c = tokens[i]
                lo = max(start, i - window)
                hi = min(end, i + window + 1)
                for j in range(lo, hi):
                    if j == i:
                        continue
                    ctx = tokens[j]
                    lr = lr0 - (lr0 - lr0 / 100.0) * done / total_pairs
                    for q in range(d):
                        neu1e[q] = 0.0
                    for s in range(lengths[ctx]):
                        n = points[ctx, s]
                        dot = 0.0
                        for q in range(d):
                            dot += syn0[c, q] * syn1[n, q]
                        sign = 1.0 - 2.0 * codes[ctx, s]
                        ep_loss += _log1p_exp(-sign * dot)
                        g = (1.0 - codes[ctx, s] - _sig(dot)) * lr
                        for q in range(d):
                            neu1e[q] += g * syn1[n, q]
                        for q in range(d):
                            syn1[n, q] += g * syn0[c, q]
                    for q in range(d):
                        syn0[c, q] += neu1e[q]
                    done += 1
                    ep_pairs += 1
        losses[ep] = ep_loss / max(ep_pairs, 1)


@njit(cache=True)
def _train_ns(tokens, offsets, order, syn0, syn1neg, table, negative, window, lr0, epochs, total_pairs, seed, losses):
    d = syn0.shape[1]
    neu1e = np.zeros(d)
    done = 0
    state = np.uint64(seed)
    for ep in range(epochs):
        ep_loss = 0.0
        ep_pairs = 0
        for wi in range(order.shape[1]):
            k = order[ep, wi]
            start = offsets[k]
            end = offsets[k + 1]
            for i in range(start, end):
                c = tokens[i]
                lo = max(start, i - window)
                hi = min(end, i + window + 1)
                for j in range(lo, hi):
                    if j == i:
                        continue
                    ctx = tokens[j]
                    lr = lr0 - (lr0 - lr0 / 100.0) * done / total_pairs
                    for q in range(d):
                        neu1e[q] = 0.0
                    for s in range(negative + 1):
                        if s == 0:
                            target = ctx
                            label = 1.0
                        else:
                            state = state * np.uint64(25214903917) + np.uint64(11)
                            target = table[(state >> np.uint64(16)) % np.uint64(table.shape[0])]
                            if target == ctx:
                                continue
                            label = 0.0
                        dot = 0.0
                        for q in range(d):
                            dot += syn0[c, q] * syn1neg[target, q]
                        if label > 0:
                            ep_loss += _log1p_exp(-dot)
                        else:
                            ep_loss += _log1p_exp(dot)
                        g = (label - _sig(dot)) * lr
                        for q in range(d):
                            neu1e[q] += g * syn1neg[target, q]
                        for q in range(d):
                            syn1neg[target, q] += g * syn0[c, q]
                    for q in range(d):
                        syn0[c, q] += neu1e[q]
                    done += 1
                    ep_pairs += 1
        losses[ep] = ep_loss / max(ep_pairs, 1)


@dataclass
class EmbeddingTable:
    keys: list[str]
    vectors: np.ndarray
    inner: Optional[np.ndarray] = None
    loss_history: list[float] = field(default_factory=list)

    def __post_init__(self) -> None:
        if self.vectors.shape[0] != len(self.keys):
            raise ValueError("one row per key required")
        self._index = {k: i for i, k in enumerate(self.keys)}

    @property
    def dim(self) -> int:
        return int(self.vectors.shape[1])

    def __getitem__(self, key: str) -> np.ndarray:
        return self.vectors[self._index[key]]

    def __contains__(self, key: str) -> bool:
        return key in self._index


def initial_vectors(n: int, d: int, seed: int) -> np.ndarray:
    rng = np.random.default_rng(seed)
    return rng.uniform(-0.5 / d, 0.5 / d, size=(n, d))


def _count_pairs(lengths: np.ndarray, w: int) -> int:
    total = 0
    for n in lengths:
        for i in range(n):
            total += min(n, i + w + 1) - max(0, i - w) - 1
    return total


def train_skipgram(
    corpus: WalkCorpus,
    d: int = 64,
    w: int = 5,
    epochs: int = 5,
    lr0: float = 0.025,
    mode: str = HIER_SOFTMAX,
    negative: int = 5,
    seed: int = 0,
    shuffle: bool = False,
) -> EmbeddingTable:
    """Fit node vectors that predict their walk neighbourhood.

    ``mode`` is ``"hs"`` (hierarchical softmax over a Huffman tree of node
    frequencies) or ``"neg"`` (``negative`` samples from the unigram^0.75
    distribution). The learning rate decays linearly to ``lr0 / 100`` over
    all pairs of all epochs. With ``shuffle`` the walk order is permuted per
    epoch from ``seed``.
    """
    if not corpus.walks:
        raise EmptyCorpus("walk corpus is empty")
    if d < 2:
        raise ValueError("embedding dimension must be >= 2")
    freq = corpus.frequencies()
    keys = sorted(freq)
    index = {k: i for i, k in enumerate(keys)}
    tokens = np.array([index[n] for walk in corpus.walks for n in walk], dtype=np.int64)
    walk_lens = np.array([len(walk) for walk in corpus.walks], dtype=np.int64)
    offsets = np.concatenate([[0], np.cumsum(walk_lens)]).astype(np.int64)
    n_walks = len(corpus.walks)
    if shuffle:
        rng = np.random.default_rng([seed, 1])
        order = np.stack([rng.permutation(n_walks) for _ in range(epochs)]) if epochs else np.zeros((0, n_walks), np.int64)
    else:
        order = np.tile(np.arange(n_walks), (epochs, 1))
    order = order.astype(np.int64).reshape(epochs, n_walks)
    total_pairs = max(_count_pairs(walk_lens, w) * epochs, 1)

    syn0 = initial_vectors(len(keys), d, seed)
    losses = np.zeros(epochs)
    if mode == HIER_SOFTMAX:
        tree = build_code_tree(freq)
        codes, points, lengths = tree.padded()
        syn1 = np.zeros((max(tree.n_inner, 1), d))
        if epochs:
            _train_hs(tokens, offsets, order, syn0, syn1, codes, points, lengths, w, lr0, epochs, total_pairs, losses)
        inner = syn1[: tree.n_inner]
    elif mode == NEG_SAMPLING:
        counts = np.array([freq[k] for k in keys], dtype=np.float64) ** 0.75
        table_size = max(1000, 100 * len(keys))
        table = np.repeat(np.arange(len(keys)), np.round(counts / counts.sum() * table_size).astype(np.int64))
        if table.size == 0:
            table = np.arange(len(keys))
        syn1 = np.zeros((len(keys), d))
        if epochs:
            _train_ns(tokens, offsets, order, syn0, syn1, table.astype(np.int64), negative, w, lr0, epochs, total_pairs, seed + 1, losses)
        inner = syn1
    else:
        raise ValueError(f"unknown skip-gram mode {mode!r}")
    if not np.all(np.isfinite(syn0)):
        raise FloatingPointError("skip-gram produced non-finite vectors")
    logger.info("skip-gram %s: %d nodes, %d pairs/epoch, losses %s", mode, len(keys), total_pairs // max(epochs, 1), losses.round(4).tolist())
    return EmbeddingTable(keys, syn0, inner, losses.tolist())


def embed_graph(graph: CoClickGraph, r: int, t: int, d: int, w: int, epochs: int, seed: int, **kwargs) -> EmbeddingTable:
    """Walk ``graph`` and fit skip-gram vectors in one call."""
    threads = kwargs.pop("threads", 1)
    corpus = generate_walks(graph, r, t, seed, threads=threads)
    return train_skipgram(corpus, d=d, w=w, epochs=epochs, seed=seed, **kwargs)


def save_embeddings(table: EmbeddingTable, path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(f"{len(table.keys)} {table.dim}\n")
        for k, row in zip(table.keys, table.vectors):
            fh.write(k + " " + " ".join(repr(float(x)) for x in row) + "\n")


def load_embeddings(path) -> EmbeddingTable:
    with open(path, encoding="utf-8") as fh:
        header = fh.readline().split()
        try:
            n, d = int(header[0]), int(header[1])
        except (IndexError, ValueError):
            raise MalformedFile(f"{path}: bad header") from None
        keys, rows = [], []
        for line in fh:
            parts = line.split()
            if not parts:
                continue
            if len(parts) != d + 1:
                raise MalformedFile(f"{path}: row for {parts[0]!r} has {len(parts) - 1} values, expected {d}")
            keys.append(parts[0])
            try:
                rows.append([float(x) for x in parts[1:]])
            except ValueError:
                raise MalformedFile(f"{path}: non-numeric value in row for {parts[0]!r}") from None
    if len(keys) != n:
        raise MalformedFile(f"{path}: header says {n} rows, found {len(keys)}")
    return EmbeddingTable(keys, np.array(rows, dtype=np.float64).reshape(n, d))
