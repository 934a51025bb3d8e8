"""Shared encoder, classifier heads and the composite training objectives.

Parameters are kept in an ordered ``dict[str, ndarray]`` (declaration
order: encoder, then heads) so checkpoints and gradient checks can walk them
in a fixed order. The encoder maps concatenated feature channels through
``affine -> relu -> affine``.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from ..errors import EmptyBatch
from ..mining import ClassSample, ListSample, PairSample, SampleKind, Triplet
from ..pvlog import Channels, flatten
from .losses import (
    LossValue,
    listwise_loss_batch,
    pair_loss_batch,
    softmax,
    softmax_ce_batch,
    triplet_loss_batch,
)

Params = dict[str, np.ndarray]

ENCODER_KEYS = ("enc.w1", "enc.b1", "enc.w2", "enc.b2")


def init_params(input_dim: int, hidden: int, out_dim: int, heads: dict[str, int], seed: int) -> Params:
    """Uniform(-1/sqrt(fan_in), 1/sqrt(fan_in)) init for every weight and bias."""
    rng = np.random.default_rng(seed)
    shapes = [("enc.w1", (input_dim, hidden)), ("enc.b1", (hidden,)), ("enc.w2", (hidden, out_dim)), ("enc.b2", (out_dim,))]
    fan = {"enc.w1": input_dim, "enc.b1": input_dim, "enc.w2": hidden, "enc.b2": hidden}
    for name, size in heads.items():
        shapes += [(f"{name}.w", (out_dim, size)), (f"{name}.b", (size,))]
        fan[f"{name}.w"] = fan[f"{name}.b"] = out_dim
    params = {}
    for key, shape in shapes:
        bound = 1.0 / np.sqrt(fan[key])
        params[key] = rng.uniform(-bound, bound, size=shape)
    return params


def stack(features: Sequence[Channels]) -> np.ndarray:
    return np.stack([flatten(f) for f in features]) if len(features) else np.zeros((0, 0))


@dataclass
class EncoderCache:
    x: np.ndarray
    pre: np.ndarray
    h: np.ndarray


def encode(params: Params, x: np.ndarray) -> tuple[np.ndarray, EncoderCache]:
    pre = x @ params["enc.w1"] + params["enc.b1"]
    h = np.maximum(pre, 0.0)
    return h @ params["enc.w2"] + params["enc.b2"], EncoderCache(x, pre, h)


def encode_backward(params: Params, cache: EncoderCache, d_emb: np.ndarray, grads: Params) -> None:
    grads["enc.w2"] += cache.h.T @ d_emb
    grads["enc.b2"] += d_emb.sum(0)
    dh = (d_emb @ params["enc.w2"].T) * (cache.pre > 0)
    grads["enc.w1"] += cache.x.T @ dh
    grads["enc.b1"] += dh.sum(0)


def embed(params: Params, features: Sequence[Channels] | np.ndarray) -> np.ndarray:
    x = features if isinstance(features, np.ndarray) else stack(features)
    return encode(params, x)[0]


def head(params: Params, name: str, emb: np.ndarray) -> np.ndarray:
    return emb @ params[f"{name}.w"] + params[f"{name}.b"]


def _head_backward(params: Params, name: str, emb: np.ndarray, d_logits: np.ndarray, grads: Params) -> np.ndarray:
    grads[f"{name}.w"] += emb.T @ d_logits
    grads[f"{name}.b"] += d_logits.sum(0)
    return d_logits @ params[f"{name}.w"].T


def zero_grads(params: Params) -> Params:
    return {k: np.zeros_like(v) for k, v in params.items()}


@dataclass
class CompositeLoss(LossValue):
    components: dict[str, float] = field(default_factory=dict)
    counts: dict[str, int] = field(default_factory=dict)
    # smallest |pre-activation| and |pre-hinge| seen, for kink-aware checks
    min_margin: float = np.inf


@dataclass
class CategoryBatch:
    virtual: list[ClassSample] = field(default_factory=list)
    clicks: list[ClassSample] = field(default_factory=list)
    pairs: list[PairSample] = field(default_factory=list)

    def __len__(self) -> int:
        return len(self.virtual) + len(self.clicks) + len(self.pairs)


@dataclass
class FeatureBatch:
    virtual: list[ClassSample] = field(default_factory=list)
    triplets: list[Triplet] = field(default_factory=list)
    lists: list[ListSample] = field(default_factory=list)

    def __len__(self) -> int:
        return len(self.virtual) + len(self.triplets) + len(self.lists)


def category_loss(
    params: Params,
    batch: CategoryBatch,
    alpha: float = 1.0,
    beta: float = 1.0,
    eta_simple: float = 1.0,
    eta_hard: float = 2.0,
    pair_printed: bool = False,
) -> CompositeLoss:
    """Virtual-ID cross entropy + alpha * hard-aware CE + beta * pair hinge.

    Each term is a mean over its own sample family; absent families add 0.
    All rows go through the shared encoder once, the virtual samples into the
    ``virtual`` head and click/pair samples into the ``top`` head.
    """
    if len(batch) == 0:
        raise EmptyBatch("category batch has no samples")
    nv, nc, npair = len(batch.virtual), len(batch.clicks), len(batch.pairs)
    feats = [s.features for s in batch.virtual] + [s.features for s in batch.clicks] + [p.features for p in batch.pairs]
    emb, cache = encode(params, stack(feats))
    grads = zero_grads(params)
    d_emb = np.zeros_like(emb)
    comps = {"virtual": 0.0, "hard_aware": 0.0, "pair": 0.0}
    min_margin = float(np.min(np.abs(cache.pre))) if cache.pre.size else np.inf

    if nv:
        e = emb[:nv]
        y = np.array([s.label for s in batch.virtual])
        losses, g = softmax_ce_batch(head(params, "virtual", e), y)
        comps["virtual"] = float(losses.mean())
        d_emb[:nv] += _head_backward(params, "virtual", e, g / nv, grads)
    if nc or npair:
        e = emb[nv:]
        logits = head(params, "top", e)
        d_logits = np.zeros_like(logits)
        if nc:
            y = np.array([s.label for s in batch.clicks])
            eta = np.array([eta_hard if s.kind == SampleKind.HARD else eta_simple for s in batch.clicks])
            losses, g = softmax_ce_batch(logits[:nc], y)
            comps["hard_aware"] = float((eta * losses).mean())
            d_logits[:nc] = alpha * eta[:, None] * g / nc
        if npair:
            yn = np.array([p.y_neg for p in batch.pairs])
            yh = np.array([p.y_hard for p in batch.pairs])
            losses, g, m = pair_loss_batch(logits[nc:], yn, yh, printed=pair_printed)
            comps["pair"] = float(losses.mean())
            d_logits[nc:] = beta * g / npair
            min_margin = min(min_margin, float(np.min(np.abs(m))))
        d_emb[nv:] += _head_backward(params, "top", e, d_logits, grads)
    encode_backward(params, cache, d_emb, grads)
    total = comps["virtual"] + alpha * comps["hard_aware"] + beta * comps["pair"]
    return CompositeLoss(total, grads, comps, {"virtual": nv, "hard_aware": nc, "pair": npair}, min_margin)


def _normalize_rows(e: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    n = np.linalg.norm(e, axis=1, keepdims=True)
    n = np.where(n > 0, n, 1.0)
    return e / n, n


def _normalize_backward(u: np.ndarray, n: np.ndarray, d_u: np.ndarray) -> np.ndarray:
    return (d_u - u * np.sum(u * d_u, axis=1, keepdims=True)) / n


def feature_loss(params: Params, batch: FeatureBatch, lam: float = 1.0, normalize: bool = False) -> CompositeLoss:
    """Virtual-ID cross entropy + lam * (mean triplet + mean listwise loss).

    List scores are negative Euclidean distances between the query embedding
    and each candidate embedding. With ``normalize`` the embeddings entering
    the ranking terms are L2-normalized first.
    """
    if len(batch) == 0:
        raise EmptyBatch("feature batch has no samples")
    nv, nt, nl = len(batch.virtual), len(batch.triplets), len(batch.lists)
    n_cand = len(batch.lists[0].candidates) if nl else 0
    feats: list = [s.features for s in batch.virtual]
    for t in batch.triplets:
        feats += [t.q, t.q_pos, t.q_neg]
    for s in batch.lists:
        if len(s.candidates) != n_cand:
            raise ValueError("all list samples in a batch must have the same length")
        feats += [s.q, *s.candidates]
    emb, cache = encode(params, stack(feats))
    grads = zero_grads(params)
    d_emb = np.zeros_like(emb)
    comps = {"virtual": 0.0, "triplet": 0.0, "listwise": 0.0}
    min_margin = float(np.min(np.abs(cache.pre))) if cache.pre.size else np.inf

    if nv:
        e = emb[:nv]
        y = np.array([s.label for s in batch.virtual])
        losses, g = softmax_ce_batch(head(params, "virtual", e), y)
        comps["virtual"] = float(losses.mean())
        d_emb[:nv] += _head_backward(params, "virtual", e, g / nv, grads)

    rank = emb[nv:]
    if normalize:
        rank, norms = _normalize_rows(rank)
    d_rank = np.zeros_like(rank)
    if nt:
        r = rank[: 3 * nt].reshape(nt, 3, -1)
        losses, gq, gp, gn, m = triplet_loss_batch(r[:, 0], r[:, 1], r[:, 2])
        comps["triplet"] = float(losses.mean())
        d = d_rank[: 3 * nt].reshape(nt, 3, -1)
        d[:, 0] += lam * gq / nt
        d[:, 1] += lam * gp / nt
        d[:, 2] += lam * gn / nt
        min_margin = min(min_margin, float(np.min(np.abs(m))))
    if nl:
        r = rank[3 * nt :].reshape(nl, n_cand + 1, -1)
        diff = r[:, :1, :] - r[:, 1:, :]
        dist = np.linalg.norm(diff, axis=2)
        pi = np.array([s.teacher_pi for s in batch.lists])
        w = np.array([s.weights for s in batch.lists])
        losses, g_scores = listwise_loss_batch(-dist, pi, w)
        comps["listwise"] = float(losses.mean())
        # scores = -dist; d dist / d q = diff / dist
        unit = np.divide(diff, dist[:, :, None], out=np.zeros_like(diff), where=dist[:, :, None] > 0)
        g_diff = (-lam * g_scores / nl)[:, :, None] * unit
        d = d_rank[3 * nt :].reshape(nl, n_cand + 1, -1)
        d[:, 0] += g_diff.sum(1)
        d[:, 1:] -= g_diff
    if normalize:
        d_rank = _normalize_backward(rank, norms, d_rank)
    d_emb[nv:] += d_rank
    encode_backward(params, cache, d_emb, grads)
    total = comps["virtual"] + lam * (comps["triplet"] + comps["listwise"])
    return CompositeLoss(total, grads, comps, {"virtual": nv, "triplet": nt, "listwise": nl}, min_margin)


def ensemble_scores(
    p_top: np.ndarray, p_vid: np.ndarray, vid_to_top: dict[int, int], ensemble_weight: float
) -> tuple[np.ndarray, np.ndarray]:
    """Blend top-head probabilities with virtual-ID mass folded into top categories.

    Returns ``(blended scores, folded virtual distribution)``; unmapped
    virtual IDs contribute nothing.
    """
    folded = np.zeros_like(p_top)
    for vid, top in vid_to_top.items():
        if vid < p_vid.shape[-1]:
            folded[..., top] += p_vid[..., vid]
    return ensemble_weight * p_top + (1.0 - ensemble_weight) * folded, folded


def argmax_by_name(scores: np.ndarray, names: Sequence[str]) -> int:
    """Index of the best score; ties go to the lexicographically first name."""
    best = None
    for i, name in enumerate(names):
        key = (-scores[i], name)
        if best is None or key < best[0]:
            best = (key, i)
    return best[1]


def predict_category(
    query_features: Channels,
    params: Params,
    vid_to_top: dict[int, str],
    top_names: Sequence[str],
    ensemble_weight: float = 0.5,
) -> tuple[str, np.ndarray]:
    """Ensemble of the top-category branch and the mapped virtual-ID branch."""
    emb = embed(params, [query_features])
    p_top = softmax(head(params, "top", emb))[0]
    p_vid = softmax(head(params, "virtual", emb))[0]
    index = {n: i for i, n in enumerate(top_names)}
    mapped = {v: index[t] for v, t in vid_to_top.items() if t in index}
    scores, _ = ensemble_scores(p_top, p_vid, mapped, ensemble_weight)
    return top_names[argmax_by_name(scores, top_names)], scores


def predict_categories(
    features: Sequence[Channels],
    params: Params,
    vid_to_top: dict[int, str],
    top_names: Sequence[str],
    ensemble_weight: float = 0.5,
) -> list[str]:
    """Vectorized :func:`predict_category` over many queries."""
    emb = embed(params, features)
    p_top = softmax(head(params, "top", emb))
    p_vid = softmax(head(params, "virtual", emb))
    index = {n: i for i, n in enumerate(top_names)}
    mapped = {v: index[t] for v, t in vid_to_top.items() if t in index}
    scores, _ = ensemble_scores(p_top, p_vid, mapped, ensemble_weight)
    return [top_names[argmax_by_name(row, top_names)] for row in scores]
