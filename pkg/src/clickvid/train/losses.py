"""Loss functions with hand-written gradients.

Each loss returns a :class:`LossValue` whose ``grad`` matches the shape of the
differentiated input (a vector, or a tuple of vectors for the triplet loss).
Batched variants used by the training loop live next to the per-sample ones
and share their conventions.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Any, Optional, Sequence

import numpy as np

from ..errors import DimensionMismatch, InvalidPermutation, LabelOutOfRange
from ..mining import SampleKind

TRIPLET_MARGIN = 1.0


@dataclass
class LossValue:
    loss: float
    grad: Any


def _check_label(n: int, *labels: int) -> None:
    for y in labels:
        if not 0 <= y < n:
            raise LabelOutOfRange(f"label {y} outside [0, {n})")


def log_softmax(z: np.ndarray) -> np.ndarray:
    z = z - z.max(axis=-1, keepdims=True)
    return z - np.log(np.exp(z).sum(axis=-1, keepdims=True))


def softmax(z: np.ndarray) -> np.ndarray:
    return np.exp(log_softmax(z))


def softmax_ce(logits: np.ndarray, label: int) -> LossValue:
    z = np.asarray(logits, dtype=np.float64)
    _check_label(len(z), label)
    lp = log_softmax(z)
    grad = np.exp(lp)
    grad[label] -= 1.0
    return LossValue(float(-lp[label]), grad)


def pair_loss(logits: np.ndarray, y_neg: int, y_hard: int, printed: bool = False) -> LossValue:
    """Squared hinge asking the hard (clicked) class to beat the negative by 1.

    ``printed=True`` swaps the roles, i.e. ``(max(0, 1 - z_neg + z_hard))^2``.
    """
    z = np.asarray(logits, dtype=np.float64)
    _check_label(len(z), y_neg, y_hard)
    if y_neg == y_hard:
        raise ValueError("pair labels must differ")
    sign = -1.0 if printed else 1.0
    m = 1.0 + sign * (z[y_neg] - z[y_hard])
    grad = np.zeros_like(z)
    if m <= 0:
        return LossValue(0.0, grad)
    grad[y_neg] = 2.0 * m * sign
    grad[y_hard] = -2.0 * m * sign
    return LossValue(float(m * m), grad)


def hard_aware_loss(logits: np.ndarray, label: int, kind: SampleKind, eta_simple: float = 1.0, eta_hard: float = 2.0) -> LossValue:
    eta = eta_hard if SampleKind(kind) == SampleKind.HARD else eta_simple
    ce = softmax_ce(logits, label)
    return LossValue(eta * ce.loss, eta * ce.grad)


def triplet_loss(f_q: np.ndarray, f_pos: np.ndarray, f_neg: np.ndarray) -> LossValue:
    """Hinge on unsquared Euclidean distances with margin 1.

    ``grad`` is ``(d/df_q, d/df_pos, d/df_neg)``; zero distances contribute a
    zero subgradient.
    """
    f_q, f_pos, f_neg = (np.asarray(v, dtype=np.float64) for v in (f_q, f_pos, f_neg))
    if not f_q.shape == f_pos.shape == f_neg.shape:
        raise DimensionMismatch(f"embedding shapes {f_q.shape}, {f_pos.shape}, {f_neg.shape}")
    dp_vec = f_q - f_pos
    dn_vec = f_q - f_neg
    dp = float(np.linalg.norm(dp_vec))
    dn = float(np.linalg.norm(dn_vec))
    m = dp - dn + TRIPLET_MARGIN
    zero = np.zeros_like(f_q)
    if m <= 0:
        return LossValue(0.0, (zero, zero.copy(), zero.copy()))
    up = dp_vec / dp if dp > 0 else zero
    un = dn_vec / dn if dn > 0 else zero
    return LossValue(m, (up - un, -up, un))


def _check_perm(pi: Sequence[int], n: int) -> np.ndarray:
    p = np.asarray(pi, dtype=np.int64)
    if p.shape != (n,) or not np.array_equal(np.sort(p), np.arange(n)):
        raise InvalidPermutation(f"{tuple(pi)} is not a permutation of 0..{n - 1}")
    return p


def _suffix_logsumexp(t: np.ndarray) -> np.ndarray:
    out = np.empty_like(t)
    acc = -np.inf
    for i in range(len(t) - 1, -1, -1):
        acc = np.logaddexp(acc, t[i])
        out[i] = acc
    return out


def plackett_log_prob(scores: np.ndarray, pi: Sequence[int], weights: Optional[Sequence[float]] = None) -> float:
    """log P(pi | scores) under the Plackett-Luce model.

    ``pi[i]`` is the index of the item placed at rank ``i``. When ``weights``
    is given each factor is multiplied by its weight, which no longer yields a
    normalized distribution.
    """
    s = np.asarray(scores, dtype=np.float64)
    t = s[_check_perm(pi, len(s))]
    logp = float(np.sum(t - _suffix_logsumexp(t)))
    if weights is not None:
        logp += float(np.sum(np.log(np.asarray(weights, dtype=np.float64))))
    return logp


def plackett_prob(scores: np.ndarray, pi: Sequence[int], weights: Optional[Sequence[float]] = None) -> float:
    return float(np.exp(plackett_log_prob(scores, pi, weights)))


def relevance(distances: np.ndarray, printed: bool = False) -> np.ndarray:
    """Ranking scores from distances: closer is better unless ``printed``."""
    d = np.asarray(distances, dtype=np.float64)
    return d.copy() if printed else -d


def listwise_loss(model_scores: np.ndarray, teacher_pi: Sequence[int], weights: Sequence[float]) -> LossValue:
    """Position-weighted negative log-likelihood of the teacher permutation."""
    s = np.asarray(model_scores, dtype=np.float64)
    w = np.asarray(weights, dtype=np.float64)
    if s.ndim != 1 or w.shape != s.shape:
        raise DimensionMismatch(f"scores {s.shape} vs weights {w.shape}")
    p = _check_perm(teacher_pi, len(s))
    t = s[p]
    lse = _suffix_logsumexp(t)
    loss = float(-np.sum(w * (t - lse)))
    n = len(t)
    grad_t = -w.copy()
    for i in range(n):
        grad_t[i:] += w[i] * np.exp(t[i:] - lse[i])
    grad = np.empty_like(s)
    grad[p] = grad_t
    return LossValue(loss, grad)


# batched forms used by the training loop -------------------------------------------------


def softmax_ce_batch(z: np.ndarray, y: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Per-row losses and d(loss_row)/dz for an (n, k) logit matrix."""
    _check_label(z.shape[1], *(int(v) for v in np.unique(y)))
    lp = log_softmax(z)
    rows = np.arange(len(y))
    grad = np.exp(lp)
    grad[rows, y] -= 1.0
    return -lp[rows, y], grad


def pair_loss_batch(z: np.ndarray, y_neg: np.ndarray, y_hard: np.ndarray, printed: bool = False):
    _check_label(z.shape[1], *(int(v) for v in np.unique(np.concatenate([y_neg, y_hard]))))
    rows = np.arange(len(y_neg))
    sign = -1.0 if printed else 1.0
    m = 1.0 + sign * (z[rows, y_neg] - z[rows, y_hard])
    active = np.maximum(m, 0.0)
    grad = np.zeros_like(z)
    np.add.at(grad, (rows, y_neg), 2.0 * active * sign)
    np.add.at(grad, (rows, y_hard), -2.0 * active * sign)
    return active**2, grad, m


def triplet_loss_batch(fq: np.ndarray, fp: np.ndarray, fn: np.ndarray):
    """Row-wise triplet losses and gradients; also returns the pre-hinge values."""
    dpv, dnv = fq - fp, fq - fn
    dp = np.linalg.norm(dpv, axis=1)
    dn = np.linalg.norm(dnv, axis=1)
    m = dp - dn + TRIPLET_MARGIN
    active = (m > 0).astype(np.float64)[:, None]
    up = np.divide(dpv, dp[:, None], out=np.zeros_like(dpv), where=dp[:, None] > 0)
    un = np.divide(dnv, dn[:, None], out=np.zeros_like(dnv), where=dn[:, None] > 0)
    return np.maximum(m, 0.0), active * (up - un), -active * up, active * un, m


def listwise_loss_batch(s: np.ndarray, pi: np.ndarray, w: np.ndarray):
    """Row-wise listwise losses and d/ds for (b, n) scores and permutations."""
    rows = np.arange(s.shape[0])[:, None]
    t = s[rows, pi]
    # suffix log-sum-exp along each row
    rev = np.logaddexp.accumulate(t[:, ::-1], axis=1)[:, ::-1]
    loss = -np.sum(w * (t - rev), axis=1)
    # grad_t[k] = -w_k + sum_{i<=k} w_i exp(t_k - lse_i)
    n = t.shape[1]
    upper = np.triu(np.ones((n, n), dtype=bool))
    expo = np.where(upper, t[:, None, :] - rev[:, :, None], -np.inf)
    grad_t = -w + np.einsum("bi,bik->bk", w, np.exp(expo))
    grad = np.empty_like(s)
    grad[rows, pi] = grad_t
    return loss, grad
