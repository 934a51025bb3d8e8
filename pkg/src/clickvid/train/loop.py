"""Mini-batch SGD with momentum for the category and feature networks."""

from __future__ import annotations

import csv
import logging
import math
import struct
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from ..errors import Divergence, EmptyBatch, InvalidConfig, MalformedFile
from ..mining import ClassSample, ListSample, PairSample, Triplet
from ..pvlog import flatten
from .network import CategoryBatch, FeatureBatch, Params, category_loss, feature_loss, init_params

logger = logging.getLogger(__name__)

CATEGORY = "category"
FEATURE = "feature"

HISTORY_COLUMNS = ("epoch", "loss_total", "loss_virtual", "loss_hard_aware", "loss_pair", "loss_triplet", "loss_listwise")


@dataclass
class TrainConfig:
    alpha: float = 1.0
    beta: float = 1.0
    lam: float = 1.0
    eta_simple: float = 1.0
    eta_hard: float = 2.0
    lr: float = 0.05
    momentum: float = 0.9
    clip_norm: float = 10.0
    batch_size: int = 64
    epochs: int = 20
    seed: int = 0
    hidden: int = 128
    out_dim: int = 512
    pair_printed: bool = False
    normalize_ranking: bool = False

    def validate(self) -> None:
        if min(self.alpha, self.beta, self.lam) < 0:
            raise InvalidConfig("alpha, beta and lambda must be non-negative")
        if not self.eta_hard >= self.eta_simple > 0:
            raise InvalidConfig("need eta_hard >= eta_simple > 0")
        if self.lr < 0 or not 0 <= self.momentum < 1:
            raise InvalidConfig("lr must be >= 0 and momentum in [0, 1)")
        if self.clip_norm < 0:
            raise InvalidConfig("clip_norm must be >= 0 (0 disables clipping)")
        if self.batch_size < 1 or self.epochs < 0 or self.hidden < 1 or self.out_dim < 1:
            raise InvalidConfig("batch_size, hidden, out_dim must be positive and epochs >= 0")


@dataclass
class CategorySamples:
    virtual: list[ClassSample]
    clicks: list[ClassSample]
    pairs: list[PairSample]
    n_virtual: int
    n_top: int

    def families(self) -> dict[str, list]:
        return {"virtual": self.virtual, "clicks": self.clicks, "pairs": self.pairs}


@dataclass
class FeatureSamples:
    virtual: list[ClassSample]
    triplets: list[Triplet]
    lists: list[ListSample]
    n_virtual: int

    def families(self) -> dict[str, list]:
        return {"virtual": self.virtual, "triplets": self.triplets, "lists": self.lists}


@dataclass
class TrainResult:
    params: Params
    history: list[dict[str, float]] = field(default_factory=list)
    epochs_run: int = 0


def _input_dim(families: dict[str, list]) -> int:
    for name, items in families.items():
        if items:
            s = items[0]
            feats = s.features if hasattr(s, "features") else s.q
            return len(flatten(feats))
    raise EmptyBatch("no training samples")


def _batches(sizes: dict[str, int], batch_size: int, rng: np.random.Generator):
    """Shuffled per-family index slices, spread over the same number of steps."""
    steps = max(math.ceil(max(sizes.values()) / batch_size), 1)
    perms = {k: rng.permutation(n) for k, n in sizes.items()}
    for b in range(steps):
        out = {}
        for k, n in sizes.items():
            lo, hi = (b * n) // steps, ((b + 1) * n) // steps
            out[k] = perms[k][lo:hi]
        yield out


def train(network: str, samples, config: TrainConfig, params: Optional[Params] = None) -> TrainResult:
    """Fit a network on its mined samples; deterministic given ``config.seed``.

    Updates are SGD with momentum on gradients whose global L2 norm is capped
    at ``config.clip_norm``; the squared pair hinge is unbounded and noisy
    switch labels otherwise blow it up.

    Each epoch reshuffles every sample family and walks them in lockstep so
    that all families appear in every step. The recorded per-epoch losses are
    sample-weighted family means combined with the configured scalars.
    """
    config.validate()
    fams = samples.families()
    if not any(fams.values()):
        raise EmptyBatch("no training samples")
    if network == CATEGORY:
        heads = {"virtual": max(samples.n_virtual, 1), "top": max(samples.n_top, 1)}
    elif network == FEATURE:
        heads = {"virtual": max(samples.n_virtual, 1)}
    else:
        raise ValueError(f"unknown network {network!r}")
    if params is None:
        params = init_params(_input_dim(fams), config.hidden, config.out_dim, heads, config.seed)
    params = {k: v.copy() for k, v in params.items()}
    velocity = {k: np.zeros_like(v) for k, v in params.items()}
    rng = np.random.default_rng([config.seed, 7])
    sizes = {k: len(v) for k, v in fams.items()}
    history = []

    for epoch in range(1, config.epochs + 1):
        snapshot = {k: v.copy() for k, v in params.items()}
        sums: dict[str, float] = {}
        counts: dict[str, int] = {}
        for idx in _batches(sizes, config.batch_size, rng):
            if network == CATEGORY:
                batch = CategoryBatch(
                    [samples.virtual[i] for i in idx["virtual"]],
                    [samples.clicks[i] for i in idx["clicks"]],
                    [samples.pairs[i] for i in idx["pairs"]],
                )
                if not len(batch):
                    continue
                out = category_loss(
                    params, batch, config.alpha, config.beta, config.eta_simple, config.eta_hard, config.pair_printed
                )
            else:
                batch = FeatureBatch(
                    [samples.virtual[i] for i in idx["virtual"]],
                    [samples.triplets[i] for i in idx["triplets"]],
                    [samples.lists[i] for i in idx["lists"]],
                )
                if not len(batch):
                    continue
                out = feature_loss(params, batch, config.lam, config.normalize_ranking)
            if not math.isfinite(out.loss):
                raise Divergence(f"non-finite loss in epoch {epoch}", snapshot, epoch - 1)
            for name, value in out.components.items():
                sums[name] = sums.get(name, 0.0) + value * out.counts[name]
                counts[name] = counts.get(name, 0) + out.counts[name]
            scale = 1.0
            if config.clip_norm > 0:
                norm = math.sqrt(sum(float(np.sum(g * g)) for g in out.grad.values()))
                if norm > config.clip_norm:
                    scale = config.clip_norm / norm
            for k in params:
                velocity[k] = config.momentum * velocity[k] - config.lr * scale * out.grad[k]
                params[k] += velocity[k]
        means = {k: (sums[k] / counts[k] if counts[k] else 0.0) for k in sums}
        m = lambda k: means.get(k, 0.0)  # noqa: E731
        if network == CATEGORY:
            total = m("virtual") + config.alpha * m("hard_aware") + config.beta * m("pair")
        else:
            total = m("virtual") + config.lam * (m("triplet") + m("listwise"))
        row = {"epoch": epoch, "loss_total": total}
        for col in HISTORY_COLUMNS[2:]:
            row[col] = means.get(col[len("loss_") :], 0.0)
        history.append(row)
        logger.info("%s epoch %d: %s", network, epoch, {k: round(v, 5) for k, v in row.items()})
        if not all(np.all(np.isfinite(v)) for v in params.values()):
            raise Divergence(f"non-finite parameters after epoch {epoch}", snapshot, epoch - 1)
    return TrainResult(params, history, config.epochs)


_MAGIC = b"VIDPARM1"


def save_checkpoint(params: Params, path, seed: int = 0, epoch: int = 0) -> None:
    """Binary checkpoint: header, then little-endian float64 values in declaration order.

    Header: magic, int64 seed, int64 epoch, uint32 tensor count, then per
    tensor a uint16 name length, the UTF-8 name, a uint8 rank and uint32 dims.
    """
    with open(path, "wb") as fh:
        fh.write(_MAGIC)
        fh.write(struct.pack("<qqI", seed, epoch, len(params)))
        for name, arr in params.items():
            raw = name.encode("utf-8")
            fh.write(struct.pack("<H", len(raw)) + raw)
            fh.write(struct.pack("<B", arr.ndim) + struct.pack(f"<{arr.ndim}I", *arr.shape))
        for arr in params.values():
            fh.write(np.ascontiguousarray(arr, dtype="<f8").tobytes())


def load_checkpoint(path) -> tuple[Params, int, int]:
    """Inverse of :func:`save_checkpoint`; returns (params, seed, epoch)."""
    with open(path, "rb") as fh:
        data = fh.read()
    if not data.startswith(_MAGIC):
        raise MalformedFile(f"{path}: not a parameter checkpoint")
    off = len(_MAGIC)
    seed, epoch, n = struct.unpack_from("<qqI", data, off)
    off += struct.calcsize("<qqI")
    specs = []
    for _ in range(n):
        (ln,) = struct.unpack_from("<H", data, off)
        off += 2
        name = data[off : off + ln].decode("utf-8")
        off += ln
        (ndim,) = struct.unpack_from("<B", data, off)
        off += 1
        shape = struct.unpack_from(f"<{ndim}I", data, off)
        off += 4 * ndim
        specs.append((name, shape))
    params = {}
    for name, shape in specs:
        count = int(np.prod(shape)) if shape else 1
        params[name] = np.frombuffer(data, dtype="<f8", count=count, offset=off).reshape(shape).astype(np.float64)
        off += 8 * count
    if off != len(data):
        raise MalformedFile(f"{path}: {len(data) - off} trailing bytes")
    return params, seed, epoch


def write_history(history: list[dict[str, float]], path) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(HISTORY_COLUMNS)
        for row in history:
            writer.writerow([row["epoch"]] + [repr(float(row[c])) for c in HISTORY_COLUMNS[1:]])
