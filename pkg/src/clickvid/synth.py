"""Synthetic click logs with planted structure.

Items live in planted communities; each community sits under one top
category and spans ``leaves_per_community`` of its leaf categories. Feature
vectors are built hierarchically (top centre -> community centroid, plus a
leaf offset and per-item noise) so that category, community and item identity
are all recoverable from features at different scales. Page views pick a target product, show a result list and
sample clicks: identical listings of the target are clicked most often,
same-community items with ``p_in`` and everything else with ``p_out``.

Query images are "real-shot" versions of the target: its base features plus
per-channel noise. Channel 0 is the least noisy by default, which makes a
weighted fusion distance a meaningfully better teacher than a plain one.
"""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field
from typing import Iterable

import numpy as np

from .errors import InvalidConfig
from .pvlog import Channels, PVRecord, ResultEntry, as_channels

DEFAULT_TREE = {
    "bags": ["bags.backpack", "bags.handbag"],
    "dress": ["dress.evening", "dress.skirt"],
    "shirt": ["shirt.blouse", "shirt.tee"],
    "shoes": ["shoes.boot", "shoes.sneaker"],
}


@dataclass
class SynthConfig:
    n_communities: int = 8
    items_per_community: int = 50
    n_pvs: int = 5000
    p_in: float = 0.3
    p_out: float = 0.01
    p_identical: float = 0.9
    category_tree: dict = field(default_factory=lambda: {k: list(v) for k, v in DEFAULT_TREE.items()})
    leaves_per_community: int = 1
    identical_pairs: int = 40
    channel_dims: tuple = (8, 8, 8)
    top_scale: float = 1.0
    leaf_scale: float = 0.5
    community_scale: float = 0.4
    feature_noise: float = 0.25
    identical_jitter: float = 0.0125
    catalog_noise: float = 0.0125
    query_noise: tuple = (0.06, 0.4, 0.4)
    results_per_pv: int = 10
    same_community_results: int = 6
    pred_error_rate: float = 0.2
    switch_rate: float = 0.7
    switch_noise: float = 0.0
    n_users: int = 500
    n_eval_queries: int = 400

    def validate(self) -> None:
        n_items = self.n_communities * self.items_per_community
        if self.n_communities < 1 or self.items_per_community < 1:
            raise InvalidConfig("need at least one community with at least one item")
        for name in ("p_in", "p_out", "p_identical", "pred_error_rate", "switch_rate", "switch_noise"):
            v = getattr(self, name)
            if not 0.0 <= v <= 1.0:
                raise InvalidConfig(f"{name}={v} is not a probability")
        if self.p_in <= self.p_out:
            raise InvalidConfig(f"p_in={self.p_in} must exceed p_out={self.p_out}")
        if not self.category_tree or any(not leaves for leaves in self.category_tree.values()):
            raise InvalidConfig("category tree needs at least one top with one leaf")
        leaves = [l for ls in self.category_tree.values() for l in ls]
        if len(set(leaves)) != len(leaves):
            raise InvalidConfig("leaf names must be unique across top categories")
        if not self.channel_dims or min(self.channel_dims) < 1:
            raise InvalidConfig("channel_dims must be positive")
        if len(self.query_noise) != len(self.channel_dims):
            raise InvalidConfig("query_noise needs one value per channel")
        if 2 * self.identical_pairs > n_items or self.identical_pairs < 0:
            raise InvalidConfig("too many identical pairs for the item count")
        if self.items_per_community < 2 and self.identical_pairs:
            raise InvalidConfig("identical pairs need two items per community")
        if self.results_per_pv < 1 or self.n_pvs < 0:
            raise InvalidConfig("results_per_pv must be positive and n_pvs non-negative")
        if self.leaves_per_community < 1:
            raise InvalidConfig("leaves_per_community must be >= 1")
        if not 0 <= self.same_community_results <= self.results_per_pv:
            raise InvalidConfig("same_community_results must lie in [0, results_per_pv]")


@dataclass(frozen=True)
class ItemTruth:
    community: int
    top: str
    leaf: str
    identical_group: int


@dataclass
class GroundTruth:
    items: dict[str, ItemTruth]

    def communities(self, nodes: Iterable[str]) -> list[int]:
        return [self.items[n].community for n in nodes]

    def identical_set(self, item_id: str) -> set[str]:
        g = self.items[item_id].identical_group
        return {k for k, v in self.items.items() if v.identical_group == g}


@dataclass(eq=False)
class EvalQuery:
    query_id: str
    features: Channels
    top: str
    target: str
    identical: tuple[str, ...]


class SyntheticWorld:
    """Items, categories and features shared by logs and evaluation queries."""

    def __init__(self, config: SynthConfig, seed: int) -> None:
        config.validate()
        self.config = config
        self.seed = seed
        rng = np.random.default_rng([seed, 0])

        self.tops = sorted(config.category_tree)
        leaves = [(t, l) for t in self.tops for l in config.category_tree[t]]
        self.leaf_top = {l: t for t, l in leaves}
        self.leaves = [l for _, l in leaves]
        dims = config.channel_dims

        def draw(scale, n):
            return [rng.normal(0.0, scale, size=(n, d)) for d in dims]

        top_c = draw(config.top_scale, len(self.tops))
        leaf_off = draw(config.leaf_scale, len(self.leaves))
        comm_off = draw(config.community_scale, config.n_communities)

        n_items = config.n_communities * config.items_per_community
        self.item_ids = [f"item{i:05d}" for i in range(n_items)]
        self.community = np.repeat(np.arange(config.n_communities), config.items_per_community)
        # community c sits under top c % n_tops and spans a window of that top's leaves
        n_tops = len(self.tops)
        self.community_top = [self.tops[c % n_tops] for c in range(config.n_communities)]
        lpc = config.leaves_per_community
        self.item_leaf = []
        for i in range(n_items):
            c, j = divmod(i, config.items_per_community)
            top_leaves = config.category_tree[self.community_top[c]]
            self.item_leaf.append(top_leaves[((c // n_tops) * lpc + j % lpc) % len(top_leaves)])
        self.item_top = [self.leaf_top[l] for l in self.item_leaf]

        leaf_pos = {l: i for i, l in enumerate(self.leaves)}
        item_leaf_idx = np.array([leaf_pos[l] for l in self.item_leaf])
        comm_top_idx = np.array([self.tops.index(t) for t in self.community_top])
        base = []
        for m, d in enumerate(dims):
            centroid = top_c[m][comm_top_idx] + comm_off[m]
            base.append(
                centroid[self.community]
                + leaf_off[m][item_leaf_idx]
                + rng.normal(0.0, config.feature_noise, size=(n_items, d))
            )

        # identical pairs: the second member copies the first one's base features
        self.group = np.arange(n_items)
        per_comm = config.items_per_community
        slots = [(c, j) for j in range(0, per_comm - 1, 2) for c in range(config.n_communities)]
        for c, j in slots[: config.identical_pairs]:
            a = c * per_comm + j
            b = a + 1
            self.group[b] = a
            self.item_leaf[b] = self.item_leaf[a]
            for m, d in enumerate(dims):
                base[m][b] = base[m][a] + rng.normal(0.0, config.identical_jitter, size=d)
        self.base = base
        self.catalog = [
            as_channels([base[m][i] + rng.normal(0.0, config.catalog_noise, size=d) for m, d in enumerate(dims)])
            for i in range(n_items)
        ]
        self.members = {g: np.flatnonzero(self.group == g) for g in np.unique(self.group)}
        self.by_community = [np.flatnonzero(self.community == c) for c in range(config.n_communities)]
        self.by_top = {t: np.array([i for i in range(n_items) if self.item_top[i] == t], dtype=np.int64) for t in self.tops}

    def ground_truth(self) -> GroundTruth:
        items = {
            iid: ItemTruth(int(self.community[i]), self.item_top[i], self.item_leaf[i], int(self.group[i]))
            for i, iid in enumerate(self.item_ids)
        }
        return GroundTruth(items)

    def query_features(self, target: int, rng: np.random.Generator) -> Channels:
        cfg = self.config
        return as_channels(
            [self.base[m][target] + rng.normal(0.0, cfg.query_noise[m], size=d) for m, d in enumerate(cfg.channel_dims)]
        )

    def _result_list(self, target: int, shown_top: str, rng) -> list[int]:
        cfg = self.config
        n = min(cfg.results_per_pv, len(self.item_ids))
        chosen: list[int] = []
        if shown_top == self.item_top[target]:
            chosen.extend(int(i) for i in self.members[self.group[target]])
            comm = self.by_community[self.community[target]]
            pool = np.setdiff1d(comm, chosen)
            k = min(len(pool), max(0, cfg.same_community_results - len(chosen)))
            chosen.extend(int(i) for i in rng.choice(pool, size=k, replace=False))
        pool = np.setdiff1d(self.by_top[shown_top], chosen)
        if len(pool) < n - len(chosen):
            pool = np.setdiff1d(np.arange(len(self.item_ids)), chosen)
        k = max(0, n - len(chosen))
        chosen.extend(int(i) for i in rng.choice(pool, size=min(k, len(pool)), replace=False))
        chosen = chosen[:n]
        return [chosen[i] for i in rng.permutation(len(chosen))]

    def page_view(self, k: int, rng: np.random.Generator) -> PVRecord:
        cfg = self.config
        target = int(rng.integers(len(self.item_ids)))
        true_top = self.item_top[target]
        pred = true_top
        if len(self.tops) > 1 and rng.random() < cfg.pred_error_rate:
            others = [t for t in self.tops if t != true_top]
            pred = others[int(rng.integers(len(others)))]
        selected = None
        if pred != true_top and rng.random() < cfg.switch_rate:
            selected = true_top
            if rng.random() < cfg.switch_noise:
                others = [t for t in self.tops if t != pred]
                selected = others[int(rng.integers(len(others)))]
        shown = selected if selected is not None else pred

        query = self.query_features(target, rng)
        results = self._result_list(target, shown, rng)
        tgt_group = self.group[target]
        tgt_comm = self.community[target]
        clicked = []
        for i in results:
            if self.group[i] == tgt_group:
                p = cfg.p_identical
            elif self.community[i] == tgt_comm:
                p = cfg.p_in
            else:
                p = cfg.p_out
            clicked.append(bool(rng.random() < p))
        order = rng.permutation(len(results))
        ts = 1_600_000_000_000 + 60_000 * k
        entries = []
        for pos, (i, c) in enumerate(zip(results, clicked), start=1):
            click_ts = None
            if c:
                click_ts = ts + 1000 + 700 * int(order[pos - 1])
            entries.append(
                ResultEntry(
                    item_id=self.item_ids[i],
                    leaf_category=self.item_leaf[i],
                    top_category=self.item_top[i],
                    position=pos,
                    clicked=c,
                    click_time=click_ts,
                    item_features=self.catalog[i],
                )
            )
        return PVRecord(
            pv_id=f"pv{k:06d}",
            user_id=f"u{int(rng.integers(cfg.n_users)):04d}",
            query_id=f"q{k:06d}",
            query_features=query,
            timestamp=ts,
            predicted_top_category=pred,
            selected_top_category=selected,
            results=entries,
        )

    def eval_queries(self, n: int | None = None) -> list[EvalQuery]:
        rng = np.random.default_rng([self.seed, 2])
        n = self.config.n_eval_queries if n is None else n
        out = []
        for k in range(n):
            t = int(rng.integers(len(self.item_ids)))
            out.append(
                EvalQuery(
                    query_id=f"eq{k:05d}",
                    features=self.query_features(t, rng),
                    top=self.item_top[t],
                    target=self.item_ids[t],
                    identical=tuple(self.item_ids[i] for i in self.members[self.group[t]]),
                )
            )
        return out


def generate_synthetic(config: SynthConfig, seed: int) -> tuple[list[PVRecord], GroundTruth]:
    """Generate ``config.n_pvs`` page views; a pure function of (config, seed)."""
    world = SyntheticWorld(config, seed)
    rng = np.random.default_rng([seed, 1])
    records = [world.page_view(k, rng) for k in range(config.n_pvs)]
    return records, world.ground_truth()


def write_ground_truth(truth: GroundTruth, path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for iid in sorted(truth.items):
            t = truth.items[iid]
            row = {"item_id": iid, "community": t.community, "top": t.top, "leaf": t.leaf, "identical_group": t.identical_group}
            fh.write(json.dumps(row, separators=(",", ":")) + "\n")


def read_ground_truth(path) -> GroundTruth:
    items = {}
    with open(path, encoding="utf-8") as fh:
        for line in fh:
            if line.strip():
                row = json.loads(line)
                items[row["item_id"]] = ItemTruth(row["community"], row["top"], row["leaf"], row["identical_group"])
    return GroundTruth(items)


def write_eval_queries(queries: Iterable[EvalQuery], path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for q in queries:
            row = {
                "query_id": q.query_id,
                "features": [c.tolist() for c in q.features],
                "top": q.top,
                "target": q.target,
                "identical": list(q.identical),
            }
            fh.write(json.dumps(row, separators=(",", ":")) + "\n")


def read_eval_queries(path) -> list[EvalQuery]:
    out = []
    with open(path, encoding="utf-8") as fh:
        for line in fh:
            if line.strip():
                r = json.loads(line)
                out.append(EvalQuery(r["query_id"], as_channels(r["features"]), r["top"], r["target"], tuple(r["identical"])))
    return out


def write_inventory(world: SyntheticWorld, path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for i, iid in enumerate(world.item_ids):
            row = {
                "item_id": iid,
                "top": world.item_top[i],
                "leaf": world.item_leaf[i],
                "features": [c.tolist() for c in world.catalog[i]],
            }
            fh.write(json.dumps(row, separators=(",", ":")) + "\n")


def read_inventory(path) -> dict[str, tuple[str, Channels]]:
    out = {}
    with open(path, encoding="utf-8") as fh:
        for line in fh:
            if line.strip():
                r = json.loads(line)
                out[r["item_id"]] = (r["top"], as_channels(r["features"]))
    return out


def config_dict(config: SynthConfig) -> dict:
    return asdict(config)
