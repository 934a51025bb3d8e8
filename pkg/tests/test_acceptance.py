"""Acceptance criteria A1-A8, one test each, plus a PASS/FAIL summary line.

The lines are printed immediately (visible with ``-s``) and repeated in the
terminal summary at the end of the run.
"""

import time

import numpy as np
import pytest

from clickvid.cli import main
from clickvid.embed import build_code_tree, leaf_probability
from clickvid.evaluate import adjusted_rand_index, map_at_k, recall_at_k
from clickvid.graph import Level
from clickvid.mining import SampleKind, mine_list_sample, mine_triplets
from clickvid.pipeline import (
    EmbedSettings,
    MiningSettings,
    category_report,
    discover_vids,
    mine_category,
    mine_feature_samples,
    retrieval_report,
)
from clickvid.synth import SynthConfig, SyntheticWorld, generate_synthetic
from clickvid.train import CATEGORY, FEATURE, TrainConfig, category_loss, feature_loss, init_params, train
from clickvid.train.losses import hard_aware_loss, listwise_loss, pair_loss, plackett_prob, softmax_ce, triplet_loss
from clickvid.vid import map_vid_to_top_category

import conftest
from batches import CAT_HEADS_DEFAULT, FEA_HEADS_DEFAULT, category_batch, fd_error, feature_batch, params
from oracles import all_permutations, brute_teacher, brute_triplets, central_diff, hs_leaf_probs, rel_error
from small_config import SMALL
from strategies import random_record

FD_STEP = 1e-5
FD_TOL = 1e-4
KINK = 1e-3  # hinge margins closer than this to zero are excluded
INSTANCES = 100


def verdict(name: str, ok: bool, detail: str) -> None:
    line = f"{name} {'PASS' if ok else 'FAIL'}  {detail}"
    conftest.ACCEPTANCE.append(line)
    print(line)
    assert ok, line


# --- A1 gradients ---------------------------------------------------------------------------


def _instances(make, rng):
    """Draw until INSTANCES non-kink cases; ``make`` returns (error, margin) or None."""
    worst, done, skipped = 0.0, 0, 0
    while done < INSTANCES:
        err, margin = make(rng)
        if margin is not None and abs(margin) < KINK:
            skipped += 1
            continue
        worst = max(worst, err)
        done += 1
    return worst, skipped


def _ce(rng):
    z, y = rng.normal(0, 2, 6), int(rng.integers(6))
    return rel_error(softmax_ce(z, y).grad, central_diff(lambda: softmax_ce(z, y).loss, z, FD_STEP)), None


def _pair(rng):
    z = rng.normal(0, 1, 6)
    a, b = (int(v) for v in rng.choice(6, 2, replace=False))
    margin = 1 + z[a] - z[b]
    return rel_error(pair_loss(z, a, b).grad, central_diff(lambda: pair_loss(z, a, b).loss, z, FD_STEP)), margin


def _hard(rng):
    z, y = rng.normal(0, 2, 6), int(rng.integers(6))
    kind = SampleKind.HARD if rng.random() < 0.5 else SampleKind.SIMPLE
    f = lambda: hard_aware_loss(z, y, kind).loss  # noqa: E731
    return rel_error(hard_aware_loss(z, y, kind).grad, central_diff(f, z, FD_STEP)), None


def _triplet(rng):
    f = [rng.normal(0, 1, 5) for _ in range(3)]
    dp, dn = np.linalg.norm(f[0] - f[1]), np.linalg.norm(f[0] - f[2])
    g = triplet_loss(*f).grad
    err = max(rel_error(g[i], central_diff(lambda: triplet_loss(*f).loss, f[i], FD_STEP)) for i in range(3))
    return err, min(dp - dn + 1, dp, dn)


def _listwise(rng):
    n = int(rng.integers(2, 7))
    s = rng.normal(0, 1, n)
    pi = tuple(int(i) for i in rng.permutation(n))
    w = 1 / np.log2(np.arange(2, n + 2))
    return rel_error(listwise_loss(s, pi, w).grad, central_diff(lambda: listwise_loss(s, pi, w).loss, s, FD_STEP)), None


def _category_composite(rng):
    p = params(int(rng.integers(1 << 30)), CAT_HEADS_DEFAULT)
    b = category_batch(rng)
    margin = category_loss(p, b).min_margin
    if abs(margin) < KINK:
        return 0.0, margin
    return fd_error(lambda q: category_loss(q, b), p, FD_STEP), margin


def _feature_composite(rng):
    p = params(int(rng.integers(1 << 30)), FEA_HEADS_DEFAULT)
    b = feature_batch(rng)
    margin = feature_loss(p, b).min_margin
    if abs(margin) < KINK:
        return 0.0, margin
    return fd_error(lambda q: feature_loss(q, b), p, FD_STEP), margin


def test_a1_gradients():
    start = time.perf_counter()
    cases = [
        ("ce", _ce),
        ("pair", _pair),
        ("hard_aware", _hard),
        ("category", _category_composite),
        ("triplet", _triplet),
        ("listwise", _listwise),
        ("feature", _feature_composite),
    ]
    worst = {}
    for i, (name, make) in enumerate(cases):
        worst[name], _ = _instances(make, np.random.default_rng([11, i]))
    elapsed = time.perf_counter() - start
    ok = max(worst.values()) <= FD_TOL and elapsed < 60
    detail = " ".join(f"{k}={v:.1e}" for k, v in worst.items())
    verdict("A1", ok, f"max rel err {detail} ({INSTANCES} each, {elapsed:.1f}s)")


# --- A2 normalization -----------------------------------------------------------------------


def test_a2_normalization():
    start = time.perf_counter()
    rng = np.random.default_rng(2)
    hs_dev = 0.0
    for n_leaves in range(1, 65):
        freqs = {f"n{i}": int(rng.integers(1, 100)) for i in range(n_leaves)}
        tree = build_code_tree(freqs)
        inner = rng.normal(0, 1, (max(n_leaves - 1, 1), 8))
        h = rng.normal(0, 1, 8)
        total = sum(leaf_probability(tree, leaf, h, inner) for leaf in range(n_leaves))
        brute = sum(hs_leaf_probs(tree.codes, tree.points, h, inner))
        hs_dev = max(hs_dev, abs(total - 1), abs(brute - 1))
    pl_dev = 0.0
    for n in range(1, 6):
        for _ in range(20):
            s = rng.normal(0, 3, n)
            pl_dev = max(pl_dev, abs(sum(plackett_prob(s, pi) for pi in all_permutations(n)) - 1))
    elapsed = time.perf_counter() - start
    ok = hs_dev <= 1e-6 and pl_dev <= 1e-9 and elapsed < 10
    verdict("A2", ok, f"HS |sum-1|={hs_dev:.1e} (<=64 leaves), PL |sum-1|={pl_dev:.1e} (N<=5), {elapsed:.1f}s")


# --- A3 virtual ID recovery -----------------------------------------------------------------


def test_a3_virtual_id_recovery():
    start = time.perf_counter()
    cfg = SynthConfig(n_communities=8, items_per_community=50, n_pvs=5000, p_in=0.3, p_out=0.01)
    records, truth = generate_synthetic(cfg, 42)
    settings = EmbedSettings(walks_per_node=10, walk_length=40, dim=32, window=5, epochs=5)
    graph, table, assignment = discover_vids(records, Level.ITEM, 8, settings, 42)
    labels = [assignment.labels[n] for n in table.keys]
    ari = adjusted_rand_index(truth.communities(table.keys), labels)
    elapsed = time.perf_counter() - start
    verdict("A3", ari >= 0.9 and elapsed < 300, f"ARI={ari:.4f} over {len(table.keys)} items ({elapsed:.1f}s)")


# --- A4 mining oracle -----------------------------------------------------------------------


def test_a4_mining_oracle():
    start = time.perf_counter()
    rng = np.random.default_rng(4)
    weights = (1.0, 0.5)
    mismatches = n_triplets = n_lists = 0
    for i in range(1000):
        rec = random_record(rng, int(rng.integers(0, 21)), pv_id=f"pv{i}")
        gamma, eps = rng.uniform(0.5, 4.0), rng.uniform(0.05, 3.0)
        n = int(rng.integers(2, 8))
        got = [t.ids for t in mine_triplets(rec, gamma, eps, weights, 16)]
        ls = mine_list_sample(rec, n, weights)
        mismatches += got != brute_triplets(rec, gamma, eps, weights, 16)
        mismatches += (ls.teacher_pi if ls else None) != brute_teacher(rec, n, weights)
        n_triplets += len(got)
        n_lists += ls is not None
    elapsed = time.perf_counter() - start
    ok = mismatches == 0 and elapsed < 30
    verdict("A4", ok, f"{mismatches} mismatches over 1000 PVs ({n_triplets} triplets, {n_lists} lists, {elapsed:.1f}s)")


# --- A5 / A8 feature network ----------------------------------------------------------------

A5_SEED = 3
A5_NET = dict(epochs=15, hidden=64, out_dim=32, lr=0.01)


@pytest.fixture(scope="module")
def a5_world():
    cfg = SynthConfig(n_communities=8, items_per_community=40, n_pvs=3000)
    world = SyntheticWorld(cfg, A5_SEED)
    records, _ = generate_synthetic(cfg, A5_SEED)
    inventory = {iid: (world.item_top[i], world.catalog[i]) for i, iid in enumerate(world.item_ids)}
    queries = world.eval_queries(400)
    _, _, assignment = discover_vids(records, Level.ITEM, None, EmbedSettings(dim=32), A5_SEED)
    mined = mine_feature_samples(records, assignment, MiningSettings(channel_weights=(1.0, 0.2, 0.2)))
    input_dim = sum(cfg.channel_dims)

    def run(params):
        return retrieval_report(params, inventory, queries)

    full = train(FEATURE, mined.samples, TrainConfig(lam=1.0, **A5_NET)).params
    cls_only = train(FEATURE, mined.samples, TrainConfig(lam=0.0, **A5_NET)).params
    untrained = init_params(input_dim, A5_NET["hidden"], A5_NET["out_dim"], {"virtual": assignment.k}, 0)
    return {"full": run(full), "cls": run(cls_only), "untrained": run(untrained), "truth": {q.query_id: set(q.identical) for q in queries}}


def test_a5_feature_lift(a5_world):
    r1 = {k: a5_world[k][0].values["recall@1"]["average"] for k in ("full", "cls", "untrained")}
    lift = r1["full"] - r1["untrained"]
    ablation = r1["full"] - r1["cls"]
    ok = lift >= 0.20 and ablation >= 0.05
    verdict(
        "A5",
        ok,
        f"recall@1 lambda=1 {r1['full']:.3f}, untrained {r1['untrained']:.3f} (+{lift:.3f}), lambda=0 {r1['cls']:.3f} (+{ablation:.3f})",
    )


# --- A6 category ensemble -------------------------------------------------------------------


def test_a6_category_ensemble():
    seed = 3
    tree = {t: [f"{t}.l{i}" for i in range(4)] for t in ("bags", "dress", "shirt", "shoes", "toys", "snacks")}
    cfg = SynthConfig(
        n_communities=12,
        items_per_community=20,
        n_pvs=3000,
        category_tree=tree,
        leaves_per_community=2,
        pred_error_rate=0.3,
        switch_rate=0.8,
        switch_noise=0.2,
    )
    world = SyntheticWorld(cfg, seed)
    records, _ = generate_synthetic(cfg, seed)
    queries = world.eval_queries(600)
    _, _, assignment = discover_vids(records, Level.LEAF, 12, EmbedSettings(dim=16), seed)
    cmap = map_vid_to_top_category(assignment, records)
    samples = mine_category(records, assignment, world.tops, MiningSettings())
    p1 = {}
    for beta in (0.0, 1.0):
        fitted = train(CATEGORY, samples, TrainConfig(beta=beta, epochs=10, hidden=64, out_dim=32, lr=0.01)).params
        for w in (0.0, 0.5, 1.0):
            p1[beta, w] = category_report(fitted, cmap, world.tops, queries, w).values["precision@1"]["average"]
    ens_ok = all(p1[b, 0.5] >= max(p1[b, 0.0], p1[b, 1.0]) - 0.005 and p1[b, 0.5] >= 0.95 for b in (0.0, 1.0))
    pair_ok = p1[1.0, 0.5] >= p1[0.0, 0.5] - 0.005
    detail = ", ".join(f"beta={b:g} w={w:g}: {v:.4f}" for (b, w), v in p1.items())
    verdict("A6", ens_ok and pair_ok, f"precision@1 {detail}")


# --- A7 determinism -------------------------------------------------------------------------


def _tree(root):
    return {p.relative_to(root).as_posix(): p.read_bytes() for p in sorted(root.rglob("*")) if p.is_file()}


def test_a7_determinism(tmp_path, capsys):
    cfg = tmp_path / "config.txt"
    cfg.write_text(SMALL)
    trees = {}
    for mode, threads in (("single", ["--threads", "1"]), ("threaded", ["--threads", "4"]), ("default", [])):
        for rep in (0, 1):
            out = tmp_path / f"{mode}{rep}"
            assert main(["e2e", "--config", str(cfg), "--seed", "5", "--out", str(out), *threads]) == 0
            trees[mode, rep] = _tree(out)
    capsys.readouterr()
    reference = trees["single", 0]
    diffs = sorted({name for t in trees.values() for name in set(t) | set(reference) if t.get(name) != reference.get(name)})
    detail = f"{len(reference)} files, {len(trees)} runs (threads 1, 4 and default)" + (f", differing: {diffs[:5]}" if diffs else "")
    verdict("A7", not diffs, detail)


# --- A8 metric monotonicity (over the A5 run) -----------------------------------------------


def test_a8_metric_monotonicity(a5_world):
    truth = a5_world["truth"]
    bad = 0
    checked = 0
    for key in ("full", "cls", "untrained"):
        rankings = a5_world[key][1]
        for q, ranking in rankings.items():
            prev = -1.0
            for k in range(1, 21):
                r = recall_at_k({q: ranking}, truth, k)
                m = map_at_k({q: ranking}, truth, k)
                bad += r.mean < prev or m.mean > r.hit_rate + 1e-12
                prev = r.mean
                checked += 1
    verdict("A8", bad == 0, f"{bad} violations over {checked} (query, K) checks, K=1..20")
