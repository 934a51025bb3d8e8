import itertools

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from clickvid.embed import (
    EmbeddingTable,
    WalkCorpus,
    build_code_tree,
    context_pairs,
    generate_walks,
    hs_pair_loss,
    initial_vectors,
    leaf_probability,
    load_embeddings,
    ns_pair_loss,
    save_embeddings,
    train_skipgram,
)
from clickvid.errors import EmptyCorpus, EmptyVocabulary, MalformedFile
from clickvid.graph import CoClickGraph
from oracles import central_diff, hs_leaf_probs, rel_error


def two_cliques(n=5):
    edges = {}
    for prefix in "ab":
        names = [f"{prefix}{i}" for i in range(n)]
        for x, y in itertools.combinations(names, 2):
            edges[(x, y)] = 1
    return CoClickGraph(sorted({v for e in edges for v in e}), edges)


# --- walks --------------------------------------------------------------------------------


def test_isolated_node_walks_are_single_nodes():
    g = CoClickGraph(["solo"], {})
    assert generate_walks(g, 2, 5, 0).walks == [["solo"], ["solo"]]


def test_path_graph_alternates():
    g = CoClickGraph(["A", "B"], {("A", "B"): 3})
    for walk in generate_walks(g, 3, 7, 9).walks:
        assert all(x != y for x, y in zip(walk, walk[1:]))
        assert len(walk) == 7


def test_empty_graph_gives_empty_corpus():
    assert generate_walks(CoClickGraph([], {}), 2, 5, 0).walks == []


def test_walks_are_deterministic_and_thread_independent():
    g = two_cliques()
    a = generate_walks(g, 4, 10, 3).walks
    assert a == generate_walks(g, 4, 10, 3).walks
    assert a == generate_walks(g, 4, 10, 3, threads=4).walks
    assert a != generate_walks(g, 4, 10, 4).walks


def test_walks_follow_edges_and_order_is_pass_major():
    g = two_cliques()
    corpus = generate_walks(g, 3, 12, 1)
    assert len(corpus.walks) == 3 * len(g.nodes)
    for k, walk in enumerate(corpus.walks):
        assert walk[0] == g.nodes[k % len(g.nodes)]
        assert 1 <= len(walk) <= 12
        for x, y in zip(walk, walk[1:]):
            assert y in g.neighbors(x)


def test_transitions_are_weight_proportional():
    g = CoClickGraph(["h", "x", "y"], {("h", "x"): 1, ("h", "y"): 3})
    walks = generate_walks(g, 4000, 2, 5).walks
    first_steps = [w[1] for w in walks if w[0] == "h"]
    frac_y = first_steps.count("y") / len(first_steps)
    # binomial sd is about 0.007 here
    assert abs(frac_y - 0.75) < 0.03


# --- context pairs ------------------------------------------------------------------------


def test_context_examples():
    walk = [1, 2, 3, 4, 5]
    assert {c for (v, c) in context_pairs(walk, 2) if v == 3} == {1, 2, 4, 5}
    assert context_pairs(["a"], 3) == []
    assert context_pairs(["a", "b"], 1) == [("a", "b"), ("b", "a")]


@given(st.integers(1, 30), st.integers(1, 6))
def test_context_pair_count(n, w):
    pairs = context_pairs(list(range(n)), w)
    assert len(pairs) == sum(min(n - 1, i + w) - max(0, i - w) for i in range(n))
    assert all(0 < abs(a - b) <= w for a, b in pairs)


# --- code tree ----------------------------------------------------------------------------


def test_two_leaf_tree():
    t = build_code_tree({"a": 1, "b": 1})
    assert [c.tolist() for c in t.codes] == [[0], [1]]


def test_skewed_counts():
    t = build_code_tree({"a": 5, "b": 1, "c": 1})
    assert (t.depth("a"), t.depth("b"), t.depth("c")) == (1, 2, 2)


def test_empty_vocabulary():
    with pytest.raises(EmptyVocabulary):
        build_code_tree({})


freqs = st.dictionaries(st.text("abcdefghij", min_size=1, max_size=3), st.integers(1, 50), min_size=1, max_size=64)


@given(freqs)
def test_tree_is_prefix_free_and_huffman(f):
    t = build_code_tree(f)
    codes = ["".join(map(str, c)) for c in t.codes]
    assert len(codes) == len(f)
    for a, b in itertools.permutations(codes, 2):
        assert not b.startswith(a)
    depth = dict(zip(t.keys, map(len, codes)))
    for x, y in itertools.combinations(t.keys, 2):
        if f[x] > f[y]:
            assert depth[x] <= depth[y]
    # inner-node indices cover 0..n-2 with the root first
    inner = {int(p) for pts in t.points for p in pts}
    assert inner == set(range(len(f) - 1))
    assert all(pts[0] == 0 for pts in t.points if len(pts))
    again = build_code_tree(dict(reversed(list(f.items()))))
    assert ["".join(map(str, c)) for c in again.codes] == codes


@given(freqs, st.integers(0, 2**31))
def test_leaf_probabilities_sum_to_one(f, seed):
    t = build_code_tree(f)
    rng = np.random.default_rng(seed)
    h = rng.normal(0, 1, 6)
    inner = rng.normal(0, 1, (max(t.n_inner, 1), 6))
    probs = [leaf_probability(t, i, h, inner) for i in range(len(t.keys))]
    assert abs(sum(probs) - 1.0) < 1e-6
    assert np.allclose(probs, hs_leaf_probs(t.codes, t.points, h, inner), rtol=1e-12)


# --- pair losses --------------------------------------------------------------------------


def test_hs_pair_loss_gradients():
    rng = np.random.default_rng(0)
    for _ in range(20):
        h = rng.normal(0, 1, 5)
        u = rng.normal(0, 1, (4, 5))
        codes = rng.integers(0, 2, 4)
        loss, dh, du = hs_pair_loss(h, u, codes)
        assert rel_error(dh, central_diff(lambda: hs_pair_loss(h, u, codes)[0], h)) < 1e-6
        assert rel_error(du, central_diff(lambda: hs_pair_loss(h, u, codes)[0], u)) < 1e-6


def test_hs_pair_loss_is_neg_log_leaf_probability():
    t = build_code_tree({"a": 3, "b": 1, "c": 2, "d": 2})
    rng = np.random.default_rng(1)
    h = rng.normal(0, 1, 4)
    inner = rng.normal(0, 1, (t.n_inner, 4))
    for i in range(4):
        loss, _, _ = hs_pair_loss(h, inner[t.points[i]], t.codes[i])
        assert loss == pytest.approx(-np.log(leaf_probability(t, i, h, inner)), rel=1e-12)


def test_ns_pair_loss_gradients():
    rng = np.random.default_rng(2)
    for _ in range(20):
        h, pos = rng.normal(0, 1, 5), rng.normal(0, 1, 5)
        negs = rng.normal(0, 1, (3, 5))
        f = lambda: ns_pair_loss(h, pos, negs)[0]  # noqa: E731
        _, dh, dpos, dnegs = ns_pair_loss(h, pos, negs)
        for analytic, x in ((dh, h), (dpos, pos), (dnegs, negs)):
            assert rel_error(analytic, central_diff(f, x)) < 1e-6


# --- training -----------------------------------------------------------------------------


def test_kernel_matches_reference_sgd():
    """The compiled HS kernel equals plain SGD on hs_pair_loss, pair by pair."""
    walks = [["a", "b", "c", "a"], ["c", "b"], ["b", "a", "b"]]
    corpus = WalkCorpus(walks, 1, 4, 0)
    d, w, lr0, epochs = 6, 2, 0.2, 2
    table = train_skipgram(corpus, d=d, w=w, epochs=epochs, lr0=lr0, seed=3)

    tree = build_code_tree(corpus.frequencies())
    idx = {k: i for i, k in enumerate(tree.keys)}
    syn0 = initial_vectors(len(tree.keys), d, 3)
    syn1 = np.zeros((tree.n_inner, d))
    pairs = [p for walk in walks for p in context_pairs(walk, w)]
    total, done = len(pairs) * epochs, 0
    for _ in range(epochs):
        for c, x in pairs:
            lr = lr0 - (lr0 - lr0 / 100) * done / total
            pts = tree.points[idx[x]]
            _, dh, du = hs_pair_loss(syn0[idx[c]], syn1[pts], tree.codes[idx[x]])
            syn1[pts] -= lr * du
            syn0[idx[c]] -= lr * dh
            done += 1
    np.testing.assert_allclose(table.vectors, syn0, rtol=1e-12, atol=1e-14)
    np.testing.assert_allclose(table.inner, syn1, rtol=1e-12, atol=1e-14)


def test_zero_epochs_returns_initialization():
    corpus = generate_walks(two_cliques(), 2, 5, 0)
    t = train_skipgram(corpus, d=8, epochs=0, seed=4)
    np.testing.assert_array_equal(t.vectors, initial_vectors(10, 8, 4))
    assert np.all(np.abs(t.vectors) <= 0.5 / 8)


def test_empty_corpus():
    with pytest.raises(EmptyCorpus):
        train_skipgram(WalkCorpus([], 1, 1, 0))


def _cos(t, a, b):
    x, y = t[a], t[b]
    return float(x @ y / np.linalg.norm(x) / np.linalg.norm(y))


@pytest.mark.parametrize("mode", ["hs", "neg"])
def test_two_cliques_separate(mode):
    g = two_cliques()
    corpus = generate_walks(g, 10, 20, 0)
    t = train_skipgram(corpus, d=16, w=5, epochs=5, mode=mode, seed=0)
    intra = [_cos(t, x, y) for x, y in itertools.combinations(g.nodes, 2) if x[0] == y[0]]
    inter = [_cos(t, x, y) for x, y in itertools.product(g.nodes, g.nodes) if x[0] == "a" and y[0] == "b"]
    assert np.mean(intra) > np.mean(inter)
    assert np.all(np.isfinite(t.vectors))


def test_epoch_loss_non_increasing_on_two_cliques():
    corpus = generate_walks(two_cliques(), 10, 20, 0)
    hist = train_skipgram(corpus, d=16, w=5, epochs=3, seed=0).loss_history
    rises = [b / a - 1 for a, b in zip(hist, hist[1:]) if b > a]
    assert len(rises) <= 1 and all(r <= 0.01 for r in rises)


def test_training_is_bit_reproducible():
    corpus = generate_walks(two_cliques(), 3, 10, 0)
    for mode in ("hs", "neg"):
        a = train_skipgram(corpus, d=8, mode=mode, seed=5, shuffle=True)
        b = train_skipgram(corpus, d=8, mode=mode, seed=5, shuffle=True)
        assert a.vectors.tobytes() == b.vectors.tobytes()


def test_embedding_file_roundtrip(tmp_path):
    t = EmbeddingTable(["x", "y"], np.array([[0.1, -2e-17], [1 / 3, 5.0]]))
    save_embeddings(t, tmp_path / "e.txt")
    back = load_embeddings(tmp_path / "e.txt")
    assert back.keys == t.keys
    assert back.vectors.tobytes() == t.vectors.tobytes()
    (tmp_path / "bad.txt").write_text("2 2\nx 1 2\n")
    with pytest.raises(MalformedFile):
        load_embeddings(tmp_path / "bad.txt")
    (tmp_path / "bad.txt").write_text("1 2\nx 1\n")
    with pytest.raises(MalformedFile):
        load_embeddings(tmp_path / "bad.txt")
