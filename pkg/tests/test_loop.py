import csv

import numpy as np
import pytest

from clickvid.errors import Divergence, EmptyBatch, InvalidConfig, MalformedFile
from clickvid.mining import ClassSample, SampleKind
from clickvid.pvlog import as_channels
from clickvid.train import (
    CATEGORY,
    FEATURE,
    CategorySamples,
    FeatureSamples,
    TrainConfig,
    load_checkpoint,
    save_checkpoint,
    train,
    write_history,
)
from clickvid.train.loop import HISTORY_COLUMNS
from batches import N_TOP, N_VIRTUAL, category_batch, feature_batch

SMALL = dict(hidden=8, out_dim=4, batch_size=4)


def _category_samples(seed=0):
    b = category_batch(np.random.default_rng(seed), nv=10, nc=10, npair=6)
    return CategorySamples(b.virtual, b.clicks, b.pairs, N_VIRTUAL, N_TOP)


def _feature_samples(seed=0):
    b = feature_batch(np.random.default_rng(seed), nv=8, nt=8, nl=4)
    return FeatureSamples(b.virtual, b.triplets, b.lists, N_VIRTUAL)


def test_zero_lr_leaves_params_and_history_flat():
    cfg = TrainConfig(lr=0.0, epochs=3, **SMALL)
    res = train(CATEGORY, _category_samples(), cfg)
    init = train(CATEGORY, _category_samples(), TrainConfig(lr=0.0, epochs=0, **SMALL)).params
    assert all(np.array_equal(res.params[k], init[k]) for k in init)
    totals = [row["loss_total"] for row in res.history]
    assert totals == pytest.approx([totals[0]] * 3, rel=1e-12)


@pytest.mark.parametrize("network,make", [(CATEGORY, _category_samples), (FEATURE, _feature_samples)])
def test_same_seed_same_bytes(network, make):
    cfg = TrainConfig(epochs=3, seed=5, **SMALL)
    a = train(network, make(), cfg).params
    b = train(network, make(), cfg).params
    assert all(a[k].tobytes() == b[k].tobytes() for k in a)
    c = train(network, make(), TrainConfig(epochs=3, seed=6, **SMALL)).params
    assert any(a[k].tobytes() != c[k].tobytes() for k in a)


def test_separable_classes_are_fitted():
    rng = np.random.default_rng(0)
    virtual = []
    for label, centre in enumerate((-2.0, 2.0)):
        for _ in range(20):
            virtual.append(ClassSample(as_channels([centre + rng.normal(0, 0.3, 3)]), label, SampleKind.VIRTUAL))
    res = train(CATEGORY, CategorySamples(virtual, [], [], 2, 2), TrainConfig(epochs=200, **SMALL))
    assert res.history[-1]["loss_total"] < 0.1


def test_empty_samples_rejected():
    with pytest.raises(EmptyBatch):
        train(CATEGORY, CategorySamples([], [], [], 2, 2), TrainConfig(**SMALL))


@pytest.mark.filterwarnings("ignore::RuntimeWarning")
def test_divergence_carries_last_good_params():
    cfg = TrainConfig(lr=1e6, momentum=0.0, clip_norm=0.0, epochs=50, **SMALL)
    samples = _category_samples()
    with pytest.raises(Divergence) as info:
        train(CATEGORY, samples, cfg)
    err = info.value
    assert err.params is not None and all(np.all(np.isfinite(v)) for v in err.params.values())
    assert 0 <= err.epoch < 50


@pytest.mark.parametrize(
    "bad",
    [dict(alpha=-1), dict(eta_simple=2, eta_hard=1), dict(lr=-0.1), dict(momentum=1.0), dict(batch_size=0), dict(clip_norm=-1)],
)
def test_config_validation(bad):
    with pytest.raises(InvalidConfig):
        TrainConfig(**bad).validate()


def test_checkpoint_round_trip(tmp_path):
    params = train(FEATURE, _feature_samples(), TrainConfig(epochs=1, **SMALL)).params
    path = tmp_path / "p.bin"
    save_checkpoint(params, path, seed=9, epoch=1)
    back, seed, epoch = load_checkpoint(path)
    assert (seed, epoch) == (9, 1) and list(back) == list(params)
    assert all(np.array_equal(back[k], params[k]) for k in params)
    path.write_bytes(path.read_bytes() + b"x")
    with pytest.raises(MalformedFile):
        load_checkpoint(path)
    path.write_bytes(b"garbage")
    with pytest.raises(MalformedFile):
        load_checkpoint(path)


def test_history_csv(tmp_path):
    res = train(FEATURE, _feature_samples(), TrainConfig(epochs=2, **SMALL))
    path = tmp_path / "h.csv"
    write_history(res.history, path)
    rows = list(csv.reader(open(path)))
    assert tuple(rows[0]) == HISTORY_COLUMNS
    assert [r[0] for r in rows[1:]] == ["1", "2"]
    for row in rows[1:]:
        assert float(row[1]) == pytest.approx(float(row[2]) + float(row[5]) + float(row[6]))
