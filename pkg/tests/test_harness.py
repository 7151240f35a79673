import csv
import json

import numpy as np
import pytest

from conftest import blob_dataset
from wbn import harness
from wbn.data import LabeledDataset
from wbn.harness import (
    ConfigError,
    TrainConfig,
    emit_report,
    evaluate,
    metrics_from_predictions,
    parse_method,
    repeat_experiment,
    summarize,
    train,
)
from wbn.netcore import LayerParams, NetworkConfig, NetworkModel
from wbn.optim import init_model


@pytest.mark.parametrize("name,scheme,weighted,norm", [
    ("LF+BN", "uniform", False, "bn"),
    ("WLF(ICF)+BN", "icf", True, "bn"),
    ("wlf(cbl)+wbn", "cbl", True, "wbn"),
    ("WLF(UNIFORM)+WBN", "uniform", True, "wbn"),
])
def test_parse_method(name, scheme, weighted, norm):
    m = parse_method(name)
    assert (m.scheme, m.weighted, m.norm) == (scheme, weighted, norm)


@pytest.mark.parametrize("name", ["LF+WBN", "WLF(FOO)+BN", "WLF(ICF)", "ICF+BN"])
def test_parse_method_rejects(name):
    with pytest.raises(ConfigError):
        parse_method(name)


def test_config_json_round_trip(tmp_path):
    cfg = TrainConfig(subset_counts={"3": 5, "9": 50}, methods=("LF+BN", "WLF(CBL)+WBN"),
                      beta=0.9, hidden=(10,), epochs=4, run_seeds=(1, 2), repetitions=2)
    path = tmp_path / "c.json"
    path.write_text(json.dumps(cfg.to_dict()))
    assert TrainConfig.from_json(path) == cfg


def test_config_aliases_and_errors():
    cfg = TrainConfig.from_dict({"subset": {"counts": {"1": 2}, "seed": 3}, "method": {"name": "WLF(ICF)+BN"}})
    assert (cfg.subset_counts, cfg.subset_seed, cfg.method) == ({"1": 2}, 3, "WLF(ICF)+BN")
    with pytest.raises(ConfigError):
        TrainConfig.from_dict({"training": {}})
    with pytest.raises(ConfigError):
        TrainConfig.from_dict({"protocol": {"lr": 1}})
    with pytest.raises(ConfigError):
        TrainConfig(batch_size=1)
    with pytest.raises(ConfigError):
        TrainConfig(beta=1.0)
    with pytest.raises(ConfigError):
        TrainConfig(method="LF+WBN")


def small_config(**kw):
    base = dict(hidden=(8,), batch_size=16, epochs=5, repetitions=1)
    base.update(kw)
    return TrainConfig(**base)


def test_zero_epochs_returns_initialization():
    ds = blob_dataset()
    cfg = small_config(epochs=0)
    result = train(cfg, ds, seed=3)
    ref = init_model(cfg.network_config(ds.n, ds.K, "bn"), np.random.default_rng(3))
    for a, b in zip(result.model.parameters(), ref.parameters()):
        np.testing.assert_array_equal(a, b)
    assert result.epoch_losses == []


@pytest.mark.parametrize("method", ["LF+BN", "WLF(ICF)+WBN", "WLF(CBL)+BN"])
def test_training_deterministic_and_loss_decreases(method):
    ds = blob_dataset(per_class=(10, 20, 60))
    cfg = small_config(epochs=30, alpha=0.01)
    a = train(cfg, ds, seed=7, method=method)
    b = train(cfg, ds, seed=7, method=method)
    np.testing.assert_array_equal(a.step_losses, b.step_losses)
    for x, y in zip(a.model.parameters(), b.model.parameters()):
        np.testing.assert_array_equal(x, y)
    assert a.epoch_losses[-1] < 0.2 * a.epoch_losses[0]
    assert evaluate(a.model, ds).overall > 90


def test_moving_stats_frozen_pass_differs():
    ds = blob_dataset()
    r1 = train(small_config(), ds, seed=1)
    r2 = train(small_config(moving_stats="frozen_pass"), ds, seed=1)
    np.testing.assert_array_equal(r1.model.layers[0].W, r2.model.layers[0].W)
    assert not np.array_equal(r1.model.layers[0].M, r2.model.layers[0].M)
    assert np.all(r2.model.layers[0].V > 0)


def identity_model(K):
    cfg = NetworkConfig((K, K), ("identity",), ("none",))
    return NetworkModel(cfg, [LayerParams(np.eye(K), np.zeros(K))], tuple(map(str, range(K))))


def test_evaluate_perfect_and_majority():
    labels = np.repeat(np.arange(4), [5, 6, 7, 8])
    ds = LabeledDataset(np.eye(4)[labels], labels, ("0", "1", "2", "3"))
    m = evaluate(identity_model(4), ds)
    np.testing.assert_array_equal(m.per_class, 100)
    assert m.overall == m.pooled == 100
    majority = LabeledDataset(np.tile(np.eye(4)[3], (labels.size, 1)), labels, ds.class_names)
    m = evaluate(identity_model(4), majority)
    np.testing.assert_array_equal(m.per_class, [0, 0, 0, 100])
    assert m.overall == 25
    assert m.pooled == pytest.approx(100 * 8 / 26)
    np.testing.assert_array_equal(m.confusion[:, 3], [5, 6, 7, 8])


def test_evaluate_remaps_class_names():
    # test set lists only classes "2" and "0"; labels must follow the names
    model = identity_model(3)
    ds = LabeledDataset(np.eye(3)[[2, 0]], np.array([0, 1]), ("2", "0"))
    assert evaluate(model, ds).overall == 100
    with pytest.raises(ValueError):
        evaluate(model, LabeledDataset(np.eye(3)[[0]], np.array([0]), ("x",)))


def test_metrics_from_predictions_example():
    m = metrics_from_predictions(np.array([0, 0, 1, 1]), np.array([0, 1, 1, 1]), ("a", "b"))
    np.testing.assert_array_equal(m.per_class, [50, 100])
    assert m.overall == 75


def fake_records():
    rng = np.random.default_rng(0)
    recs = []
    for method in harness.STANDARD_METHODS:
        for rep in range(5):
            acc = rng.uniform(0, 100, 4)
            m = harness.Metrics(("3", "4", "7", "9"), np.eye(4), acc, float(acc.mean()), 50.0)
            recs.append(harness.RunRecord(method, rep, 100 + rep, m))
    return recs


def test_report_rows_and_means(tmp_path):
    recs = fake_records()
    path = emit_report(recs, tmp_path / "r.csv")
    with open(path) as fh:
        rows = list(csv.reader(fh))
    assert rows[0] == ["method", "repetition", "seed", "3", "4", "7", "9", "overall", "pooled"]
    detail = [r for r in rows[1:] if r[1] != "mean"]
    means = [r for r in rows[1:] if r[1] == "mean"]
    assert len(detail) == 25 and len(means) == 5
    for mrow in means:
        vals = np.array([[float(x) for x in r[3:]] for r in detail if r[0] == mrow[0]])
        np.testing.assert_allclose([float(x) for x in mrow[3:]], vals.mean(axis=0), rtol=1e-15)
    # full precision round trip
    assert float(detail[0][3]) == recs[0].metrics.per_class[0]
    with pytest.raises(ValueError):
        emit_report([], tmp_path / "x.csv")


def test_summarize_single_repetition():
    recs = fake_records()[:1]
    s = summarize(recs)["LF+BN"]
    assert s["runs"] == 1
    np.testing.assert_array_equal(s["per_class"], recs[0].metrics.per_class)


def test_repeat_experiment_shares_seeds_across_methods():
    src = blob_dataset(per_class=(30, 30, 30, 60))
    cfg = TrainConfig(subset_counts={"0": 4, "1": 4, "2": 4, "3": 40}, hidden=(6,),
                      batch_size=8, epochs=2, repetitions=2, seed=9,
                      methods=("LF+BN", "WLF(ICF)+WBN"))
    recs = repeat_experiment(cfg, src, src)
    assert len(recs) == 4
    seeds = {r.method: [x.seed for x in recs if x.method == r.method] for r in recs}
    assert seeds["LF+BN"] == seeds["WLF(ICF)+WBN"]
    assert len(set(seeds["LF+BN"])) == 2
    again = repeat_experiment(cfg, src, src)
    for a, b in zip(recs, again):
        np.testing.assert_array_equal(a.metrics.per_class, b.metrics.per_class)


def test_forced_run_seeds():
    src = blob_dataset(per_class=(20, 20, 40))
    cfg = TrainConfig(subset_counts={"0": 3, "1": 3, "2": 20}, hidden=(4,), batch_size=8,
                      epochs=1, repetitions=2, run_seeds=(42, 42))
    recs = repeat_experiment(cfg, src, src)
    assert [r.seed for r in recs] == [42, 42]
    np.testing.assert_array_equal(recs[0].metrics.confusion, recs[1].metrics.confusion)


def test_load_datasets_from_config(idx_config):
    cfg = TrainConfig.from_json(idx_config)
    train_src, test_src = harness.load_datasets(cfg)
    assert (train_src.N, test_src.N, train_src.n) == (300, 120, 16)
    with pytest.raises(ConfigError):
        harness.load_datasets(TrainConfig(dataset={"kind": "svhn"}))


def test_shipped_configs_parse():
    from pathlib import Path

    paths = sorted((Path(__file__).parent.parent / "configs").glob("*.json"))
    assert len(paths) >= 4
    for path in paths:
        cfg = TrainConfig.from_json(path)
        assert set(cfg.method_list()) == set(harness.STANDARD_METHODS)
