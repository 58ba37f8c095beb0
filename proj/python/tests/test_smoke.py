import math

import numpy as np
import pytest

import protots

SYNTH = {"regimes": 4, "period": 12, "periods": 40, "lookback": 12, "horizon": 6, "min_run": 2, "max_run": 3}
CONFIG = {
    "model": {"n_roots": 3, "encoder": {"d": 8, "d_bottle": 3}, "seed": 1},
    "train": {"max_epochs": 4, "seed": 2, "stage_plan": [{"m": 2, "k": 1, "alpha": 50}]},
}


@pytest.fixture(scope="module")
def dataset():
    return protots.synth(SYNTH, seed=5)


@pytest.fixture(scope="module")
def model(dataset):
    csv, schema, _ = dataset
    return protots.Model.train(schema, csv, CONFIG)


def test_synth_is_deterministic(dataset):
    csv, schema, regimes = dataset
    again = protots.synth(SYNTH, seed=5)
    assert again[0] == csv
    assert schema["period_T"] == 12
    assert len(regimes) == 40 * 12
    assert set(regimes) <= {0, 1, 2, 3}


def test_training_report_and_tree(model):
    report = model.report()
    assert len(report["stages"]) == 2
    tree = model.tree()
    assert len(tree["roots"]) == 3
    assert all(len(n["pattern"]) == 12 for n in tree["nodes"])


def test_predictions_and_metrics(model, dataset):
    csv = dataset[0]
    pred = model.predict(csv, "test")
    assert pred.ndim == 2 and pred.shape[1] == 6
    assert np.isfinite(pred).all()
    metrics = model.evaluate(csv, "test")
    assert metrics["count"] == pred.shape[0]
    assert metrics["mae"] >= 0.0


def test_explanation_sums_to_prediction(model, dataset):
    csv = dataset[0]
    e = model.explain(csv, instance=0)
    total = sum(c["weight"] for c in e["contributions"])
    assert math.isclose(total, 1.0, abs_tol=1e-9)
    curves = np.sum([c["curve"] for c in e["contributions"]], axis=0)
    assert np.allclose(curves, e["prediction"], atol=1e-9)
    timeline = model.activations(csv, k=2)
    assert all(len(entry["leaves"]) == 2 for entry in timeline)


def test_steering_and_checkpoint(model, dataset, tmp_path):
    csv = dataset[0]
    leaf = model.tree()["leaves"][0]
    rev = model.revision
    children = model.split(leaf, m=3, seed=9)
    assert len(children) == 3
    model.edit_pattern(children[0], [0.5] * 12, lock=True)
    assert model.revision == rev + 2

    path = tmp_path / "m.ptsc"
    model.save(path)
    back = protots.Model.load(path)
    assert np.max(np.abs(back.predict(csv) - model.predict(csv))) < 1e-5
    node = next(n for n in back.tree()["nodes"] if n["id"] == children[0])
    assert node["pattern_locked"] and node["pattern"] == [0.5] * 12


def test_errors(tmp_path, dataset):
    with pytest.raises(protots.IoError):
        protots.Model.load(tmp_path / "missing.ptsc")
    bad = tmp_path / "bad.ptsc"
    bad.write_bytes(b"PTSCKPT\0garbage")
    with pytest.raises(protots.CorruptionError):
        protots.Model.load(bad)
