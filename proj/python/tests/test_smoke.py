import json
import math

import pytest

import geco


def test_closed_forms():
    assert geco.bpr_loss(0.4, 0.4) == pytest.approx(math.log(2), abs=1e-12)
    assert geco.discriminator_loss([0.5] * 4, [0.5] * 4) == pytest.approx(2 * math.log(2), abs=1e-9)
    for k, tau in [(4, 1.0), (8, 0.5), (64, 0.1)]:
        assert geco.info_nce_loss(0.3, [0.3] * (k - 1), tau) == pytest.approx(math.log(k) / tau, abs=1e-9)
    assert geco.reg_loss([3.0, 4.0]) == 5.0
    with pytest.raises(ValueError):
        geco.generator_loss([0.5], [0.0], [0.0], -1.0)


def test_metrics_and_errors():
    q = [("t", "p", [("a", 5), ("b", 4), ("c", 3), ("d", 2), ("p", 1), ("e", 0)])]
    assert geco.mrr_metric(q) == 0.2
    assert geco.auc_metric([("t", "p", [("p", 0.5), ("n", 0.5)])]) == 0.0
    with pytest.raises(geco.MetricError):
        geco.auc_metric([])


def test_hashes_and_seeds():
    assert geco.sha256_hex("abc") == "ba7816bf8f01cfea414140de5dae2223b00361a396177a9cb410ff61f20015ad"
    assert geco.derive_seed(7, "synth") == 0x10F4BE95E10954FA
    assert 0.0 <= geco.random_score(1, "t", "b") < 1.0


def test_config_round_trip_and_validation():
    base = geco.config()
    assert base["geco"]["train"]["lr"] == 1e-4
    toy = geco.config("toy", seed=5)
    assert toy["seed"] == 5
    assert geco.config_hash(toy) != geco.config_hash(base)
    assert geco.config_hash(json.loads(json.dumps(toy))) == geco.config_hash(toy)
    with pytest.raises(geco.ConfigError) as err:
        geco.config(geco={"train": {"lr": -1.0}, "weights": {"tau": 0.0}})
    assert "geco.train.lr" in str(err.value) and "geco.weights.tau" in str(err.value)


def test_synth_and_random_evaluation(tmp_path):
    cfg = geco.config("toy", dataset={"synth_pairs": 40, "synth_image_size": 16})
    manifest, digest = geco.synth_data(cfg, tmp_path / "data")
    again, digest2 = geco.synth_data(cfg, tmp_path / "data2")
    assert digest == digest2
    summary = geco.manifest_summary(manifest)
    assert summary["pairs"] == 40 and summary["digest"] == digest
    rep = geco.evaluate(cfg, manifest, tmp_path / "eval")
    assert rep["scorer"] == "random" and rep["n_queries"] == 6
    assert 0.0 <= rep["auc"] <= 1.0 and 0.0 < rep["mrr"] <= 1.0
