import json
import math

import numpy as np
import pytest

import jnf

TINY = {
    "data.n_train": "200",
    "data.n_test": "100",
    "joint.epochs": "1",
    "flows.epochs": "1",
    "flows.made_hidden": "16,16",
    "proj.epochs": "1",
    "proj.hidden": "32",
    "eval.n_conditional": "50",
    "eval.n_joint": "50",
    "eval.classifier_n": "2000",
    "hmc.steps": "5",
}


def test_config_defaults_and_unknown_key():
    d = jnf.config_defaults()
    assert d["joint.beta"] == "1"
    assert d["hmc.steps"] == "100"
    with pytest.raises(jnf.ConfigError):
        jnf.config_text({"joint.nope": "1"})


def test_dataset_balanced_and_binary():
    d = jnf.generate_dataset(10, 3)
    assert d["square"].shape == (10, 1024)
    assert set(np.unique(d["circle"])) <= {0.0, 1.0}
    assert sorted(d["label"]) == [0] * 5 + [1] * 5


def test_kl_closed_form():
    kl = jnf.kl_diag_gaussians(np.zeros((1, 1)), np.zeros((1, 1)), np.ones((1, 1)), np.zeros((1, 1)))
    assert kl.ravel()[0] == 0.5


def test_frechet_diagonal_example():
    rng = np.random.default_rng(0)
    a = rng.standard_normal((20000, 2))
    assert jnf.frechet_distance(a, a) == pytest.approx(0.0, abs=1e-8)


def test_infonce_identical_embeddings():
    e = np.tile([0.3, -1.2, 2.0], (4, 1))
    assert jnf.infonce_loss([e, e]) == pytest.approx(2 * 4 * math.log(4), abs=1e-9)


def test_hmc_gaussian_product_moments():
    r = jnf.hmc_gaussian_product([([1.0], [0.0]), ([-1.0], [0.0])], 2000, seed=1)
    z = r["samples"].ravel()
    # Product of N(1,1) and N(-1,1) over one N(0,1): precision 1, mean 0.
    assert abs(z.mean()) < 4 / math.sqrt(2000)
    assert abs(z.var() - 1.0) < 0.15
    assert 0.0 < r["acceptance_rate"] <= 1.0


def test_full_pipeline(tmp_path):
    train, test = tmp_path / "train.txt", tmp_path / "test.txt"
    jnf.gen_data(train, config=TINY)
    jnf.gen_data(test, split="test", config=TINY)
    jm = jnf.train_joint(train, tmp_path / "joint.ckpt", config=TINY)
    assert jm["command"] == "train-joint"
    with pytest.raises(jnf.PipelineOrderError):
        jnf.train_flows(train, None, tmp_path / "flows.ckpt", config=TINY)
    jnf.train_flows(train, tmp_path / "joint.ckpt", tmp_path / "flows.ckpt", config=TINY)
    sm = jnf.sample(tmp_path / "joint.ckpt", tmp_path / "s.csv", ["square"], flows=tmp_path / "flows.ckpt",
                    data=test, n=8, config=TINY)
    assert sm["summary"]["route"] == "hmc"
    em = jnf.evaluate(tmp_path / "joint.ckpt", tmp_path / "flows.ckpt", test, tmp_path / "report.json", config=TINY)
    report = json.loads((tmp_path / "report.json").read_text())
    assert [d["direction"] for d in report["conditional"]] == ["square->circle", "circle->square"]
    assert all(0.0 <= d["coherence"] <= 1.0 for d in report["conditional"])
    assert report["checkpoint_hashes"]["joint"] == jnf.file_sha256(tmp_path / "joint.ckpt")
    assert em["outputs"]
    ck = jnf.load_checkpoint(tmp_path / "joint.ckpt")
    assert ck["meta"]["kind"] == "joint"
    assert all(np.isfinite(v).all() for v in ck["records"].values())
