import numpy as np
import pytest

import recl

CONFIG = """
dataset = blobs
scenario = CIL
strategy = finetune
n_tasks = 2
n_per_class = 15
hidden = 12
first_layer_scale = 0.1
epochs = 2
lr = 0.05
blob_classes = 4
blob_dim = 5
blob_test_per_class = 5
seeds = 0
"""


def loop_forward(params, x):
    h = np.asarray(x, dtype=float)
    for i, w in enumerate(params):
        h = w @ h
        if i + 1 < len(params):
            h = np.maximum(h, 0.0)
    return h


def test_forward_matches_numpy_and_is_homogeneous():
    params = recl.init_mlp([3, 8, 6, 2], seed=1, first_layer_scale=1.0)
    assert [p.shape for p in params] == [(8, 3), (6, 8), (2, 6)]
    x = np.array([0.3, -1.2, 0.7])
    out = recl.forward(params, x)
    np.testing.assert_allclose(out, loop_forward(params, x), rtol=1e-12)
    scaled = recl.forward([2.0 * p for p in params], x)
    np.testing.assert_allclose(scaled, 8.0 * out, rtol=1e-5)


def test_reference_loss_values():
    assert recl.loss_prior(np.array([0.5, -0.5])) == 0.0
    assert recl.loss_prior(np.array([1.5])) == pytest.approx(0.5)
    assert recl.loss_prior(np.array([-2.0, 0.3])) == pytest.approx(1.0)
    assert recl.loss_lambda(np.array([0.5, 0.05]), 0.1) == pytest.approx(-0.15)
    acc, bwt = recl.acc_bwt(np.array([[0.99, 0.0], [0.80, 0.95]]))
    assert acc == pytest.approx(0.875)
    assert bwt == pytest.approx(-0.19)


def test_rec_loss_with_zero_lambdas_is_parameter_norm():
    params = recl.init_mlp([4, 5, 3], seed=2, first_layer_scale=1.0)
    xs = np.random.default_rng(0).normal(size=(3, 4))
    terms = recl.loss_full(params, xs, np.zeros((3, 2)), np.array([0, 1, 2]))
    assert terms["rec"] == pytest.approx(sum(float((p * p).sum()) for p in params), rel=1e-12)
    assert terms["full"] == pytest.approx(terms["rec"] + terms["lambda"] + terms["prior"])


def test_reconstruct_shapes_and_trajectory():
    params = recl.init_mlp([2, 16, 2], seed=3, first_layer_scale=1.0)
    r = recl.reconstruct(params, m=6, classes=[0, 1], seed=1, n_rec=20)
    assert r["xs"].shape == (6, 2)
    assert r["lambdas"].shape == (6, 1)
    assert len(r["trajectory"]) == 21
    assert r["trajectory"][-1]["full"] < r["trajectory"][0]["full"]


def test_ssim_and_matching():
    a = np.linspace(0.0, 1.0, 16)
    assert recl.ssim(a, a) == pytest.approx(1.0, abs=1e-12)
    refs = np.array([[0.0], [2.0]])
    assert recl.match_nearest(refs, np.array([[2.0], [0.0]])) == [1, 0]
    with pytest.raises(ValueError):
        recl.ssim(a, a[:3])


def test_checkpoint_round_trip(tmp_path):
    params = recl.init_mlp([3, 4, 2], seed=5)
    recl.save_checkpoint(tmp_path / "m.ckpt", params)
    back = recl.load_checkpoint(tmp_path / "m.ckpt")
    for p, q in zip(params, back):
        np.testing.assert_array_equal(p, q)


def test_config_errors():
    with pytest.raises(recl.ConfigError, match="unsupported strategy"):
        recl.parse_config("dataset = blobs\nscenario = CIL\nstrategy = gpm\n")
    with pytest.raises(recl.ConfigError, match="line 2"):
        recl.parse_config("dataset = blobs\nbogus = 1\n")
    canonical = recl.parse_config(CONFIG)
    assert recl.parse_config(canonical) == canonical
    assert len(recl.config_fingerprint(CONFIG)) == 16


def test_run_experiment_is_deterministic():
    a = recl.run_experiment(CONFIG)
    b = recl.run_experiment(CONFIG)
    assert a["failed_seeds"] == []
    a.pop("runtime")
    b.pop("runtime")
    assert a == b
    assert 0.0 <= a["acc"]["mean"] <= 100.0
