import math

import numpy as np
import pytest

import iskd


def test_matmul_and_softmax():
    out = iskd.matmul(np.array([[1.0, 2.0], [3.0, 4.0]]), np.array([[5.0, 6.0], [7.0, 8.0]]))
    np.testing.assert_array_equal(out, [[19.0, 22.0], [43.0, 50.0]])
    p = iskd.softmax(np.array([0.0, 0.0]))
    np.testing.assert_allclose(p, [0.5, 0.5])


def test_losses_match_numpy():
    rng = np.random.default_rng(0)
    s = rng.normal(size=(4, 3))
    t = rng.normal(size=(4, 3))
    y = np.array([0, 2, 1, 1], dtype=np.int32)

    def log_softmax(z):
        z = z - z.max(axis=1, keepdims=True)
        return z - np.log(np.exp(z).sum(axis=1, keepdims=True))

    ce, grad = iskd.cross_entropy(s, y)
    assert ce == pytest.approx(-log_softmax(s)[np.arange(4), y].mean(), abs=1e-12)
    assert grad.shape == (4, 3)

    kl, _ = iskd.kl_distill(s, t)
    pt = np.exp(log_softmax(t))
    assert kl == pytest.approx((pt * (log_softmax(t) - log_softmax(s))).sum(axis=1).mean(), abs=1e-12)

    total, _ = iskd.kd_total(s, t, y, alpha=0.25)
    assert total == pytest.approx(0.75 * ce + 0.25 * kl, abs=1e-12)
    with pytest.raises(iskd.ConfigError, match="kd.alpha"):
        iskd.kd_total(s, t, y, alpha=1.5)


def test_fit_and_stop_rule():
    fit = iskd.linear_fit([1.0, 2.0, 3.0], [2.0, 4.0, 6.0])
    assert fit["slope"] == pytest.approx(2.0)
    assert fit["pearson_r"] == pytest.approx(1.0)
    gains = [91.54, 92.71, 92.99, 93.04, 93.08]
    decisions = [iskd.stop_decision(gains[: i + 1], 0.05, 6) for i in range(len(gains))]
    assert decisions == ["proceed", "proceed", "proceed", "proceed", "stop"]


def test_split_and_synthetic_data():
    train, test = iskd.split_indices_7_3(10, 3)
    assert len(train) == 7 and len(test) == 3
    assert sorted(train + test) == list(range(10))
    images, labels = iskd.synth_pothole(8, size=8, seed=1)
    assert images.shape == (8, 1, 8, 8)
    assert list(labels) == [0, 1] * 4


def test_network_checkpoint_round_trip(tmp_path):
    net = iskd.Network.preset("cnn-small", [1, 16, 16], 2, seed=3)
    assert net.param_count == 50978
    batch = np.random.default_rng(1).normal(size=(2, 1, 16, 16)).astype(np.float32)
    logits = net.predict(batch)
    path = str(tmp_path / "net.ckpt")
    net.save(path)
    again = iskd.Network.load(path)
    np.testing.assert_array_equal(again.predict(batch), logits)
    for name in net.param_names:
        np.testing.assert_array_equal(again.param(name), net.param(name))


def test_config_and_tiny_run(tmp_path):
    cfg = iskd.parse_config(overrides={
        "arch": "mlp-small", "dataset": "synth:n=100,size=8", "epochs": 1,
        "max_iterations": 2, "epsilon": 0.0,
    })
    assert cfg["optim"]["batch_size"] == 128
    report = iskd.run_iskd(cfg, str(tmp_path))
    assert report["kind"] == "iskd"
    assert 1 <= len(report["iterations"]) <= 2
    assert report["total_epochs"] == sum(it["epochs"] for it in report["iterations"])
    assert (tmp_path / "report.json").exists()
    assert all(math.isfinite(it["test_accuracy"]) for it in report["iterations"])
