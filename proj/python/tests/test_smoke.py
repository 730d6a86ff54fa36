import json
import os
import subprocess

import numpy as np
import pytest

import meunet


def test_phantom_is_seeded_and_imbalanced():
    img, lab = meunet.phantom(seed=42, dims=(48, 48, 48))
    assert img.dtype == np.float32 and lab.dtype == np.uint8
    assert img.shape == lab.shape == (48, 48, 48)
    counts = np.bincount(lab.ravel(), minlength=3)
    assert counts[2] < 0.2 * counts[1]
    img2, lab2 = meunet.phantom(seed=42, dims=(48, 48, 48))
    assert np.array_equal(img, img2) and np.array_equal(lab, lab2)
    assert not np.array_equal(lab, meunet.phantom(seed=43, dims=(48, 48, 48))[1])


def test_class_weights_and_dice_example():
    w = meunet.class_weights([10, 10])
    assert w == pytest.approx([0.5, 0.5])
    probs = np.array([[[0.8, 0.2], [0.2, 0.8]]])
    one_hot = np.array([[[1.0, 0.0], [0.0, 1.0]]])
    assert meunet.soft_dice_loss(probs, one_hot) == pytest.approx(0.2, abs=1e-4)


def test_combined_loss_gradient_matches_finite_differences():
    rng = np.random.default_rng(0)
    logits = rng.normal(size=(1, 3, 2, 2, 2))
    labels = rng.integers(0, 3, size=(1, 2, 2, 2)).astype(np.uint8)
    w = [0.2, 0.3, 0.5]
    loss, grad = meunet.combined_loss(logits, labels, w)
    assert grad.shape == logits.shape
    h = 1e-6
    for idx in [(0, 0, 0, 0, 0), (0, 1, 1, 0, 1), (0, 2, 1, 1, 1)]:
        up, down = logits.copy(), logits.copy()
        up[idx] += h
        down[idx] -= h
        fd = (meunet.combined_loss(up, labels, w)[0] - meunet.combined_loss(down, labels, w)[0]) / (2 * h)
        assert grad[idx] == pytest.approx(fd, rel=1e-5, abs=1e-8)


def test_net_forward_predict_and_checkpoint(tmp_path):
    net = meunet.Net("desk_meunet", seed=1)
    assert net.parameter_count > 0
    x = np.random.default_rng(1).normal(size=(1, 1, 16, 16, 16))
    y = net.forward(x, train=True)
    assert y.shape == (1, 3, 16, 16, 16)
    std, exp = net.forward_dual(x, np.zeros((1, 1, 24, 24, 24)))
    assert std.shape == (1, 3, 16, 16, 16) and exp.shape == (1, 3, 12, 12, 12)

    net.save(tmp_path / "ckpt")
    back = meunet.Net.load(tmp_path / "ckpt")
    assert np.array_equal(back.forward(x), back.forward(x))
    assert np.array_equal(meunet.Net.load(tmp_path / "ckpt").forward(x), back.forward(x))

    vol = meunet.phantom(seed=3, dims=(32, 32, 32))[0]
    probs, labels = back.predict(vol, 16, 8)
    assert probs.shape == (3, 32, 32, 32) and labels.shape == (32, 32, 32)
    assert np.allclose(probs.sum(axis=0), 1.0, atol=1e-9)
    assert np.array_equal(labels, probs.argmax(axis=0))


def test_errors_are_typed():
    with pytest.raises(meunet.ConfigError):
        meunet.Net('{"levels": 1}')
    with pytest.raises(meunet.ShapeError):
        meunet.ensemble(np.zeros((2, 2, 2, 2)), np.zeros((3, 2, 2, 2)))
    with pytest.raises(meunet.DataError):
        meunet.read_volume("/nonexistent/volume.vol")


def test_volume_round_trip(tmp_path):
    img, lab = meunet.phantom(seed=5, dims=(32, 32, 32))
    meunet.write_volume(tmp_path / "img.vol", img)
    meunet.write_volume(tmp_path / "lab.vol", lab)
    assert np.array_equal(meunet.read_volume(tmp_path / "img.vol"), img)
    assert np.array_equal(meunet.read_volume(tmp_path / "lab.vol"), lab)
    assert meunet.dice(lab, lab, 2) == 1.0


def test_ledger_ratios():
    base = {"net": "paper_meunet", "P": 160, "N": 4, "mixed_precision": True, "checkpointing": True}
    k1, k15 = dict(base, E=160), dict(base, E=240)
    r = meunet.ledger_compare(k15, k1)["ratio"]
    assert 0.99 <= r <= 1.49
    est = meunet.ledger_estimate(k1)
    assert est["grand_total"] == sum(row["act_bytes"] + row["grad_bytes"] for row in est["rows"])
    assert meunet.split_cases(6, 1)[0] == meunet.split_cases(6, 1)[0]
    assert meunet.expanded_edge(160, 1.75, 5) == 288


cli = os.environ.get("MEUNET_CLI")


@pytest.mark.skipif(not cli, reason="MEUNET_CLI not set")
def test_cli(tmp_path):
    out = subprocess.run([cli, "phantom", "--seed", "4", "--dims", "32", "--count", "2", "--out-dir", str(tmp_path / "d")],
                         capture_output=True, text=True)
    assert out.returncode == 0, out.stderr
    idx = json.loads((tmp_path / "d" / "cases.json").read_text())
    assert idx["cases"] == ["case000", "case001"]

    truth = tmp_path / "d" / "case000" / "labels.vol"
    out = subprocess.run([cli, "eval", "--pred", str(truth), "--truth", str(truth)], capture_output=True, text=True)
    assert out.returncode == 0
    assert out.stdout.splitlines() == ["class,dice", "0,1.000000", "1,1.000000", "2,1.000000"]

    cfg = tmp_path / "m.json"
    cfg.write_text(json.dumps({"net": "desk_meunet", "P": 32, "E": 48}))
    out = subprocess.run([cli, "memreport", "--config", str(cfg), "--json"], capture_output=True, text=True)
    assert out.returncode == 0
    assert json.loads(out.stdout)["grand_total"] > 0

    bad = tmp_path / "bad.json"
    bad.write_text(json.dumps({"P": 12}))
    assert subprocess.run([cli, "memreport", "--config", str(bad)], capture_output=True).returncode == 2
    (tmp_path / "short.vol").write_bytes(b"\0" * 10)
    (tmp_path / "short.vol.json").write_text((tmp_path / "d" / "case000" / "labels.vol.json").read_text())
    code = subprocess.run([cli, "eval", "--pred", str(tmp_path / "short.vol"), "--truth", str(truth)],
                          capture_output=True).returncode
    assert code == 3
