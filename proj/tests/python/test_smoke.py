import numpy as np
import pytest

import mmfusion


def test_mfb_core_matches_full_bilinear():
    rng = np.random.default_rng(0)
    C, M, k, o = 5, 3, 2, 4
    U = rng.normal(size=(C, k * o))
    V = rng.normal(size=(M, k * o))
    l = rng.normal(size=(2, C))
    a = rng.normal(size=(2, M))
    W = [U[:, i * k:(i + 1) * k] @ V[:, i * k:(i + 1) * k].T for i in range(o)]
    got = mmfusion.mfb_core(l, a, U, V, k, o)
    np.testing.assert_allclose(got, mmfusion.bilinear_full(l, a, W), atol=1e-12)
    expected = np.stack([[l[b] @ W[i] @ a[b] for i in range(o)] for b in range(2)])
    np.testing.assert_allclose(got, expected, atol=1e-12)


def test_mfb_forward_rows_are_normalized():
    rng = np.random.default_rng(1)
    U = rng.normal(size=(4, 12))
    V = rng.normal(size=(3, 12))
    f = mmfusion.mfb_forward(rng.normal(size=(6, 4)), rng.normal(size=(6, 3)), U, V, 3, 4)
    assert f.shape == (6, 4)
    assert np.all(f >= 0)
    norms = np.linalg.norm(f, axis=1)
    assert np.all((norms < 1e-12) | (np.abs(norms - 1) < 1e-6))


def test_avgpool_and_netvlad():
    np.testing.assert_array_equal(mmfusion.avgpool(np.array([[1.0, 3.0], [3.0, 5.0]])), [[2.0, 4.0]])
    rng = np.random.default_rng(2)
    frames = rng.normal(size=(5, 3))
    W, b, c = rng.normal(size=(3, 2)), rng.normal(size=(1, 2)), rng.normal(size=(2, 3))
    alpha = mmfusion.netvlad_assign(frames, W, b)
    np.testing.assert_allclose(alpha.sum(axis=1), 1.0, atol=1e-12)
    logits = frames @ W + b
    soft = np.exp(logits - logits.max(axis=1, keepdims=True))
    soft /= soft.sum(axis=1, keepdims=True)
    expected = np.concatenate([(soft[:, [k]] * (frames - c[k])).sum(axis=0) for k in range(2)])
    np.testing.assert_allclose(mmfusion.netvlad(frames, W, b, c)[0], expected, atol=1e-12)


def test_moe_single_expert_is_logistic():
    rng = np.random.default_rng(3)
    f = rng.normal(size=(3, 4))
    We = rng.normal(size=(4, 5))
    d = mmfusion.moe_forward(f, np.zeros((4, 5)), We, 1)
    np.testing.assert_allclose(d, 1 / (1 + np.exp(-(f @ We))), atol=1e-12)


def test_gap_and_loss_examples():
    assert mmfusion.gap_at_k(np.array([[0.9, 0.8]]), [[1]]) == 0.5
    assert mmfusion.gap_at_k(np.array([[0.9, 0.1]]), [[0]]) == 1.0
    loss, grad = mmfusion.bce_loss(np.full((1, 3), 0.5), np.array([[1.0, 0.0, 1.0]]))
    assert loss == pytest.approx(3 * np.log(2))
    assert grad.shape == (1, 3)
    with pytest.raises(mmfusion.NumericError):
        mmfusion.gap_at_k(np.array([[0.3]]), [[]])


def test_shape_errors_surface_as_value_errors():
    with pytest.raises(ValueError):
        mmfusion.mfb_core(np.zeros((1, 3)), np.zeros((1, 2)), np.zeros((4, 4)), np.zeros((2, 4)), 2, 2)


def test_synthetic_round_trip(tmp_path):
    spec = {"synth.videos": "12", "synth.classes": "4", "synth.visual_dim": "6", "synth.audio_dim": "3"}
    ds = mmfusion.generate_synthetic(spec)
    assert len(ds["records"]) == 12
    path = str(tmp_path / "d.mmfv")
    mmfusion.write_synthetic(path, spec)
    back = mmfusion.read_dataset(path)
    assert back["classes"] == 4
    for x, y in zip(ds["records"], back["records"]):
        assert x["labels"] == y["labels"]
        np.testing.assert_allclose(x["visual"], y["visual"], rtol=1e-6, atol=1e-6)


def test_train_and_evaluate_through_cli(tmp_path):
    synth = tmp_path / "synth.cfg"
    synth.write_text("synth.videos = 40\nsynth.val_count = 10\nsynth.classes = 4\n"
                     "synth.visual_dim = 6\nsynth.audio_dim = 3\n")
    cfg = tmp_path / "train.cfg"
    cfg.write_text("fusion.o = 8\nfusion.k = 2\nagg.frames = 8\ntrain.batch_size = 4\n"
                   "train.max_steps = 10\ntrain.eval_every = 5\n")
    tr, va, ck = (str(tmp_path / n) for n in ("tr.mmfv", "va.mmfv", "m.ckpt"))
    code, _, err = mmfusion.run_cli(["gen", "--spec", str(synth), "--train-out", tr, "--val-out", va])
    assert code == 0, err
    code, out, err = mmfusion.run_cli(["train", "--config", str(cfg), "--data", tr, "--val", va, "--out", ck])
    assert code == 0, err
    assert len(out.splitlines()) == 2
    gap, loss = mmfusion.evaluate_checkpoint(ck, va)
    assert 0.0 <= gap <= 1.0 and loss > 0.0


def test_gradcheck_suite_passes():
    results = mmfusion.gradcheck(seed=3, seeds=1)
    assert {r["op"] for r in results} >= {"mfb", "netvlad", "moe", "bce_loss"}
    assert all(r["passed"] for r in results)
