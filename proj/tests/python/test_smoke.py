import itertools

import numpy as np
import pytest

import s4ecg


def test_version():
    assert s4ecg.__version__.count(".") == 2


def test_hippo_closed_form():
    a = s4ecg.hippo_legs_dense(4)
    for i, j in itertools.product(range(4), repeat=2):
        if i > j:
            expect = -np.sqrt(2 * i + 1) * np.sqrt(2 * j + 1)
        elif i == j:
            expect = -(i + 1)
        else:
            expect = 0.0
        assert a[i, j] == pytest.approx(expect)


def test_kernels_and_recurrence_agree():
    p = s4ecg.init_diagonal_from_hippo(8, 2, seed=3)
    for ch in range(2):
        naive = s4ecg.kernel_naive(p, ch, 250)
        fast = s4ecg.kernel_fft(p, ch, 250)
        np.testing.assert_allclose(fast, naive, atol=1e-10)
        impulse = np.zeros(250)
        impulse[0] = 1.0
        y = s4ecg.run_recurrent(p, ch, impulse)
        np.testing.assert_allclose(y[1:], naive[1:], atol=1e-12)


def test_rescale_round_trip():
    p = s4ecg.init_diagonal_from_hippo(4, 3, seed=1)
    q = s4ecg.rescale_step(s4ecg.rescale_step(p, 100, 500), 500, 100)
    assert q == p
    assert s4ecg.rescale_step(p, 100, 500).delta(0) == pytest.approx(p.delta(0) / 5)


def test_auc_against_pair_count():
    rng = np.random.default_rng(0)
    s = rng.integers(0, 5, 40) / 4.0
    y = rng.integers(0, 2, 40).astype(np.uint8)
    pos, neg = s[y == 1], s[y == 0]
    expect = np.mean([(a > b) + 0.5 * (a == b) for a in pos for b in neg])
    assert s4ecg.auc(s, y) == pytest.approx(expect, abs=1e-15)
    assert s4ecg.auc(s, np.ones(40, np.uint8)) is None


def test_macro_auc_skips_single_class_labels():
    scores = np.array([[0.1, 0.9], [0.8, 0.2], [0.3, 0.5]])
    labels = np.array([[0, 1], [1, 1], [0, 1]], np.uint8)
    value, per_label = s4ecg.macro_auc(scores, labels)
    assert value == 1.0
    assert per_label == [1.0, None]


def test_tta_starts_cover():
    for samples, window in [(1000, 250), (250, 250), (100, 250), (1001, 37)]:
        starts = s4ecg.tta_starts(samples, window, 10)
        covered = np.zeros(samples, bool)
        for st in starts:
            covered[st : st + window] = True
        assert covered.all()


def test_bootstrap_and_decide():
    rng = np.random.default_rng(4)
    y = rng.integers(0, 2, (150, 2)).astype(np.uint8)
    noise = rng.random((150, 2))
    good = 0.5 * y + 0.5 * noise
    res = s4ecg.bootstrap_compare(good, noise, y, n_iter=300, seed=2)
    assert res["verdict"] == "A_better" and res["lo"] > 0
    same = s4ecg.bootstrap_compare(good, good, y, n_iter=100)
    assert same["verdict"] == "inconclusive"
    assert s4ecg.decide(0.6, 0.1) == "A_better"
    assert s4ecg.decide(0.5, 0.1) == "inconclusive"
    with pytest.raises(ValueError):
        s4ecg.decide(0.5, 0.1, threshold=0.3)


def test_synthetic_filter_and_folds():
    cfg = s4ecg.SyntheticConfig()
    cfg.n_records, cfg.channels, cfg.duration_s = 200, 2, 2.0
    records = s4ecg.generate_synthetic(cfg)
    assert len(records) == 200
    assert records[0].signal.shape == (2, 200)
    assert s4ecg.generate_synthetic(cfg, rate_hz=250)[0].signal.shape == (2, 500)
    vocab, records = s4ecg.filter_rare_labels(records, 10)
    folds = s4ecg.stratified_folds(records, vocab, 5, 0)
    for f in range(5):
        seen = {l for r, fo in zip(records, folds.fold_of) if fo == f for l in r.labels}
        assert seen == set(vocab.labels)


def test_model_train_predict_checkpoint(tmp_path):
    cfg = s4ecg.SyntheticConfig()
    cfg.n_records, cfg.channels, cfg.duration_s, cfg.n_labels = 60, 2, 2.0, 2
    records = s4ecg.generate_synthetic(cfg)
    vocab, records = s4ecg.filter_rare_labels(records, 1)

    mc = s4ecg.ModelConfig()
    mc.in_channels, mc.width, mc.n_blocks, mc.state_dim = 2, 8, 1, 4
    mc.n_labels, mc.input_window_s = len(vocab), 1.0
    m = s4ecg.build_model(mc, seed=5)
    hyper = s4ecg.TrainHyper()
    hyper.epochs, hyper.batch = 2, 16
    losses = m.train(records, vocab, hyper)
    assert len(losses) == 2 and all(np.isfinite(losses))

    x = np.random.default_rng(1).normal(size=(3, 2, 100))
    logits = m.predict_logits(x)
    assert logits.shape == (3, len(vocab))
    path = str(tmp_path / "m.ssmk")
    m.save(path)
    np.testing.assert_array_equal(s4ecg.load_checkpoint(path).predict_logits(x), logits)

    p = m.predict_proba(records[0])
    assert p.shape == (len(vocab),) and ((p > 0) & (p < 1)).all()
    fast = m.rescaled(100, 200)
    assert fast.sample_rate_hz == 200

    with pytest.raises(ValueError):
        m.predict_logits(np.zeros((1, 3, 100)))
    with pytest.raises(ValueError):
        s4ecg.load_checkpoint(str(tmp_path / "absent.ssmk"))


def test_run_config_and_rate_matrix():
    c = s4ecg.RunConfig()
    for k, v in {
        "data.n_records": "60", "data.channels": "2", "data.duration_s": "3", "data.min_count": "2",
        "data.k_folds": "3", "model.width": "4", "model.n_blocks": "1", "model.state_dim": "2",
        "model.input_window_s": "1", "train.epochs": "1", "eval.n_crops": "2",
        "experiment.seeds": "0", "experiment.test_rates": "100,300",
    }.items():
        c.set(k, v)
    with pytest.raises(ValueError):
        c.set("model.depth", "2")
    csv = s4ecg.rate_matrix_csv(c)
    lines = csv.strip().split("\n")
    assert lines[0].startswith("train_rate_hz,test_rate_hz,mean_macro_auc")
    assert len(lines) == 3
    assert csv == s4ecg.rate_matrix_csv(c)
