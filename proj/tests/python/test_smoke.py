import math

import pytest

import recurseq


def small_config():
    c = recurseq.ModelConfig()
    c.N, c.d, c.K, c.r = 2, 8, 4, 1
    return c


def test_tokenize_and_pad_round_trip():
    ids = recurseq.tokenize_bytes("abc")
    assert ids == [97, 98, 99, 257]
    slots, positions = recurseq.balanced_pad(ids, 4)
    assert len(slots) == 16
    assert positions == [0, 4, 8, 12]
    assert recurseq.unpad(slots, positions) == ids


def test_nearest_pow2_and_words():
    assert recurseq.nearest_pow2(5) == 3
    assert recurseq.tokenize_words("Hello, World!") == ["hello", ",", "world", "!"]


def test_uncalibrated_batch_norm_refuses_inference():
    m = recurseq.Autoencoder(small_config(), seed=3)
    with pytest.raises(RuntimeError):
        m.reconstruct(["abc"])
    assert len(m.reconstruct(["abc"], phase="batch")) == 1


def test_param_count_matches_model():
    c = small_config()
    m = recurseq.Autoencoder(c, seed=3)
    assert m.parameter_count() == recurseq.param_count(c)


def test_train_calibrate_reconstruct(tmp_path):
    c = small_config()
    m = recurseq.Autoencoder(c, seed=3)
    t = recurseq.TrainConfig()
    t.epochs, t.samples_per_epoch, t.batch_size, t.max_len = 2, 128, 16, 16
    history = m.train_random(t)
    assert [h["epoch"] for h in history] == [1, 2]
    assert all(math.isfinite(h["loss"]) for h in history)

    texts = ["hello", "abc", "xyz123"]
    m.calibrate(texts * 8)
    out = m.reconstruct(texts)
    assert len(out) == 3
    latent = m.encode(texts)
    assert len(latent[0]) == c.d * 2 ** c.r

    path = tmp_path / "m.ckpt"
    m.save(path)
    loaded = recurseq.load_autoencoder(path)
    assert loaded.reconstruct(texts) == out
    assert loaded.encode(texts) == latent

    rows = loaded.attribution_matrix("hi", steps=5)
    assert len(rows) == 16 and len(rows[0]) == 16


def test_retrieval_index():
    vecs = {"a": [1.0, 0.0], "b": [0.0, 1.0], "c": [1.0, 1.0]}
    index = recurseq.QuoteIndex(["a", "b", "c"], lambda s: vecs[s])
    assert len(index) == 3
    hits = index.knn([2.0, 0.1], 2)
    assert hits[0][0] == 0 and hits[0][2] == "a"
    assert recurseq.cosine([1.0, 0.0], [3.0, 0.0]) == pytest.approx(1.0)
    with pytest.raises(recurseq.DataError):
        recurseq.cosine([0.0, 0.0], [1.0, 0.0])


def test_cli_usage_error():
    code, out, err = recurseq.run_cli(["train"])
    assert code == 1
    assert err
