import numpy as np
import pytest
from sklearn.base import clone

from vidphase import frameclf
from vidphase.frameclf import FrameClassifier, MlpModel, TrainConfig, UnsatisfiableBalanceError


def blobs(seed=0, n=2000, sep=4.0, flip=0.0):
    """Two unit-variance Gaussian blobs whose centers differ by ``sep`` sigma along each axis."""
    rng = np.random.default_rng(seed)
    y = np.repeat([1, 2], n // 2)
    X = rng.normal(size=(n, 2))
    X[y == 2] += sep
    noisy = y.copy()
    flipped = rng.random(n) < flip
    noisy[flipped] = 3 - noisy[flipped]
    return X, y, noisy


def random_model(rng, dims):
    m = frameclf.init_model(dims, int(rng.integers(1 << 30)))
    for b in m.biases:
        b += rng.normal(scale=0.1, size=b.shape).astype(np.float32)
    return m


def finite_difference_check(model, X, y_idx, dtype, h):
    loss, gw, gb = frameclf.loss_and_grads(model, X, y_idx, dtype)
    analytic = np.concatenate([g.ravel() for pair in zip(gw, gb) for g in pair])
    m = model.astype(dtype)
    numeric = []
    for p in m.params():
        for i in range(p.size):
            old = p.flat[i]
            p.flat[i] = old + h
            lp = frameclf.loss_and_grads(m, X, y_idx, dtype)[0]
            p.flat[i] = old - h
            lm = frameclf.loss_and_grads(m, X, y_idx, dtype)[0]
            p.flat[i] = old
            numeric.append((lp - lm) / (2 * h))
    numeric = np.array(numeric)
    return np.abs(analytic - numeric).max() / max(np.abs(analytic).max(), np.abs(numeric).max())


def test_init_determinism_and_count():
    a = frameclf.init_model([26, 16, 2], seed=3)
    b = frameclf.init_model([26, 16, 2], seed=3)
    c = frameclf.init_model([26, 16, 2], seed=4)
    assert all(np.array_equal(p, q) for p, q in zip(a.params(), b.params()))
    assert not all(np.array_equal(p, q) for p, q in zip(a.params(), c.params()))
    assert a.n_params == 26 * 16 + 16 + 16 * 2 + 2 == 466
    assert all(p.dtype == np.float32 for p in a.params())
    limit = np.sqrt(6 / (26 + 16))
    assert np.abs(a.weights[0]).max() <= limit
    assert not any(b.any() for b in a.biases)


def test_gradient_check_32bit_parameters():
    # float32-stored parameters, derivatives compared in float64 arithmetic
    rng = np.random.default_rng(1)
    for _ in range(10):
        dims = [int(rng.integers(2, 6)), int(rng.integers(2, 6)), 2]
        model = random_model(rng, dims)
        X = rng.normal(size=(7, dims[0]))
        y = rng.integers(0, 2, 7)
        assert finite_difference_check(model, X, y, np.float64, 1e-6) <= 1e-3


def test_gradient_check_64bit_parameters():
    rng = np.random.default_rng(0)
    for _ in range(10):
        dims = [int(rng.integers(2, 6)), int(rng.integers(2, 6)), 2]
        model = random_model(rng, dims).astype(np.float64)
        for p in model.params():
            p += rng.normal(scale=1e-3, size=p.shape)
        X = rng.normal(size=(7, dims[0]))
        y = rng.integers(0, 2, 7)
        assert finite_difference_check(model, X, y, np.float64, 1e-6) <= 1e-6


def test_logistic_regression_loss_is_non_increasing():
    rng = np.random.default_rng(2)
    X = rng.normal(size=(200, 26))
    y = np.where(X[:, 0] + 0.5 * rng.normal(size=200) > 0, 2, 1)
    cfg = TrainConfig(learning_rate=0.1, momentum=0.0, batch_size=1000, epochs=40, hidden=0)
    model, history = frameclf.train_model(X, y, cfg)
    assert model.dims == [26, 2]
    assert np.all(np.diff(history) <= 1e-12)


def test_balanced_sample_counts():
    rng = np.random.default_rng(0)
    y = np.array([0] * 30 + [1] * 7)
    idx = frameclf.balanced_sample(y, 5, rng)
    assert np.bincount(y[idx]).tolist() == [5, 5]
    assert len(set(idx.tolist())) == 10
    idx = frameclf.balanced_sample(y, 50, rng)
    assert np.bincount(y[idx]).tolist() == [7, 7]


def test_missing_class_is_unsatisfiable():
    X = np.zeros((5, 3))
    with pytest.raises(UnsatisfiableBalanceError):
        FrameClassifier().fit(X, np.ones(5, int))


def test_clean_blobs():
    X, y, _ = blobs()
    clf = FrameClassifier(samples_per_class=1000).fit(X, y)
    assert (clf.predict(X) == y).mean() >= 0.98
    assert clf.predict_proba(np.zeros((1, 2)))[0, 0] >= 0.9


def test_noisy_blobs_against_clean_truth():
    X, y, noisy = blobs(flip=0.2)
    clf = FrameClassifier(samples_per_class=1000).fit(X, noisy)
    assert (clf.predict(X) == y).mean() >= 0.95
    assert clf.train_accuracy_ < 0.9  # the weak labels themselves are wrong 20% of the time


def test_no_signal_is_chance():
    rng = np.random.default_rng(3)
    X = rng.normal(size=(2000, 2))
    y = rng.integers(1, 3, 2000)
    clf = FrameClassifier(samples_per_class=1000).fit(X, y)
    X_test = rng.normal(size=(4000, 2))
    y_test = rng.integers(1, 3, 4000)
    assert abs((clf.predict(X_test) == y_test).mean() - 0.5) <= 0.05


def test_training_is_deterministic():
    X, _, noisy = blobs(flip=0.2, n=400)
    a = FrameClassifier(epochs=3, seed=5).fit(X, noisy).model_
    b = FrameClassifier(epochs=3, seed=5).fit(X, noisy).model_
    assert all(np.array_equal(p, q) for p, q in zip(a.params(), b.params()))


def test_probabilities_sum_to_one():
    rng = np.random.default_rng(4)
    model = random_model(rng, [26, 16, 2])
    p = frameclf.predict_proba(model, rng.normal(size=(50, 26)) * 10)
    assert np.all((p >= 0) & (p <= 1))
    np.testing.assert_allclose(p.sum(axis=1), 1.0, atol=1e-6)


def test_zero_model_is_uniform():
    model = frameclf.init_model([26, 16, 2])
    for w in model.weights:
        w[:] = 0
    np.testing.assert_array_equal(frameclf.predict_proba(model, np.ones(26)), [0.5, 0.5])


def test_embedding_properties():
    rng = np.random.default_rng(5)
    model = random_model(rng, [26, 16, 2])
    zero = frameclf.init_model([26, 16, 2], seed=1)
    assert not frameclf.embed(zero, np.zeros(26)).any()
    X = rng.normal(size=(20, 26))
    e = frameclf.embed(model, X)
    assert e.shape == (20, 16) and e.min() >= 0
    logits = e @ model.weights[1].astype(np.float64) + model.biases[1]
    p = np.exp(logits - logits.max(axis=1, keepdims=True))
    p /= p.sum(axis=1, keepdims=True)
    np.testing.assert_allclose(p, frameclf.predict_proba(model, X), atol=1e-6)
    with pytest.raises(ValueError):
        frameclf.embed(frameclf.init_model([26, 2]), X)


def test_model_directory_roundtrip(tmp_path):
    model = frameclf.init_model([26, 16, 2], seed=9)
    model.save(tmp_path / "m")
    manifest = (tmp_path / "m" / "manifest.txt").read_text()
    assert "dims = 26 16 2" in manifest and "activations = relu softmax" in manifest
    assert len(list((tmp_path / "m").glob("*.ptns"))) == 4
    loaded = MlpModel.load(tmp_path / "m")
    assert loaded.dims == [26, 16, 2]
    assert all(np.array_equal(p, q) for p, q in zip(model.params(), loaded.params()))


def test_estimator_api():
    X, y, _ = blobs(n=200)
    clf = FrameClassifier(hidden=8, epochs=2)
    assert clone(clf).get_params() == clf.get_params()
    clf.fit(X, y)
    assert clf.transform(X).shape == (200, 8)
    assert clf.classes_.tolist() == [1, 2]
    again = FrameClassifier.from_model(clf.model_)
    np.testing.assert_array_equal(again.predict(X), clf.predict(X))
    with pytest.raises(ValueError):
        clf.predict(np.zeros((3, 5)))


def test_train_pools_videos():
    X, y, _ = blobs(n=300)
    clf = frameclf.train([X[:100], X[100:]], [y[:100], y[100:]], TrainConfig(epochs=2, samples_per_class=50))
    assert clf.n_features_in_ == 2
    with pytest.raises(ValueError):
        TrainConfig(learning_rate=0)
    with pytest.raises(ValueError):
        TrainConfig(samples_per_class=0)
