import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from embal import _kernels
from embal.core import EmptyLabelSet, InvalidParam
from embal.data import EmbeddingStore
from embal.models import (
    CorruptCheckpoint,
    DegenerateBatchWarning,
    LinearProbe,
    ShallowNet,
    TrainConfig,
    grad_embedding_factors,
    init_model,
    load_checkpoint,
    loss_and_grad,
    save_checkpoint,
    softmax,
    train_supervised,
)
from embal.verify import _fd_grad


def test_predict_proba_hand_example():
    m = LinearProbe(np.zeros((2, 3)), np.array([np.log(2.0), 0.0]))
    np.testing.assert_allclose(m.predict_proba(np.zeros(3)), [2 / 3, 1 / 3], atol=1e-15)


def test_softmax_large_logits_no_overflow():
    p = softmax(np.array([1000.0, 999.0, -1000.0]))
    assert np.isfinite(p).all()
    np.testing.assert_allclose(p, [1 / (1 + np.exp(-1)), np.exp(-1) / (1 + np.exp(-1)), 0.0], atol=1e-15)


def test_penultimate_examples():
    lin = LinearProbe(np.ones((2, 2)), np.zeros(2))
    x = np.array([0.5, -1.5])
    assert np.array_equal(lin.penultimate(x), x)
    net = ShallowNet(np.eye(2), np.zeros(2), np.ones((3, 2)), np.zeros(3))
    assert np.array_equal(net.penultimate(x), [0.5, 0.0])  # ReLU drops the negative unit


def test_q_hand_example():
    # logits chosen so softmax is exactly (0.2, 0.5, 0.3)
    m = LinearProbe(np.zeros((3, 2)), np.log([0.2, 0.5, 0.3]))
    q, v = grad_embedding_factors(m, np.array([1.0, 2.0]))
    np.testing.assert_allclose(q, [-0.2, 0.5, -0.3], atol=1e-12)
    assert np.array_equal(v, [1.0, 2.0])


def test_q_sums_to_zero_and_rowwise():
    rng = np.random.default_rng(0)
    m = init_model("shallow", 5, 4, rng)
    X = rng.standard_normal((10, 5))
    q, v = grad_embedding_factors(m, X)
    np.testing.assert_allclose(q.sum(1), 0.0, atol=1e-12)
    for i in range(10):
        qi, vi = grad_embedding_factors(m, X[i])
        np.testing.assert_allclose(qi, q[i], atol=1e-15)
        np.testing.assert_allclose(vi, v[i], atol=1e-15)


@pytest.mark.parametrize("tier", ["linear", "shallow"])
def test_outer_qv_is_last_layer_gradient(tier):
    rng = np.random.default_rng(1)
    m = init_model(tier, 4, 3, rng)
    x = rng.standard_normal(4)
    q, v = grad_embedding_factors(m, x)
    yhat = int(np.argmax(m.predict_proba(x)))
    _, grads = loss_and_grad(m, x[None], np.array([yhat]))
    # q points downhill: the CE gradient is -outer(q, v)
    np.testing.assert_allclose(grads[-2], -np.outer(q, v), atol=1e-12)


@settings(max_examples=25, deadline=None)
@given(seed=st.integers(0, 2**31), d=st.integers(1, 6), k=st.integers(2, 5), tier=st.sampled_from(["linear", "shallow"]))
def test_gradient_matches_finite_differences(seed, d, k, tier):
    rng = np.random.default_rng(seed)
    m = init_model(tier, d, k, rng)
    X = rng.standard_normal((6, d))
    y = rng.integers(0, k, 6)
    w = rng.uniform(0.0, 1.0, 6)
    _, g = loss_and_grad(m, X, y, w, weight_decay=1e-2)
    fd = _fd_grad(lambda: loss_and_grad(m, X, y, w, weight_decay=1e-2)[0], m.params())
    for a, b in zip(g, fd):
        assert np.abs(a - b).max() <= 1e-5 * max(1.0, np.abs(b).max())


def _store(X, y, k, v=1):
    feats = np.broadcast_to(X, (v,) + X.shape).copy()
    return EmbeddingStore(feats, y, np.zeros(len(y)), k=k)


def _blobs(seed=0, n=200, d=4, k=3, sep=4.0):
    rng = np.random.default_rng(seed)
    y = np.arange(n) % k
    centers = rng.standard_normal((k, d)) * sep
    return centers[y] + rng.standard_normal((n, d)), y


@pytest.mark.parametrize("tier", ["linear", "shallow"])
def test_training_is_deterministic(tier):
    X, y = _blobs()
    s = _store(X, y, 3, v=2)
    cfg = TrainConfig(epochs=5, seed=3, lr=0.05)
    a = train_supervised(s, np.arange(50), tier, cfg)
    b = train_supervised(s, np.arange(50), tier, cfg)
    assert a.equals(b)
    c = train_supervised(s, np.arange(50), tier, TrainConfig(epochs=5, seed=4, lr=0.05))
    assert not a.equals(c)


@pytest.mark.skipif(_kernels.numba_impl is None, reason="numba unavailable")
@pytest.mark.parametrize("tier", ["linear", "shallow"])
def test_numba_and_numpy_backends_agree(tier):
    X, y = _blobs(1)
    s = _store(X, y, 3)
    cfg = TrainConfig(epochs=4, seed=0, lr=0.05)
    a = train_supervised(s, np.arange(120), tier, cfg, impl=_kernels.numpy_impl)
    b = train_supervised(s, np.arange(120), tier, cfg, impl=_kernels.numba_impl)
    for p, r in zip(a.params(), b.params()):
        np.testing.assert_allclose(p, r, atol=1e-10)


@pytest.mark.parametrize("impl", [i for i in (_kernels.numpy_impl, _kernels.numba_impl) if i is not None])
@pytest.mark.parametrize("tier", ["linear", "shallow"])
def test_one_kernel_step_is_gradient_step(impl, tier):
    rng = np.random.default_rng(2)
    m = init_model(tier, 3, 4, rng)
    X = rng.standard_normal((8, 3))
    y = rng.integers(0, 4, 8)
    w = rng.uniform(0, 0.3, 8)
    w[2] = 0.0
    lr, wd = 0.1, 1e-3
    _, g = loss_and_grad(m, X, y, w, weight_decay=wd)
    expected = [p - lr * gp for p, gp in zip(m.params(), g)]
    vel = [np.zeros_like(p) for p in m.params()]
    fn = impl.sgd_linear_epoch if tier == "linear" else impl.sgd_shallow_epoch
    fn(*m.params(), *vel, X, y, w, np.array([0, 8]), lr, 0.9, wd)
    for p, e in zip(m.params(), expected):
        np.testing.assert_allclose(p, e, atol=1e-13)


def _perceptron_separable(X, y, epochs=1000):
    # classic perceptron as an independent separability oracle
    Xa = np.hstack([X, np.ones((X.shape[0], 1))])
    s = np.where(y == 1, 1.0, -1.0)
    w = np.zeros(Xa.shape[1])
    for _ in range(epochs):
        wrong = s * (Xa @ w) <= 0
        if not wrong.any():
            return True
        i = np.flatnonzero(wrong)[0]
        w += s[i] * Xa[i]
    return False


def test_separable_two_class_reaches_full_training_accuracy():
    rng = np.random.default_rng(5)
    X = np.vstack([rng.normal(-2, 0.5, (40, 2)), rng.normal(2, 0.5, (40, 2))])
    y = np.repeat([0, 1], 40)
    assert _perceptron_separable(X, y)
    m = train_supervised(_store(X, y, 2), np.arange(80), "linear", TrainConfig(epochs=100, seed=0))
    assert (m.predict(X) == y).all()


def test_single_class_training():
    X = np.random.default_rng(0).standard_normal((20, 3))
    y = np.zeros(20, dtype=int)
    s = _store(X, y, 3)
    m = train_supervised(s, np.arange(20), "linear", TrainConfig(epochs=30, seed=0))
    assert (m.predict(X) == 0).all()


def test_full_batch_loss_non_increasing():
    X, y = _blobs(2, n=120)
    s = _store(X, y, 3)
    losses = []
    cfg = TrainConfig(epochs=60, batch_size=120, lr=1e-3, momentum=0.0, weight_decay=0.0, seed=0)
    train_supervised(s, np.arange(120), "linear", cfg,
                     on_epoch=lambda e, m: losses.append(loss_and_grad(m, X, y)[0]))
    assert np.all(np.diff(losses) <= 1e-12)


def test_empty_label_set_and_degenerate_batch():
    X, y = _blobs()
    s = _store(X, y, 3)
    with pytest.raises(EmptyLabelSet):
        train_supervised(s, [], "linear", TrainConfig(epochs=1))
    with pytest.warns(DegenerateBatchWarning):
        train_supervised(s, np.arange(65), "linear", TrainConfig(epochs=1))


def test_invalid_config_and_tier():
    with pytest.raises(InvalidParam):
        TrainConfig(lr=0.0)
    with pytest.raises(InvalidParam):
        TrainConfig(momentum=1.0)
    with pytest.raises(InvalidParam):
        init_model("deep", 3, 2, np.random.default_rng(0))


@pytest.mark.parametrize("tier", ["linear", "shallow"])
def test_checkpoint_roundtrip(tmp_path, tier):
    m = init_model(tier, 5, 3, np.random.default_rng(0))
    p = tmp_path / "m.ckpt"
    save_checkpoint(m, p)
    back = load_checkpoint(p)
    assert back.tier == tier and back.equals(m)


def test_checkpoint_corruption(tmp_path):
    m = init_model("shallow", 5, 3, np.random.default_rng(0))
    p = tmp_path / "m.ckpt"
    save_checkpoint(m, p)
    good = p.read_bytes()
    for pos in (0, 5, 20, len(good) // 2, len(good) - 1):
        raw = bytearray(good)
        raw[pos] ^= 0x10
        p.write_bytes(bytes(raw))
        with pytest.raises(CorruptCheckpoint):
            load_checkpoint(p)
    p.write_bytes(good[:-9])
    with pytest.raises(CorruptCheckpoint):
        load_checkpoint(p)
