import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from mfsl import nn
from oracles import brute_conv


def small_net(ndim, seed=0, zero_final=False, n_layers=3, width=3, cin=2, cout=2, k=3):
    return nn.init_weights(nn.conv_stack(cin, cout, n_layers, width, k), seed, ndim, zero_final)


def test_conv_identity_and_ones():
    x = np.random.default_rng(0).random((1, 8))
    w = np.zeros((1, 1, 3))
    w[0, 0, 1] = 1
    np.testing.assert_array_equal(nn.conv_periodic(x, w, np.zeros(1)), x)
    np.testing.assert_allclose(nn.conv_periodic(np.full((1, 8), 0.7), np.ones((1, 1, 3))), 2.1,
                               atol=1e-15)


def test_conv_matches_brute_force():
    rng = np.random.default_rng(1)
    x, w, b = rng.random((2, 8)), rng.standard_normal((3, 2, 5)), rng.standard_normal(3)
    np.testing.assert_allclose(nn.conv_periodic(x, w, b), brute_conv(x, w, b), atol=1e-13, rtol=0)
    x2, w2, b2 = rng.random((2, 6, 7)), rng.standard_normal((3, 2, 3, 3)), rng.standard_normal(3)
    np.testing.assert_allclose(nn.conv_periodic(x2, w2, b2), brute_conv(x2, w2, b2), atol=1e-13,
                               rtol=0)


def test_conv_shape_errors():
    with pytest.raises(ValueError):
        nn.conv_periodic(np.zeros((2, 8)), np.zeros((1, 3, 3)))
    with pytest.raises(ValueError):
        nn.conv_periodic(np.zeros((1, 4)), np.zeros((1, 1, 5)))
    with pytest.raises(ValueError):
        nn.conv_periodic(np.zeros((1, 8)), np.zeros((2, 1, 3)), np.zeros(3))


@settings(max_examples=25, deadline=None)
@given(st.integers(0, 2 ** 31), st.integers(-7, 7))
def test_conv_translation_equivariance(seed, s):
    rng = np.random.default_rng(seed)
    x, w, b = rng.random((2, 12)), rng.standard_normal((2, 2, 5)), rng.standard_normal(2)
    np.testing.assert_array_equal(nn.conv_periodic(np.roll(x, s, -1), w, b),
                                  np.roll(nn.conv_periodic(x, w, b), s, -1))


def test_relu_examples():
    np.testing.assert_array_equal(nn.relu(np.array([-1.0, 0.0, 2.0])), [0, 0, 2])
    assert np.all(nn.relu(-np.random.default_rng(0).random(10)) == 0)
    x = np.random.default_rng(1).standard_normal(50)
    np.testing.assert_array_equal(nn.relu(nn.relu(x)), nn.relu(x))


def test_layer_spec_validation():
    with pytest.raises(ValueError):
        nn.ConvLayerSpec(1, 1, 4)
    with pytest.raises(ValueError):
        nn.ConvLayerSpec(1, 1, 3, "tanh")
    with pytest.raises(ValueError):
        nn.Network([nn.ConvLayerSpec(1, 2, 3), nn.ConvLayerSpec(3, 1, 3, "identity")], 1,
                   [np.zeros((2, 1, 3)), np.zeros((1, 3, 3))], [np.zeros(2), np.zeros(1)])


def test_forward_examples():
    x = np.random.default_rng(2).random((2, 10))
    ident = nn.Network([nn.ConvLayerSpec(2, 2, 1, "identity")], 1, [np.eye(2)[:, :, None]],
                       [np.zeros(2)])
    np.testing.assert_array_equal(nn.forward(ident, x)[0], x)
    z = small_net(1, zero_final=True)
    assert np.all(nn.forward(z, x)[0] == 0)
    net = small_net(1, seed=5, n_layers=2)
    h = np.maximum(brute_conv(x, net.weights[0], net.biases[0]), 0)
    ref = brute_conv(h, net.weights[1], net.biases[1])
    np.testing.assert_allclose(nn.forward(net, x)[0], ref, atol=1e-13)


def test_forward_deterministic_and_chain_check():
    net = small_net(2, seed=3)
    x = np.random.default_rng(3).random((2, 6, 6))
    assert np.array_equal(nn.forward(net, x)[0], nn.forward(net, x)[0])
    with pytest.raises(ValueError):
        nn.forward(net, np.zeros((3, 6, 6)))


def test_backward_zero_gradient_and_missing_cache():
    net = small_net(1, seed=1)
    x = np.random.default_rng(0).random((2, 8))
    y, cache = nn.forward(net, x)
    grads, gx = nn.backward(net, cache, np.zeros_like(y))
    assert all(np.all(g == 0) for g in grads) and np.all(gx == 0)
    with pytest.raises(ValueError):
        nn.backward(net, None, y)


def test_backward_hand_case():
    w = np.array([[[0.5, -1.0, 2.0]]])
    net = nn.Network([nn.ConvLayerSpec(1, 1, 3, "identity")], 1, [w], [np.array([0.25])])
    x = np.array([[1.0, 2.0, 3.0, 4.0]])
    y, cache = nn.forward(net, x)
    np.testing.assert_allclose(y, [[0.5 * 4 - 1 + 4 + 0.25, 0.5 - 2 + 6 + 0.25, 1 - 3 + 8 + 0.25,
                                    1.5 - 4 + 2 + 0.25]])
    (gw, gb), gx = nn.backward(net, cache, np.array([[1.0, 0.0, 0.0, 0.0]]))
    # y_0 = w0 x_3 + w1 x_0 + w2 x_1 + b
    np.testing.assert_array_equal(gw, [[[4.0, 1.0, 2.0]]])
    np.testing.assert_array_equal(gb, [1.0])
    np.testing.assert_array_equal(gx, [[-1.0, 2.0, 0.0, 0.5]])


def fd_check(net, x, seed=0, delta=1e-6):
    rng = np.random.default_rng(seed)
    y, cache = nn.forward(net, x)
    gy = rng.standard_normal(y.shape)
    grads, gx = nn.backward(net, cache, gy)

    def loss():
        return float(np.sum(nn.forward(net, x)[0] * gy))

    worst = 0.0
    for p, g in zip(net.parameters(), grads):
        for idx in np.ndindex(p.shape):
            old = p[idx]
            p[idx] = old + delta
            lp = loss()
            p[idx] = old - delta
            lm = loss()
            p[idx] = old
            fd = (lp - lm) / (2 * delta)
            worst = max(worst, abs(fd - g[idx]) / max(1e-3, abs(fd), abs(g[idx])))
    for idx in np.ndindex(x.shape):
        old = x[idx]
        x[idx] = old + delta
        lp = loss()
        x[idx] = old - delta
        lm = loss()
        x[idx] = old
        fd = (lp - lm) / (2 * delta)
        worst = max(worst, abs(fd - gx[idx]) / max(1e-3, abs(fd), abs(gx[idx])))
    return worst


@settings(max_examples=8, deadline=None)
@given(st.integers(0, 2 ** 31), st.sampled_from([1, 2]), st.integers(1, 3))
def test_backward_finite_differences(seed, ndim, n_layers):
    net = small_net(ndim, seed=seed, n_layers=n_layers, width=2, k=3)
    rng = np.random.default_rng(seed)
    for b in net.biases:
        b[:] = rng.standard_normal(b.shape) * 0.1
    assert net.n_parameters() <= 200
    x = rng.standard_normal((2, 6) if ndim == 1 else (2, 4, 5))
    assert fd_check(net, x, seed) < 1e-5


def test_adam_zero_gradient():
    p = [np.array([0.3, -0.2])]
    st_ = nn.AdamState.zeros_like(p)
    nn.adam_step(p, [np.zeros(2)], st_)
    np.testing.assert_array_equal(p[0], [0.3, -0.2])
    assert st_.step == 1


def test_adam_single_and_two_step_trace():
    p = [np.zeros(1)]
    st_ = nn.AdamState.zeros_like(p, lr=1e-3)
    nn.adam_step(p, [np.ones(1)], st_)
    assert p[0][0] == pytest.approx(-9.99999e-4, rel=1e-6)
    assert p[0][0] == pytest.approx(-1e-3 / (1 + 1e-8), abs=1e-15)
    # hand trace of a second step with g = 0.5
    nn.adam_step(p, [np.full(1, 0.5)], st_)
    m = 0.9 * 0.1 + 0.1 * 0.5
    v = 0.999 * 0.001 + 0.001 * 0.25
    mh, vh = m / (1 - 0.81), v / (1 - 0.998001)
    expect = -1e-3 / (1 + 1e-8) - 1e-3 * mh / (np.sqrt(vh) + 1e-8)
    assert abs(p[0][0] - expect) < 1e-12


def test_adam_identical_steps():
    p = [np.zeros(1)]
    st_ = nn.AdamState.zeros_like(p, lr=1e-3)
    for _ in range(2):
        nn.adam_step(p, [np.ones(1)], st_)
    assert abs(p[0][0] - (-2e-3 / (1 + 1e-8))) < 1e-12


def test_adam_shape_mismatch():
    p = [np.zeros(2)]
    with pytest.raises(ValueError):
        nn.adam_step(p, [np.zeros(3)], nn.AdamState.zeros_like(p))


def test_init_weights():
    specs = nn.conv_stack(2, 5, 6, 32, 5)
    a, b = nn.init_weights(specs, 7), nn.init_weights(specs, 7)
    assert all(np.array_equal(x, y) for x, y in zip(a.parameters(), b.parameters()))
    assert np.all(a.weights[-1] == 0)
    for s, w in zip(specs[:-1], a.weights[:-1]):
        assert np.max(np.abs(w)) <= np.sqrt(6 / (s.in_channels * s.kernel))
    assert np.all(nn.forward(a, np.random.default_rng(0).random((2, 16)))[0] == 0)
    c = nn.init_weights(specs, 8)
    assert not np.array_equal(a.weights[0], c.weights[0])


def test_checkpoint_roundtrip(tmp_path):
    nets = [small_net(1, 1), small_net(2, 2)]
    params = [p for n in nets for p in n.parameters()]
    adam = nn.AdamState.zeros_like(params, lr=3e-4)
    nn.adam_step(params, [np.ones_like(p) for p in params], adam)
    nn.save_checkpoint(tmp_path / "m.ckpt", nets, adam, {"note": "x"})
    back, ad, extra = nn.load_checkpoint(tmp_path / "m.ckpt")
    assert extra == {"note": "x"}
    for a, b in zip(nets, back):
        assert a.specs == b.specs and a.ndim == b.ndim
        assert all(np.array_equal(x, y) for x, y in zip(a.parameters(), b.parameters()))
    assert ad.step == 1 and ad.lr == 3e-4
    assert all(np.array_equal(x, y) for x, y in zip(adam.m + adam.v, ad.m + ad.v))
    blob = nn.checkpoint_bytes(nets)
    assert blob[:8] == nn.CHECKPOINT_MAGIC
    assert nn.checkpoint_from_bytes(blob)[1] is None


def test_checkpoint_corruption():
    blob = nn.checkpoint_bytes([small_net(1, 1)], extra={"a": 1})
    for bad in (blob[:-5], b"XXXXXXXX" + blob[8:], blob + b"\0",
                blob[:40] + bytes([blob[40] ^ 1]) + blob[41:]):
        with pytest.raises(nn.CheckpointError):
            nn.checkpoint_from_bytes(bad)
