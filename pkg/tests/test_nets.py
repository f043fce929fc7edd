"""Network forward/backward correctness, mostly against finite differences."""

import time

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from stopline_hrl.nets import Activation, DenseNet, Layer, _softmax


def _random_net(rng, sizes=None, output_activation=None):
    if sizes is None:
        depth = rng.integers(1, 4)
        sizes = [int(rng.integers(2, 7)) for _ in range(depth + 1)]
    if output_activation is None:
        output_activation = rng.choice(
            [Activation.LINEAR, Activation.RELU, Activation.SOFTMAX])
    net = DenseNet.create(list(sizes), rng,
                          output_activation=Activation(output_activation))
    # Non-zero biases so layers cannot sit exactly on a ReLU kink.
    for layer in net.layers:
        layer.biases = rng.normal(scale=0.3, size=layer.biases.shape)
    return net


def _kink_margin(net, x):
    """Distance of the closest pre-activation to a ReLU kink."""
    h = np.asarray(x, dtype=float)
    margin = np.inf
    for layer in net.layers:
        z = h @ layer.weights.T + layer.biases
        if layer.activation is Activation.RELU:
            margin = min(margin, float(np.min(np.abs(z))))
            h = np.maximum(z, 0.0)
        elif layer.activation is Activation.SOFTMAX:
            h = _softmax(z)
        else:
            h = z
    return margin


def _safe_probe_input(net, rng, h=1e-6):
    """Input whose finite-difference neighborhood avoids ReLU kinks."""
    for _ in range(100):
        x = rng.uniform(-2.0, 2.0, size=net.in_dim)
        if _kink_margin(net, x) > 1e3 * h:
            return x
    raise RuntimeError("could not find a kink-free probe input")


def _loss(net, x, g):
    """Scalar probe loss sum(g * f(x)) whose output gradient is g."""
    return float(np.sum(g * net.forward(x)))


def _flat_params(net):
    return np.concatenate([np.concatenate([l.weights.ravel(), l.biases])
                           for l in net.layers])


def _set_flat_params(net, theta):
    pos = 0
    for l in net.layers:
        n = l.weights.size
        l.weights = theta[pos:pos + n].reshape(l.weights.shape).copy()
        pos += n
        n = l.biases.size
        l.biases = theta[pos:pos + n].copy()
        pos += n


def _flat_grads(tape):
    return np.concatenate([np.concatenate([dw.ravel(), db])
                           for dw, db in zip(tape.d_weights, tape.d_biases)])


def fd_gradient_check(net, x, g, h=1e-6):
    """Max relative error between analytic and central-difference grads."""
    net.forward(x)
    tape, in_grad = net.backward(g)
    analytic = np.concatenate([_flat_grads(tape), np.atleast_1d(in_grad).ravel()])

    theta0 = _flat_params(net)
    num = np.empty_like(analytic)
    for i in range(len(theta0)):
        theta = theta0.copy()
        theta[i] = theta0[i] + h
        _set_flat_params(net, theta)
        up = _loss(net, x, g)
        theta[i] = theta0[i] - h
        _set_flat_params(net, theta)
        down = _loss(net, x, g)
        num[i] = (up - down) / (2.0 * h)
    _set_flat_params(net, theta0)
    xf = np.atleast_1d(np.asarray(x, dtype=float)).ravel()
    for j in range(len(xf)):
        xp = xf.copy()
        xp[j] += h
        up = _loss(net, xp.reshape(np.shape(x)), g)
        xp[j] = xf[j] - h
        down = _loss(net, xp.reshape(np.shape(x)), g)
        num[len(theta0) + j] = (up - down) / (2.0 * h)

    scale = np.maximum(np.abs(num), 1.0)
    return float(np.max(np.abs(analytic - num) / scale))


def test_gradients_match_finite_differences_100_pairs():
    rng = np.random.default_rng(7)
    t0 = time.time()
    worst = 0.0
    for _ in range(100):
        net = _random_net(rng)
        # Keep ReLU kinks away from the FD probe points.
        x = _safe_probe_input(net, rng)
        g = rng.normal(size=net.out_dim)
        worst = max(worst, fd_gradient_check(net, x, g))
    elapsed = time.time() - t0
    assert worst < 1e-4, f"max relative gradient error {worst:.3e}"
    assert elapsed < 10.0, f"gradient check took {elapsed:.1f}s"


def test_batched_forward_matches_per_sample():
    rng = np.random.default_rng(1)
    net = _random_net(rng, sizes=[4, 8, 3])
    X = rng.normal(size=(6, 4))
    batched = net.forward(X)
    singles = np.stack([net.forward(x) for x in X])
    np.testing.assert_allclose(batched, singles, rtol=0, atol=1e-15)


def test_batched_backward_sums_per_sample_tapes():
    rng = np.random.default_rng(2)
    net = _random_net(rng, sizes=[3, 5, 2], output_activation=Activation.LINEAR)
    X = rng.normal(size=(4, 3))
    G = rng.normal(size=(4, 2))
    net.forward(X)
    tape, in_grads = net.backward(G)
    acc = None
    singles = []
    for x, g in zip(X, G):
        net.forward(x)
        t, ig = net.backward(g)
        singles.append(ig)
        if acc is None:
            acc = t
        else:
            for i in range(len(acc.d_weights)):
                acc.d_weights[i] = acc.d_weights[i] + t.d_weights[i]
                acc.d_biases[i] = acc.d_biases[i] + t.d_biases[i]
    for a, b in zip(tape.d_weights, acc.d_weights):
        np.testing.assert_allclose(a, b, atol=1e-12)
    np.testing.assert_allclose(in_grads, np.stack(singles), atol=1e-12)


@given(st.lists(st.floats(-50, 50), min_size=2, max_size=8),
       st.floats(-100, 100))
@settings(max_examples=200, deadline=None)
def test_softmax_normalized_and_shift_invariant(zs, shift):
    z = np.array(zs)
    p = _softmax(z)
    assert np.all(p > 0.0)
    assert abs(p.sum() - 1.0) < 1e-12
    np.testing.assert_allclose(_softmax(z + shift), p, atol=1e-12)


def test_softmax_output_head_normalizes_batches():
    rng = np.random.default_rng(3)
    net = _random_net(rng, sizes=[5, 6, 4], output_activation=Activation.SOFTMAX)
    out = net.forward(rng.normal(size=(7, 5)))
    np.testing.assert_allclose(out.sum(axis=1), np.ones(7), atol=1e-12)


def test_sgd_step_moves_against_gradient():
    rng = np.random.default_rng(4)
    net = _random_net(rng, sizes=[3, 4, 2], output_activation=Activation.LINEAR)
    x = rng.normal(size=3)
    g = np.array([1.0, -1.0])
    before = _loss(net, x, g)
    net.forward(x)
    tape, _ = net.backward(g)
    net.sgd_step(tape, lr=1e-2)
    assert _loss(net, x, g) < before


def test_checkpoint_roundtrip_is_bit_exact(tmp_path):
    rng = np.random.default_rng(5)
    net = _random_net(rng, sizes=[11, 64, 64, 6])
    path = tmp_path / "net.ckpt"
    net.save(path)
    loaded = DenseNet.load(path)
    assert loaded.to_bytes() == net.to_bytes()
    for a, b in zip(net.layers, loaded.layers):
        assert np.array_equal(a.weights, b.weights)
        assert np.array_equal(a.biases, b.biases)
        assert a.activation is b.activation


def test_from_bytes_sequential_records():
    rng = np.random.default_rng(6)
    n1 = _random_net(rng, sizes=[3, 4])
    n2 = _random_net(rng, sizes=[2, 5, 2])
    blob = n1.to_bytes() + n2.to_bytes()
    r1, offset = DenseNet.from_bytes(blob, 0)
    r2, end = DenseNet.from_bytes(blob, offset)
    assert end == len(blob)
    assert r1.to_bytes() == n1.to_bytes()
    assert r2.to_bytes() == n2.to_bytes()


def test_bad_checkpoint_rejected():
    with pytest.raises(ValueError):
        DenseNet.from_bytes(b"XXXX" + b"\x00" * 32)


def test_layer_dimension_chaining_enforced():
    l1 = Layer(np.zeros((3, 2)), np.zeros(3), Activation.RELU)
    l2 = Layer(np.zeros((2, 4)), np.zeros(2), Activation.LINEAR)
    with pytest.raises(ValueError):
        DenseNet([l1, l2])


def test_forward_rejects_wrong_input_dim():
    rng = np.random.default_rng(8)
    net = _random_net(rng, sizes=[4, 3])
    with pytest.raises(ValueError):
        net.forward(np.zeros(5))


def test_backward_requires_cached_forward():
    rng = np.random.default_rng(9)
    net = _random_net(rng, sizes=[4, 3])
    with pytest.raises(RuntimeError):
        net.backward(np.zeros(3))
