from __future__ import annotations

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from demoscore import densenet as dn

# the two network shapes the package trains
INVDYN_SHAPE = ([6] + [64] * 7 + [1], ["relu"] * 7 + ["identity"])
POLICY_SHAPE = ([3, 100, 100, 1], ["tanh", "tanh", "tanh"])


def reference_forward(net, x):
    """Plain-Python evaluation, one unit at a time."""
    out = []
    for row in x:
        h = list(row)
        for layer in net.layers:
            nxt = []
            for j in range(layer.weight.shape[1]):
                z = layer.bias[j] + sum(h[i] * layer.weight[i, j] for i in range(len(h)))
                if layer.activation == "tanh":
                    z = float(np.tanh(z))
                elif layer.activation == "relu":
                    z = max(z, 0.0)
                nxt.append(z)
            h = nxt
        out.append(h)
    return np.array(out)


def kink_pattern(net, x, y):
    """Which side of every ReLU and smooth-L1 switch point each unit sits on."""
    h, marks = x, []
    for layer in net.layers:
        z = h @ layer.weight + layer.bias
        marks.append((z > 0).ravel())
        h = dn.forward(dn.DenseNet([layer]), h)
    marks.append((np.abs(h - y) < 1.0).ravel())
    return np.concatenate(marks)


def finite_difference_check(net, x, y, kind, rng, per_param=8, h=1e-5):
    """Max relative error between analytic and central-difference gradients.

    Coordinates whose +-h perturbation moves any unit across a kink are redrawn:
    the loss is not differentiable across them, so the difference quotient is no oracle there.
    """
    _, grads = dn.loss_and_grad(net, x, y, kind)
    base = kink_pattern(net, x, y)
    worst, checked = 0.0, 0
    for p, g in zip(net.params(), grads):
        done = 0
        while done < per_param:
            idx = tuple(int(rng.integers(n)) for n in p.shape)
            old = p[idx]
            p[idx] = old + h
            lp, _ = dn.loss_value(dn.forward(net, x), y, kind)
            same = np.array_equal(kink_pattern(net, x, y), base)
            p[idx] = old - h
            lm, _ = dn.loss_value(dn.forward(net, x), y, kind)
            same &= np.array_equal(kink_pattern(net, x, y), base)
            p[idx] = old
            if not same:
                continue
            num = (lp - lm) / (2 * h)
            ana = g[idx]
            worst = max(worst, abs(ana - num) / max(abs(ana), abs(num), 1e-7))
            done += 1
            checked += 1
    return worst, checked


def test_zero_network_outputs_zero():
    net = dn.DenseNet([dn.Layer(np.zeros((3, 2)), np.zeros(2), "identity")])
    np.testing.assert_array_equal(dn.forward(net, np.array([1.0, -2.0, 3.0])), [0.0, 0.0])


def test_identity_layer_passes_input():
    net = dn.DenseNet([dn.Layer(np.eye(3), np.zeros(3), "identity")])
    x = np.array([0.5, -1.5, 2.0])
    np.testing.assert_array_equal(dn.forward(net, x), x)


@pytest.mark.parametrize("sizes,acts", [INVDYN_SHAPE, POLICY_SHAPE])
def test_forward_matches_reference(sizes, acts):
    net = dn.init_net(sizes, acts, seed=1)
    x = np.random.default_rng(2).normal(size=(3, sizes[0]))
    np.testing.assert_allclose(dn.forward(net, x), reference_forward(net, x), rtol=0, atol=1e-12)


def test_forward_dimension_mismatch():
    net = dn.init_net([3, 4, 1], ["tanh", "identity"], seed=0)
    with pytest.raises(ValueError):
        dn.forward(net, np.zeros(4))


def test_layers_must_chain():
    with pytest.raises(ValueError):
        dn.DenseNet([dn.Layer(np.zeros((2, 3)), np.zeros(3), "relu"),
                     dn.Layer(np.zeros((4, 1)), np.zeros(1), "identity")])


def test_perfect_prediction_has_zero_loss_and_gradient():
    net = dn.init_net([2, 5, 1], ["tanh", "identity"], seed=0)
    x = np.random.default_rng(0).normal(size=(4, 2))
    y = dn.forward(net, x)
    for kind in dn.LOSSES:
        loss, grads = dn.loss_and_grad(net, x, y, kind)
        assert loss == 0.0
        assert all(np.all(g == 0) for g in grads)


def test_smooth_l1_example():
    loss, _ = dn.loss_value(np.array([[2.0, 0.0]]), np.zeros((1, 2)), "smooth_l1")
    assert loss == 1.5


def test_smooth_l1_quadratic_branch_and_batch_mean():
    loss, _ = dn.loss_value(np.array([[0.5], [-3.0]]), np.zeros((2, 1)), "smooth_l1")
    assert loss == pytest.approx((0.125 + 2.5) / 2, abs=1e-15)


def test_gradient_structure_matches_params():
    net = dn.init_net(*POLICY_SHAPE, seed=0)
    _, grads = dn.loss_and_grad(net, np.zeros((2, 3)), np.ones((2, 1)))
    assert [g.shape for g in grads] == [p.shape for p in net.params()]


@pytest.mark.parametrize("sizes,acts", [INVDYN_SHAPE, POLICY_SHAPE], ids=["relu8", "tanh3"])
def test_gradient_matches_finite_differences(sizes, acts):
    worst_all = 0.0
    for draw in range(20):
        net = dn.init_net(sizes, acts, seed=draw)
        rng = np.random.default_rng(100 + draw)
        x = rng.normal(size=(8, sizes[0]))
        y = 0.5 * rng.normal(size=(8, sizes[-1]))
        for kind in dn.LOSSES:
            worst, checked = finite_difference_check(net, x, y, kind, rng)
            assert checked == 8 * len(net.params())
            worst_all = max(worst_all, worst)
    assert worst_all < 1e-4


def test_init_range():
    net = dn.init_net([16, 9, 2], ["relu", "identity"], seed=4)
    for layer in net.layers:
        bound = 1 / np.sqrt(layer.weight.shape[0])
        assert np.abs(layer.weight).max() <= bound and np.abs(layer.bias).max() <= bound


def test_linear_regression_converges():
    rng = np.random.default_rng(0)
    x = rng.uniform(-1, 1, size=(512, 3))
    y = x @ np.array([[0.5], [-0.3], [0.2]]) + 0.1
    net = dn.init_net([3, 1], ["identity"], seed=0)
    _, hist = dn.train(net, x, y, dn.TrainConfig(learning_rate=1e-2, batch_size=64, epochs=200,
                                                  loss="mse"))
    assert hist[-1] < 1e-3
    assert hist[-1] <= hist[0]
    assert all(np.isfinite(hist))


def test_nonlinear_task_final_loss_not_above_first():
    rng = np.random.default_rng(1)
    x = rng.uniform(-2, 2, size=(400, 2))
    y = np.sin(x[:, :1]) * x[:, 1:]
    net = dn.init_net(*([2, 32, 32, 1], ["tanh", "tanh", "identity"]), seed=3)
    _, hist = dn.train(net, x, y, dn.TrainConfig(epochs=30, seed=3))
    assert hist[-1] <= hist[0]


def test_zero_epochs_returns_unchanged_net():
    net = dn.init_net([2, 4, 1], ["tanh", "identity"], seed=0)
    out, hist = dn.train(net, np.ones((5, 2)), np.ones((5, 1)), dn.TrainConfig(epochs=0))
    assert hist == []
    for a, b in zip(net.params(), out.params()):
        np.testing.assert_array_equal(a, b)


def test_training_is_deterministic():
    rng = np.random.default_rng(0)
    x, y = rng.normal(size=(300, 3)), rng.normal(size=(300, 1))
    cfg = dn.TrainConfig(epochs=3, seed=9)
    net = dn.init_net([3, 8, 1], ["relu", "identity"], seed=9)
    a, ha = dn.train(net, x, y, cfg)
    b, hb = dn.train(net, x, y, cfg)
    assert ha == hb
    assert dn.dumps(a) == dn.dumps(b)


def test_divergence_is_reported():
    x = np.ones((4, 1)) * 1e200  # squared error overflows to inf
    net = dn.init_net([1, 1], ["identity"], seed=0)
    with pytest.raises(dn.TrainingDivergedError) as err, np.errstate(over="ignore"):
        dn.train(net, x, np.zeros((4, 1)), dn.TrainConfig(epochs=3, loss="mse"))
    assert err.value.epoch == 1


def test_train_config_validation():
    with pytest.raises(ValueError):
        dn.TrainConfig(learning_rate=0.0)
    with pytest.raises(ValueError):
        dn.TrainConfig(loss="huber")


@settings(max_examples=25, deadline=None)
@given(st.integers(1, 4), st.integers(1, 6), st.sampled_from(dn.ACTIVATIONS),
       st.integers(0, 1000))
def test_checkpoint_roundtrip_exact(n_layers, width, act, seed):
    sizes = [3] + [width] * (n_layers - 1) + [2]
    net = dn.init_net(sizes, [act] * n_layers, seed)
    back = dn.loads(dn.dumps(net))
    assert back.sizes == net.sizes
    for a, b in zip(net.params(), back.params()):
        np.testing.assert_array_equal(a, b)
    assert [l.activation for l in back.layers] == [l.activation for l in net.layers]
