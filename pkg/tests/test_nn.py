import warnings

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from w1bench import nn
from w1bench.errors import PointAtKinkWarning, SchemaVersionError


def linear_net(w, b=0.0):
    net = nn.DenseNet([len(w), 1], rng=np.random.default_rng(0))
    net.weights[0] = np.asarray(w, dtype=np.float64).reshape(-1, 1)
    net.biases[0] = np.array([b])
    return net


def small_net(activation="relu", sizes=(3, 6, 5, 1), seed=0):
    return nn.DenseNet(list(sizes), activation, rng=np.random.default_rng(seed))


def fd_param_grad(net, loss, h=1e-6):
    out = []
    for p in net.params():
        g = np.zeros_like(p)
        for idx in np.ndindex(p.shape):
            old = p[idx]
            p[idx] = old + h
            up = loss()
            p[idx] = old - h
            down = loss()
            p[idx] = old
            g[idx] = (up - down) / (2 * h)
        out.append(g)
    return out


def test_default_hidden_sizes():
    assert nn.default_hidden(4) == [128, 128, 128]
    assert nn.default_hidden(100) == [200, 200, 128]
    assert nn.default_hidden(4, 64) == [64, 64, 64]


def test_zero_net_outputs_zero():
    net = small_net()
    for p in net.params():
        p[...] = 0.0
    assert np.all(net(np.ones((4, 3))) == 0.0)


def test_affine_net_hand_computed():
    net = linear_net([1.0, -2.0], 0.5)
    np.testing.assert_allclose(net(np.array([[1.0, 1.0], [0.0, 2.0]])), [-0.5, -3.5])
    np.testing.assert_allclose(nn.grad_input(net, np.zeros((3, 2))), [[1.0, -2.0]] * 3)


def test_forward_deterministic_and_shape_checked():
    net = small_net()
    X = np.random.default_rng(1).standard_normal((8, 3))
    np.testing.assert_array_equal(net(X), net(X))
    with pytest.raises(ValueError):
        net(np.ones((2, 4)))


@pytest.mark.parametrize("activation", ["relu", "fullsort"])
def test_input_gradient_matches_finite_differences(activation):
    net = small_net(activation)
    X = np.random.default_rng(2).standard_normal((10, 3))
    G = nn.grad_input(net, X)
    h = 1e-5
    for k, e in enumerate(np.eye(3)):
        fd = (net(X + h * e) - net(X - h * e)) / (2 * h)
        np.testing.assert_allclose(G[:, k], fd, rtol=1e-6, atol=1e-8)


@pytest.mark.parametrize("activation", ["relu", "fullsort"])
def test_param_gradient_matches_finite_differences(activation):
    net = small_net(activation, sizes=(2, 4, 3, 1))
    X = np.random.default_rng(3).standard_normal((7, 2))
    w = np.random.default_rng(4).standard_normal(7)
    grads = nn.grad_params(net, X, w[:, None])
    fd = fd_param_grad(net, lambda: float(w @ net(X)))
    for g, f in zip(grads, fd):
        np.testing.assert_allclose(g, f, rtol=1e-5, atol=1e-8)


def test_param_gradient_zero_and_linear_in_loss_scale():
    net = small_net()
    X = np.random.default_rng(5).standard_normal((6, 3))
    for g in nn.grad_params(net, X, np.zeros((6, 1))):
        assert np.all(g == 0)
    g1 = nn.grad_params(net, X, np.ones((6, 1)))
    g3 = nn.grad_params(net, X, 3 * np.ones((6, 1)))
    for a, b in zip(g1, g3):
        np.testing.assert_allclose(3 * a, b)


def test_gp_penalty_of_linear_net_is_analytic():
    w = np.array([0.6, 1.2])
    net = linear_net(w)
    R = np.random.default_rng(0).standard_normal((5, 2))
    val, grads, _ = nn.penalty_grad(net, R, "gp")
    s = np.linalg.norm(w)
    assert val == pytest.approx((s - 1) ** 2)
    np.testing.assert_allclose(grads[0][:, 0], 2 * (s - 1) * w / s)
    unit = linear_net(w / s)
    assert nn.penalty_value(unit, R, "gp") == pytest.approx(0.0, abs=1e-30)


@pytest.mark.parametrize("mode", ["gp", "lp"])
@pytest.mark.parametrize("activation", ["relu", "fullsort"])
def test_penalty_gradient_matches_finite_differences(mode, activation):
    net = small_net(activation, sizes=(2, 5, 1), seed=7)
    for p in net.params():
        p *= 3.0  # push gradient norms above 1 so LP is active
    R = np.random.default_rng(8).standard_normal((9, 2))
    _, grads, _ = nn.penalty_grad(net, R, mode)
    fd = fd_param_grad(net, lambda: nn.penalty_value(net, R, mode))
    for g, f in zip(grads, fd):
        np.testing.assert_allclose(g, f, rtol=1e-4, atol=1e-7)


def test_lp_penalty_inactive_below_one():
    net = linear_net([0.3, 0.4])
    val, grads, _ = nn.penalty_grad(net, np.ones((4, 2)), "lp")
    assert val == 0.0
    assert all(np.all(g == 0) for g in grads)


def test_penalty_counts_kinks():
    net = linear_net([0.0, 0.0])
    with pytest.warns(PointAtKinkWarning):
        _, grads, kinks = nn.penalty_grad(net, np.ones((3, 2)), "gp")
    assert kinks == 3 and all(np.all(g == 0) for g in grads)


def test_adam_first_step_is_sign_scaled():
    p = [np.array([0.0])]
    opt = nn.Adam(p, lr=0.1, beta1=0.0, beta2=0.9, eps=1e-8)
    opt.step(p, [np.array([2.0])])
    assert p[0][0] == pytest.approx(-0.1 * 2.0 / (2.0 + 1e-8))


def test_adam_matches_hand_recurrence():
    lr, b1, b2, eps = 0.01, 0.5, 0.9, 1e-8
    p = [np.array([1.0])]
    opt = nn.Adam(p, lr, b1, b2, eps)
    m = v = 0.0
    x = 1.0
    for t, g in enumerate([1.0, -0.5, 2.0], start=1):
        opt.step(p, [np.array([g])])
        m = b1 * m + (1 - b1) * g
        v = b2 * v + (1 - b2) * g * g
        x -= lr * (m / (1 - b1**t)) / (np.sqrt(v / (1 - b2**t)) + eps)
    assert p[0][0] == pytest.approx(x, rel=1e-14)


def test_adam_zero_grad_keeps_params():
    p = [np.array([1.5, -2.0])]
    opt = nn.Adam(p)
    nn.adam_step(opt, p, [np.zeros(2)])
    np.testing.assert_array_equal(p[0], [1.5, -2.0])
    assert opt.t == 1


def test_clip_weights():
    net = small_net()
    nn.clip_weights(net, 0.05)
    assert all(np.all(np.abs(p) <= 0.05) for p in net.params())
    before = [p.copy() for p in net.params()]
    nn.clip_weights(net, 0.05)
    assert all(np.array_equal(a, b) for a, b in zip(before, net.params()))
    nn.clip_weights(net, np.inf)
    assert all(np.array_equal(a, b) for a, b in zip(before, net.params()))


def test_spectral_normalize_diagonal():
    net = nn.DenseNet([2, 2], constraint="spectral", rng=np.random.default_rng(0))
    net.weights[0] = np.diag([3.0, 1.0])
    nn.spectral_normalize(net)
    assert np.linalg.norm(net.weights[0], 2) == pytest.approx(1.0, abs=1e-3)


def test_spectral_normalize_keeps_orthogonal():
    q, _ = np.linalg.qr(np.random.default_rng(1).standard_normal((4, 4)))
    net = nn.DenseNet([4, 4], constraint="spectral", rng=np.random.default_rng(0))
    net.weights[0] = q.copy()
    nn.spectral_normalize(net)
    np.testing.assert_allclose(net.weights[0], q, atol=1e-3)


def test_spectral_estimates_sharpen_over_calls():
    rng = np.random.default_rng(3)
    net = nn.DenseNet([6, 5], constraint="spectral", power_iters=1, rng=rng)
    W = rng.standard_normal((6, 5))
    errs = []
    for _ in range(4):
        net.weights[0] = W.copy()
        nn.spectral_normalize(net)
        errs.append(abs(np.linalg.norm(net.weights[0], 2) - 1.0))
    assert errs[-1] <= errs[0] + 1e-12 and errs[-1] < 1e-3


def test_bjorck_fixed_point_and_rectangular():
    q, _ = np.linalg.qr(np.random.default_rng(0).standard_normal((5, 5)))
    np.testing.assert_allclose(nn.bjorck(q), q, atol=1e-12)
    for shape in [(7, 3), (3, 7)]:
        W = nn.bjorck(np.random.default_rng(1).standard_normal(shape))
        small = W.T @ W if shape[0] >= shape[1] else W @ W.T
        assert np.linalg.norm(small - np.eye(min(shape))) <= 1e-6


def test_bjorck_near_orthonormal_converges_fast():
    q, _ = np.linalg.qr(np.random.default_rng(2).standard_normal((6, 6)))
    W = q + 0.05 * np.random.default_rng(3).standard_normal((6, 6))
    out = nn.bjorck(W, max_iter=30)
    assert np.linalg.norm(out.T @ out - np.eye(6)) <= 1e-6


@given(st.integers(0, 2**31), st.sampled_from(["spectral", "orthonormal"]))
def test_constrained_nets_are_one_lipschitz(seed, constraint):
    rng = np.random.default_rng(seed)
    act = "fullsort" if constraint == "orthonormal" else "relu"
    net = nn.DenseNet([3, 16, 16, 1], act, constraint, rng=rng)
    for p in net.params():
        p += 0.3 * rng.standard_normal(p.shape)
    (nn.spectral_normalize if constraint == "spectral" else nn.orthonormalize)(net)
    X, Y = rng.uniform(-3, 3, (2, 500, 3))
    assert np.all(np.abs(net(X) - net(Y)) <= (1 + 1e-2) * np.linalg.norm(X - Y, axis=1))


def test_checkpoint_round_trip(tmp_path):
    net = nn.DenseNet([3, 8, 1], "fullsort", "spectral", rng=np.random.default_rng(0))
    nn.spectral_normalize(net)
    nn.save_net(net, tmp_path / "n.json")
    back = nn.load_net(tmp_path / "n.json")
    X = np.random.default_rng(1).standard_normal((5, 3))
    np.testing.assert_array_equal(back(X), net(X))
    for (a, c), (a2, c2) in zip(net.sn_vectors, back.sn_vectors):
        np.testing.assert_array_equal(a, a2)
        np.testing.assert_array_equal(c, c2)
    d = nn.net_to_dict(net)
    d["version"] = 5
    with pytest.raises(SchemaVersionError):
        nn.net_from_dict(d)


def test_copy_is_independent():
    net = small_net()
    twin = net.copy()
    twin.weights[0] += 1.0
    assert not np.array_equal(twin.weights[0], net.weights[0])


def test_no_warning_on_generic_points():
    net = small_net()
    with warnings.catch_warnings():
        warnings.simplefilter("error")
        nn.penalty_grad(net, np.random.default_rng(0).standard_normal((20, 3)), "gp")
