"""Small dense networks in numpy with hand-written reverse mode.

Hidden activations are piecewise linear (ReLU or FullSort), so once the
activation pattern at a point is frozen the network is linear in its input.
That makes the gradient-penalty second derivative exact almost everywhere:
``penalty_grad`` differentiates the input-gradient computation with the
patterns held fixed.
"""

from __future__ import annotations

import json
import warnings
from pathlib import Path

import numpy as np

from .errors import PointAtKinkWarning, SchemaVersionError

CHECKPOINT_VERSION = 1
ACTIVATIONS = ("relu", "fullsort")
CONSTRAINTS = (None, "spectral", "orthonormal")


def default_hidden(dim: int, width: int = 128) -> list[int]:
    return [max(2 * dim, width), max(2 * dim, width), max(dim, width)]


class DenseNet:
    """Fully connected net ``x -> W_L(... act(x W_1 + b_1) ...) + b_L``.

    Weights are stored as ``(fan_in, fan_out)`` so a batch is ``X @ W + b``.
    The output layer is linear.
    """

    def __init__(self, sizes, activation="relu", constraint=None, power_iters=5, rng=None):
        if activation not in ACTIVATIONS:
            raise ValueError(f"unknown activation {activation!r}")
        if constraint not in CONSTRAINTS:
            raise ValueError(f"unknown constraint {constraint!r}")
        if len(sizes) < 2:
            raise ValueError("need at least input and output sizes")
        self.sizes = [int(s) for s in sizes]
        self.activation = activation
        self.constraint = constraint
        self.power_iters = int(power_iters)
        self.weights = []
        self.biases = []
        # persistent power-iteration vectors, one (left, right) pair per layer
        self.sn_vectors = None
        rng = np.random.default_rng() if rng is None else rng
        for fan_in, fan_out in zip(self.sizes[:-1], self.sizes[1:]):
            bound = 1.0 / np.sqrt(fan_in)
            if constraint == "orthonormal":
                W = _random_semi_orthogonal(fan_in, fan_out, rng)
            else:
                W = rng.uniform(-bound, bound, size=(fan_in, fan_out))
            self.weights.append(W)
            self.biases.append(rng.uniform(-bound, bound, size=fan_out))
        self._rng = rng

    @property
    def n_layers(self) -> int:
        return len(self.weights)

    @property
    def in_dim(self) -> int:
        return self.sizes[0]

    @property
    def out_dim(self) -> int:
        return self.sizes[-1]

    def params(self) -> list:
        out = []
        for W, b in zip(self.weights, self.biases):
            out += [W, b]
        return out

    def copy(self) -> "DenseNet":
        twin = DenseNet.__new__(DenseNet)
        twin.__dict__.update(self.__dict__)
        twin.weights = [W.copy() for W in self.weights]
        twin.biases = [b.copy() for b in self.biases]
        if self.sn_vectors is not None:
            twin.sn_vectors = [(a.copy(), c.copy()) for a, c in self.sn_vectors]
        return twin

    # -------------------------------------------------------------- patterns

    def _activate(self, z):
        if self.activation == "relu":
            mask = z > 0
            return z * mask, mask
        idx = np.argsort(-z, axis=1, kind="stable")
        return np.take_along_axis(z, idx, axis=1), idx

    def _apply(self, pattern, z):
        if self.activation == "relu":
            return z * pattern
        return np.take_along_axis(z, pattern, axis=1)

    def _apply_t(self, pattern, dh):
        if self.activation == "relu":
            return dh * pattern
        dz = np.empty_like(dh)
        np.put_along_axis(dz, pattern, dh, axis=1)
        return dz

    # --------------------------------------------------------------- passes

    def _check(self, X):
        X = np.asarray(X, dtype=np.float64)
        if X.ndim != 2 or X.shape[1] != self.in_dim:
            raise ValueError(f"expected input of shape (n, {self.in_dim}), got {X.shape}")
        return X

    def forward(self, X, cache=False):
        X = self._check(X)
        h = X
        inputs, patterns = [X], []
        for W, b in zip(self.weights[:-1], self.biases[:-1]):
            h, pat = self._activate(h @ W + b)
            inputs.append(h)
            patterns.append(pat)
        out = h @ self.weights[-1] + self.biases[-1]
        if cache:
            return out, (inputs, patterns)
        return out

    def __call__(self, X):
        out = self.forward(X)
        return out[:, 0] if self.out_dim == 1 else out

    def backward(self, cache, dout):
        """Reverse pass. ``dout`` is (n, out_dim); returns (dX, param grads)."""
        inputs, patterns = cache
        dout = np.asarray(dout, dtype=np.float64)
        if dout.ndim == 1:
            dout = dout[:, None]
        grads = [None] * (2 * self.n_layers)
        delta = dout
        for layer in range(self.n_layers - 1, -1, -1):
            grads[2 * layer] = inputs[layer].T @ delta
            grads[2 * layer + 1] = delta.sum(axis=0)
            dh = delta @ self.weights[layer].T
            if layer > 0:
                delta = self._apply_t(patterns[layer - 1], dh)
        return dh, grads


def forward(net: DenseNet, X):
    return net.forward(X)


def grad_input(net: DenseNet, X) -> np.ndarray:
    """Per-sample input gradient of a scalar-output net, shape (n, D)."""
    if net.out_dim != 1:
        raise ValueError("grad_input needs a scalar-output net")
    out, cache = net.forward(X, cache=True)
    dX, _ = net.backward(cache, np.ones_like(out))
    return dX


def grad_params(net: DenseNet, X, dout) -> list:
    """Parameter gradient of ``sum(dout * net(X))``."""
    _, cache = net.forward(X, cache=True)
    return net.backward(cache, dout)[1]


def vjp_input(net: DenseNet, X, dout):
    """Input and parameter gradients of ``sum(dout * net(X))`` in one pass."""
    _, cache = net.forward(X, cache=True)
    return net.backward(cache, dout)


def _penalty_terms(s, mode):
    if mode == "gp":
        return (s - 1.0) ** 2, 2.0 * (s - 1.0)
    if mode == "lp":
        e = np.maximum(0.0, s - 1.0)
        return e**2, 2.0 * e
    raise ValueError(f"unknown penalty mode {mode!r}")


def penalty_value(net: DenseNet, R, mode="gp") -> float:
    s = np.linalg.norm(grad_input(net, R), axis=1)
    return float(_penalty_terms(s, mode)[0].mean())


def penalty_grad(net: DenseNet, R, mode="gp"):
    """Value and parameter gradient of ``mean phi(||grad_x f(r)||)``.

    ``phi(s) = (s - 1)^2`` for ``gp`` and ``max(0, s - 1)^2`` for ``lp``.
    Returns ``(value, grads, n_kinks)``; points whose input gradient vanishes
    are skipped and counted.
    """
    if net.out_dim != 1:
        raise ValueError("penalty_grad needs a scalar-output net")
    R = net._check(R)
    n = R.shape[0]
    _, (_, patterns) = net.forward(R, cache=True)
    L = net.n_layers
    # e[l] = d f / d z_l (pre-activation of layer l), layer L is the output
    e = [None] * (L + 1)
    e[L] = np.ones((n, 1))
    for layer in range(L, 1, -1):
        e[layer - 1] = net._apply_t(patterns[layer - 2], e[layer] @ net.weights[layer - 1].T)
    g = e[1] @ net.weights[0].T
    s = np.linalg.norm(g, axis=1)
    val, dphi = _penalty_terms(s, mode)
    kink = s < 1e-12
    n_kinks = int(kink.sum())
    if n_kinks:
        warnings.warn(f"{n_kinks} penalty points with vanishing gradient skipped", PointAtKinkWarning)
    coef = np.where(kink, 0.0, dphi / np.where(kink, 1.0, s)) / n
    G = coef[:, None] * g

    grads = [None] * (2 * L)
    grads[0] = G.T @ e[1]
    de = G @ net.weights[0]
    for layer in range(2, L + 1):
        ddh = net._apply(patterns[layer - 2], de)
        grads[2 * (layer - 1)] = ddh.T @ e[layer]
        de = ddh @ net.weights[layer - 1]
    for layer in range(L):
        grads[2 * layer + 1] = np.zeros_like(net.biases[layer])
    return float(val.mean()), grads, n_kinks


# ------------------------------------------------------------------ optimizer


class Adam:
    """Adam with bias correction. ``step`` descends; negate grads to ascend."""

    def __init__(self, params, lr=2e-4, beta1=0.0, beta2=0.9, eps=1e-8):
        self.lr, self.beta1, self.beta2, self.eps = lr, beta1, beta2, eps
        self.m = [np.zeros_like(p) for p in params]
        self.v = [np.zeros_like(p) for p in params]
        self.t = 0

    def step(self, params, grads):
        self.t += 1
        c1 = 1.0 - self.beta1**self.t
        c2 = 1.0 - self.beta2**self.t
        for p, g, m, v in zip(params, grads, self.m, self.v):
            m *= self.beta1
            m += (1.0 - self.beta1) * g
            v *= self.beta2
            v += (1.0 - self.beta2) * g * g
            p -= self.lr * (m / c1) / (np.sqrt(v / c2) + self.eps)


def adam_step(state: Adam, params, grads):
    state.step(params, grads)
    return params, state


# ---------------------------------------------------------------- constraints


def clip_weights(net: DenseNet, c: float) -> DenseNet:
    for p in net.params():
        np.clip(p, -c, c, out=p)
    return net


def _unit(x):
    return x / max(np.linalg.norm(x), 1e-300)


def spectral_normalize(net: DenseNet, n_iter: int | None = None) -> DenseNet:
    """Divide every weight matrix by a power-iteration estimate of its top singular value.

    The left/right vectors persist on the net, so estimates sharpen across calls.
    """
    n_iter = net.power_iters if n_iter is None else n_iter
    if net.sn_vectors is None:
        net.sn_vectors = [
            (_unit(net._rng.standard_normal(W.shape[0])), _unit(net._rng.standard_normal(W.shape[1])))
            for W in net.weights
        ]
        n_iter = max(n_iter, 15)
    for k, W in enumerate(net.weights):
        a, c = net.sn_vectors[k]
        for _ in range(n_iter):
            c = _unit(W.T @ a)
            a = _unit(W @ c)
        sigma = float(a @ W @ c)
        net.sn_vectors[k] = (a, c)
        if sigma > 0:
            W /= sigma
    return net


def bjorck(W, tol=1e-6, max_iter=100):
    """Nearest (semi-)orthonormal matrix via ``W <- W (3I - W^T W) / 2``."""
    W = np.array(W, dtype=np.float64)
    tall = W.shape[0] >= W.shape[1]
    if not tall:
        W = W.T
    eye = np.eye(W.shape[1])
    top = np.linalg.norm(W, 2)
    if top >= 1.7:
        W = W / top
    for _ in range(max_iter):
        G = W.T @ W
        if np.linalg.norm(G - eye) <= tol:
            break
        W = W @ (3.0 * eye - G) / 2.0
    return W if tall else W.T


def orthonormalize(net: DenseNet) -> DenseNet:
    for W in net.weights:
        W[...] = bjorck(W)
    return net


def _random_semi_orthogonal(fan_in, fan_out, rng):
    q, r = np.linalg.qr(rng.standard_normal((max(fan_in, fan_out), min(fan_in, fan_out))))
    q = q * np.sign(np.diag(r))
    return q if fan_in >= fan_out else q.T


# ----------------------------------------------------------------- checkpoint


def net_to_dict(net: DenseNet) -> dict:
    return {
        "version": CHECKPOINT_VERSION,
        "sizes": net.sizes,
        "activation": net.activation,
        "constraint": net.constraint,
        "power_iters": net.power_iters,
        "weights": [W.tolist() for W in net.weights],
        "biases": [b.tolist() for b in net.biases],
        "sn_vectors": None
        if net.sn_vectors is None
        else [[a.tolist(), c.tolist()] for a, c in net.sn_vectors],
    }


def net_from_dict(d: dict) -> DenseNet:
    if d.get("version") != CHECKPOINT_VERSION:
        raise SchemaVersionError(f"unsupported checkpoint version {d.get('version')!r}")
    net = DenseNet(d["sizes"], d["activation"], d["constraint"], d["power_iters"], rng=np.random.default_rng(0))
    net.weights = [np.asarray(W, dtype=np.float64).reshape(i, o) for W, i, o in zip(d["weights"], d["sizes"][:-1], d["sizes"][1:])]
    net.biases = [np.asarray(b, dtype=np.float64) for b in d["biases"]]
    if d.get("sn_vectors") is not None:
        net.sn_vectors = [(np.asarray(a), np.asarray(c)) for a, c in d["sn_vectors"]]
    return net


def save_net(net: DenseNet, path) -> None:
    Path(path).write_text(json.dumps(net_to_dict(net)))


def load_net(path) -> DenseNet:
    return net_from_dict(json.loads(Path(path).read_text()))
