"""Solver configuration, outputs, gradient-field oracles and evaluation."""

from __future__ import annotations

import dataclasses
import hashlib
import json
import time
import warnings
from dataclasses import dataclass, field
from typing import Callable

import numpy as np
from scipy.spatial import cKDTree

from .. import metrics
from .. import nn
from ..errors import ConfigError, DivergenceError, ZeroDisplacementWarning

KINDS = ("wc", "gp", "lp", "sn", "so", "ls", "mmb", "mm", "mmr", "dot")
ALIASES = {"mm:b": "mmb", "mm:r": "mmr", "mm-b": "mmb", "mm-r": "mmr"}

# iteration counts of the full schedule; desk scale runs a quarter of them
FULL_ITERS = {
    "wc": 5000,
    "gp": 40000,
    "lp": 40000,
    "sn": 5000,
    "so": 15000,
    "ls": 10000,
    "mmb": 15000,
    "mm": 15000,
    "mmr": 15000,
    "dot": 1,
}
DESK_ITERS = {k: max(1, v // 4) for k, v in FULL_ITERS.items()}
FULL_BATCH, DESK_BATCH = 1024, 256
FULL_WIDTH, DESK_WIDTH = 128, 64
DIVERGENCE_NORM = 1e8


def canonical_kind(kind: str) -> str:
    k = str(kind).strip().lower()
    k = ALIASES.get(k, k)
    if k not in KINDS:
        raise ConfigError(f"unknown solver {kind!r}; choose from {', '.join(KINDS)}")
    return k


@dataclass
class SolverConfig:
    kind: str
    iterations: int | None = None
    batch_size: int | None = None
    lr: float = 2e-4
    beta1: float = 0.0
    beta2: float = 0.9
    hidden: list | None = None
    full_scale: bool = False
    c: float = 0.04
    lam: float = 10.0
    power_iters: int = 5
    eps: float = 0.01
    inner_steps: int = 12
    dot_batch: int = 1024
    eval_batch: int = 2**13

    def __post_init__(self):
        self.kind = canonical_kind(self.kind)
        if self.c <= 0:
            raise ConfigError("clip bound c must be positive")
        if self.lam < 0 or self.eps <= 0:
            raise ConfigError("lam must be >= 0 and eps > 0")
        if self.iterations is not None and self.iterations < 0:
            raise ConfigError("iterations must be non-negative")
        if self.inner_steps < 1 or self.dot_batch < 1 or self.eval_batch < 1:
            raise ConfigError("inner_steps, dot_batch and eval_batch must be positive")

    def resolved(self, dim: int) -> "SolverConfig":
        """Fill schedule defaults for dimension ``dim``."""
        cfg = dataclasses.replace(self)
        if cfg.iterations is None:
            iters = (FULL_ITERS if cfg.full_scale else DESK_ITERS)[cfg.kind]
            if cfg.full_scale and dim == 2:
                iters *= 5
            cfg.iterations = iters
        if cfg.batch_size is None:
            cfg.batch_size = FULL_BATCH if cfg.full_scale else DESK_BATCH
        if cfg.hidden is None:
            cfg.hidden = nn.default_hidden(dim, FULL_WIDTH if cfg.full_scale else DESK_WIDTH)
        cfg.hidden = [int(h) for h in cfg.hidden]
        return cfg

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "SolverConfig":
        names = {f.name for f in dataclasses.fields(cls)}
        unknown = set(d) - names
        if unknown:
            raise ConfigError(f"unknown config keys: {sorted(unknown)}")
        return cls(**d)

    def digest(self) -> str:
        blob = json.dumps(self.to_dict(), sort_keys=True).encode()
        return hashlib.sha256(blob).hexdigest()[:16]


# ------------------------------------------------------------ gradient fields


class PotentialGradient:
    """``sign * grad f`` for a scalar net ``f``."""

    kind = "potential"

    def __init__(self, net: nn.DenseNet, sign: float = 1.0):
        self.net = net
        self.sign = float(sign)

    def __call__(self, X):
        return self.sign * nn.grad_input(self.net, np.asarray(X, dtype=np.float64))

    def to_dict(self):
        return {"kind": self.kind, "net": "f", "sign": self.sign}


class ResidualMover:
    """Map ``x -> x + net(x)``; starts close to the identity."""

    def __init__(self, dim, hidden, rng, init_scale=1e-2):
        self.net = nn.DenseNet([dim, *hidden, dim], "relu", rng=rng)
        self.net.weights[-1] *= init_scale
        self.net.biases[-1] *= init_scale

    @classmethod
    def from_net(cls, net):
        mover = cls.__new__(cls)
        mover.net = net
        return mover

    def __call__(self, X):
        X = np.asarray(X, dtype=np.float64)
        return X + self.net.forward(X)

    def vjp(self, X, dout):
        """Output and parameter gradients of ``sum(dout * T(X))``."""
        out, cache = self.net.forward(X, cache=True)
        _, grads = self.net.backward(cache, dout)
        return X + out, grads


class MoverGradient:
    """``(x - T(x)) / ||x - T(x)||``; zero with a warning where ``T`` barely moves ``x``."""

    kind = "mover"
    threshold = 1e-9

    def __init__(self, mover):
        self.mover = mover

    def __call__(self, X):
        X = np.asarray(X, dtype=np.float64)
        d = X - self.mover(X)
        norm = np.linalg.norm(d, axis=1)
        still = norm < self.threshold
        if still.any():
            warnings.warn(f"{int(still.sum())} points with (near) zero displacement", ZeroDisplacementWarning)
        out = np.zeros_like(d)
        out[~still] = d[~still] / norm[~still, None]
        return out

    def to_dict(self):
        return {"kind": self.kind, "net": "T"}


class NearestBatchGradient:
    """Gradient known on a finite batch, extended by nearest-neighbour lookup."""

    kind = "nearest"

    def __init__(self, points, grads):
        self.points = np.asarray(points, dtype=np.float64)
        self.grads = np.asarray(grads, dtype=np.float64)
        self._tree = cKDTree(self.points)

    def __call__(self, X):
        X = np.asarray(X, dtype=np.float64)
        _, idx = self._tree.query(X)
        return self.grads[idx]

    def to_dict(self):
        return {"kind": self.kind, "points": self.points.tolist(), "grads": self.grads.tolist()}


# ------------------------------------------------------------------- outputs


@dataclass
class SolverOutput:
    kind: str
    grad_field: Callable
    w1_estimate: float
    nets: dict = field(default_factory=dict)
    potential: Callable | None = None
    log: list = field(default_factory=list)
    wall_time_s: float = 0.0
    support: np.ndarray | None = None
    extras: dict = field(default_factory=dict)

    def summary(self) -> dict:
        return {
            "kind": self.kind,
            "w1_estimate": self.w1_estimate,
            "iterations": len(self.log),
            "wall_time_s": self.wall_time_s,
            **{k: v for k, v in self.extras.items() if np.isscalar(v)},
        }


def output_to_dict(out: SolverOutput) -> dict:
    return {
        "version": 1,
        "kind": out.kind,
        "w1_estimate": out.w1_estimate,
        "field": out.grad_field.to_dict(),
        "nets": {name: nn.net_to_dict(net) for name, net in out.nets.items()},
        "wall_time_s": out.wall_time_s,
        "extras": {k: v for k, v in out.extras.items() if np.isscalar(v)},
    }


def output_from_dict(d: dict, truth=None) -> SolverOutput:
    nets = {name: nn.net_from_dict(nd) for name, nd in d.get("nets", {}).items()}
    desc = d["field"]
    potential = None
    support = None
    if desc["kind"] == "potential":
        net = nets[desc["net"]]
        grad_field = PotentialGradient(net, desc["sign"])
        potential = lambda X, _n=net, _s=desc["sign"]: _s * _n(X)  # noqa: E731
    elif desc["kind"] == "mover":
        grad_field = MoverGradient(ResidualMover.from_net(nets[desc["net"]]))
        if "g" in nets:
            potential = lambda X, _n=nets["g"]: -_n(X)  # noqa: E731
    elif desc["kind"] == "nearest":
        grad_field = NearestBatchGradient(desc["points"], desc["grads"])
        support = grad_field.points
    elif desc["kind"] == "truth":
        if truth is None:
            raise ConfigError("a ground-truth run needs its pair to be rebuilt")
        grad_field = TruthGradient(truth)
        potential = grad_field.potential
    else:
        raise ConfigError(f"unknown gradient field kind {desc['kind']!r}")
    return SolverOutput(
        d["kind"], grad_field, float(d["w1_estimate"]), nets, potential,
        wall_time_s=float(d.get("wall_time_s", 0.0)), support=support, extras=d.get("extras", {}),
    )


class TruthGradient:
    """The exact OT gradient of a benchmark pair, packaged as a solver field."""

    kind = "truth"

    def __init__(self, truth):
        self.truth = truth

    def __call__(self, X):
        G, _ = self.truth.grad_at(X)
        return G

    def potential(self, X):
        return self.truth.pair.sign * self.truth.pair.funnel(X)

    def to_dict(self):
        return {"kind": self.kind}


def oracle_output(truth) -> SolverOutput:
    """A perfect 'solver' that returns the ground truth; used to sanity-check evaluation."""
    f = TruthGradient(truth)
    return SolverOutput("truth", f, truth.w1, potential=f.potential)


# ------------------------------------------------------------------ training


class Trainer:
    """Loss trace, wall clock and divergence checks for one training run."""

    def __init__(self, nets):
        self.nets = nets
        self.log = []
        self._t0 = time.perf_counter()

    def record(self, it, loss, **extra):
        if not np.isfinite(loss):
            raise DivergenceError(f"non-finite loss at iteration {it}", self.log)
        entry = {"iter": it, "loss": float(loss), "wall_ms": (time.perf_counter() - self._t0) * 1e3}
        entry.update({k: float(v) for k, v in extra.items()})
        self.log.append(entry)
        if it % 25 == 0:
            self.check_params(it)

    def check_params(self, it):
        for net in self.nets:
            sq = sum(float(np.sum(p * p)) for p in net.params())
            if not np.isfinite(sq) or sq > DIVERGENCE_NORM**2:
                raise DivergenceError(f"parameter norm blew up at iteration {it}", self.log)

    @property
    def elapsed(self) -> float:
        return time.perf_counter() - self._t0


def add_grads(*grad_lists):
    return [sum(gs) for gs in zip(*grad_lists)]


def scale_grads(grads, s):
    return [s * g for g in grads]


def two_term_w1(f, sampler, n, rng) -> float:
    X, Y = sampler.sample(n, rng)
    return float(np.mean(f(X)) - np.mean(f(Y)))


def make_potential(dim, cfg, rng, activation="relu", constraint=None):
    return nn.DenseNet([dim, *cfg.hidden, 1], activation, constraint, cfg.power_iters, rng=rng)


def make_adam(net, cfg):
    return nn.Adam(net.params(), cfg.lr, cfg.beta1, cfg.beta2)


# ---------------------------------------------------------------- evaluation


@dataclass
class EvalReport:
    solver: str
    dim: int
    n_funnels: int
    power: float
    seed: int
    cos: float
    l2: float
    w1_hat: float
    w1_true: float
    dev_pct: float
    n_samples: int
    wall_time_s: float
    cos_se: float = float("nan")
    l2_se: float = float("nan")
    w1_true_se: float = float("nan")
    n_skipped: int = 0

    def row(self) -> dict:
        return {col: getattr(self, metrics.CSV_FIELDS.get(col, col)) for col in metrics.CSV_COLUMNS}

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)


def evaluate(output: SolverOutput, truth, n_eval: int = 2**13, rng=None, seed: int = 0) -> EvalReport:
    """Score a solver's gradient field against the exact OT gradient.

    Neural fields are scored on fresh first-marginal samples; batch solvers
    (DOT) on their own batch points, where the gradient is defined. Samples
    where the exact gradient does not exist are dropped and counted.
    """
    rng = np.random.default_rng(seed) if rng is None else rng
    if output.support is not None:
        pts = output.support
    else:
        pts, _ = truth.sample_with_grad(n_eval, rng)
    # reversed samples can land exactly on a funnel center, where no gradient exists
    gstar, ok = truth.grad_at(pts)
    skipped = int((~ok).sum())
    pts, gstar = pts[ok], gstar[ok]
    ghat = output.grad_field(pts)
    cos, cos_se = metrics.cos_metric_se(ghat, gstar)
    l2, l2_se = metrics.l2_metric_se(ghat, gstar)
    dev, _ = metrics.w1_deviation(output.w1_estimate, truth.w1)
    pair = truth.pair
    return EvalReport(
        output.kind, pair.dim, pair.n_funnels, pair.power, int(seed), cos, l2,
        float(output.w1_estimate), truth.w1, dev, int(len(pts)), float(output.wall_time_s),
        cos_se, l2_se, truth.w1_se, skipped,
    )
