"""Benchmark pairs (P, Q) with known W1 cost, optimal map and OT gradient.

``P`` is a base distribution on ``[-B, B]^D``; ``Q = T#P`` where ``T`` slides
every point down its (box-truncated) transport ray of a MinFunnel ``u``. Since
``u(x) - u(T(x)) = ||x - T(x)||``, ``u`` is an optimal potential and ``T`` an OT
map, so ``W1(P, Q) = E ||x - T(x)||``.
"""

from __future__ import annotations

import json
import logging
from dataclasses import dataclass, field
from pathlib import Path
from typing import Literal

import numpy as np

from . import minfunnel as mf
from .errors import ConstructionError, OutOfBoxError, SamplerError, SchemaVersionError
from .minfunnel import MinFunnel

logger = logging.getLogger(__name__)

SCHEMA_VERSION = 1
DEFAULT_BOX = 2.5
DEFAULT_POWER = 8.0
DEFAULT_OFFSET_VAR = 0.1
DEFAULT_N_MC = 2**16

Orientation = Literal["forward", "reversed"]


@dataclass(frozen=True)
class UniformBox:
    """Uniform distribution on the pair's box."""

    kind = "uniform_box"

    def sample(self, n, dim, box, rng):
        return rng.uniform(-box, box, size=(n, dim))

    def params(self):
        return {}


@dataclass(frozen=True)
class TruncatedNoisySampler:
    """Anchor points plus axis-wise Gaussian noise, rejected outside ``[-box, box]^D``.

    Stands in for a pretrained generator: pick an anchor uniformly, add
    ``sigma`` noise, keep the sample only if it falls inside the box.
    """

    anchors: tuple
    sigma: float
    box: float

    kind = "truncated_noisy"

    def __post_init__(self):
        anchors = tuple(tuple(float(c) for c in a) for a in self.anchors)
        object.__setattr__(self, "anchors", anchors)
        if not anchors:
            raise ValueError("need at least one anchor")
        if self.sigma <= 0 or self.box <= 0:
            raise ValueError("sigma and box must be positive")

    def sample(self, n, dim, box, rng):
        anchors = np.asarray(self.anchors, dtype=np.float64)
        if anchors.shape[1] != dim:
            raise ValueError("anchor dimension does not match the pair")
        out = np.empty((0, dim))
        drawn = 0
        while out.shape[0] < n:
            k = max(2 * (n - out.shape[0]), 64)
            idx = rng.integers(len(anchors), size=k)
            pts = anchors[idx] + self.sigma * rng.standard_normal((k, dim))
            drawn += k
            keep = np.all(np.abs(pts) <= self.box, axis=1)
            out = np.vstack([out, pts[keep]])
            if drawn >= 100 * n and out.shape[0] < 0.01 * drawn:
                raise SamplerError("noisy sampler rejects more than 99% of draws")
        return out[:n]

    def params(self):
        return {"anchors": [list(a) for a in self.anchors], "sigma": self.sigma, "box": self.box}


def base_from_dict(d) -> UniformBox | TruncatedNoisySampler:
    kind = d.get("kind")
    params = d.get("params", {})
    if kind == UniformBox.kind:
        return UniformBox()
    if kind == TruncatedNoisySampler.kind:
        return TruncatedNoisySampler(tuple(params["anchors"]), float(params["sigma"]), float(params["box"]))
    raise SchemaVersionError(f"unknown base distribution kind {kind!r}")


@dataclass(frozen=True)
class BenchmarkPair:
    funnel: MinFunnel
    box_halfwidth: float = DEFAULT_BOX
    power: float = DEFAULT_POWER
    base: UniformBox | TruncatedNoisySampler = field(default_factory=UniformBox)
    orientation: Orientation = "reversed"
    seed: int = 0

    def __post_init__(self):
        if not self.power > 1:
            raise ConstructionError(f"power must exceed 1, got {self.power}")
        if not self.box_halfwidth > 0:
            raise ConstructionError("box half-width must be positive")
        if self.orientation not in ("forward", "reversed"):
            raise ConstructionError(f"unknown orientation {self.orientation!r}")
        if isinstance(self.base, TruncatedNoisySampler) and self.base.box > self.box_halfwidth:
            raise ConstructionError("noisy sampler box must fit inside the pair box")

    @property
    def dim(self) -> int:
        return self.funnel.dim

    @property
    def n_funnels(self) -> int:
        return self.funnel.n_funnels

    @property
    def sign(self) -> float:
        """Sign of the optimal potential for the pair as fed to solvers."""
        return 1.0 if self.orientation == "forward" else -1.0

    def reversed(self) -> "BenchmarkPair":
        flip = "forward" if self.orientation == "reversed" else "reversed"
        return BenchmarkPair(self.funnel, self.box_halfwidth, self.power, self.base, flip, self.seed)


def generate_pair(
    dim: int,
    n_funnels: int,
    box: float = DEFAULT_BOX,
    power: float = DEFAULT_POWER,
    seed: int = 0,
    orientation: Orientation = "reversed",
    max_retries: int = 100,
) -> BenchmarkPair:
    """Random pair: centers uniform on the box, offsets ~ N(0, variance 0.1)."""
    if dim < 1 or n_funnels < 1:
        raise ConstructionError("dim and n_funnels must be positive")
    rng = np.random.default_rng(seed)
    centers = rng.uniform(-box, box, size=(n_funnels, dim))
    for _ in range(max_retries):
        offsets = rng.normal(0.0, np.sqrt(DEFAULT_OFFSET_VAR), size=n_funnels)
        if not mf.degenerate_pairs(centers, offsets):
            break
    else:
        raise ConstructionError(f"no non-degenerate offsets after {max_retries} draws")
    return BenchmarkPair(MinFunnel(centers, offsets), box, power, UniformBox(), orientation, seed)


@dataclass(frozen=True)
class MapResult:
    """Pushforward of a batch: ``y = T(x)``, ray direction and ray status per point."""

    x: np.ndarray
    y: np.ndarray
    direction: np.ndarray
    status: np.ndarray

    @property
    def moved(self) -> np.ndarray:
        return self.status == mf.OK


def transport_batch(pair: BenchmarkPair, X) -> MapResult:
    """Apply the ray-monotone power map; non-differentiable points stay fixed."""
    X = np.asarray(X, dtype=np.float64)
    if X.ndim == 1:
        X = X.reshape(1, -1)
    B = pair.box_halfwidth
    if np.any(np.abs(X) > B):
        raise OutOfBoxError("map is defined on the box only")
    rays = mf.rays_batch(pair.funnel, X)
    s0, s1, status = mf.truncate_batch(rays, B)
    ok = status == mf.OK
    Y = X.copy()
    if ok.any():
        length = s0[ok] + s1[ok]
        t = s0[ok] / length
        # T(x) = x0 + t^p (x1 - x0) = x - s0 (1 - t^(p-1)) v
        step = s0[ok] * (1.0 - t ** (pair.power - 1.0))
        Y[ok] = X[ok] - step[:, None] * rays.direction[ok]
        np.clip(Y, -B, B, out=Y)
    return MapResult(X, Y, rays.direction, status)


def map_T(pair: BenchmarkPair, x) -> np.ndarray:
    x = np.asarray(x, dtype=np.float64)
    res = transport_batch(pair, x.reshape(1, -1))
    return res.y[0] if x.ndim == 1 else res.y


def _couples(pair: BenchmarkPair, n: int, rng) -> MapResult:
    """``n`` base draws with their images, resampling points the map leaves fixed."""
    xs, ys, vs = [], [], []
    kept = drawn = 0
    while kept < n:
        k = max(n - kept, 16)
        X = pair.base.sample(k, pair.dim, pair.box_halfwidth, rng)
        res = transport_batch(pair, X)
        ok = res.moved
        drawn += k
        kept += int(ok.sum())
        xs.append(X[ok])
        ys.append(res.y[ok])
        vs.append(res.direction[ok])
        if drawn >= 100 * n and kept < 0.01 * drawn:
            raise SamplerError("more than 99% of base draws had no usable ray")
    x = np.concatenate(xs)[:n]
    return MapResult(x, np.concatenate(ys)[:n], np.concatenate(vs)[:n], np.zeros(n, dtype=np.int8))


def sample(pair: BenchmarkPair, n: int, rng):
    """Independent batches ``(X, Y)`` from the first and second marginal as fed to solvers."""
    if n < 1:
        raise ValueError("n must be positive")
    moved = _couples(pair, n, rng).y
    base = pair.base.sample(n, pair.dim, pair.box_halfwidth, rng)
    if pair.orientation == "forward":
        return base, moved
    return moved, base


class PairSampler:
    """What a solver sees: marginal batches only, never the couples or ``u``."""

    def __init__(self, pair: BenchmarkPair):
        self._pair = pair
        self.dim = pair.dim

    def sample(self, n, rng):
        return sample(self._pair, n, rng)


@dataclass(frozen=True)
class GroundTruth:
    pair: BenchmarkPair
    w1: float
    w1_se: float
    n_mc: int

    def grad_at(self, X):
        """``sign * grad u`` at each row of ``X`` plus a validity mask."""
        G, status = mf.grad_batch(self.pair.funnel, X)
        return self.pair.sign * G, status == mf.OK

    def map_at(self, X) -> np.ndarray:
        """Forward map ``T`` (base sample to its image)."""
        return transport_batch(self.pair, X).y

    def sample_with_grad(self, n, rng):
        """First-marginal samples with the exact OT gradient at each of them.

        For reversed pairs the sample is ``y = T(x)`` and the gradient ``-v(x)``
        is taken from the generating ray, which stays exact even when ``y``
        rounds onto a funnel center.
        """
        c = _couples(self.pair, n, rng)
        if self.pair.orientation == "forward":
            return c.x, c.direction
        return c.y, -c.direction


def ground_truth(pair: BenchmarkPair, n_mc: int = DEFAULT_N_MC, rng=None) -> GroundTruth:
    """Monte Carlo estimate of ``E ||x - T(x)||`` with its standard error."""
    if n_mc < 2:
        raise ValueError("n_mc must be at least 2")
    if rng is None:
        rng = np.random.default_rng(pair.seed)
    c = _couples(pair, n_mc, rng)
    d = np.linalg.norm(c.x - c.y, axis=1)
    return GroundTruth(pair, float(d.mean()), float(d.std(ddof=1) / np.sqrt(n_mc)), n_mc)


# ------------------------------------------------------------------ persistence


def pair_to_dict(pair: BenchmarkPair) -> dict:
    return {
        "version": SCHEMA_VERSION,
        "dim": pair.dim,
        "n_funnels": pair.n_funnels,
        "centers": pair.funnel.centers.tolist(),
        "offsets": pair.funnel.offsets.tolist(),
        "box_halfwidth": float(pair.box_halfwidth),
        "p": float(pair.power),
        "base": {"kind": pair.base.kind, "params": pair.base.params()},
        "orientation": pair.orientation,
        "seed": int(pair.seed),
    }


def pair_from_dict(d: dict) -> BenchmarkPair:
    if d.get("version") != SCHEMA_VERSION:
        raise SchemaVersionError(f"unsupported pair schema version {d.get('version')!r}")
    try:
        centers = np.asarray(d["centers"], dtype=np.float64).reshape(int(d["n_funnels"]), int(d["dim"]))
        funnel = MinFunnel(centers, d["offsets"])
        return BenchmarkPair(
            funnel,
            float(d["box_halfwidth"]),
            float(d["p"]),
            base_from_dict(d["base"]),
            d["orientation"],
            int(d["seed"]),
        )
    except KeyError as exc:
        raise SchemaVersionError(f"pair file is missing field {exc}") from exc


def dumps_pair(pair: BenchmarkPair) -> str:
    return json.dumps(pair_to_dict(pair), indent=1) + "\n"


def save_pair(pair: BenchmarkPair, path) -> None:
    Path(path).write_text(dumps_pair(pair))


def load_pair(path) -> BenchmarkPair:
    return pair_from_dict(json.loads(Path(path).read_text()))
