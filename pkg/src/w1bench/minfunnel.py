"""MinFunnel potentials ``u(x) = min_n ||x - a_n|| + b_n`` and their transport rays.

Everything here is float64. Batch routines return a status array instead of
raising so that samplers can drop or resample the (measure-zero) points where
``u`` is not differentiable; the scalar wrappers raise the matching exception.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass

import numpy as np
from scipy.spatial.distance import cdist

from .errors import (
    AtCenterError,
    DegenerateRayError,
    LipschitzViolationError,
    NonDegeneracyError,
    TieError,
)

logger = logging.getLogger(__name__)

TAU_CENTER = 1e-12
TAU_RAY = 1e-9
TIE_RTOL = 1e-9
NONDEGENERACY_RTOL = 1e-9

OK, TIE, AT_CENTER, DEGENERATE = 0, 1, 2, 3

# rows per chunk when building (n, N) work arrays
_CHUNK = 4096


class MinFunnel:
    """Minimum of ``N`` cones ``||x - a_n||_2 + b_n``.

    Parameters
    ----------
    centers : array-like (N, D)
    offsets : array-like (N,)
    check : bool
        Verify distinct centers and the non-degeneracy condition
        ``||a_i - a_j|| != |b_i - b_j|`` (needed for closed-form rays).
    """

    def __init__(self, centers, offsets, check: bool = True):
        centers = np.array(centers, dtype=np.float64)
        offsets = np.array(offsets, dtype=np.float64).reshape(-1)
        if centers.ndim == 1:
            centers = centers.reshape(-1, 1)
        if centers.ndim != 2 or centers.shape[0] < 1:
            raise ValueError("centers must have shape (N, D) with N >= 1")
        if offsets.shape[0] != centers.shape[0]:
            raise ValueError("need one offset per center")
        if not (np.all(np.isfinite(centers)) and np.all(np.isfinite(offsets))):
            raise ValueError("centers and offsets must be finite")
        centers.setflags(write=False)
        offsets.setflags(write=False)
        self.centers = centers
        self.offsets = offsets
        if check:
            bad = degenerate_pairs(centers, offsets)
            if bad:
                i, j = bad[0]
                raise NonDegeneracyError(
                    f"funnels {i} and {j} violate ||a_i - a_j|| != |b_i - b_j| "
                    f"({len(bad)} offending pair(s))"
                )

    @property
    def dim(self) -> int:
        return self.centers.shape[1]

    @property
    def n_funnels(self) -> int:
        return self.centers.shape[0]

    def __repr__(self):
        return f"MinFunnel(dim={self.dim}, n_funnels={self.n_funnels})"

    def __eq__(self, other):
        if not isinstance(other, MinFunnel):
            return NotImplemented
        return np.array_equal(self.centers, other.centers) and np.array_equal(
            self.offsets, other.offsets
        )

    __hash__ = None

    def funnel_values(self, X) -> np.ndarray:
        """All cone values ``u_n(x)``, shape (n, N)."""
        X = self._as_batch(X)
        return cdist(X, self.centers) + self.offsets

    def __call__(self, X) -> np.ndarray:
        X = np.asarray(X, dtype=np.float64)
        single = X.ndim == 1
        Xb = self._as_batch(X)
        out = np.empty(Xb.shape[0])
        for s in range(0, Xb.shape[0], _CHUNK):
            out[s : s + _CHUNK] = self.funnel_values(Xb[s : s + _CHUNK]).min(axis=1)
        return out[0] if single else out

    def _as_batch(self, X) -> np.ndarray:
        X = np.asarray(X, dtype=np.float64)
        if X.ndim == 1:
            X = X.reshape(1, -1)
        if X.ndim != 2 or X.shape[1] != self.dim:
            raise ValueError(f"expected points of dimension {self.dim}, got shape {X.shape}")
        return X


def degenerate_pairs(centers, offsets, rtol: float = NONDEGENERACY_RTOL):
    """Index pairs (i < j) with coincident centers or ||a_i - a_j|| ~= |b_i - b_j|."""
    centers = np.asarray(centers, dtype=np.float64)
    offsets = np.asarray(offsets, dtype=np.float64)
    dist = cdist(centers, centers)
    gap = np.abs(offsets[:, None] - offsets[None, :])
    scale = np.maximum(1.0, np.maximum(dist, gap))
    bad = (np.abs(dist - gap) <= rtol * scale) | (dist <= rtol)
    i, j = np.nonzero(np.triu(bad, k=1))
    return list(zip(i.tolist(), j.tolist()))


@dataclass(frozen=True)
class RayBatch:
    """Transport rays for a batch of query points.

    ``lower_dist`` is ``||x - a_m||`` and ``upper`` the distance from ``x`` to the
    upper endpoint along ``direction`` (``inf`` for unbounded rays). Rows with
    ``status != OK`` carry undefined geometry.
    """

    points: np.ndarray
    values: np.ndarray
    funnel: np.ndarray
    direction: np.ndarray
    lower_dist: np.ndarray
    upper: np.ndarray
    status: np.ndarray

    @property
    def ok(self) -> np.ndarray:
        return self.status == OK


def active_batch(u: MinFunnel, X):
    """Active funnel index, value and status (OK or TIE) for each row of ``X``."""
    X = u._as_batch(X)
    n = X.shape[0]
    m = np.empty(n, dtype=np.int64)
    val = np.empty(n)
    status = np.zeros(n, dtype=np.int8)
    for s in range(0, n, _CHUNK):
        U = u.funnel_values(X[s : s + _CHUNK])
        mm = U.argmin(axis=1)
        vv = U[np.arange(U.shape[0]), mm]
        m[s : s + _CHUNK] = mm
        val[s : s + _CHUNK] = vv
        if u.n_funnels > 1:
            two = np.partition(U, 1, axis=1)[:, :2]
            tie = (two[:, 1] - two[:, 0]) < TIE_RTOL * (1.0 + np.abs(vv))
            status[s : s + _CHUNK][tie] = TIE
    return m, val, status


def grad_batch(u: MinFunnel, X):
    """Gradients ``(x - a_m)/||x - a_m||`` with status (OK, TIE or AT_CENTER)."""
    X = u._as_batch(X)
    m, _, status = active_batch(u, X)
    diff = X - u.centers[m]
    dist = np.linalg.norm(diff, axis=1)
    center = dist < TAU_CENTER
    status = np.where((status == OK) & center, AT_CENTER, status).astype(np.int8)
    G = np.zeros_like(X)
    good = ~center
    G[good] = diff[good] / dist[good, None]
    return G, status


def rays_batch(u: MinFunnel, X) -> RayBatch:
    """Closed-form transport rays of ``u`` through each row of ``X``.

    For every other funnel ``n`` the crossing distance along ``v`` solves
    ``u(x) + r - b_n = ||x + r v - a_n||``; after squaring this is linear in
    ``r``. A root counts only if ``r > 0`` and ``r >= b_n - u(x)`` (the
    unsquared left side must be non-negative); ``c/0`` is ``+inf``.
    """
    X = u._as_batch(X)
    n = X.shape[0]
    m, val, status = active_batch(u, X)
    A, b = u.centers, u.offsets
    diff = X - A[m]
    lower = np.linalg.norm(diff, axis=1)
    center = lower < TAU_CENTER
    status = np.where((status == OK) & center, AT_CENTER, status).astype(np.int8)
    v = np.zeros_like(X)
    good = ~center
    v[good] = diff[good] / lower[good, None]

    upper = np.full(n, np.inf)
    zero_num = 0
    for s in range(0, n, _CHUNK):
        sl = slice(s, s + _CHUNK)
        Xc, vc, uc, mc = X[sl], v[sl], val[sl], m[sl]
        dist = cdist(Xc, A)
        du = uc[:, None] - b[None, :]
        # <v, x - a_n> = <v, x> - <v, a_n>
        proj = np.einsum("ij,ij->i", vc, Xc)[:, None] - vc @ A.T
        num = 0.5 * (dist**2 - du**2)
        den = du - proj
        with np.errstate(divide="ignore", invalid="ignore"):
            r = num / den
        r[den == 0.0] = np.inf
        tiny = np.abs(num) < TAU_RAY * (1.0 + dist**2 + du**2)
        tiny[np.arange(len(mc)), mc] = False
        if tiny.any():
            zero_num += int(tiny.sum())
            r[tiny] = np.inf
        r[np.arange(len(mc)), mc] = np.inf
        admissible = (r > 0.0) & (r >= -du - TAU_RAY) & np.isfinite(r)
        r = np.where(admissible, r, np.inf)
        upper[sl] = r.min(axis=1)
    if zero_num:
        logger.warning("%d funnel crossings with vanishing numerator treated as absent", zero_num)
    return RayBatch(X, val, m, v, lower, upper, status)


def box_exit_distance(X, V, B: float) -> np.ndarray:
    """Distance travelled from ``x`` along unit ``v`` before leaving ``[-B, B]^D``."""
    X = np.asarray(X, dtype=np.float64)
    V = np.asarray(V, dtype=np.float64)
    with np.errstate(divide="ignore", invalid="ignore"):
        t = np.where(V > 0, (B - X) / V, np.where(V < 0, (-B - X) / V, np.inf))
    return np.maximum(t.min(axis=-1), 0.0)


def truncate_batch(rays: RayBatch, B: float):
    """Clip rays to the box. Returns ``(s0, s1, status)``.

    ``s0`` is the distance from ``x`` back to the (possibly clipped) lower end,
    ``s1`` the distance forward to the (possibly clipped) upper end, so the
    truncated segment is ``[x - s0 v, x + s1 v]``.
    """
    s0 = np.minimum(rays.lower_dist, box_exit_distance(rays.points, -rays.direction, B))
    s1 = np.minimum(rays.upper, box_exit_distance(rays.points, rays.direction, B))
    status = rays.status.copy()
    status[(status == OK) & (s0 + s1 < TAU_RAY)] = DEGENERATE
    return s0, s1, status


# ---------------------------------------------------------------- scalar API


@dataclass(frozen=True)
class TransportRay:
    funnel_index: int
    lower: np.ndarray
    direction: np.ndarray
    upper_offset: float
    query: np.ndarray

    @property
    def upper(self) -> np.ndarray:
        """Upper endpoint, or ``None`` for an unbounded ray."""
        if not np.isfinite(self.upper_offset):
            return None
        return self.query + self.upper_offset * self.direction


def _raise_for(status: int):
    if status == TIE:
        raise TieError("several funnels attain the minimum here")
    if status == AT_CENTER:
        raise AtCenterError("point coincides with the active funnel center")
    if status == DEGENERATE:
        raise DegenerateRayError("truncated ray has (near) zero length")


def _point(u: MinFunnel, x) -> np.ndarray:
    x = np.asarray(x, dtype=np.float64).reshape(-1)
    if x.shape[0] != u.dim:
        raise ValueError(f"expected a point of dimension {u.dim}, got {x.shape[0]}")
    return x


def evaluate(u: MinFunnel, x) -> float:
    return float(u(_point(u, x)))


def active_funnel(u: MinFunnel, x) -> int:
    m, _, status = active_batch(u, _point(u, x))
    _raise_for(int(status[0]))
    return int(m[0])


def grad(u: MinFunnel, x) -> np.ndarray:
    G, status = grad_batch(u, _point(u, x))
    _raise_for(int(status[0]))
    return G[0]


def transport_ray(u: MinFunnel, x) -> TransportRay:
    x = _point(u, x)
    rb = rays_batch(u, x)
    _raise_for(int(rb.status[0]))
    m = int(rb.funnel[0])
    return TransportRay(m, u.centers[m].copy(), rb.direction[0], float(rb.upper[0]), x)


def truncate_ray(ray: TransportRay, box_halfwidth: float):
    """Intersect ``ray`` with ``[-B, B]^D``; returns the segment ``(x0, x1)``."""
    B = float(box_halfwidth)
    x, v = ray.query, ray.direction
    if np.any(np.abs(x) > B):
        raise ValueError("query point lies outside the box")
    lower = float(np.linalg.norm(x - ray.lower))
    s0 = min(lower, float(box_exit_distance(x, -v, B)))
    s1 = min(ray.upper_offset, float(box_exit_distance(x, v, B)))
    if s0 + s1 < TAU_RAY:
        raise DegenerateRayError("truncated ray has (near) zero length")
    x0 = ray.lower.copy() if s0 == lower else x - s0 * v
    x1 = x + s1 * v
    return x0, x1


def build_from_cover(points, values) -> MinFunnel:
    """MinFunnel with a funnel at every cover point, offset by the target value there.

    If ``values`` come from a 1-Lipschitz ``f`` and ``points`` form an
    ``eps/2``-cover of a set ``S``, then ``f <= u`` everywhere and
    ``u <= f + eps`` on ``S``.
    """
    points = np.array(points, dtype=np.float64)
    if points.ndim == 1:
        points = points.reshape(-1, 1)
    values = np.array(values, dtype=np.float64).reshape(-1)
    if values.shape[0] != points.shape[0]:
        raise ValueError("need one value per point")
    dist = cdist(points, points)
    gap = np.abs(values[:, None] - values[None, :])
    excess = gap - dist
    np.fill_diagonal(excess, -np.inf)
    slack = 1e-12 * np.maximum(1.0, dist)
    if np.any(excess > slack):
        i, j = np.unravel_index(np.argmax(excess - slack), excess.shape)
        raise LipschitzViolationError(
            f"|v_{i} - v_{j}| = {gap[i, j]:.6g} exceeds ||p_{i} - p_{j}|| = {dist[i, j]:.6g}"
        )
    return MinFunnel(points, values)
