"""Static SVG figures: potential surfaces, truncated rays, PCA scatter."""

from __future__ import annotations

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402

from . import benchmark as bm  # noqa: E402
from . import minfunnel as mf  # noqa: E402
from .errors import DimensionError  # noqa: E402


def _require_2d(pair):
    if pair.dim != 2:
        raise DimensionError(f"this plot needs D=2, pair has D={pair.dim}")


def surface_grid(pair, potential, resolution=120):
    """Grid coordinates over the box and ``potential`` evaluated on them."""
    _require_2d(pair)
    B = pair.box_halfwidth
    ticks = np.linspace(-B, B, resolution)
    gx, gy = np.meshgrid(ticks, ticks)
    values = np.asarray(potential(np.column_stack([gx.ravel(), gy.ravel()]))).reshape(gx.shape)
    return gx, gy, values


def plot_surface(pair, potential, out, title="", resolution=120):
    gx, gy, values = surface_grid(pair, potential, resolution)
    fig, ax = plt.subplots(figsize=(5, 4.4))
    im = ax.contourf(gx, gy, values, levels=30, cmap="viridis")
    fig.colorbar(im, ax=ax)
    ax.scatter(*pair.funnel.centers.T, c="white", s=12, marker="x")
    ax.set_aspect("equal")
    ax.set_title(title)
    fig.savefig(out, format="svg")
    plt.close(fig)
    return values


def ray_segments(pair, n_rays=300, rng=None):
    """Endpoints ``(x - s0 v, x + s1 v)`` of truncated rays through random box points."""
    rng = np.random.default_rng(pair.seed) if rng is None else rng
    X = pair.base.sample(n_rays, pair.dim, pair.box_halfwidth, rng)
    rays = mf.rays_batch(pair.funnel, X)
    s0, s1, status = mf.truncate_batch(rays, pair.box_halfwidth)
    ok = status == mf.OK
    V = rays.direction[ok]
    lo = X[ok] - s0[ok, None] * V
    hi = X[ok] + s1[ok, None] * V
    return lo, hi


def plot_rays(pair, out, n_rays=300, rng=None):
    _require_2d(pair)
    lo, hi = ray_segments(pair, n_rays, rng)
    B = pair.box_halfwidth
    fig, ax = plt.subplots(figsize=(5, 5))
    for a, b in zip(lo, hi):
        ax.plot([a[0], b[0]], [a[1], b[1]], color="tab:blue", lw=0.6, alpha=0.7)
    ax.scatter(*pair.funnel.centers.T, c="tab:red", s=18, zorder=3)
    ax.set_xlim(-B, B)
    ax.set_ylim(-B, B)
    ax.set_aspect("equal")
    fig.savefig(out, format="svg")
    plt.close(fig)
    return lo, hi


def pca_project(X, Y, k=2):
    """Project both clouds on the top ``k`` principal axes of their union."""
    Z = np.vstack([X, Y])
    mean = Z.mean(axis=0)
    _, _, vt = np.linalg.svd(Z - mean, full_matrices=False)
    W = vt[:k].T
    return (X - mean) @ W, (Y - mean) @ W


def plot_pca(pair, out, n=2000, rng=None):
    if pair.dim < 2:
        raise DimensionError("PCA scatter needs D >= 2")
    rng = np.random.default_rng(pair.seed) if rng is None else rng
    X, Y = bm.sample(pair, n, rng)
    px, py = pca_project(X, Y)
    fig, ax = plt.subplots(figsize=(5, 5))
    ax.scatter(*px.T, s=3, alpha=0.5, label="first marginal")
    ax.scatter(*py.T, s=3, alpha=0.5, label="second marginal")
    ax.legend(loc="upper right")
    fig.savefig(out, format="svg")
    plt.close(fig)
    return px, py
