"""Agreement between a recovered gradient field and the exact OT gradient.

Both fields are given as arrays of values at the same samples. Expectations
are sample means, so every metric comes with a Monte Carlo standard error.
"""

from __future__ import annotations

import numpy as np

from .errors import ZeroFieldError

CSV_COLUMNS = (
    "solver", "D", "N", "p", "seed", "cos", "l2", "w1_hat", "w1_true", "dev_pct", "n_samples", "wall_time_s",
)
# attribute names on EvalReport backing each CSV column
CSV_FIELDS = {"D": "dim", "N": "n_funnels", "p": "power"}

COS_BANDS = ((0.85, "green"), (0.5, "lime"), (0.15, "orange"))
L2_BANDS = ((0.25, "green"), (0.65, "lime"), (1.2, "orange"))
DEV_BANDS = ((15.0, "green"), (30.0, "lime"), (50.0, "orange"))


def _pair(ghat, gstar):
    ghat = np.asarray(ghat, dtype=np.float64)
    gstar = np.asarray(gstar, dtype=np.float64)
    if ghat.shape != gstar.shape or ghat.ndim != 2:
        raise ValueError(f"fields must be equal-shape (n, D) arrays, got {ghat.shape} and {gstar.shape}")
    if len(ghat) == 0:
        raise ValueError("need at least one sample")
    return ghat, gstar


def _moments(ghat, gstar):
    a = np.einsum("ij,ij->i", ghat, gstar)
    b = np.einsum("ij,ij->i", ghat, ghat)
    c = np.einsum("ij,ij->i", gstar, gstar)
    if b.sum() == 0 or c.sum() == 0:
        raise ZeroFieldError("cosine is undefined for a field that vanishes on every sample")
    return a, b, c


def cos_metric(ghat, gstar) -> float:
    """``sum <ghat_i, g_i> / sqrt(sum |ghat_i|^2 * sum |g_i|^2)``."""
    a, b, c = _moments(*_pair(ghat, gstar))
    return float(np.clip(a.sum() / np.sqrt(b.sum() * c.sum()), -1.0, 1.0))


def cos_metric_se(ghat, gstar):
    """Cosine and its delta-method standard error."""
    a, b, c = _moments(*_pair(ghat, gstar))
    A, B, C = a.mean(), b.mean(), c.mean()
    cos = float(np.clip(A / np.sqrt(B * C), -1.0, 1.0))
    n = len(a)
    if n < 2:
        return cos, float("nan")
    psi = (a - A) / np.sqrt(B * C) - cos * (b - B) / (2 * B) - cos * (c - C) / (2 * C)
    return cos, float(psi.std(ddof=1) / np.sqrt(n))


def l2_metric(ghat, gstar) -> float:
    """Mean squared distance between the two fields."""
    ghat, gstar = _pair(ghat, gstar)
    return float(np.mean(np.sum((ghat - gstar) ** 2, axis=1)))


def l2_metric_se(ghat, gstar):
    ghat, gstar = _pair(ghat, gstar)
    d = np.sum((ghat - gstar) ** 2, axis=1)
    se = float(d.std(ddof=1) / np.sqrt(len(d))) if len(d) > 1 else float("nan")
    return float(d.mean()), se


def field_norm(g) -> float:
    """``sqrt(mean |g_i|^2)``, the sample L2 norm of a field."""
    g = np.asarray(g, dtype=np.float64)
    return float(np.sqrt(np.mean(np.sum(g * g, axis=1))))


def _band(value, bands, ascending):
    for edge, name in bands:
        if (value > edge) if not ascending else (value < edge):
            return name
    return "red"


def cos_band(cos: float) -> str:
    return _band(cos, COS_BANDS, ascending=False)


def l2_band(l2: float) -> str:
    return _band(l2, L2_BANDS, ascending=True)


def dev_band(dev_pct: float) -> str:
    return _band(dev_pct, DEV_BANDS, ascending=True)


def w1_deviation(w1_hat: float, w1_true: float):
    """Percent deviation ``100 |w1_true - w1_hat| / w1_true`` and its color band."""
    if not w1_true > 0:
        raise ValueError("true W1 must be positive")
    dev = 100.0 * abs(w1_true - w1_hat) / w1_true
    return float(dev), dev_band(dev)
