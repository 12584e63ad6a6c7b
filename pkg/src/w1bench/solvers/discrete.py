"""Exact OT between two equal-size empirical batches."""

from __future__ import annotations

import numpy as np
from scipy.optimize import linear_sum_assignment
from scipy.spatial.distance import cdist

from ..errors import AssignmentInfeasible, ConfigError
from .base import NearestBatchGradient, SolverOutput, Trainer


def assignment(X, Y):
    """Optimal permutation ``sigma`` and mean cost ``(1/n) sum ||x_i - y_sigma(i)||``."""
    X = np.asarray(X, dtype=np.float64)
    Y = np.asarray(Y, dtype=np.float64)
    if X.shape != Y.shape:
        raise ConfigError("assignment needs equal-size batches of the same dimension")
    C = cdist(X, Y)
    rows, cols = linear_sum_assignment(C)
    n = len(X)
    if len(rows) != n or not np.array_equal(np.sort(cols), np.arange(n)):
        raise AssignmentInfeasible("assignment is not a permutation")
    sigma = np.empty(n, dtype=np.int64)
    sigma[rows] = cols
    return sigma, float(C[np.arange(n), sigma].mean())


def plan_gradient(X, Y, sigma):
    D = X - Y[sigma]
    norm = np.linalg.norm(D, axis=1, keepdims=True)
    return np.divide(D, norm, out=np.zeros_like(D), where=norm > 0)


def fit_dot(sampler, cfg, rng) -> SolverOutput:
    cfg = cfg.resolved(sampler.dim)
    trainer = Trainer([])
    X, Y = sampler.sample(cfg.dot_batch, rng)
    sigma, cost = assignment(X, Y)
    trainer.record(0, cost)
    field = NearestBatchGradient(X, plan_gradient(X, Y, sigma))
    return SolverOutput(
        cfg.kind, field, cost, log=trainer.log, wall_time_s=trainer.elapsed,
        support=field.points, extras={"sigma": sigma},
    )
