"""Two-potential solver with a quadratic penalty on violated cost constraints."""

from __future__ import annotations

import numpy as np
from scipy.spatial.distance import cdist

from .base import PotentialGradient, SolverOutput, Trainer, make_adam, make_potential


def ls_objective(fX, gY, C, eps):
    """``mean f + mean g - mean_{i,j} relu(f_i + g_j - C_ij)^2 / (4 eps)`` and its
    gradients with respect to ``fX`` and ``gY``."""
    n, m = C.shape
    viol = np.maximum(0.0, fX[:, None] + gY[None, :] - C)
    pen = (viol**2).mean() / (4.0 * eps)
    value = fX.mean() + gY.mean() - pen
    dviol = viol / (2.0 * eps * n * m)
    df = 1.0 / n - dviol.sum(axis=1)
    dg = 1.0 / m - dviol.sum(axis=0)
    return float(value), df, dg, float(pen)


def fit_ls(sampler, cfg, rng) -> SolverOutput:
    cfg = cfg.resolved(sampler.dim)
    f = make_potential(sampler.dim, cfg, rng)
    g = make_potential(sampler.dim, cfg, rng)
    opt_f, opt_g = make_adam(f, cfg), make_adam(g, cfg)
    trainer = Trainer([f, g])
    for it in range(cfg.iterations):
        X, Y = sampler.sample(cfg.batch_size, rng)
        fX, cf = f.forward(X, cache=True)
        gY, cg = g.forward(Y, cache=True)
        value, df, dg, pen = ls_objective(fX[:, 0], gY[:, 0], cdist(X, Y), cfg.eps)
        _, grads_f = f.backward(cf, -df[:, None])
        _, grads_g = g.backward(cg, -dg[:, None])
        opt_f.step(f.params(), grads_f)
        opt_g.step(g.params(), grads_g)
        trainer.record(it, -value, penalty=pen)
    trainer.check_params(cfg.iterations)
    X, Y = sampler.sample(cfg.eval_batch, rng)
    w1 = float(f(X).mean() + g(Y).mean())
    return SolverOutput(
        cfg.kind, PotentialGradient(f), w1, {"f": f, "g": g}, f, trainer.log, trainer.elapsed,
    )
